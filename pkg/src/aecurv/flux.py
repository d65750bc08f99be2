"""Surface integrals over Euclidean spheres S_r and their limits r → ∞.

Every functional integrates a pointwise density against the Euclidean normal
ν = x/r and the Euclidean measure of S_r, i.e. r^(n−1) Σ_k w_k f(r ω_k).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gamma as gamma_fn
from scipy.special import roots_jacobi

from . import dsl
from . import jet as J
from .batching import chunk_size_for, map_points
from .fourth_order import FourthOrderFrame, adjoint_dq_flat, boundary_one_form
from .metric import MetricSpec
from .tensor import frame_from_jet

DEFAULT_RADII_EXPONENTS = tuple(range(3, 11))
DEFAULT_FIT_WINDOW = 4


class QuadratureError(ValueError):
    pass


def sphere_area(n: int) -> float:
    """|S^(n−1)| = 2 π^(n/2) / Γ(n/2)."""
    return 2.0 * math.pi ** (n / 2) / float(gamma_fn(n / 2))


@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    dim: int
    degree: int
    nodes: np.ndarray  # (K, n) unit vectors
    weights: np.ndarray  # (K,)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Σ w_k f_k over the last axis."""
        return np.asarray(values) @ self.weights


def build_quadrature(n: int, m: int) -> SphereQuadrature:
    """Product rule on S^(n−1), exact for monomials of degree ≤ 2m − 1.

    Hyperspherical angles θ_1..θ_(n−2) use Gauss rules in t = cos θ_i for the
    weight (1 − t²)^((n−2−i)/2), which is the Jacobian sin^(n−1−i) θ_i dθ_i
    rewritten in t (Gauss–Gegenbauer; Gauss–Legendre when the power is 0).
    The azimuth uses the 2m-point trapezoid rule.
    """
    if not 3 <= n <= J.MAX_DIM:
        raise QuadratureError(f"unsupported sphere dimension n={n} (3..{J.MAX_DIM})")
    if m < 2:
        raise QuadratureError(f"quadrature degree must be >= 2, got {m}")
    polar = []
    for i in range(1, n - 1):
        alpha = (n - 2 - i) / 2.0
        t, w = roots_jacobi(m, alpha, alpha)
        polar.append((t, w))
    phi = 2.0 * math.pi * np.arange(2 * m) / (2 * m)
    w_phi = np.full(2 * m, 2.0 * math.pi / (2 * m))

    grids = np.meshgrid(*[p[0] for p in polar], phi, indexing="ij")
    wgrids = np.meshgrid(*[p[1] for p in polar], w_phi, indexing="ij")
    cos_t = [g.ravel() for g in grids[:-1]]
    ph = grids[-1].ravel()
    weights = np.prod([w.ravel() for w in wgrids], axis=0)

    coords = []
    running = np.ones_like(ph)
    for c in cos_t:
        coords.append(running * c)
        running = running * np.sqrt(np.clip(1.0 - c * c, 0.0, None))
    coords.append(running * np.cos(ph))
    coords.append(running * np.sin(ph))
    nodes = np.stack(coords, axis=1)
    return SphereQuadrature(n, m, nodes, weights)


@dataclass
class FluxSeries:
    functional: str
    radii: np.ndarray
    values: np.ndarray
    F_inf: float = float("nan")
    p: float = float("nan")
    c: float = float("nan")
    residual: float = float("nan")
    diverged: bool = False
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.radii) <= 0):
            raise ValueError("flux radii must be strictly increasing")

    def summary(self) -> dict:
        return {
            "functional": self.functional,
            "F_inf": _clean(self.F_inf),
            "p": _clean(self.p),
            "c": _clean(self.c),
            "residual": _clean(self.residual),
            "diverged": bool(self.diverged),
            "radii": self.radii.tolist(),
            "values": self.values.tolist(),
            "notes": list(self.notes),
        }


def _clean(x):
    x = float(x)
    return None if math.isnan(x) else x


# ---- extrapolation -------------------------------------------------------------

def _fit_at(p: float, r: np.ndarray, F: np.ndarray):
    A = np.stack([np.ones_like(r), r**-p], axis=1)
    coef, *_ = np.linalg.lstsq(A, F, rcond=None)
    resid = F - A @ coef
    return coef, float(resid @ resid)


def extrapolate(series: FluxSeries, p_min: float = 0.1, p_max: float = 16.0,
                window: int | None = DEFAULT_FIT_WINDOW, zero_tol: float = 1e-12) -> FluxSeries:
    """Fit F(r) = F_∞ + c r^(−p) by least squares, p in [p_min, p_max].

    The fit uses the outermost ``window`` radii (all radii when None): the
    neglected faster-decaying terms are smallest there, and a dyadic sweep
    leaves exactly enough points for the three unknowns plus one check.
    For fixed p the fit is linear in (F_∞, c); p is found by a grid scan in
    log p followed by bounded Brent refinement.  The series is flagged as
    diverged when the optimum sits on the lower bound of p, the increments do
    not shrink, or the fit is poor.  A window whose values all lie below
    ``zero_tol`` in magnitude is rounding noise and reported as a zero limit.
    """
    if len(series.radii) < 4:
        raise ValueError(f"extrapolation needs at least 4 radii, got {len(series.radii)}")
    if window is not None and window < 4:
        raise ValueError("the fit window must hold at least 4 radii")
    take = slice(None) if window is None else slice(-window, None)
    r, F = series.radii[take], series.values[take]
    if not np.all(np.isfinite(series.values)):
        series.diverged = True
        series.notes.append("non-finite flux values")
        return series
    spread = float(np.max(np.abs(F - F.mean())))
    scale = max(float(np.max(np.abs(F))), 1e-300)
    if scale <= zero_tol:
        series.F_inf = float(F.mean())
        series.c = 0.0
        series.p = float("nan")
        series.residual = float(np.sqrt(np.mean((F - F.mean()) ** 2)))
        series.notes.append(f"values below {zero_tol:g}: treated as zero")
        return series
    if spread <= 1e-14 * scale or spread == 0.0:
        series.F_inf = float(F.mean())
        series.c = 0.0
        series.p = float("nan")
        series.residual = float(np.sqrt(np.mean((F - F.mean()) ** 2)))
        return series
    # rescale radii for conditioning
    r0 = r[0]
    rs = r / r0
    grid = np.exp(np.linspace(math.log(p_min), math.log(p_max), 241))
    rss = np.array([_fit_at(p, rs, F)[1] for p in grid])
    k = int(np.argmin(rss))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda p: _fit_at(p, rs, F)[1], bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12 * max(1.0, hi)})
        p_best = float(res.x) if res.fun <= rss[k] else float(grid[k])
    else:
        p_best = float(grid[k])
    coef, rss_best = _fit_at(p_best, rs, F)
    series.F_inf = float(coef[0])
    series.c = float(coef[1]) * r0**p_best
    series.p = p_best
    series.residual = float(math.sqrt(rss_best / len(r)))
    diffs = np.abs(np.diff(series.values))
    at_floor = p_best <= p_min * (1 + 1e-6)
    growing = diffs[-1] > diffs[-2] * (1 + 1e-6) and diffs[-1] > 1e-9 * scale
    poor = series.residual > 1e-2 * max(spread, 1e-300)
    if at_floor or growing or poor:
        series.diverged = True
        reason = "p at lower bound" if at_floor else ("increments do not shrink" if growing else "poor two-term fit")
        series.notes.append(f"series flagged as divergent: {reason}")
    return series


# ---- integrands ------------------------------------------------------------------

def _metric_jet(spec: MetricSpec, pts: np.ndarray, order: int) -> J.Jet:
    return spec.metric_jet(pts, order)


def _adm_density(spec: MetricSpec):
    def fn(pts):
        g = _metric_jet(spec, pts, 1)
        dg = g.grad().coeffs[0]  # dg[l, i, j] = ∂_l g_ij, shape (n, n, n, N)
        div = np.einsum("iij...->j...", dg)  # ∂_i g_ij
        dtr = np.einsum("jii...->j...", dg)  # ∂_j g_ii
        nu = (pts / np.linalg.norm(pts, axis=1, keepdims=True)).T
        return np.sum((div - dtr) * nu, axis=0)
    return fn


def _einstein_density(spec: MetricSpec):
    def fn(pts):
        frame = frame_from_jet(pts, _metric_jet(spec, pts, 2))
        G = frame.einstein.value  # (n, n, N)
        x = pts.T
        r = np.linalg.norm(pts, axis=1)
        return np.einsum("ij...,i...,j...->...", G, x, x) / r
    return fn


def _fourth_energy_density(spec: MetricSpec):
    def fn(pts):
        g = _metric_jet(spec, pts, 3)
        d3 = g.grad().grad().grad().coeffs[0]  # d3[j, b, c, a, e] = ∂_j ∂_b ∂_c g_ae
        t1 = np.einsum("jiiaa...->j...", d3)
        t2 = np.einsum("jaiai...->j...", d3)
        nu = (pts / np.linalg.norm(pts, axis=1, keepdims=True)).T
        return np.sum((t1 - t2) * nu, axis=0)
    return fn


def _gj_density(spec: MetricSpec):
    def fn(pts):
        frame = frame_from_jet(pts, _metric_jet(spec, pts, 4))
        G = FourthOrderFrame(frame).G_J.value
        x = pts.T
        r = np.linalg.norm(pts, axis=1)
        return np.einsum("ij...,i...,j...->...", G, x, x) / r
    return fn


def _charge_density(spec: MetricSpec, V: dsl.Expr, params: dict):
    def fn(pts):
        g = _metric_jet(spec, pts, 3)
        c = g.coeffs.copy()
        c[0] -= np.eye(spec.dim)[:, :, None]
        h = J.Jet(c, spec.dim, 3)
        Vj = dsl.JetEvaluator(pts, 3, params).jet(V)
        U = boundary_one_form(h, Vj).value  # (n, N)
        nu = (pts / np.linalg.norm(pts, axis=1, keepdims=True)).T
        return np.sum(U * nu, axis=0)
    return fn


DENSITIES = {
    "adm": (_adm_density, 1),
    "adm_einstein": (_einstein_density, 2),
    "fourth_order_energy": (_fourth_energy_density, 3),
    "gj": (_gj_density, 4),
}


def default_radii(spec: MetricSpec, exponents=DEFAULT_RADII_EXPONENTS) -> np.ndarray:
    return spec.inner_radius * 2.0 ** np.asarray(exponents, dtype=float)


def sphere_integrals(density: Callable, quad: SphereQuadrature, radii, order: int) -> np.ndarray:
    """∫_{S_r} f dω_δ for every radius, evaluated in point chunks."""
    radii = np.asarray(radii, dtype=float)
    n = quad.dim
    pts = (radii[:, None, None] * quad.nodes[None]).reshape(-1, n)
    vals = map_points(density, pts, chunk_size_for(n, order)).reshape(len(radii), -1)
    return radii ** (n - 1) * (vals @ quad.weights)


def _series(name: str, spec: MetricSpec, density, order: int, quad, radii, factor: float,
            fit: bool = True) -> FluxSeries:
    if quad.dim != spec.dim:
        raise QuadratureError(f"quadrature dimension {quad.dim} does not match metric dimension {spec.dim}")
    radii = default_radii(spec) if radii is None else np.asarray(radii, dtype=float)
    if np.any(radii < spec.inner_radius):
        raise QuadratureError("all radii must lie outside the inner radius")
    values = factor * sphere_integrals(density, quad, radii, order)
    s = FluxSeries(name, radii, values)
    if fit and len(radii) >= 4:
        extrapolate(s, p_max=2.0 * spec.dim)
    return s


def adm_energy(spec: MetricSpec, quad: SphereQuadrature, radii=None) -> FluxSeries:
    n = spec.dim
    return _series("adm", spec, _adm_density(spec), 1, quad, radii, 1.0 / (2 * (n - 1) * sphere_area(n)))


def adm_energy_einstein(spec: MetricSpec, quad: SphereQuadrature, radii=None) -> FluxSeries:
    n = spec.dim
    return _series("adm_einstein", spec, _einstein_density(spec), 2, quad, radii,
                   -1.0 / ((n - 1) * (n - 2) * sphere_area(n)))


def fourth_order_energy(spec: MetricSpec, quad: SphereQuadrature, radii=None) -> FluxSeries:
    return _series("fourth_order_energy", spec, _fourth_energy_density(spec), 3, quad, radii, 1.0)


def gj_flux(spec: MetricSpec, quad: SphereQuadrature, radii=None) -> FluxSeries:
    return _series("gj", spec, _gj_density(spec), 4, quad, radii, 1.0)


def kernel_residual(V: dsl.Expr, points, params: dict | None = None) -> float:
    """max |DQ*_δ V| over points, relative to the size of the fourth derivatives of V."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    Vj = dsl.JetEvaluator(pts, 4, params or {}).jet(V)
    out = adjoint_dq_flat(Vj).value
    return float(np.max(np.abs(out)))


def charge(spec: MetricSpec, V, quad: SphereQuadrature, radii=None, params: dict | None = None,
           kernel_tol: float = 1e-8) -> FluxSeries:
    """Flux of U(g − δ, V); V outside the kernel of DQ*_δ gets a warning note."""
    params = dict(spec.params) | dict(params or {})
    if isinstance(V, str):
        V = dsl.parse(V, params=params.keys(), dim=spec.dim)
    radii_arr = default_radii(spec) if radii is None else np.asarray(radii, dtype=float)
    s = _series("charge", spec, _charge_density(spec, V, params), 3, quad, radii_arr, 1.0)
    probe = radii_arr[0] * quad.nodes[:: max(1, len(quad.nodes) // 64)]
    resid = kernel_residual(V, probe, params)
    if resid > kernel_tol:
        msg = f"V = {dsl.pretty(V)} is not in the kernel of DQ*_δ (max |DQ*V| = {resid:.3g})"
        s.notes.append(msg)
        warnings.warn(msg, stacklevel=2)
    return s


def gj_energy_ratio(spec: MetricSpec, quad: SphereQuadrature, radii=None) -> dict:
    """Compare −lim ∮G_J(r∂_r, ν) with (n−4)/(8(n−1)) E(g)."""
    n = spec.dim
    E = fourth_order_energy(spec, quad, radii)
    G = gj_flux(spec, quad, radii)
    expected = (n - 4) / (8.0 * (n - 1))
    ratio = -G.F_inf / E.F_inf if E.F_inf != 0 else float("nan")
    return {
        "E": E,
        "gj": G,
        "expected_ratio": expected,
        "ratio": ratio,
        "relative_error": abs(ratio - expected) / abs(expected) if expected != 0 else float("nan"),
    }

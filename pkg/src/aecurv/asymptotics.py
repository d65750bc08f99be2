"""Decay estimators on dyadic annuli, a Yamabe quotient probe and radial harmonic coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats
from scipy.integrate import solve_ivp

from . import dsl
from . import jet as J
from .flux import build_quadrature
from .fourth_order import FourthOrderFrame
from .metric import MetricSpec, annulus_points
from .tensor import frame_from_jet, metric_frame


class DecayError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AnnulusGrid:
    """Quasi-random samples in the shells 2^k R0 <= |x| <= 2^(k+1) R0, k = first .. first+count-1."""

    dim: int
    inner_radius: float = 1.0
    first: int = 0
    count: int = 8
    samples: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.samples < 64:
            raise DecayError("annulus grids need at least 64 samples per annulus")
        if self.count < 1:
            raise DecayError("annulus grids need at least one annulus")

    def bounds(self, k: int) -> tuple[float, float]:
        j = self.first + k
        return self.inner_radius * 2.0**j, self.inner_radius * 2.0 ** (j + 1)

    def points(self, k: int) -> np.ndarray:
        lo, hi = self.bounds(k)
        return annulus_points(self.dim, lo, hi, self.samples, self.seed + self.first + k)

    def volume(self, k: int) -> float:
        lo, hi = self.bounds(k)
        unit_ball = math.pi ** (self.dim / 2) / math.gamma(self.dim / 2 + 1)
        return unit_ball * (hi**self.dim - lo**self.dim)


def _magnitude(sampler: Callable, pts: np.ndarray) -> np.ndarray:
    v = np.asarray(sampler(pts), dtype=float)
    if v.ndim > 1:
        # tensor fields: max absolute entry, sample axis first
        v = np.abs(v.reshape(len(pts), -1)).max(axis=1)
    bad = ~np.isfinite(v)
    if np.any(bad):
        raise DecayError(f"non-finite field value at point {pts[np.argmax(bad)].tolist()}")
    return np.abs(v)


def sigma(r):
    return np.sqrt(1.0 + np.asarray(r) ** 2)


@dataclass
class WeightedNorm:
    value: float
    cumulative: np.ndarray  # norm over the first k+1 annuli
    divergent: bool


def weighted_norm_profile(sampler: Callable, p: float, delta: float, grid: AnnulusGrid) -> WeightedNorm:
    """‖u σ^(−δ−n/p)‖_{L^p} accumulated annulus by annulus; p = inf gives sup |u| σ^(−δ)."""
    if not (p > 1):
        raise DecayError(f"p must lie in (1, inf], got {p}")
    n = grid.dim
    parts = []
    for k in range(grid.count):
        pts = grid.points(k)
        u = _magnitude(sampler, pts)
        s = sigma(np.linalg.norm(pts, axis=1))
        if math.isinf(p):
            parts.append(float(np.max(u * s ** (-delta))))
        else:
            w = (u * s ** (-delta - n / p)) ** p
            parts.append(grid.volume(k) * float(np.mean(w)))
    parts = np.array(parts)
    if math.isinf(p):
        cum = np.maximum.accumulate(parts)
    else:
        cum = np.cumsum(parts) ** (1.0 / p)
    divergent = False
    if len(cum) >= 3 and cum[-1] > 0:
        inc = np.diff(cum)
        divergent = bool(inc[-1] > 1e-3 * cum[-1] and inc[-1] >= 0.9 * inc[-2])
    return WeightedNorm(float(cum[-1]), cum, divergent)


def weighted_norm(sampler: Callable, p: float, delta: float, grid: AnnulusGrid) -> float:
    return weighted_norm_profile(sampler, p, delta, grid).value


@dataclass
class DecayReport:
    field: str
    radii: np.ndarray
    sup_values: np.ndarray
    exponent: float
    stderr: float
    band: tuple
    norms: dict = field(default_factory=dict)

    def summary(self) -> dict:
        def clean(x):
            x = float(x)
            return None if math.isnan(x) else (("inf" if x > 0 else "-inf") if math.isinf(x) else x)

        return {
            "field": self.field,
            "radii": np.asarray(self.radii).tolist(),
            "sup_values": np.asarray(self.sup_values).tolist(),
            "exponent": clean(self.exponent),
            "stderr": clean(self.stderr),
            "band": [clean(b) for b in self.band],
            "norms": {k: clean(v) for k, v in self.norms.items()},
        }


def estimate_decay(sampler: Callable, grid: AnnulusGrid, name: str = "field",
                   norms: tuple = ()) -> DecayReport:
    """Decay exponent δ̂ = −slope of log sup|u| against log r over the annuli.

    Each annulus contributes its sample maximum, placed at the radius where
    it was attained.  The band is the 95% interval from the regression's
    standard error.  A field that vanishes on every annulus gets δ̂ = +inf.
    """
    if grid.count < 4:
        raise DecayError("decay estimation needs at least 4 annuli")
    radii, sups = [], []
    for k in range(grid.count):
        pts = grid.points(k)
        u = _magnitude(sampler, pts)
        i = int(np.argmax(u))
        radii.append(float(np.linalg.norm(pts[i])))
        sups.append(float(u[i]))
    radii, sups = np.array(radii), np.array(sups)
    extra = {f"p={p},delta={d}": weighted_norm(sampler, p, d, grid) for p, d in norms}
    if np.all(sups == 0):
        return DecayReport(name, radii, sups, math.inf, 0.0, (math.inf, math.inf), extra)
    ok = sups > 0
    if ok.sum() < 4:
        raise DecayError("fewer than 4 annuli with nonzero samples")
    fit = stats.linregress(np.log(radii[ok]), np.log(sups[ok]))
    exponent = -fit.slope
    dof = int(ok.sum()) - 2
    half = float(stats.t.ppf(0.975, dof)) * fit.stderr
    return DecayReport(name, radii, sups, float(exponent), float(fit.stderr),
                       (float(exponent - half), float(exponent + half)), extra)


# ---- field samplers built from metrics -----------------------------------------

def metric_deviation_sampler(spec: MetricSpec) -> Callable:
    def fn(pts):
        g = spec.metric_values(pts)
        return g - np.eye(spec.dim)
    return fn


def fourth_order_sampler(spec: MetricSpec, quantity: str = "J") -> Callable:
    """Values of Q, J, G_J, B or T at points, sample axis first."""
    if quantity not in {"Q", "J", "G_J", "B", "T"}:
        raise DecayError(f"unknown fourth-order quantity {quantity!r}")

    def fn(pts):
        f = FourthOrderFrame(metric_frame(spec, pts, 4))
        v = getattr(f, quantity).value
        return np.moveaxis(v, -1, 0)
    return fn


def curvature_sampler(spec: MetricSpec, quantity: str = "Ric") -> Callable:
    def fn(pts):
        fr = metric_frame(spec, pts, 2)
        v = {"Ric": fr.ricci, "R": fr.scalar, "Riem": fr.riemann, "G": fr.einstein}[quantity].value
        return np.moveaxis(v, -1, 0)
    return fn


# ---- Yamabe quotient probe -----------------------------------------------------

@dataclass(frozen=True)
class RadialBump:
    """u = (1 − ((r − c)/w)²)² on |r − c| < w, zero elsewhere."""

    center: float
    width: float

    def support(self) -> tuple[float, float]:
        return self.center - self.width, self.center + self.width

    def value_and_gradient(self, pts: np.ndarray):
        r = np.linalg.norm(pts, axis=1)
        s = (r - self.center) / self.width
        inside = np.abs(s) < 1
        one = np.where(inside, 1 - s * s, 0.0)
        u = one**2
        du_dr = np.where(inside, -4.0 * s * one / self.width, 0.0)
        grad = (du_dr / r)[:, None] * pts
        return u, grad


@dataclass(frozen=True)
class ExprTrial:
    """Trial function given as an expression, assumed to vanish outside [r_lo, r_hi]."""

    expr: dsl.Expr
    r_lo: float
    r_hi: float
    params: tuple = ()

    def support(self) -> tuple[float, float]:
        return self.r_lo, self.r_hi

    def value_and_gradient(self, pts: np.ndarray):
        jet = dsl.JetEvaluator(pts, 1, dict(self.params)).jet(self.expr)
        return jet.value, jet.gradient().T


def yamabe_quotient(spec: MetricSpec, trial, radial_nodes: int = 48, quad_degree: int = 4) -> float:
    """(∫ a_n |∇u|²_g + R_g u² dV_g) / ‖u‖²_{L^(2n/(n−2))(dV_g)}.

    Integrals use Gauss–Legendre in r over the trial's support shell times the
    product sphere rule.  The value is an upper bound for the Yamabe invariant.
    """
    n = spec.dim
    a_n = 4.0 * (n - 1) / (n - 2)
    lo, hi = trial.support()
    lo = max(lo, spec.inner_radius)
    if not hi > lo:
        raise DecayError("trial support lies inside the inner radius")
    t, w = np.polynomial.legendre.leggauss(radial_nodes)
    rad = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
    w_r = 0.5 * (hi - lo) * w * rad ** (n - 1)
    quad = build_quadrature(n, quad_degree)
    pts = (rad[:, None, None] * quad.nodes[None]).reshape(-1, n)
    weights = (w_r[:, None] * quad.weights[None]).ravel()

    frame = metric_frame(spec, pts, 2)
    vol = np.sqrt(np.linalg.det(np.moveaxis(frame.g.value, -1, 0)))
    R = frame.scalar.value
    ginv = frame.g_inv.value
    u, grad = trial.value_and_gradient(pts)
    grad_sq = np.einsum("ij...,...i,...j->...", ginv, grad, grad)
    num = float(np.sum(weights * vol * (a_n * grad_sq + R * u * u)))
    q = 2.0 * n / (n - 2)
    den_int = float(np.sum(weights * vol * np.abs(u) ** q))
    if den_int <= 0:
        raise DecayError("trial function vanishes on its support")
    return num / den_int ** (2.0 / q)


def yamabe_probe(spec: MetricSpec, centers, widths, **kwargs) -> dict:
    """Quotients over a battery of radial bumps; all positive is consistent with Y > 0, not a proof."""
    values = {}
    for c in centers:
        for w in widths:
            if c - w < spec.inner_radius:
                continue
            values[(float(c), float(w))] = yamabe_quotient(spec, RadialBump(c, w), **kwargs)
    if not values:
        raise DecayError("no trial bump fits outside the inner radius")
    return {"quotients": values, "min": min(values.values()), "all_positive": all(v > 0 for v in values.values())}


# ---- harmonic coordinates for radial metrics ------------------------------------

@dataclass
class RadialProfile:
    """g_ij = a(r) δ_ij + b(r) x_i x_j / r², sampled through metric jets on the x1 axis."""

    spec: MetricSpec

    def coefficients(self, r: float):
        """(a, a', A, A') with A = a + b."""
        n = self.spec.dim
        pt = np.zeros(n)
        pt[0] = r
        g = self.spec.metric_jet(pt[None], 1)
        a = g.coeffs[0, 1, 1, 0]
        A = g.coeffs[0, 0, 0, 0]
        da = g.coeffs[1, 1, 1, 0]
        dA = g.coeffs[1, 0, 0, 0]
        return a, da, A, dA


def check_radial(spec: MetricSpec, samples: int = 32, seed: int = 0, tol: float = 1e-10) -> float:
    """Largest relative deviation of g from the form a(r)δ + b(r) x x^T / r²."""
    rng = np.random.default_rng(seed)
    n = spec.dim
    pts = rng.normal(size=(samples, n))
    pts *= (spec.inner_radius * (1.0 + 9.0 * rng.random(samples)) / np.linalg.norm(pts, axis=1))[:, None]
    g = spec.metric_values(pts)
    worst = 0.0
    for x, gx in zip(pts, g):
        r = np.linalg.norm(x)
        on_axis = np.zeros((1, n))
        on_axis[0, 0] = r
        ga = spec.metric_values(on_axis)[0]
        a = ga[1, 1]
        b = ga[0, 0] - a
        model = a * np.eye(n) + b * np.outer(x, x) / r**2
        worst = max(worst, float(np.abs(gx - model).max() / max(1.0, np.abs(gx).max())))
    if worst > tol:
        raise DecayError(f"metric is not spherically symmetric (deviation {worst:.3g})")
    return worst


def harmonic_ode_rhs(r: float, F: float, dF: float, coeffs, n: int) -> float:
    """F'' for Δ_g(F(r) x_i / r) = 0 with g = a δ + b x x^T/r², A = a + b.

    F'' = −F' [(n−1)/r + (n−1) a'/(2a) − A'/(2A)] + (n−1)(A/a) F / r².
    """
    a, da, A, dA = coeffs
    return -dF * ((n - 1) / r + (n - 1) * da / (2 * a) - dA / (2 * A)) + (n - 1) * (A / a) * F / r**2


@dataclass
class HarmonicCoordinate:
    radii: np.ndarray
    F: np.ndarray
    dF: np.ndarray
    exponent: float
    stderr: float
    expected_exponent: float | None
    residual: float
    solution: object = None
    scale: float = 1.0

    def __call__(self, r):
        """f(r), evaluated from the dense ODE solution."""
        t = np.log(np.asarray(r, dtype=float))
        return self.scale * self.solution.sol(t)[0]

    def summary(self) -> dict:
        return {
            "exponent": self.exponent,
            "stderr": self.stderr,
            "expected_exponent": self.expected_exponent,
            "ode_residual": self.residual,
            "radii": self.radii.tolist(),
            "f_minus_r": (self.F - self.radii).tolist(),
        }


def coordinate_jet(F_derivs, pts: np.ndarray, order: int = 2) -> J.Jet:
    """Jet of y_i = F(r) x_i / r given F, F', F'' per point; trailing shape (n, N)."""
    n = pts.shape[1]
    r2 = None
    xs = [J.Jet.variable(i, pts[:, i], n, order) for i in range(n)]
    for x in xs:
        r2 = x * x if r2 is None else r2 + x * x
    r = J.sqrt(r2)
    F = J.compose_univariate(F_derivs, r)
    ratio = F * J.reciprocal(r)
    return J.stack([ratio * x for x in xs])


def harmonic_radial_coordinate(spec: MetricSpec, r_max: float | None = None, tau: float | None = None,
                               residual_points: int = 50, fit_decades: tuple = (1.0, 3.0)) -> HarmonicCoordinate:
    """Solve Δ_g y^i = 0 for y^i = f(r) x^i / r on [R0, r_max] with f'(r_max) = 1.

    The ODE is integrated in t = ln r from data proportional to (R0, 1) and the
    solution rescaled so that f' = 1 at r_max, which fixes f/r → 1.  The decay
    of f − r is measured by regressing log|f − r| on log r over the decades
    ``fit_decades`` below r_max.  The residual is the tensor Laplacian of the
    resulting y at ``residual_points`` radii, relative to its term sizes.
    """
    check_radial(spec)
    n = spec.dim
    R0 = spec.inner_radius
    if r_max is None:
        r_max = R0 * 1e6
    prof = RadialProfile(spec)

    def rhs(t, y):
        r = math.exp(t)
        F, dF = y
        c = prof.coefficients(r)
        return [r * dF, r * harmonic_ode_rhs(r, F, dF, c, n)]

    sol = solve_ivp(rhs, (math.log(R0), math.log(r_max)), [R0, 1.0], method="DOP853",
                    rtol=1e-12, atol=1e-14, dense_output=True)
    if not sol.success:
        raise DecayError(f"harmonic coordinate ODE failed: {sol.message}")
    scale = 1.0 / sol.y[1, -1]

    lo_t = math.log(r_max) - fit_decades[1] * math.log(10)
    hi_t = math.log(r_max) - fit_decades[0] * math.log(10)
    lo_t = max(lo_t, math.log(R0) + math.log(10))
    t_fit = np.linspace(lo_t, hi_t, 40)
    Fs, dFs = scale * sol.sol(t_fit)
    radii = np.exp(t_fit)
    dev = np.abs(Fs - radii)
    fit = stats.linregress(t_fit, np.log(np.maximum(dev, 1e-300)))

    expected = None
    if tau is None:
        tau = spec.decay
    if tau is not None:
        expected = 1.0 - min(tau, n - 2)

    # residual of Δ_g y at sample radii, via the tensor-calculus Laplacian
    t_res = np.linspace(math.log(R0) + 0.1, math.log(r_max) - 0.1, residual_points)
    rr = np.exp(t_res)
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(residual_points, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = dirs * rr[:, None]
    Fv, dFv = scale * sol.sol(t_res)
    ddF = np.array([harmonic_ode_rhs(r, f, df, prof.coefficients(r), n) for r, f, df in zip(rr, Fv, dFv)])
    y = coordinate_jet([Fv, dFv, ddF], pts, 2)
    frame = frame_from_jet(pts, spec.metric_jet(pts, 2))
    worst = 0.0
    for i in range(n):
        yi = y[i]
        hess = yi.grad().grad().value
        second = np.einsum("ab...,ab...->...", frame.g_inv.value, hess)
        lap = frame.laplace_beltrami(yi).value
        first = second - lap
        # second derivatives of y scale like |∂y|/r, which sets the floor in flat regions
        natural = np.abs(yi.gradient()).max(axis=0) / rr
        term = np.maximum.reduce([np.abs(second), np.abs(first), natural])
        worst = max(worst, float(np.max(np.abs(lap) / term)))

    return HarmonicCoordinate(radii, Fs, dFs, float(fit.slope), float(fit.stderr), expected, worst, sol, scale)

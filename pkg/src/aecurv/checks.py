"""Identity suites and linearisation probes over batches of points."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from . import jet as J
from .batching import chunk_size_for, map_points
from .fourth_order import FourthOrderFrame, linearized_q_flat, taylor_remainder
from .metric import MetricSpec, annulus_points, from_sources
from .tensor import metric_frame

IDENTITY_NAMES = ("trace_J_minus_Q", "trace_GJ_minus_Q", "trace_T", "div_G_J", "bianchi_div_G")


def sample_points(spec: MetricSpec, count: int, seed: int = 0, annuli: int = 4) -> np.ndarray:
    """Quasi-random points spread over the first dyadic annuli outside R0."""
    per = int(math.ceil(count / annuli))
    r0 = spec.inner_radius
    pts = [annulus_points(spec.dim, r0 * 2**k, r0 * 2 ** (k + 1), per, seed + k) for k in range(annuli)]
    return np.concatenate(pts)[:count]


def divergence_scale(frame, T: J.Jet) -> np.ndarray:
    """Size of the individual terms of g^ab ∇_a T_bv, per point."""
    k = T.order - 1
    ginv = np.abs(frame.g_inv.value).reshape(-1, T.coeffs.shape[-1]).max(axis=0)
    dT = np.abs(T.grad().value).reshape(-1, T.coeffs.shape[-1]).max(axis=0)
    gam = np.abs(frame.christoffel.truncate(k).value).reshape(-1, T.coeffs.shape[-1]).max(axis=0)
    Tv = np.abs(T.value).reshape(-1, T.coeffs.shape[-1]).max(axis=0)
    return np.maximum(ginv * np.maximum(dT, gam * Tv), 1e-30)


def identity_residuals(spec: MetricSpec, points, corrupt: bool = False) -> dict:
    """Scale-relative residuals of the trace, conservation and Bianchi identities per point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))

    def chunk(p):
        f = FourthOrderFrame(metric_frame(spec, p, 5), corrupt=corrupt)
        res = f.residuals()
        div = f.div_G_J().value
        # G_J can vanish identically (n = 4, conformally flat), so measure against its two parts
        scale = np.maximum(divergence_scale(f.frame, f.J), divergence_scale(f.frame, f.J - f.G_J))
        res["div_G_J"] = np.abs(div).max(axis=0) / scale
        G = f.frame.einstein
        bianchi = f.frame.divergence(G).value
        res["bianchi_div_G"] = np.abs(bianchi).max(axis=0) / divergence_scale(f.frame, G)
        return np.stack([res[name] for name in IDENTITY_NAMES])

    out = map_points(chunk, pts, chunk_size_for(spec.dim, 5))
    return {name: out[i] for i, name in enumerate(IDENTITY_NAMES)}


def identity_suite(spec: MetricSpec, points, tol: float = 1e-8, corrupt: bool = False) -> dict:
    """Max residual of each identity, the point where it occurs, and pass/fail."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    res = identity_residuals(spec, pts, corrupt)
    table = {}
    for name, values in res.items():
        i = int(np.argmax(values))
        table[name] = {
            "max_residual": float(values[i]),
            "point": pts[i].tolist(),
            "passed": bool(values[i] <= tol),
        }
    return {"tolerance": tol, "identities": table, "passed": all(v["passed"] for v in table.values())}


def perturbed_metric(n: int, h, eps: float, inner_radius: float = 1.0, params=None) -> MetricSpec:
    """δ + eps·h with h given as n×n expressions or as the n diagonal entries."""
    if isinstance(h, str):
        h = [s.strip() for s in h.split(";")]
    if len(h) == n and all(isinstance(e, str) for e in h):
        h = [[h[i] if i == j else "0" for j in range(n)] for i in range(n)]
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            base = "1" if i == j else "0"
            row.append(f"{base} + eps*({h[i][j]})")
        rows.append(row)
    p = dict(params or {})
    p["eps"] = eps
    return from_sources(n, rows, p, inner_radius, name=f"delta + {eps:g} h")


DEFAULT_PERTURBATIONS = {
    "diagonal_bump": ["exp(-r^2/4)", "0.5*exp(-r^2/4)", "exp(-r^2/8)"],
    "radial_decay": ["x1^2*r^(-4)", "x2^2*r^(-4)", "x3^2*r^(-4)"],
    "off_diagonal": [
        ["exp(-r^2/4)", "x1*x2*exp(-r^2/4)", "0"],
        ["x1*x2*exp(-r^2/4)", "0.5*exp(-r^2/6)", "x2*x3*exp(-r^2/5)"],
        ["0", "x2*x3*exp(-r^2/5)", "r^(-2)"],
    ],
}


def remainder_slope(n: int, h, points, eps_values=(1e-1, 1e-2, 1e-3, 1e-4), inner_radius: float = 1.0) -> dict:
    """Log-log slope of max |R(eps h)| against eps; R is quadratic so the slope should be near 2."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rem = []
    for eps in eps_values:
        spec = perturbed_metric(n, h, eps, inner_radius)
        rem.append(float(np.max(np.abs(taylor_remainder(spec, pts)))))
    rem = np.array(rem)
    eps_arr = np.array(eps_values, dtype=float)
    if np.all(rem == 0):
        return {"eps": eps_arr.tolist(), "remainder": rem.tolist(), "slope": math.inf, "stderr": 0.0}
    fit = stats.linregress(np.log(eps_arr), np.log(rem))
    return {"eps": eps_arr.tolist(), "remainder": rem.tolist(), "slope": float(fit.slope), "stderr": float(fit.stderr)}


def derivative_consistency(n: int, h, points, eps_values=(1e-1, 1e-2, 1e-3, 1e-4), inner_radius: float = 1.0) -> dict:
    """Error of the difference quotient Q_{δ+εh}/ε against DQ_δ·h; it should shrink like ε."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    h_spec = perturbed_metric(n, h, 1.0, inner_radius)
    g = h_spec.metric_jet(pts, 4)
    c = g.coeffs.copy()
    c[0] -= np.eye(n)[:, :, None]
    dq = linearized_q_flat(J.Jet(c, n, 4)).value
    errors = []
    for eps in eps_values:
        spec = perturbed_metric(n, h, eps, inner_radius)
        Q = FourthOrderFrame(metric_frame(spec, pts, 4)).Q.value
        errors.append(float(np.max(np.abs(Q / eps - dq))))
    fit = stats.linregress(np.log(eps_values), np.log(errors))
    return {"eps": list(eps_values), "error": errors, "slope": float(fit.slope), "dq": dq.tolist()}

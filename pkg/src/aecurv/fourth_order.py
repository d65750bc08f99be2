"""Q-curvature, T, Bach, J and J-Einstein tensors, plus the flat-space linearisation.

Everything is computed in jet arithmetic from a MetricJetFrame; a frame of
order K yields fourth-order quantities as jets of order K − 4 (plain values
for K = 4, one extra derivative for K = 5, which the divergence needs).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import jet as J
from .metric import MetricSpec
from .tensor import (
    CurvatureOrderError,
    MetricJetFrame,
    frame_from_jet,
    metric_frame,
    norm_sq,
    require_order,
    scale_of,
    trace,
)


def q_coefficients(n: int) -> tuple[float, float, float]:
    """Coefficients (c_ΔR, c_|Ric|², c_R²) of Q in dimension n."""
    a = -1.0 / (2 * (n - 1))
    b = -2.0 / (n - 2) ** 2
    c = (n**3 - 4 * n**2 + 16 * n - 16) / (8.0 * (n - 1) ** 2 * (n - 2) ** 2)
    return a, b, c


def j_coefficients(n: int) -> tuple[float, float, float]:
    """Coefficients of Q g, B and T in J."""
    return 1.0 / n, -1.0 / (n - 2), -(n - 4) / (4.0 * (n - 1) * (n - 2))


def _sq(g_inv: J.Jet, S: J.Jet) -> J.Jet:
    """(S×S)_ij = g^kl S_li S_kj."""
    up = J.contract("kl,li->ki", g_inv, S)  # S^k_i
    return J.contract("ki,kj->ij", up, S)


@dataclass(eq=False)
class FourthOrderFrame:
    """Fourth-order curvature at a batch of points.

    ``corrupt`` perturbs the T-tensor coefficient on purpose; it exists only so
    the identity checker can be shown to fail on a broken build.
    """

    frame: MetricJetFrame
    corrupt: bool = False
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        require_order(self.frame.g, 4, "Q")
        self.provenance = {
            "metric_order": self.frame.order,
            "christoffel_order": self.frame.order - 1,
            "curvature_order": self.frame.order - 2,
            "fourth_order_order": self.frame.order - 4,
        }

    @property
    def dim(self) -> int:
        return self.frame.dim

    @property
    def order(self) -> int:
        return self.frame.order - 4

    def _g(self) -> J.Jet:
        return self.frame.g.truncate(self.order)

    def _ginv(self) -> J.Jet:
        return self.frame.g_inv.truncate(self.order)

    @cached_property
    def ricci(self) -> J.Jet:
        return self.frame.ricci

    @cached_property
    def scalar(self) -> J.Jet:
        return self.frame.scalar

    @cached_property
    def schouten(self) -> J.Jet:
        return self.frame.schouten

    @cached_property
    def laplacian_scalar(self) -> J.Jet:
        return self.frame.laplace_beltrami(self.scalar)

    @cached_property
    def Q(self) -> J.Jet:
        n = self.dim
        a, b, c = q_coefficients(n)
        k = self.order
        R = self.scalar.truncate(k)
        ric2 = norm_sq(self._ginv(), self.ricci.truncate(k))
        return self.laplacian_scalar * a + ric2 * b + J.jet_mul(R, R) * c

    @cached_property
    def T(self) -> J.Jet:
        n = self.dim
        k = self.order
        g, gi = self._g(), self._ginv()
        S = self.schouten.truncate(k)
        trS_full = trace(self.frame.g_inv, self.schouten)
        hess = self.frame.covariant_hessian(trS_full)
        lap = trace(gi, hess)
        trS = trS_full.truncate(k)
        part1 = hess - J.jet_mul(g, lap[None, None] * (1.0 / n))
        part2 = _sq(gi, S) - J.jet_mul(g, norm_sq(gi, S)[None, None] * (1.0 / n))
        S_free = S - J.jet_mul(g, trS[None, None] * (1.0 / n))
        part3 = J.jet_mul(S_free, trS[None, None])
        c2 = 4.0 * (n - 1) * (1.5 if self.corrupt else 1.0)
        return part1 * (n - 2) + part2 * c2 - part3 * float(n * n)

    @cached_property
    def B(self) -> J.Jet:
        n = self.dim
        k = self.order
        g, gi = self._g(), self._ginv()
        S = self.schouten.truncate(k)
        lap_ric = self.frame.tensor_laplacian(self.ricci)
        lapR = self.laplacian_scalar
        hessR = self.frame.covariant_hessian(self.scalar)
        riem = self.frame.riemann.truncate(k)
        S_mixed = J.contract("cd,db->cb", S, gi)  # S_c^b
        riem_term = J.contract("cubv,cb->uv", riem, S_mixed)  # R^c_ubv S_c^b
        trS = trace(gi, S)
        out = lap_ric * (1.0 / (n - 2))
        out = out - J.jet_mul(g, lapR[None, None] * (1.0 / (2 * (n - 1) * (n - 2))))
        out = out - hessR * (1.0 / (2 * (n - 1)))
        out = out + riem_term * 2.0
        out = out - _sq(gi, S) * float(n - 4)
        out = out - J.jet_mul(g, norm_sq(gi, S)[None, None])
        out = out - J.jet_mul(S, trS[None, None]) * 2.0
        return out

    @cached_property
    def J(self) -> J.Jet:
        cq, cb, ct = j_coefficients(self.dim)
        out = J.jet_mul(self._g(), self.Q[None, None] * cq) + self.B * cb
        if ct != 0.0:
            out = out + self.T * ct
        return out

    @cached_property
    def G_J(self) -> J.Jet:
        return self.J - J.jet_mul(self._g(), self.Q[None, None] * 0.25)

    def div_G_J(self) -> J.Jet:
        if self.order < 1:
            raise CurvatureOrderError(5, self.frame.order, "divergence of G_J")
        return self.frame.divergence(self.G_J)

    def residuals(self) -> dict:
        """Scale-relative residuals of the trace identities (values, per point)."""
        n = self.dim
        gi = self.frame.g_inv.truncate(0)
        Q = self.Q.value
        trJ = trace(gi, self.J.truncate(0)).value
        trG = trace(gi, self.G_J.truncate(0)).value
        trT = trace(gi, self.T.truncate(0)).value
        scale_q = scale_of(Q, self.J.value)
        scale_t = scale_of(self.T.value)
        return {
            "trace_J_minus_Q": np.abs(trJ - Q) / scale_q,
            "trace_GJ_minus_Q": np.abs(trG - (4 - n) / 4.0 * Q) / scale_q,
            "trace_T": np.abs(trT) / scale_t,
        }


def fourth_order_frame(spec: MetricSpec, points, order: int = 4, corrupt: bool = False) -> FourthOrderFrame:
    return FourthOrderFrame(metric_frame(spec, points, order), corrupt)


def q_curvature(frame: MetricJetFrame) -> J.Jet:
    return FourthOrderFrame(frame).Q


def t_tensor(frame: MetricJetFrame) -> J.Jet:
    return FourthOrderFrame(frame).T


def bach_tensor(frame: MetricJetFrame) -> J.Jet:
    return FourthOrderFrame(frame).B


def j_tensor(frame: MetricJetFrame, with_divergence: bool = False):
    """(J, G_J) and, when requested, div_g G_J (needs an order-5 frame)."""
    f = FourthOrderFrame(frame)
    if with_divergence:
        return f.J, f.G_J, f.div_G_J()
    return f.J, f.G_J


# ---- linearisation at the flat metric ------------------------------------------

def flat_laplacian(f: J.Jet) -> J.Jet:
    """Euclidean Laplacian of every component of a jet (order drops by 2)."""
    require_order(f, 2, "flat Laplacian")
    d2 = f.grad().grad()
    return d2.map_tensor(lambda c: np.einsum("Pii...->P...", c))


def flat_div2(h: J.Jet) -> J.Jet:
    """∂_i ∂_j h_ij."""
    require_order(h, 2, "double divergence")
    d2 = h.grad().grad()
    return d2.map_tensor(lambda c: np.einsum("Pijij...->P...", c))


def flat_trace(h: J.Jet) -> J.Jet:
    return h.map_tensor(lambda c: np.einsum("Pii...->P...", c))


def linearized_q_flat(h: J.Jet) -> J.Jet:
    """DQ_δ·h = −(Δ div² h − Δ² tr h)/(2(n−1))."""
    require_order(h, 4, "linearized Q")
    n = h.dim
    u = flat_laplacian(flat_div2(h)) - flat_laplacian(flat_laplacian(flat_trace(h)))
    return u * (-1.0 / (2 * (n - 1)))


def adjoint_dq_flat(V: J.Jet) -> J.Jet:
    """DQ*_δ·V = −(−Δ²V δ + ∂²ΔV)/(2(n−1)) as a 2-tensor jet."""
    require_order(V, 4, "adjoint of linearized Q")
    n = V.dim
    lapV = flat_laplacian(V)
    bilap = flat_laplacian(lapV)
    hess = lapV.grad().grad()
    eye = np.eye(n).reshape((n, n) + (1,) * (bilap.coeffs.ndim - 1))
    delta_term = J.Jet(bilap.coeffs[:, None, None] * eye, n, bilap.order)
    return (hess - delta_term) * (-1.0 / (2 * (n - 1)))


def boundary_one_form(h: J.Jet, V: J.Jet) -> J.Jet:
    """U(h, V) with u = div² h − Δ tr h; result has order min(order) − 3."""
    require_order(h, 3, "boundary one-form")
    require_order(V, 3, "boundary one-form")
    k = min(h.order, V.order)
    h, V = h.truncate(k), V.truncate(k)
    n = h.dim
    o = k - 3
    trh = flat_trace(h)
    u = flat_div2(h) - flat_laplacian(trh)  # order k-2
    du = u.grad()  # order k-3
    lapV = flat_laplacian(V)
    dlapV = lapV.grad()
    divh = h.grad().map_tensor(lambda c: np.einsum("Piij...->Pj...", c))  # ∂_i h_ij
    dtrh = trh.grad()
    Vo = V.truncate(o)
    uo = u.truncate(o)
    ho = h.truncate(o)
    out = J.jet_mul(du, Vo[None]) - J.jet_mul(V.grad().truncate(o), uo[None])
    out = out + J.jet_mul((divh - dtrh).truncate(o), lapV.truncate(o)[None])
    out = out - J.contract("ij,i->j", ho, dlapV.truncate(o))
    out = out + J.jet_mul(dlapV.truncate(o), flat_trace(ho)[None])
    return out * (-1.0 / (2 * (n - 1)))


def deviation_jet(spec: MetricSpec, points, order: int) -> J.Jet:
    """h = g − δ as a jet."""
    g = spec.metric_jet(np.atleast_2d(np.asarray(points, dtype=float)), order)
    c = g.coeffs.copy()
    c[0] -= np.eye(spec.dim)[:, :, None]
    return J.Jet(c, spec.dim, order)


def taylor_remainder_from_jet(g: J.Jet, points) -> np.ndarray:
    """R(h) = Q_g − DQ_δ·h with h = g − δ; Q_δ = 0 is used directly."""
    frame = frame_from_jet(np.atleast_2d(points), g)
    Q = FourthOrderFrame(frame).Q.truncate(0).value
    c = g.coeffs.copy()
    c[0] -= np.eye(g.dim)[:, :, None]
    h = J.Jet(c, g.dim, g.order)
    return Q - linearized_q_flat(h.truncate(4)).value


def taylor_remainder(spec: MetricSpec, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return taylor_remainder_from_jet(spec.metric_jet(pts, 4), pts)

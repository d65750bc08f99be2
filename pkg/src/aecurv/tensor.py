"""Classical curvature from metric jets in the coordinate basis of the end chart.

All tensors are jets whose trailing shape is ``(n, ..., n, N)``: tensor
indices first, then the batch of N points.  Index conventions::

    Γ^k_ij   = ½ g^kl (∂_i g_lj + ∂_j g_li − ∂_l g_ij)      stored gamma[k, i, j]
    R^i_jkl  = ∂_k Γ^i_lj − ∂_l Γ^i_kj + Γ^i_km Γ^m_lj − Γ^i_lm Γ^m_kj
                                                           stored riem[i, j, k, l]
    Ric_jl   = R^i_jil,   R = g^jl Ric_jl

With these signs the round sphere has positive scalar curvature.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import jet as J
from .metric import MetricSpec


class CurvatureOrderError(J.JetOrderError):
    pass


def require_order(jet: J.Jet, needed: int, what: str) -> None:
    if jet.order < needed:
        raise CurvatureOrderError(needed, jet.order, what)


def _batch_identity(n: int, shape_tail: tuple) -> np.ndarray:
    eye = np.eye(n).reshape((n, n) + (1,) * len(shape_tail))
    return np.broadcast_to(eye, (n, n) + shape_tail)


def identity_jet(n: int, order: int, batch: tuple) -> J.Jet:
    return J.Jet.constant(_batch_identity(n, batch), n, order)


def jet_matrix_inverse(g: J.Jet) -> J.Jet:
    """Inverse of a matrix-valued jet (tensor axes 0, 1).

    Value-level inverse X, then by total degree
    (g⁻¹)^α = −X Σ_{0<β≤α} C(α,β) ∂^β g (g⁻¹)^{α−β}.
    """
    n, K = g.dim, g.order
    t = J.tables(n)
    g0 = np.moveaxis(g.coeffs[0], (0, 1), (-2, -1))
    try:
        X = np.linalg.inv(g0)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("metric value matrix is singular") from None
    X = np.moveaxis(X, (-2, -1), (0, 1))
    out = np.zeros_like(g.coeffs)
    out[0] = X
    for d in range(1, K + 1):
        lo_pos, hi_pos = t.ncoef[d - 1], t.ncoef[d]
        start, stop = t.npairs[d - 1], t.npairs[d]
        lo = t.pair_lo[start:stop]
        hi = t.pair_hi[start:stop]
        coef = t.pair_coef[start:stop]
        outp = t.pair_out[start:stop]
        keep = lo != 0
        lo, hi, coef, outp = lo[keep], hi[keep], coef[keep], outp[keep]
        prod = np.einsum("Pab...,Pbc...->Pac...", g.coeffs[lo], out[hi])
        prod *= coef.reshape((-1,) + (1,) * (prod.ndim - 1))
        starts = np.searchsorted(outp, np.arange(lo_pos, hi_pos))
        summed = np.add.reduceat(prod, starts, axis=0)
        out[lo_pos:hi_pos] = -np.einsum("ab...,Pbc...->Pac...", X, summed)
    return J.Jet(out, n, K)


def log_det_jet(g: J.Jet, g_inv: J.Jet) -> J.Jet:
    """log det g through ∂_i log det g = g^ab ∂_i g_ab."""
    g0 = np.moveaxis(g.coeffs[0], (0, 1), (-2, -1))
    sign, logdet = np.linalg.slogdet(g0)
    if np.any(sign <= 0):
        raise J.JetDomainError("sqrt_det_g", "metric determinant is not positive")
    if g.order == 0:
        return J.Jet(logdet[None], g.dim, 0)
    dg = g.grad()  # (i, a, b)
    dlog = J.contract("ab,iab->i", g_inv.truncate(g.order - 1), dg)
    return J.integrate_gradient(logdet, dlog)


def covariant_derivative(gamma: J.Jet, T: J.Jet, rank: int) -> J.Jet:
    """∇T for a covariant tensor of the given rank; new derivative index first.

    (∇T)_{b i1..im} = ∂_b T_{i1..im} − Σ_s Γ^z_{b i_s} T_{i1..z..im}.
    """
    require_order(T, 1, "covariant derivative")
    out = T.grad()
    k = out.order
    G = gamma.truncate(k)
    Tk = T.truncate(k)
    idx = string.ascii_lowercase[1:1 + rank]
    for s in range(rank):
        t_sub = idx[:s] + "z" + idx[s + 1:]
        term = J.contract(f"za{idx[s]},{t_sub}->a{idx}", G, Tk)
        out = out - term
    return out


def trace(g_inv: J.Jet, T: J.Jet) -> J.Jet:
    k = min(g_inv.order, T.order)
    return J.contract("ab,ab->", g_inv.truncate(k), T.truncate(k))


def norm_sq(g_inv: J.Jet, T: J.Jet) -> J.Jet:
    """|T|²_g = g^ia g^jb T_ij T_ab."""
    k = min(g_inv.order, T.order)
    gi, Tk = g_inv.truncate(k), T.truncate(k)
    up = J.contract("ia,ij->aj", gi, Tk)  # T^a_j
    up = J.contract("jb,aj->ab", gi, up)  # T^ab
    return J.contract("ab,ab->", up, Tk)


def lowered_riemann(g: J.Jet, riem: J.Jet) -> J.Jet:
    """R_abcd = g_ai R^i_bcd."""
    k = riem.order
    return J.contract("ai,ibcd->abcd", g.truncate(k), riem)


@dataclass(frozen=True, eq=False)
class MetricJetFrame:
    """Metric jets at a batch of points, with inverse and volume density."""

    points: np.ndarray  # (N, n)
    g: J.Jet
    g_inv: J.Jet

    @property
    def dim(self) -> int:
        return self.g.dim

    @property
    def order(self) -> int:
        return self.g.order

    @property
    def batch(self) -> tuple:
        return self.g.shape[2:]

    @cached_property
    def sqrt_det_g(self) -> J.Jet:
        return J.exp(J.jet_scale(log_det_jet(self.g, self.g_inv), 0.5))

    # curvature, computed on demand and cached
    @cached_property
    def christoffel(self) -> J.Jet:
        require_order(self.g, 1, "Christoffel symbols")
        dg = self.g.grad()  # dg[l, i, j] = ∂_l g_ij
        c = dg.coeffs
        low = 0.5 * (np.swapaxes(c, 1, 2) + np.transpose(c, (0, 2, 3, 1) + tuple(range(4, c.ndim))) - c)
        # low[l, i, j] = ½(∂_i g_lj + ∂_j g_li − ∂_l g_ij)
        low_jet = J.Jet(low, self.dim, dg.order)
        return J.contract("kl,lij->kij", self.g_inv.truncate(dg.order), low_jet)

    @cached_property
    def riemann(self) -> J.Jet:
        require_order(self.g, 2, "Riemann tensor")
        gam = self.christoffel
        dgam = gam.grad()  # dgam[k, i, l, j] = ∂_k Γ^i_lj
        k = dgam.order
        G = gam.truncate(k)
        lin = dgam.transpose(1, 3, 0, 2)  # [i, j, k, l]
        quad = J.contract("ikm,mlj->ijkl", G, G)
        both = lin + quad
        return both - both.transpose(0, 1, 3, 2)

    @cached_property
    def riemann_lowered(self) -> J.Jet:
        return lowered_riemann(self.g, self.riemann)

    @cached_property
    def ricci(self) -> J.Jet:
        R = self.riemann
        return R.map_tensor(lambda c: np.einsum("Pijil...->Pjl...", c))

    @cached_property
    def scalar(self) -> J.Jet:
        return trace(self.g_inv, self.ricci)

    @cached_property
    def einstein(self) -> J.Jet:
        k = self.ricci.order
        return self.ricci - J.jet_mul(self.g.truncate(k), self.scalar[None, None] * 0.5)

    @cached_property
    def schouten(self) -> J.Jet:
        n = self.dim
        k = self.ricci.order
        S = self.ricci - J.jet_mul(self.g.truncate(k), self.scalar[None, None] * (1.0 / (2 * (n - 1))))
        return S * (1.0 / (n - 2))

    # differential operators
    def gradient(self, f: J.Jet) -> J.Jet:
        require_order(f, 1, "gradient")
        return f.grad()

    def covariant_hessian(self, f: J.Jet) -> J.Jet:
        require_order(f, 2, "covariant Hessian")
        return covariant_derivative(self.christoffel, f.grad(), 1)

    def laplace_beltrami(self, f: J.Jet) -> J.Jet:
        return trace(self.g_inv, self.covariant_hessian(f))

    def covariant_derivative(self, T: J.Jet, rank: int) -> J.Jet:
        return covariant_derivative(self.christoffel, T, rank)

    def divergence(self, T: J.Jet) -> J.Jet:
        """(div_g T)_v = g^ab ∇_a T_bv for a 2-tensor."""
        require_order(T, 1, "divergence")
        N = self.covariant_derivative(T, 2)  # N[a, b, v]
        return J.contract("ab,abv->v", self.g_inv.truncate(N.order), N)

    def tensor_laplacian(self, T: J.Jet) -> J.Jet:
        """Rough Laplacian g^ab ∇_a ∇_b T_uv of a 2-tensor."""
        require_order(T, 2, "tensor Laplacian")
        N = self.covariant_derivative(T, 2)  # N[b, u, v]
        NN = self.covariant_derivative(N, 3)  # NN[a, b, u, v]
        return J.contract("ab,abuv->uv", self.g_inv.truncate(NN.order), NN)

    def tensor_laplacian_split(self, T: J.Jet) -> J.Jet:
        """Rough Laplacian as Δ_g(T_uv) + E_uv, the componentwise scalar Laplacian plus correction.

        E_uv = −g^ab{∂_a(Γ^k_bu T_kv + Γ^k_bv T_uk) − Γ^k_ab Γ^l_ku T_lv
               − Γ^k_ab Γ^l_vk T_ul + Γ^k_au ∇_b T_kv + Γ^k_av ∇_b T_uk}.
        Built from explicit partials so it shares no code with tensor_laplacian.
        """
        require_order(T, 2, "tensor Laplacian")
        K = T.order
        gam = self.christoffel.truncate(K - 1)
        ginv = self.g_inv
        Tk1 = T.truncate(K - 1)
        # componentwise Laplace-Beltrami: g^ab(∂_ab T − Γ^k_ab ∂_k T)
        d2 = T.grad().grad()  # d2[a, b, u, v] = ∂_a ∂_b T_uv
        dT = T.grad().truncate(K - 2)  # dT[k, u, v]
        g2 = ginv.truncate(K - 2)
        G2 = gam.truncate(K - 2)
        lap = J.contract("ab,abuv->uv", g2, d2)
        contracted = J.contract("ab,kab->k", g2, G2)  # g^ab Γ^k_ab
        lap = lap - J.contract("k,kuv->uv", contracted, dT)
        # A_buv = Γ^k_bu T_kv + Γ^k_bv T_uk (order K-1), differentiated
        A = J.contract("kbu,kv->buv", gam, Tk1) + J.contract("kbv,uk->buv", gam, Tk1)
        dA = A.grad()  # dA[a, b, u, v]
        E = J.contract("ab,abuv->uv", g2, dA)
        # covariant derivative of T at order K-2 from explicit partials
        nablaT = T.grad().truncate(K - 2) - (
            J.contract("kbu,kv->buv", G2, T.truncate(K - 2))
            + J.contract("kbv,uk->buv", G2, T.truncate(K - 2))
        )
        T2 = T.truncate(K - 2)
        GG = J.contract("kab,lku->abul", G2, G2)  # Γ^k_ab Γ^l_ku
        E = E - _triple(g2, GG, T2, "ab,abul,lv->uv")
        GG2 = J.contract("kab,lvk->abvl", G2, G2)  # Γ^k_ab Γ^l_vk
        E = E - _triple(g2, GG2, T2, "ab,abvl,ul->uv")
        E = E + _triple(g2, G2, nablaT, "ab,kau,bkv->uv")
        E = E + _triple(g2, G2, nablaT, "ab,kav,buk->uv")
        return lap - E


def _triple(a: J.Jet, b: J.Jet, c: J.Jet, subscripts: str) -> J.Jet:
    lhs, out = subscripts.split("->")
    sa, sb, sc = lhs.split(",")
    inner = "".join(dict.fromkeys(ch for ch in sa + sb if ch in sc + out))
    ab = J.contract(f"{sa},{sb}->{inner}", a, b)
    return J.contract(f"{inner},{sc}->{out}", ab, c)


def frame_from_jet(points, g: J.Jet) -> MetricJetFrame:
    return MetricJetFrame(np.asarray(points, dtype=float), g, jet_matrix_inverse(g))


def metric_frame(spec: MetricSpec, points, order: int) -> MetricJetFrame:
    """Metric jets of ``spec`` at points (N, n) or a single point (n,)."""
    if not 0 <= order <= J.MAX_ORDER:
        raise J.JetOrderError(order, J.MAX_ORDER, "metric frame")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != spec.dim:
        raise J.JetMismatchError("dimension", pts.shape[1], spec.dim)
    radii = np.linalg.norm(pts, axis=1)
    if np.any(radii < spec.inner_radius * (1 - 1e-12)):
        bad = pts[np.argmin(radii)]
        raise J.JetDomainError("metric_frame", f"point {bad.tolist()} lies inside the inner radius {spec.inner_radius}")
    return frame_from_jet(pts, spec.metric_jet(pts, order))


def christoffel(frame: MetricJetFrame) -> J.Jet:
    return frame.christoffel


def riemann(frame: MetricJetFrame) -> J.Jet:
    return frame.riemann


def ricci(frame: MetricJetFrame) -> J.Jet:
    return frame.ricci


def scalar_curv(frame: MetricJetFrame) -> J.Jet:
    return frame.scalar


def einstein(frame: MetricJetFrame) -> J.Jet:
    return frame.einstein


def schouten(frame: MetricJetFrame) -> J.Jet:
    return frame.schouten


def covariant_hessian(frame: MetricJetFrame, f: J.Jet) -> J.Jet:
    return frame.covariant_hessian(f)


def laplace_beltrami(frame: MetricJetFrame, f: J.Jet) -> J.Jet:
    return frame.laplace_beltrami(f)


def tensor_laplacian(frame: MetricJetFrame, T: J.Jet) -> J.Jet:
    return frame.tensor_laplacian(T)


def divergence(frame: MetricJetFrame, T: J.Jet) -> J.Jet:
    return frame.divergence(T)


def scale_of(*arrays, floor: float = 1e-30) -> np.ndarray:
    """Per-point magnitude: max absolute entry over the given value arrays (batch last)."""
    mags = []
    for a in arrays:
        a = np.asarray(a)
        if a.ndim <= 1:
            mags.append(np.abs(a))
        else:
            mags.append(np.abs(a).reshape(-1, a.shape[-1]).max(axis=0))
    return np.maximum(np.max(np.stack(mags), axis=0), floor)

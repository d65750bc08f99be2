"""Q, Bach, T, J and the flat linearisation against independent references."""

import json
from pathlib import Path

import numpy as np
import pytest

from aecurv import catalog as C
from aecurv import dsl
from aecurv import jet as J
from aecurv.checks import derivative_consistency, perturbed_metric, remainder_slope
from aecurv.fourth_order import (
    FourthOrderFrame,
    adjoint_dq_flat,
    boundary_one_form,
    fourth_order_frame,
    j_coefficients,
    linearized_q_flat,
    taylor_remainder,
)
from aecurv.metric import annulus_points, from_sources
from aecurv.tensor import CurvatureOrderError, metric_frame

ORACLE = json.loads((Path(__file__).parent / "oracles" / "frozen_values.json").read_text())


def rotated_point(n, r, seed):
    v = np.random.default_rng(seed).normal(size=n)
    return r * v / np.linalg.norm(v)


def expr_jet(sources, pts, order):
    """Jet of a tensor of expressions, trailing shape tensor + (N,)."""
    ev = dsl.JetEvaluator(pts, order)
    arr = np.asarray(sources, dtype=object)
    coeffs = np.zeros((J.ncoef(pts.shape[1], order),) + arr.shape + (len(pts),))
    for idx in np.ndindex(arr.shape):
        v = ev(dsl.parse(arr[idx]))
        if isinstance(v, J.Jet):
            coeffs[(slice(None),) + idx] = v.coeffs
        else:
            coeffs[(0,) + idx] = v  # constants come back as plain floats
    return J.Jet(coeffs, pts.shape[1], order)


def test_flat_fourth_order_tensors_vanish():
    for n in (3, 4, 5, 6):
        f = fourth_order_frame(C.flat(n), annulus_points(n, 1, 4, 8, 0), 4)
        for name in ("Q", "T", "B", "J", "G_J"):
            assert np.all(getattr(f, name).coeffs == 0), (n, name)


@pytest.mark.parametrize("case", ORACLE["q_conformal"], ids=lambda c: f"n{c['n']}-r{c['r']}-{c['u']}")
def test_q_matches_both_symbolic_routes(case):
    n = case["n"]
    spec = C.conformal(n, case["u"].replace("**", "^"))
    pt = rotated_point(n, case["r"], 3)[None]
    Q = fourth_order_frame(spec, pt, 4).Q.value[0]
    ref = case["Q_paneitz"]
    print(f"n={n} r={case['r']}: Q={Q:.15e} paneitz={ref:.15e} conformal={case['Q_conformal_formula']:.15e}")
    tol = 1e-10 * max(abs(ref), 1e-3)
    assert abs(Q - ref) <= tol
    assert abs(Q - case["Q_conformal_formula"]) <= tol


@pytest.mark.parametrize("case", ORACLE["q_dim4"], ids=lambda c: f"r{c['r']}-{c['f']}")
def test_q_in_dimension_four(case):
    f = case["f"].replace("**", "^")
    spec = from_sources(4, [[f"exp(2*({f}))" if i == j else "0" for j in range(4)] for i in range(4)])
    Q = fourth_order_frame(spec, np.array([[0.0, case["r"], 0.0, 0.0]]), 4).Q.value[0]
    assert abs(Q - case["Q"]) < 1e-12
    # in dimension four Q e^{4f} is the flat bilaplacian of f
    assert abs(Q - case["bilaplacian_f_times_exp(-4f)"]) < 1e-12


def test_t_drops_out_of_j_in_dimension_four():
    assert j_coefficients(4)[2] == 0.0


def test_bach_vanishes_for_conformally_flat_four_metrics():
    pts = annulus_points(4, 1, 5, 20, 2)
    for u in ("1 + 0.3*r^(-1)", "1 + 0.2*exp(-r^2/6)"):
        spec = from_sources(4, [[f"({u})^2" if i == j else "0" for j in range(4)] for i in range(4)])
        f = fourth_order_frame(spec, pts, 4)
        B = np.abs(f.B.value).max()
        scale = np.abs(f.frame.tensor_laplacian(f.ricci).value).max()
        print(f"u={u}: max|B|={B:.2e}, term scale {scale:.2e}")
        assert B < 1e-9 * max(scale, 1.0)
    # a metric that is not conformally flat has nonzero Bach tensor
    g = C.diagonal_perturbation(4, eps=0.3)
    assert np.abs(fourth_order_frame(g, pts, 4).B.value).max() > 1e-4


def test_identities_on_a_general_metric():
    spec = from_sources(4, [["1 + 0.2*exp(-r^2/8)", "0.1*x1*x2*r^(-3)", "0", "0"],
                            ["1 + 0.1*r^(-1)", "0", "0"], ["1 + 0.05*x3^2*r^(-3)", "0"], ["1"]])
    f = FourthOrderFrame(metric_frame(spec, annulus_points(4, 1, 4, 10, 9), 5))
    res = f.residuals()
    for name, v in res.items():
        print(name, v.max())
        assert v.max() < 1e-10
    div = np.abs(f.div_G_J().value).max()
    scale = np.abs(f.G_J.grad().value).max()
    print("div G_J relative:", div / scale)
    assert div < 1e-9 * scale


def test_q_needs_fourth_derivatives():
    fr = metric_frame(C.flat(3), np.array([[2.0, 0, 0]]), 3)
    with pytest.raises(CurvatureOrderError, match="Q requires derivative order 4"):
        FourthOrderFrame(fr)


def test_corrupted_build_breaks_conservation():
    spec = C.conformal(5, "1 + a*r^(-1)")
    pts = annulus_points(5, 1, 4, 6, 1)
    good = FourthOrderFrame(metric_frame(spec, pts, 5))
    bad = FourthOrderFrame(metric_frame(spec, pts, 5), corrupt=True)
    d_good = np.abs(good.div_G_J().value).max()
    d_bad = np.abs(bad.div_G_J().value).max()
    print("div G_J good/bad:", d_good, d_bad)
    assert d_bad > 1e4 * d_good


# ---- flat linearisation ------------------------------------------------------------

def test_linearisation_kills_constant_and_zero():
    pts = annulus_points(3, 1, 3, 10, 0)
    h0 = J.Jet.zeros((3, 3, len(pts)), 3, 4)
    assert np.all(linearized_q_flat(h0).coeffs == 0)
    hc = expr_jet([["0.3" if i == j else "0" for j in range(3)] for i in range(3)], pts, 4)
    assert np.all(linearized_q_flat(hc).coeffs == 0)
    V = expr_jet("x1^2*x2", pts, 4)
    assert np.all(boundary_one_form(h0, V).coeffs == 0)


def test_adjoint_kernel():
    n = 5
    pts = np.random.default_rng(4).uniform(-3, 3, size=(100, n))
    for V in ("1", "x1", "x1^2 + x2^2 + x3^2 + x4^2 + x5^2"):
        out = adjoint_dq_flat(expr_jet(V, pts, 4)).value
        print(V, np.abs(out).max())
        assert np.abs(out).max() <= 1e-10


def test_adjoint_matches_symbolic_table():
    table = ORACLE["adjoint_dq_flat_n4"]["x1^2*x2^2"]
    ref = np.array([[float(eval(c)) for c in row] for row in table])
    pts = np.random.default_rng(1).uniform(-2, 2, size=(7, 4))
    out = adjoint_dq_flat(expr_jet("x1^2*x2^2", pts, 4)).value
    assert np.allclose(out, ref[:, :, None], atol=1e-13)


def test_green_identity_for_boundary_form():
    # div U(h, V) = V DQ(h) − <h, DQ*(V)> pointwise
    n = 3
    pts = annulus_points(n, 1, 3, 12, 5)
    sources = [["exp(-r^2/5)*x1", "0.3*x1*x2*exp(-r^2/4)", "x3*r^(-2)"],
               ["0.3*x1*x2*exp(-r^2/4)", "x2^2*r^(-3)", "0"],
               ["x3*r^(-2)", "0", "log(r)*x1"]]
    h = expr_jet(sources, pts, 5)
    V = expr_jet("x1^3*x2 + x3^2*x1 + exp(x2/3)", pts, 5)
    U = boundary_one_form(h, V)  # order 2
    lhs = np.einsum("jj...->...", U.grad().value)
    dq = linearized_q_flat(h.truncate(4)).value
    adj = adjoint_dq_flat(V.truncate(4)).value
    rhs = V.value * dq - np.einsum("ij...,ij...->...", h.value, adj)
    err = np.abs(lhs - rhs).max() / np.abs(rhs).max()
    print("Green identity relative error:", err)
    assert err < 1e-12


def test_adjoint_pairing_by_integration():
    # ∫ V DQ(h) = ∫ <h, DQ* V> for a rapidly decaying h
    from aecurv.flux import build_quadrature

    n = 3
    quad = build_quadrature(n, 10)
    t, w = np.polynomial.legendre.leggauss(60)
    R = 9.0
    rad = 0.5 * R * (t + 1)
    wr = 0.5 * R * w * rad ** (n - 1)
    pts = (rad[:, None, None] * quad.nodes[None]).reshape(-1, n)
    weights = (wr[:, None] * quad.weights[None]).ravel()
    sources = [["exp(-x1^2 - x2^2 - x3^2)*x1", "0.5*x2*exp(-x1^2 - x2^2 - x3^2)", "0"],
               ["0.5*x2*exp(-x1^2 - x2^2 - x3^2)", "x2^2*exp(-x1^2 - x2^2 - x3^2)", "0"],
               ["0", "0", "(1 + x3)*exp(-x1^2 - x2^2 - x3^2)"]]
    h = expr_jet(sources, pts, 4)
    V = expr_jet("x1^3*x2 + x3^4 + x1*x3^2", pts, 4)
    lhs = np.sum(weights * V.value * linearized_q_flat(h).value)
    rhs = np.sum(weights * np.einsum("ij...,ij...->...", h.value, adjoint_dq_flat(V).value))
    print("pairing:", lhs, rhs)
    assert abs(lhs - rhs) < 1e-9 * max(abs(lhs), 1.0)


def test_difference_quotient_converges_to_linearisation():
    pts = annulus_points(3, 1.0, 3.0, 20, 2)
    rep = derivative_consistency(3, ["exp(-r^2/4)", "0.5*exp(-r^2/4)", "exp(-r^2/8)"], pts)
    print("difference quotient errors:", rep["error"], "slope:", rep["slope"])
    # the quotient error is R(εh)/ε, so it falls like ε
    assert 0.9 < rep["slope"] < 1.1


def test_remainder_is_quadratic():
    pts = annulus_points(3, 1.0, 3.0, 20, 2)
    rep = remainder_slope(3, ["x1^2*r^(-4)", "x2^2*r^(-4)", "x3^2*r^(-4)"], pts)
    print("remainder:", rep["remainder"], "slope:", rep["slope"])
    assert rep["slope"] >= 1.9


def test_remainder_of_flat_is_zero():
    pts = annulus_points(4, 1.0, 3.0, 8, 0)
    assert np.all(taylor_remainder(C.flat(4), pts) == 0)
    spec = perturbed_metric(3, ["0", "0", "0"], 0.1)
    assert np.all(taylor_remainder(spec, annulus_points(3, 1.0, 3.0, 8, 0)) == 0)

"""Curvature from metric jets against closed forms and the frozen symbolic oracle."""

import json
from pathlib import Path

import numpy as np
import pytest

from aecurv import catalog as C
from aecurv import dsl
from aecurv import jet as J
from aecurv.metric import annulus_points, from_sources
from aecurv.tensor import CurvatureOrderError, frame_from_jet, jet_matrix_inverse, metric_frame

ORACLE = json.loads((Path(__file__).parent / "oracles" / "frozen_values.json").read_text())


def rotated_point(n, r, seed):
    v = np.random.default_rng(seed).normal(size=n)
    return r * v / np.linalg.norm(v)


def test_flat_curvature_vanishes_exactly():
    fr = metric_frame(C.flat(4), annulus_points(4, 1, 5, 16, 0), 3)
    for name in ("christoffel", "riemann", "ricci", "scalar", "einstein", "schouten"):
        assert np.all(getattr(fr, name).coeffs == 0), name
    assert np.array_equal(fr.g_inv.value, fr.g.value)


def test_schwarzschild_inverse_value():
    fr = metric_frame(C.schwarzschild_isotropic(3, 1.0), np.array([[10.0, 0, 0]]), 2)
    assert abs(fr.g_inv.value[0, 0, 0] - 1.05**-4) < 1e-14
    print("g_inv_11 =", fr.g_inv.value[0, 0, 0])


def test_inverse_jet_is_inverse_to_all_orders():
    spec = from_sources(3, [["1 + 0.3*exp(-r^2/4)", "0.2*x1*x2*exp(-r^2/4)", "0"],
                            ["1 + 0.1*r^(-1)", "0.1*x3*r^(-2)"], ["1"]])
    pts = annulus_points(3, 1, 3, 10, 2)
    g = spec.metric_jet(pts, 4)
    gi = jet_matrix_inverse(g)
    prod = J.contract("ij,jk->ik", g, gi)
    eye = np.eye(3)[:, :, None]
    assert np.max(np.abs(prod.coeffs[0] - eye)) < 1e-14
    assert np.max(np.abs(prod.coeffs[1:])) < 1e-13


def test_sphere_has_constant_scalar_curvature():
    # stereographic round metric 4/(1 + r^2)^2 δ on the unit sphere: R = n(n-1) = 6 for n = 3
    spec = from_sources(3, [["4*(1 + r^2)^(-2)" if i == j else "0" for j in range(3)] for i in range(3)],
                        inner_radius=0.1)
    fr = metric_frame(spec, annulus_points(3, 0.2, 3, 20, 0), 2)
    print("round sphere R range:", fr.scalar.value.min(), fr.scalar.value.max())
    assert np.allclose(fr.scalar.value, 6.0, atol=1e-12)


def test_schwarzschild_is_scalar_flat():
    pts = annulus_points(3, 1, 40, 50, 4)
    fr = metric_frame(C.schwarzschild_isotropic(3, 1.0), pts, 2)
    ric = np.abs(fr.ricci.value).max()
    R = np.abs(fr.scalar.value).max()
    print(f"Schwarzschild max |R| = {R:.2e}, max |Ric| = {ric:.2e}")
    assert R < 1e-12 * max(ric, 1e-3)


@pytest.mark.parametrize("case", ORACLE["q_conformal"], ids=lambda c: f"n{c['n']}-r{c['r']}-{c['u']}")
def test_scalar_curvature_matches_oracle(case):
    n = case["n"]
    u = case["u"].replace("**", "^")
    spec = C.conformal(n, u)
    pt = rotated_point(n, case["r"], 7)[None]
    R = metric_frame(spec, pt, 2).scalar.value[0]
    assert abs(R - case["R"]) <= 1e-12 * max(1.0, abs(case["R"]))


@pytest.mark.parametrize("case", ORACLE["q_dim4"], ids=lambda c: f"r{c['r']}-{c['f']}")
def test_ricci_components_match_oracle(case):
    f = case["f"].replace("**", "^")
    spec = from_sources(4, [[f"exp(2*({f}))" if i == j else "0" for j in range(4)] for i in range(4)])
    pt = np.array([[case["r"], 0.0, 0.0, 0.0]])
    fr = metric_frame(spec, pt, 2)
    ric = fr.ricci.value[..., 0]
    assert abs(ric[0, 0] - case["ric_radial"]) < 1e-12
    assert abs(ric[1, 1] - case["ric_tangential"]) < 1e-12
    assert abs(ric[0, 1]) < 1e-14
    assert abs(fr.scalar.value[0] - case["R"]) < 1e-12


def test_riemann_symmetries():
    spec = C.diagonal_perturbation(3, eps=0.2)
    fr = metric_frame(spec, annulus_points(3, 1, 4, 8, 5), 2)
    Rm = fr.riemann_lowered.value  # R_ijkl
    assert np.max(np.abs(Rm + np.swapaxes(Rm, 0, 1))) < 1e-14
    assert np.max(np.abs(Rm + np.swapaxes(Rm, 2, 3))) < 1e-14
    pair = np.transpose(Rm, (2, 3, 0, 1, 4))
    assert np.max(np.abs(Rm - pair)) < 1e-13
    first_bianchi = Rm + np.transpose(Rm, (0, 2, 3, 1, 4)) + np.transpose(Rm, (0, 3, 1, 2, 4))
    print("first Bianchi residual:", np.abs(first_bianchi).max())
    assert np.max(np.abs(first_bianchi)) < 1e-14


def test_contracted_bianchi_identity():
    spec = from_sources(4, [["1 + 0.2*exp(-r^2/8)", "0.1*x1*x2*r^(-3)", "0", "0"],
                            ["1 + 0.1*r^(-1)", "0", "0"], ["1 + 0.05*x3^2*r^(-3)", "0"], ["1"]])
    pts = annulus_points(4, 1, 4, 12, 1)
    fr = metric_frame(spec, pts, 3)
    div = fr.divergence(fr.einstein).value
    scale = np.abs(fr.einstein.grad().value).max()
    print("div G relative:", np.abs(div).max() / scale)
    assert np.abs(div).max() < 1e-12 * scale


def test_laplacian_of_polynomials():
    n = 4
    pts = annulus_points(n, 1, 5, 10, 2)
    fr = metric_frame(C.flat(n), pts, 3)
    ev = dsl.JetEvaluator(pts, 3)
    r2 = ev.jet(dsl.parse("x1^2 + x2^2 + x3^2 + x4^2"))
    assert np.allclose(fr.laplace_beltrami(r2).value, 2 * n, atol=1e-12)
    fundamental = ev.jet(dsl.parse("r^(-2)"))  # r^(2-n) with n = 4
    assert np.max(np.abs(fr.laplace_beltrami(fundamental).value)) < 1e-12


def test_fundamental_solution_in_three_dimensions():
    pts = annulus_points(3, 1, 5, 10, 3)
    fr = metric_frame(C.flat(3), pts, 2)
    f = dsl.JetEvaluator(pts, 2).jet(dsl.parse("r^(-1)"))
    assert np.max(np.abs(fr.laplace_beltrami(f).value)) < 1e-12


def test_tensor_laplacian_routes_agree():
    spec = C.conformal(5, "1 + a*r^(-1)")
    pts = annulus_points(5, 1, 4, 10, 6)
    fr = metric_frame(spec, pts, 4)
    T = fr.ricci.truncate(2)
    direct = fr.tensor_laplacian(T).value
    split = fr.tensor_laplacian_split(T).value
    err = np.abs(direct - split).max() / np.abs(direct).max()
    print("tensor Laplacian routes, relative difference:", err)
    assert err < 1e-9


def test_order_requirement():
    fr = metric_frame(C.flat(3), np.array([[2.0, 0, 0]]), 1)
    with pytest.raises(CurvatureOrderError):
        fr.riemann


def test_inner_radius_enforced():
    with pytest.raises(J.JetDomainError):
        metric_frame(C.schwarzschild_isotropic(3, 1.0), np.array([[0.1, 0, 0]]), 2)


def test_frame_from_jet_matches_metric_frame():
    spec = C.product_decay(3, 1.5)
    pts = annulus_points(3, 1, 3, 6, 0)
    a = metric_frame(spec, pts, 2).scalar.value
    b = frame_from_jet(pts, spec.metric_jet(pts, 2)).scalar.value
    assert np.array_equal(a, b)

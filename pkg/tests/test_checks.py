"""Identity suite, perturbation helpers and point batching."""

import numpy as np
import pytest

from aecurv import catalog as C
from aecurv.batching import chunk_size_for, map_points, thread_count
from aecurv.checks import IDENTITY_NAMES, identity_suite, perturbed_metric, sample_points


def test_suite_passes_on_catalog_metric():
    spec = C.diagonal_perturbation(4, eps=0.1)
    report = identity_suite(spec, sample_points(spec, 16, seed=1))
    for name, v in report["identities"].items():
        print(f"{name}: {v['max_residual']:.2e}")
    assert report["passed"]
    assert set(report["identities"]) == set(IDENTITY_NAMES)


def test_suite_reports_worst_point():
    spec = C.conformal(5)
    pts = sample_points(spec, 8, seed=0)
    report = identity_suite(spec, pts, corrupt=True)
    worst = report["identities"]["div_G_J"]
    assert not worst["passed"]
    assert any(np.allclose(worst["point"], p) for p in pts)


def test_sample_points_outside_inner_radius():
    spec = C.schwarzschild_isotropic(3, 1.0, inner_radius=2.0)
    pts = sample_points(spec, 40, seed=3)
    r = np.linalg.norm(pts, axis=1)
    assert len(pts) == 40 and r.min() >= 2.0 and r.max() <= 32.0


def test_perturbed_metric_forms():
    diag = perturbed_metric(3, "r^(-2); 0; 0", 0.5)
    g = diag.metric_values(np.array([[2.0, 0, 0]]))[0]
    assert np.allclose(g, np.diag([1.125, 1, 1]))


def test_map_points_preserves_order(monkeypatch):
    pts = np.arange(30.0).reshape(10, 3)
    fn = lambda p: p.sum(axis=1)
    monkeypatch.setenv("AECURV_THREADS", "4")
    assert thread_count() == 4
    out = map_points(fn, pts, 3)
    assert np.array_equal(out, pts.sum(axis=1))


def test_thread_count_validation(monkeypatch):
    monkeypatch.setenv("AECURV_THREADS", "many")
    with pytest.raises(ValueError):
        thread_count()
    monkeypatch.setenv("AECURV_THREADS", "0")
    assert thread_count() == 1


def test_chunk_sizes_shrink_with_order():
    assert chunk_size_for(6, 5) < chunk_size_for(3, 4) < chunk_size_for(3, 2)

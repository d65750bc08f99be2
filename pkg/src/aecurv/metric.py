"""Metric descriptions on the end chart ``{|x| >= R0}`` of R^n."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from . import dsl
from . import jet as J

SAMPLES_PER_ANNULUS = 64
VALIDATION_ANNULI = 8


class MetricError(ValueError):
    """Invalid metric description or metric that fails validation."""


class DecayWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class MetricSpec:
    dim: int
    components: tuple  # n x n tuple of tuples of Expr, symmetric
    params: Mapping[str, float] = field(default_factory=dict)
    inner_radius: float = 1.0
    decay: float | None = None
    name: str = "custom"

    def __post_init__(self):
        n = self.dim
        if not isinstance(n, int) or n < 3 or n > J.MAX_DIM:
            raise MetricError(f"dimension must be an integer in 3..{J.MAX_DIM}, got {n!r}")
        if len(self.components) != n or any(len(row) != n for row in self.components):
            raise MetricError(f"components must form a {n}x{n} array")
        for i in range(n):
            for j in range(i + 1, n):
                if self.components[i][j] != self.components[j][i]:
                    raise MetricError(f"components ({i + 1},{j + 1}) and ({j + 1},{i + 1}) differ")
        if not self.inner_radius > 0:
            raise MetricError("inner_radius must be positive")
        if self.decay is not None and not self.decay > 0:
            raise MetricError("decay must be positive")
        for row in self.components:
            for e in row:
                if dsl.max_var(e) > n:
                    raise MetricError(f"component {dsl.pretty(e)} uses a coordinate beyond x{n}")
                missing = dsl.free_params(e) - set(self.params)
                if missing:
                    raise MetricError(f"parameter(s) {sorted(missing)} have no value")

    def component_sources(self) -> list[list[str]]:
        return [[dsl.pretty(e) for e in row] for row in self.components]

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "components": self.component_sources(),
            "params": dict(self.params),
            "inner_radius": self.inner_radius,
            "decay": self.decay,
        }

    def metric_jet(self, points, order: int) -> J.Jet:
        """Jet of g_ij at points (N, n); trailing shape (n, n, N)."""
        ev = dsl.JetEvaluator(points, order, self.params)
        n = self.dim
        npts = len(ev.points)
        coeffs = np.zeros((J.ncoef(n, order), n, n, npts))
        for i in range(n):
            for j in range(i, n):
                v = ev(self.components[i][j])
                if isinstance(v, J.Jet):
                    coeffs[:, i, j] = v.coeffs
                else:
                    coeffs[0, i, j] = v
                coeffs[:, j, i] = coeffs[:, i, j]
        return J.Jet(coeffs, n, order)

    def metric_values(self, points) -> np.ndarray:
        """Plain values of g at points (N, n), shape (N, n, n)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.dim
        out = np.empty((len(pts), n, n))
        for i in range(n):
            for j in range(i, n):
                out[:, i, j] = out[:, j, i] = dsl.eval_value(self.components[i][j], pts, self.params)
        return out


def from_sources(dim: int, sources, params=None, inner_radius: float = 1.0,
                 decay: float | None = None, name: str = "custom") -> MetricSpec:
    """Build a MetricSpec from component strings.

    ``sources`` may be the full n x n array, which must then be symmetric
    entry by entry after parsing, or only its upper triangle (row i holding
    entries j >= i).
    """
    params = {k: float(v) for k, v in (params or {}).items()}
    if len(sources) != dim:
        raise MetricError(f"expected {dim} component rows, got {len(sources)}")
    parsed = [[None] * dim for _ in range(dim)]
    for i, row in enumerate(sources):
        if len(row) == dim:
            cells = {j: row[j] for j in range(dim)}
        elif len(row) == dim - i:
            cells = {i + k: row[k] for k in range(len(row))}
        else:
            raise MetricError(f"row {i + 1} has {len(row)} entries; expected {dim} or {dim - i}")
        for j, src in cells.items():
            if not isinstance(src, (str, int, float)):
                raise MetricError(f"component ({i + 1},{j + 1}) must be a string or number")
            try:
                e = dsl.parse(str(src), params=params.keys(), dim=dim)
            except dsl.ParseError as exc:
                raise MetricError(f"component ({i + 1},{j + 1}): {exc}") from exc
            if j < i:
                if e != parsed[j][i]:
                    raise MetricError(f"components ({i + 1},{j + 1}) and ({j + 1},{i + 1}) differ")
                continue
            parsed[i][j] = parsed[j][i] = e
    comps = tuple(tuple(row) for row in parsed)
    return MetricSpec(dim, comps, params, float(inner_radius),
                      None if decay is None else float(decay), name)


def load_metric_file(path) -> MetricSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise MetricError(f"cannot read metric file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MetricError(f"metric file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MetricError("metric file must hold a JSON object")
    unknown = set(doc) - {"dim", "components", "params", "inner_radius", "decay", "name"}
    if unknown:
        raise MetricError(f"unknown metric file keys {sorted(unknown)}")
    for key in ("dim", "components"):
        if key not in doc:
            raise MetricError(f"metric file lacks {key!r}")
    return from_sources(
        int(doc["dim"]),
        doc["components"],
        doc.get("params") or {},
        doc.get("inner_radius", 1.0),
        doc.get("decay"),
        doc.get("name", Path(path).stem),
    )


def annulus_points(dim: int, r_lo: float, r_hi: float, count: int, seed: int) -> np.ndarray:
    """Low-discrepancy points in the shell r_lo <= |x| <= r_hi, uniform in volume."""
    sampler = qmc.Sobol(d=dim + 1, scramble=True, seed=seed)
    u = sampler.random_base2(max(0, math.ceil(math.log2(max(count, 1)))))[:count]
    u = np.clip(u, 1e-12, 1 - 1e-12)
    direction = ndtri(u[:, :dim])
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = (r_lo**dim + u[:, dim] * (r_hi**dim - r_lo**dim)) ** (1.0 / dim)
    return direction * radius[:, None]


def validate(spec: MetricSpec, annuli: int = VALIDATION_ANNULI, seed: int = 0) -> dict:
    """Sample-based validity check on dyadic annuli.

    Raises MetricError when the metric is not positive definite or not finite at
    a sample point.  A declared decay rate inconsistent with the samples gives
    a DecayWarning.  Returns per-annulus max |g - δ|.
    """
    n = spec.dim
    r0 = spec.inner_radius
    sup = []
    for k in range(annuli):
        pts = annulus_points(n, r0 * 2**k, r0 * 2 ** (k + 1), SAMPLES_PER_ANNULUS, seed + k)
        try:
            g = spec.metric_values(pts)
        except dsl.EvaluationError as exc:
            raise MetricError(f"metric {spec.name} cannot be evaluated in annulus {k}: {exc}") from exc
        if not np.all(np.isfinite(g)):
            bad = pts[np.argmax(~np.isfinite(g).all(axis=(1, 2)))]
            raise MetricError(f"metric {spec.name} is not finite at {bad.tolist()}")
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            eig = np.linalg.eigvalsh(g).min(axis=1)
            bad = pts[np.argmin(eig)]
            raise MetricError(
                f"metric {spec.name} is not positive definite at {bad.tolist()} "
                f"(smallest eigenvalue {eig.min():.3g})"
            ) from None
        sup.append(float(np.abs(g - np.eye(n)).max()))
    radii = r0 * 2.0 ** (np.arange(annuli) + 1)
    if spec.decay is not None:
        s = np.array(sup)
        ok = s > 1e-300
        if ok.sum() >= 2:
            slope = np.polyfit(np.log(radii[ok]), np.log(s[ok]), 1)[0]
            if -slope < 0.9 * spec.decay - 0.1:
                warnings.warn(
                    f"metric {spec.name}: |g - δ| decays like r^{slope:.2f}, "
                    f"slower than the declared r^-{spec.decay}",
                    DecayWarning,
                    stacklevel=2,
                )
    return {"radii": radii.tolist(), "sup_deviation": sup}

"""Built-in asymptotically Euclidean test metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

from . import dsl
from .metric import MetricError, MetricSpec, from_sources, validate


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    build: Callable[..., MetricSpec]
    summary: str
    properties: dict


def _diag(n: int, entries: list[str]) -> list[list[str]]:
    return [[entries[i] if i == j else "0" for j in range(n)] for i in range(n)]


def flat(n: int = 3, inner_radius: float = 1.0) -> MetricSpec:
    return from_sources(int(n), _diag(int(n), ["1"] * int(n)), inner_radius=inner_radius, name=f"flat({n})")


def schwarzschild_isotropic(n: int = 3, m: float = 1.0, inner_radius: float = 1.0) -> MetricSpec:
    if int(n) != 3:
        raise MetricError("schwarzschild_isotropic is provided for n = 3 only")
    m = float(m)
    if m <= 0:
        warnings.warn(f"schwarzschild_isotropic with non-positive mass m={m}", stacklevel=2)
    psi = "(1 + m/(2*r))^4"
    return from_sources(3, _diag(3, [psi] * 3), {"m": m}, inner_radius, decay=1.0,
                        name=f"schwarzschild_isotropic(3, m={m})")


def conformal(n: int = 5, u: str = "1 + a*r^(-1)", exponent: float | None = None,
              inner_radius: float = 1.0, decay: float | None = None, **params) -> MetricSpec:
    """g = u^exponent δ, exponent defaulting to 4/(n-2)."""
    n = int(n)
    if exponent is None:
        exponent = 4.0 / (n - 2)
    params = {k: float(v) for k, v in params.items()}
    if "a" in dsl.free_params(dsl.parse(u)) and "a" not in params:
        params["a"] = 0.1
    comp = f"({u})^({float(exponent)!r})"
    return from_sources(n, _diag(n, [comp] * n), params, inner_radius, decay,
                        name=f"conformal({n}, {u}, {float(exponent):g})")


def diagonal_perturbation(n: int = 3, h=None, eps: float = 0.1, inner_radius: float = 1.0,
                          decay: float | None = None, **params) -> MetricSpec:
    """g_ii = 1 + eps*h_i with off-diagonal entries 0."""
    n = int(n)
    if h is None:
        h = [f"x{i + 1}^2*r^(-4)" for i in range(n)]
        decay = 2.0 if decay is None else decay
    if isinstance(h, str):
        h = [s.strip() for s in h.split(";")]
    if len(h) != n:
        raise MetricError(f"diagonal_perturbation needs {n} expressions, got {len(h)}")
    params = {k: float(v) for k, v in params.items()}
    params["eps"] = float(eps)
    entries = [f"1 + eps*({hi})" for hi in h]
    spec = from_sources(n, _diag(n, entries), params, inner_radius, decay,
                        name=f"diagonal_perturbation({n}, eps={float(eps):g})")
    validate(spec)
    return spec


def product_decay(n: int = 3, tau: float = 1.0, inner_radius: float = 1.0) -> MetricSpec:
    """g = (1 + r^(-tau)) δ."""
    n = int(n)
    tau = float(tau)
    if tau <= 0:
        raise MetricError("product_decay needs tau > 0")
    comp = f"1 + r^(-{tau!r})"
    return from_sources(n, _diag(n, [comp] * n), {}, inner_radius, tau,
                        name=f"product_decay({n}, tau={tau:g})")


CATALOG = {
    "flat": CatalogEntry(
        "flat", flat, "Euclidean metric δ on R^n",
        {"scalar_flat": True, "conformally_flat": True, "adm_energy": 0.0, "fourth_order_energy": 0.0},
    ),
    "schwarzschild_isotropic": CatalogEntry(
        "schwarzschild_isotropic", schwarzschild_isotropic,
        "time-symmetric Schwarzschild slice (1 + m/(2r))^4 δ, n = 3",
        {"scalar_flat": True, "conformally_flat": True, "adm_energy": "m", "decay": 1.0},
    ),
    "conformal": CatalogEntry(
        "conformal", conformal, "conformally flat metric u^exponent δ",
        {"scalar_flat": "iff u is harmonic (default exponent)", "conformally_flat": True},
    ),
    "diagonal_perturbation": CatalogEntry(
        "diagonal_perturbation", diagonal_perturbation, "diagonal metric 1 + eps*h_i",
        {"conformally_flat": False},
    ),
    "product_decay": CatalogEntry(
        "product_decay", product_decay, "(1 + r^(-tau)) δ",
        {"conformally_flat": True, "decay": "tau"},
    ),
}


def catalog(name: str, params: dict | None = None) -> MetricSpec:
    """Build a catalog metric by name; ``params`` holds the constructor keywords."""
    if name not in CATALOG:
        raise MetricError(f"unknown catalog metric {name!r}; choose from {sorted(CATALOG)}")
    try:
        return CATALOG[name].build(**(params or {}))
    except TypeError as exc:
        raise MetricError(f"invalid parameters for {name}: {exc}") from exc
    except dsl.ParseError as exc:
        raise MetricError(f"invalid expression for {name}: {exc}") from exc

"""Command line interface: ``aecurv <eval|check|flux|decay|linearize|catalog>``.

Exit codes: 0 success, 1 tolerance breach, 2 configuration error, 3 domain or
derivative-order error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, dsl
from . import jet as J
from .asymptotics import (
    AnnulusGrid,
    DecayError,
    curvature_sampler,
    estimate_decay,
    fourth_order_sampler,
    metric_deviation_sampler,
)
from .catalog import CATALOG, catalog
from .checks import DEFAULT_PERTURBATIONS, identity_suite, remainder_slope, sample_points
from .flux import (
    QuadratureError,
    adm_energy,
    adm_energy_einstein,
    build_quadrature,
    charge,
    default_radii,
    fourth_order_energy,
    gj_flux,
)
from .fourth_order import FourthOrderFrame
from .metric import MetricError, load_metric_file, validate
from .tensor import metric_frame

SCHEMA = 1
DEFAULTS = {
    "check_tol": 1e-8,
    "linearize_min_slope": 1.9,
    "quad_degree": {3: 8, 4: 6, 5: 3, 6: 2, 7: 2, 8: 2},
    "order": 4,
    "check_points": 50,
    "seed": 0,
}
FLUX_FUNCTIONALS = ("adm", "adm_einstein", "energy", "gj", "charge", "thm45", "all")


class ConfigError(Exception):
    pass


class DomainFailure(Exception):
    pass


# ---- argument handling -------------------------------------------------------

def _param_value(text: str):
    try:
        v = float(text)
    except ValueError:
        return text
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


def parse_params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _param_value(v.strip())
    return out


def load_points(path, dim: int) -> np.ndarray:
    text = Path(path).read_text() if path else None
    if text is None:
        raise ConfigError("no points given")
    try:
        if text.lstrip().startswith("["):
            pts = np.array(json.loads(text), dtype=float)
        else:
            pts = np.loadtxt(io.StringIO(text.replace(",", " ")), ndmin=2)
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read points from {path}: {exc}") from exc
    pts = np.atleast_2d(pts)
    if pts.shape[1] != dim:
        raise ConfigError(f"points in {path} have {pts.shape[1]} coordinates, metric has dimension {dim}")
    return pts


def parse_radii(text: str | None, spec) -> np.ndarray:
    """``R0,K`` gives the dyadic radii R0·2^k, k = 0..K−1."""
    if text is None:
        return default_radii(spec)
    try:
        r0_s, k_s = text.split(",")
        r0, k = float(r0_s), int(k_s)
    except ValueError:
        raise ConfigError(f"--radii expects R0,K, got {text!r}") from None
    if r0 <= 0 or k < 1:
        raise ConfigError("--radii needs R0 > 0 and K >= 1")
    return r0 * 2.0 ** np.arange(k)


def resolve_metric(args):
    if args.metric and args.metric_file:
        raise ConfigError("give either --metric or --metric-file, not both")
    params = parse_params(args.param)
    if args.metric_file:
        if params:
            raise ConfigError("--param applies to catalog metrics only")
        spec = load_metric_file(args.metric_file)
    elif args.metric:
        if "h" in params and isinstance(params["h"], str):
            params["h"] = [s.strip() for s in params["h"].split(";")]
        spec = catalog(args.metric, params)
    else:
        raise ConfigError("a metric is required (--metric NAME or --metric-file PATH)")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        validate(spec, seed=args.seed)
    return spec


def config_record(args, spec=None, extra=None) -> dict:
    rec = {
        "command": args.command,
        "metric": args.metric,
        "metric_file": args.metric_file,
        "params": parse_params(args.param),
        "points": args.points,
        "radii": args.radii,
        "quad_degree": args.quad_degree,
        "order": args.order,
        "tol": args.tol,
        "seed": args.seed,
    }
    if spec is not None:
        rec["resolved_metric"] = spec.to_json()
    if extra:
        rec.update(extra)
    return rec


# ---- output ------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def emit(args, document: dict, rows: list[dict] | None = None) -> None:
    if args.format == "csv":
        if rows is None:
            raise ConfigError(f"command {args.command} has no CSV form")
        buf = io.StringIO()
        fields = list(rows[0].keys()) if rows else ["empty"]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_cell(v) for k, v in row.items()})
        text = buf.getvalue()
    else:
        doc = {"schema": SCHEMA}
        doc.update(document)
        text = json.dumps(_jsonable(doc), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


# ---- commands ------------------------------------------------------------------------

def cmd_catalog(args) -> int:
    entries = [
        {"name": e.name, "summary": e.summary, "properties": e.properties}
        for e in CATALOG.values()
    ]
    rows = [{"name": e["name"], "summary": e["summary"]} for e in entries]
    emit(args, {"command": "catalog", "metrics": entries}, rows)
    return 0


def cmd_eval(args) -> int:
    spec = resolve_metric(args)
    order = args.order if args.order is not None else DEFAULTS["order"]
    if args.points:
        pts = load_points(args.points, spec.dim)
    else:
        pts = np.zeros((1, spec.dim))
        pts[0, 0] = 2.0 * spec.inner_radius
    if order < 4:
        raise J.JetOrderError(4, order, "Q")
    frame = metric_frame(spec, pts, order)
    f = FourthOrderFrame(frame)
    quantities = {
        "g": frame.g.value,
        "Ric": frame.ricci.value,
        "R": frame.scalar.value,
        "S": frame.schouten.value,
        "B": f.B.value,
        "T": f.T.value,
        "Q": f.Q.value,
        "J": f.J.value,
        "G_J": f.G_J.value,
    }
    out_points, rows = [], []
    for p in range(len(pts)):
        entry = {"x": pts[p]}
        for name, arr in quantities.items():
            v = arr[..., p]
            entry[name] = v
            if np.ndim(v) == 0:
                rows.append({"point": p, "quantity": name, "i": "", "j": "", "value": float(v)})
            else:
                for i in range(v.shape[0]):
                    for j in range(v.shape[1]):
                        rows.append({"point": p, "quantity": name, "i": i + 1, "j": j + 1, "value": float(v[i, j])})
        out_points.append(entry)
    emit(args, {"command": "eval", "config": config_record(args, spec), "provenance": f.provenance,
                "points": out_points}, rows)
    return 0


def cmd_check(args) -> int:
    spec = resolve_metric(args)
    tol = args.tol if args.tol is not None else DEFAULTS["check_tol"]
    if args.points:
        pts = load_points(args.points, spec.dim)
    else:
        pts = sample_points(spec, DEFAULTS["check_points"], args.seed)
    report = identity_suite(spec, pts, tol, corrupt=args.corrupt_for_testing)
    rows = [
        {"identity": k, "max_residual": v["max_residual"], "passed": v["passed"],
         "point": " ".join(repr(c) for c in v["point"])}
        for k, v in report["identities"].items()
    ]
    emit(args, {"command": "check", "config": config_record(args, spec), "tolerances": {"relative": tol},
                **report}, rows)
    if not report["passed"]:
        for k, v in report["identities"].items():
            if not v["passed"]:
                print(f"aecurv: identity {k} breached: residual {v['max_residual']:.3g} > {tol:g} "
                      f"at point {v['point']}", file=sys.stderr)
        return 1
    return 0


def cmd_flux(args) -> int:
    spec = resolve_metric(args)
    # per-dimension default: resolves non-radial integrands where nodes are cheap
    m = args.quad_degree or DEFAULTS["quad_degree"].get(spec.dim, 2)
    quad = build_quadrature(spec.dim, m)
    radii = parse_radii(args.radii, spec)
    which = args.functional
    series = []
    if which in ("adm", "all"):
        series.append(adm_energy(spec, quad, radii))
    if which in ("adm_einstein", "all"):
        series.append(adm_energy_einstein(spec, quad, radii))
    if which in ("energy", "thm45", "all"):
        series.append(fourth_order_energy(spec, quad, radii))
    if which in ("gj", "thm45", "all"):
        series.append(gj_flux(spec, quad, radii))
    if which == "charge":
        V = args.V or "1"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            series.append(charge(spec, V, quad, radii))
    doc = {"command": "flux", "config": config_record(args, spec, {"functional": which, "quad_degree_used": m}),
           "tolerances": {"ratio_relative": args.tol if args.tol is not None else 0.01},
           "series": [s.summary() for s in series]}
    by_name = {s.functional: s for s in series}
    if "fourth_order_energy" in by_name and "gj" in by_name:
        n = spec.dim
        expected = (n - 4) / (8.0 * (n - 1))
        E, G = by_name["fourth_order_energy"].F_inf, by_name["gj"].F_inf
        ratio = -G / E if E != 0 else float("nan")
        tol = args.tol if args.tol is not None else 0.01
        doc["ratio_check"] = {
            "expected": expected,
            "ratio": ratio,
            "relative_error": abs(ratio - expected) / abs(expected) if expected else float("nan"),
            "within_tolerance": bool(expected and abs(ratio - expected) <= tol * abs(expected)),
        }
    doc["diverged"] = [s.functional for s in series if s.diverged]
    rows = []
    for s in series:
        for r, v in zip(s.radii, s.values):
            fit = s.F_inf + s.c * r ** (-s.p) if not (math.isnan(s.p) or math.isnan(s.c)) else s.F_inf
            rows.append({"functional": s.functional, "radius": float(r), "value": float(v),
                         "fit": float(fit), "diverged": s.diverged})
    emit(args, doc, rows)
    return 0


def cmd_decay(args) -> int:
    spec = resolve_metric(args)
    field = args.field
    if field == "metric":
        sampler = metric_deviation_sampler(spec)
    elif field in ("Q", "J", "G_J", "B", "T"):
        sampler = fourth_order_sampler(spec, field)
    elif field in ("Ric", "R", "Riem", "G"):
        sampler = curvature_sampler(spec, field)
    else:
        raise ConfigError(f"unknown field {field!r}")
    if args.radii:
        radii = parse_radii(args.radii, spec)
        r0, count = float(radii[0]), len(radii)
    else:
        r0, count = spec.inner_radius * 8.0, 8
    grid = AnnulusGrid(spec.dim, r0, 0, count, 64, args.seed)
    report = estimate_decay(sampler, grid, name=field, norms=((math.inf, -1.0), (2.0, -1.0)))
    doc = {"command": "decay", "config": config_record(args, spec, {"field": field}), **report.summary()}
    rows = [{"field": field, "radius": float(r), "sup": float(s)} for r, s in zip(report.radii, report.sup_values)]
    emit(args, doc, rows)
    return 0


def cmd_linearize(args) -> int:
    params = parse_params(args.param)
    n = int(params.pop("n", 3))
    h = params.pop("h", None)
    if h is None:
        if n != 3:
            h = ";".join(["exp(-r^2/4)"] * n)
        else:
            h = DEFAULT_PERTURBATIONS["diagonal_bump"]
    if params:
        raise ConfigError(f"unknown linearize parameters {sorted(params)}")
    if args.points:
        pts = load_points(args.points, n)
    else:
        pts = np.full((1, n), 0.6)
    report = remainder_slope(n, h, pts)
    min_slope = args.tol if args.tol is not None else DEFAULTS["linearize_min_slope"]
    report["min_slope"] = min_slope
    report["passed"] = bool(report["slope"] >= min_slope)
    doc = {"command": "linearize", "config": config_record(args, extra={"n": n, "h": h}), **report}
    rows = [{"eps": e, "remainder": r} for e, r in zip(report["eps"], report["remainder"])]
    emit(args, doc, rows)
    return 0 if report["passed"] else 1


COMMANDS = {
    "eval": cmd_eval,
    "check": cmd_check,
    "flux": cmd_flux,
    "decay": cmd_decay,
    "linearize": cmd_linearize,
    "catalog": cmd_catalog,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aecurv", description="Fourth-order curvature of asymptotically Euclidean metrics")
    parser.add_argument("--version", action="version", version=f"aecurv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--metric", help="catalog metric name")
        p.add_argument("--metric-file", help="JSON metric description")
        p.add_argument("--param", action="append", default=[], metavar="K=V",
                       help="catalog parameter (repeatable); lists use ';' separators")
        p.add_argument("--points", help="file of points (JSON list or whitespace/comma rows)")
        p.add_argument("--radii", help="dyadic radii as R0,K meaning R0*2^k for k < K")
        p.add_argument("--quad-degree", type=int, help="sphere quadrature degree m")
        p.add_argument("--order", type=int, choices=range(0, 6), metavar="{0..5}", help="jet order")
        p.add_argument("--tol", type=float, help="tolerance (command specific)")
        p.add_argument("--seed", type=int, default=DEFAULTS["seed"], help="sampling seed")
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        return p

    common(sub.add_parser("eval", help="curvature and fourth-order tensors at points"))
    check = common(sub.add_parser("check", help="trace, conservation and Bianchi identities"))
    check.add_argument("--corrupt-for-testing", action="store_true", help=argparse.SUPPRESS)
    flux = common(sub.add_parser("flux", help="flux integrals over spheres and their limits"))
    flux.add_argument("functional", choices=FLUX_FUNCTIONALS)
    flux.add_argument("--V", help="charge weight function V (default 1)")
    decay = common(sub.add_parser("decay", help="decay exponent of a field over dyadic annuli"))
    decay.add_argument("--field", default="metric", help="metric, Q, J, G_J, B, T, Ric, R, Riem or G")
    common(sub.add_parser("linearize", help="Taylor remainder slope of Q at the flat metric"))
    common(sub.add_parser("catalog", help="list built-in metrics"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "corrupt_for_testing"):
        args.corrupt_for_testing = False
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MetricError, QuadratureError, dsl.ParseError) as exc:
        print(f"aecurv {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"aecurv {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (J.JetError, dsl.EvaluationError, DecayError, np.linalg.LinAlgError) as exc:
        print(f"aecurv {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

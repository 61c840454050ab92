"""Scenario files: parsing, validation and the pipeline runner.

A scenario is a JSON object naming a field, kernels, schedules and a
pipeline.  ``run`` evaluates the pipeline and writes ``report.json`` plus
one CSV per table into ``<out>/<scenario id>/``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import jsonschema
import numpy as np

from .domains import PeriodicBox, Polygon, domain_from_json
from .errors import DrfluxError, RefusalError, ScenarioError
from .fields import CATALOG, catalog, read_grid
from .flows import CATALOG_FLOWS
from .kernels import BUMP_KINDS, make_bump

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
PIPELINES = ("flux", "directional", "optimize", "boundary", "conserve", "all")
OUT_ENV = "DRFLUX_OUT"
DEFAULT_OUT = "drflux_out"
DEFAULT_EPS = (0.2, 0.1, 0.05, 0.025)
DEFAULT_T = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)

EXIT_OK, EXIT_ERROR, EXIT_REFUSED = 0, 1, 2

_number_list = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1}
_kernel_spec = {
    "oneOf": [
        {"type": "string", "enum": list(BUMP_KINDS)},
        {"type": "object", "additionalProperties": False, "required": ["kind"],
         "properties": {"kind": {"type": "string", "enum": list(BUMP_KINDS)}, "params": {"type": "object"}}},
    ]
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["field", "pipeline"],
    "properties": {
        "id": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$", "description": "output sub-directory name"},
        "field": {
            "description": "catalog name, {name, params} or {grid: path}",
            "oneOf": [
                {"type": "string", "enum": sorted(CATALOG)},
                {"type": "object", "additionalProperties": False, "required": ["name"],
                 "properties": {"name": {"type": "string", "enum": sorted(CATALOG)}, "params": {"type": "object"}}},
                {"type": "object", "additionalProperties": False, "required": ["grid"],
                 "properties": {"grid": {"type": "string"}, "divergence_free": {"type": "boolean"}}},
            ],
        },
        "kernels": {"type": "array", "items": _kernel_spec, "minItems": 1,
                    "description": "kernel specs (default: standard_radial)"},
        "eps": dict(_number_list, description="mollification scales, strictly decreasing"),
        "T": dict(_number_list, description="flow-averaging horizons, strictly increasing"),
        "test_function": {
            "type": "object", "additionalProperties": False, "required": ["center", "radius"],
            "description": "phi = (1 - |x - c|^2 / r^2)_+^k",
            "properties": {"center": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                           "radius": {"type": "number", "exclusiveMinimum": 0},
                           "k": {"type": "integer", "minimum": 1}},
        },
        "domain": {"type": "object", "description": "domain override: {kind, ...} or {vertices}"},
        "pipeline": {"type": "string", "enum": list(PIPELINES)},
        "deterministic": {"type": "boolean", "description": "single worker, byte-stable output"},
        "out": {"type": "string", "description": "output directory"},
        "options": {
            "type": "object", "additionalProperties": False,
            "description": "resolution and sampling knobs",
            "properties": {"n": {"type": "integer", "minimum": 8},
                           "trace_radii": _number_list,
                           "points_per_edge": {"type": "integer", "minimum": 1},
                           "variant": {"type": "string", "enum": ["wedge", "annular"]}},
        },
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "scenario_id", "pipeline", "status", "exit_code", "message", "field",
                 "results", "csv"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "scenario_id": {"type": "string"},
        "pipeline": {"enum": list(PIPELINES)},
        "status": {"enum": ["ok", "refused", "error"]},
        "exit_code": {"enum": [EXIT_OK, EXIT_ERROR, EXIT_REFUSED]},
        "message": {"type": "string"},
        "field": {"type": "string"},
        "results": {
            "type": "object", "additionalProperties": False,
            "properties": {key: {"type": "object"} for key in PIPELINES if key != "all"},
        },
        "csv": {"type": "array", "items": {"type": "string"}},
    },
}


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------


@dataclass
class Scenario:
    id: str
    field_spec: object
    kernel_specs: list
    eps: list
    T: list
    test_function: dict | None
    domain: dict | None
    pipeline: str
    deterministic: bool = False
    out: str | None = None
    options: dict = dc_field(default_factory=dict)
    source: Path | None = None

    def build_field(self):
        spec = self.field_spec
        if isinstance(spec, str):
            spec = {"name": spec}
        if "grid" in spec:
            u = read_grid(spec["grid"])
            if "divergence_free" in spec:
                u.divergence_free = bool(spec["divergence_free"])
            return u
        params = dict(spec.get("params", {}))
        if self.domain is not None:
            params["domain"] = domain_from_json(self.domain)
        return catalog(spec["name"], **params)

    def build_kernels(self, d):
        out = []
        for k in self.kernel_specs:
            if isinstance(k, str):
                k = {"kind": k}
            out.append(make_bump(k["kind"], k.get("params"), d))
        return out


def _schema_error_path(err):
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate_scenario_data(data, source=None):
    """Validate a decoded scenario; returns a :class:`Scenario`."""
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        listing = "; ".join(f"{_schema_error_path(e)}: {e.message}" for e in errors)
        raise ScenarioError(f"invalid scenario: {listing}")
    eps = [float(e) for e in data.get("eps", DEFAULT_EPS)]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ScenarioError("invalid scenario: eps: schedule must be strictly decreasing")
    T = [float(t) for t in data.get("T", DEFAULT_T)]
    if any(b <= a for a, b in zip(T, T[1:])):
        raise ScenarioError("invalid scenario: T: schedule must be strictly increasing")
    radii = data.get("options", {}).get("trace_radii")
    if radii is not None and any(b >= a for a, b in zip(radii, radii[1:])):
        raise ScenarioError("invalid scenario: options/trace_radii: radii must be strictly decreasing")
    field_spec = data["field"]
    if isinstance(field_spec, dict) and "grid" in field_spec:
        grid = Path(field_spec["grid"])
        if not grid.is_absolute() and source is not None:
            grid = Path(source).parent / grid
        if not grid.exists():
            raise FileNotFoundError(f"grid file not found: {grid}")
        field_spec = dict(field_spec, grid=str(grid))
    name = field_spec if isinstance(field_spec, str) else field_spec.get("name", Path(field_spec["grid"]).stem)
    default_id = Path(source).stem if source is not None else f"{name}_{data['pipeline']}"
    return Scenario(
        id=data.get("id", default_id),
        field_spec=field_spec,
        kernel_specs=list(data.get("kernels", ["standard_radial"])),
        eps=eps,
        T=T,
        test_function=data.get("test_function"),
        domain=data.get("domain"),
        pipeline=data["pipeline"],
        deterministic=bool(data.get("deterministic", False)),
        out=data.get("out"),
        options=dict(data.get("options", {})),
        source=None if source is None else Path(source),
    )


def parse_scenario(path):
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"scenario file not found: {path}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: a scenario must be a JSON object")
    return validate_scenario_data(data, path)


# --------------------------------------------------------------------------
# CSV helpers
# --------------------------------------------------------------------------


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_csv(columns, rows):
    """CSV text with ``repr`` floats, so re-parsing reproduces the values exactly."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def read_csv(path):
    """Parse a CSV written by :func:`format_csv`; numeric cells become floats."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            parsed = {}
            for k, v in row.items():
                try:
                    parsed[k] = float(v)
                except ValueError:
                    parsed[k] = v
            rows.append(parsed)
    return rows


# --------------------------------------------------------------------------
# Pipelines
# --------------------------------------------------------------------------


def default_test_function(u):
    from .flux import TestFunction

    dom = u.domain
    d = u.dimension
    if isinstance(dom, PeriodicBox):
        lo, hi = dom.bounds()
        return TestFunction((np.asarray(lo) + np.asarray(hi)) / 2, min(0.5, dom.side / 4))
    if isinstance(dom, Polygon):
        c = dom.vertices.mean(axis=0)
        if not dom.contains(c):
            raise ScenarioError("give a test_function: the vertex mean is outside the polygon")
        return TestFunction(c, min(0.5, 0.8 * float(dom.distance(c))), domain=dom)
    return TestFunction(np.zeros(d), 0.5)


class _Context:
    def __init__(self, scenario, workers):
        from .flux import TestFunction

        self.scenario = scenario
        self.u = scenario.build_field()
        self.kernels = scenario.build_kernels(self.u.dimension)
        tf = scenario.test_function
        if tf is None:
            self.phi = default_test_function(self.u)
        else:
            self.phi = TestFunction(tf["center"], tf["radius"], tf.get("k", 2),
                                    self.u.domain if isinstance(self.u.domain, Polygon) else None)
        self.workers = 1 if scenario.deterministic else max(1, int(workers))
        self.n = int(scenario.options.get("n", 256))
        self.sup3 = self.u.sup_norm() ** 3
        self.tables = {}

    def map(self, fn, items):
        if self.workers == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(fn, items))

    def norm(self, v):
        return v / self.sup3 if self.sup3 > 0 else math.nan


def _pipeline_flux(ctx):
    from .flux import flux_convergence

    reports = ctx.map(lambda k: flux_convergence(ctx.u, k, ctx.scenario.eps, phi=ctx.phi, n=ctx.n), ctx.kernels)
    rows = []
    for k, rep in zip(ctx.kernels, reports):
        for e, p in zip(rep.eps, rep.pairings):
            rows.append({"kernel": k.descriptor()["kind"], "eps": e, "pairing_raw": p,
                         "pairing_over_sup_u3": ctx.norm(p)})
    ctx.tables["flux_convergence.csv"] = (["kernel", "eps", "pairing_raw", "pairing_over_sup_u3"], rows)
    extrap = [r.extrapolate for r in reports]
    spread = (max(extrap) - min(extrap)) / max(max(abs(x) for x in extrap), 1e-300) if extrap else 0.0
    return {"reports": [r.to_json() for r in reports], "extrapolates": extrap, "kernel_spread": spread,
            "test_function": ctx.phi.describe()}


def _pipeline_directional(ctx):
    from .flux import directional_flux, pairing, reconstruct_pairing, reconstruct_scale

    eps = ctx.scenario.eps[-1]
    table = directional_flux(ctx.u, eps, ctx.phi)
    d = ctx.u.dimension
    cols = [f"z{i + 1}" for i in range(d)] + [f"V{i + 1}_raw" for i in range(table.V.shape[1])]
    rows = [dict(zip(cols, list(z) + list(v))) for z, v in table.rows()]
    ctx.tables["directional_flux.csv"] = (cols, rows)
    recon = []
    for k in ctx.kernels:
        direct = pairing(ctx.u, k, eps, ctx.phi, ctx.n)
        rec = reconstruct_pairing(table, k)
        scale = reconstruct_scale(table, k)
        recon.append({"kernel": k.descriptor()["kind"], "direct": direct, "reconstructed": rec, "scale": scale,
                      "agree_1pct": bool(abs(rec - direct) <= 0.01 * max(abs(direct), scale))})
    return {"eps": eps, "odd_residual": table.odd_residual, "V0": table.V[0].tolist(), "reconstruction": recon}


def _certificate_table(ctx, report):
    rows = [dict(r, certificate_over_sup_u3=ctx.norm(r["certificate"])) for r in report.rows()]
    cols = ["T", "certificate", "certificate_error", "bound_2_over_T", "flux_abs", "certificate_over_sup_u3"]
    ctx.tables["certificate.csv"] = (cols, rows)


def _pipeline_optimize(ctx):
    from .optimize import conservation_report

    report = conservation_report(ctx.u, ctx.phi, ctx.kernels[0], ctx.scenario.T)
    _certificate_table(ctx, report)
    return report.to_json()


def _pipeline_conserve(ctx):
    from .boundary import energy_conservation_check

    report = energy_conservation_check(ctx.u, ctx.scenario.eps, ctx.phi, ctx.kernels[0], ctx.scenario.T,
                                       ctx.scenario.options.get("variant", "wedge"))
    _certificate_table(ctx, report.interior)
    if not report.boundary_skipped:
        ctx.tables["boundary_flux.csv"] = (["eps", "boundary_flux", "energy_flux", "energy_flux_bound"],
                                           report.rows())
    return report.to_json()


def _pipeline_boundary(ctx):
    from .boundary import DEFAULT_TRACE_RADII, boundary_flux, normal_trace

    dom = ctx.u.domain
    if not isinstance(dom, Polygon):
        return {"skipped": True, "reason": "domain has no boundary"}
    variant = ctx.scenario.options.get("variant", "wedge")
    fluxes = [boundary_flux(ctx.u, dom, e, variant) for e in ctx.scenario.eps]
    ctx.tables["boundary_flux.csv"] = (["eps", "boundary_flux", "boundary_flux_over_sup_u"],
                                       [{"eps": e, "boundary_flux": f,
                                         "boundary_flux_over_sup_u": f / max(ctx.u.sup_norm(), 1e-300)}
                                        for e, f in zip(ctx.scenario.eps, fluxes)])
    radii = ctx.scenario.options.get("trace_radii", DEFAULT_TRACE_RADII)
    pts, _ = dom.sample_boundary(int(ctx.scenario.options.get("points_per_edge", 2)))
    traces = ctx.map(lambda p: normal_trace(ctx.u, dom, p, radii), list(pts))
    rows = [row for i, t in enumerate(traces) for row in t.rows(i)]
    ctx.tables["trace.csv"] = (["point_id", "x", "y", "r", "average", "signed_average"], rows)
    return {"skipped": False, "variant": variant, "eps": ctx.scenario.eps, "boundary_flux": fluxes,
            "decay_ratio": fluxes[-1] / fluxes[0] if fluxes[0] > 0 else 0.0,
            "traces": [t.to_json() for t in traces]}


PIPELINE_STEPS = {
    "flux": ("flux",),
    "directional": ("directional",),
    "optimize": ("optimize",),
    "boundary": ("boundary",),
    "conserve": ("conserve",),
    "all": ("flux", "directional", "conserve", "boundary"),
}
_STEP_FUNCS = {"flux": _pipeline_flux, "directional": _pipeline_directional, "optimize": _pipeline_optimize,
               "boundary": _pipeline_boundary, "conserve": _pipeline_conserve}


# --------------------------------------------------------------------------
# Runner
# --------------------------------------------------------------------------


@dataclass
class RunResult:
    exit_code: int
    report: dict
    directory: Path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so report.json stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def output_root(cli_out=None, scenario=None):
    """``--out`` flag, then the scenario's ``out`` key, then ``$DRFLUX_OUT``, then ``./drflux_out``."""
    for candidate in (cli_out, getattr(scenario, "out", None), os.environ.get(OUT_ENV)):
        if candidate:
            return Path(candidate)
    return Path(DEFAULT_OUT)


def run(scenario, out=None, workers=1, deterministic=None):
    """Run the scenario's pipeline; always writes report.json, returns a RunResult."""
    if deterministic is not None:
        scenario.deterministic = scenario.deterministic or bool(deterministic)
    directory = output_root(out, scenario) / scenario.id
    directory.mkdir(parents=True, exist_ok=True)
    results, status, code, message, field_name = {}, "ok", EXIT_OK, "", ""
    ctx = None
    try:
        ctx = _Context(scenario, workers)
        field_name = ctx.u.name
        for step in PIPELINE_STEPS[scenario.pipeline]:
            log.info("scenario %s: running %s", scenario.id, step)
            results[step] = _STEP_FUNCS[step](ctx)
        message = "completed"
    except RefusalError as exc:
        status, code, message = "refused", EXIT_REFUSED, str(exc)
        step = scenario.pipeline if scenario.pipeline != "all" else "conserve"
        results.setdefault(step, {})["refusal"] = exc.details
    except (DrfluxError, FileNotFoundError, ValueError) as exc:
        status, code, message = "error", EXIT_ERROR, f"{type(exc).__name__}: {exc}"
    written = []
    if ctx is not None:
        for name, (cols, rows) in sorted(ctx.tables.items()):
            (directory / name).write_text(format_csv(cols, rows))
            written.append(name)
    report = {"schema_version": SCHEMA_VERSION, "scenario_id": scenario.id, "pipeline": scenario.pipeline,
              "status": status, "exit_code": code, "message": message, "field": field_name,
              "results": _clean(json.loads(json.dumps(results, default=_json_default))), "csv": written}
    jsonschema.validate(report, REPORT_SCHEMA)
    (directory / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return RunResult(code, report, directory)


def list_catalog():
    """Text listing of catalog fields, kernels, flows and the scenario schema."""
    lines = ["Fields:"]
    lines += [f"  {name:14s} {desc}" for name, desc in sorted(CATALOG.items())]
    lines.append("Kernels:")
    lines += [f"  {kind}" for kind in BUMP_KINDS]
    lines.append("Flows (besides matrices M):")
    lines += [f"  {name}" for name in sorted(CATALOG_FLOWS)]
    lines.append("Pipelines:")
    lines.append("  " + ", ".join(PIPELINES))
    lines.append("Scenario schema (key: type; * = required):")
    required = set(SCENARIO_SCHEMA["required"])
    for key, spec in SCENARIO_SCHEMA["properties"].items():
        kind = spec.get("type") or " | ".join(sorted({o.get("type", "?") for o in spec.get("oneOf", [])}))
        desc = spec.get("description", "")
        star = "*" if key in required else " "
        lines.append(f"  {star}{key}: {kind}" + (f"  -- {desc}" if desc else ""))
    return "\n".join(lines) + "\n"

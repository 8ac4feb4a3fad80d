"""Experiment specs, result files and the ``perclab`` command line.

A spec is JSON: ``{"kind": ..., "params": {...}, "output": {"path": ..., "format": ...}}``.
Results are JSON lines whose first line is a metadata header; every other
line is a row with a fixed column set per row type.  Timestamps live only in
the header, so rerunning a spec with the same seed reproduces the rows byte
for byte.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any

from . import __version__, analytic, lgaps, montecarlo
from .lattice import RegionError, build_structure
from .montecarlo import RNG_ID

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3

CURVE_COLUMNS = ("n", "d", "ell", "r", "p", "trials", "successes", "p_hat", "ci_low", "ci_high", "seed")


class SpecError(ValueError):
    """An experiment spec (or a CLI invocation) does not validate."""


class CurveError(ValueError):
    pass


# name -> (type, default, help); REQUIRED marks mandatory fields
REQUIRED = object()
_INT, _FLOAT, _BOOL, _STR = "int", "float", "bool", "str"
_INTS, _FLOATS = "ints", "floats"

_COMMON = {
    "seed": (_INT, 0, "master seed (64-bit)"),
    "workers": (_INT, None, "worker threads (default: $PERCLAB_WORKERS or 1)"),
}
_LATTICE = {
    "d": (_INT, REQUIRED, "number of long axes"),
    "ell": (_INT, 0, "number of doubled axes"),
    "r": (_INT, REQUIRED, "threshold on the core layer"),
}
KINDS: dict[str, dict[str, tuple]] = {
    "estimate": {
        "n": (_INT, REQUIRED, "side length"), **_LATTICE,
        "p": (_FLOAT, REQUIRED, "initial infection probability"),
        "trials": (_INT, REQUIRED, "number of trials"),
        "confidence": (_FLOAT, 0.99, "Wilson interval confidence"),
        "padded": (_BOOL, True, "sample on the padded region [n+1]^d x [2]^ell"),
    },
    "scan": {
        "n_list": (_INTS, REQUIRED, "side lengths"), **_LATTICE,
        "p_grid": (_FLOATS, REQUIRED, "probabilities"),
        "trials": (_INT, REQUIRED, "trials per side length"),
        "confidence": (_FLOAT, 0.99, "Wilson interval confidence"),
        "padded": (_BOOL, True, "sample on the padded region"),
    },
    "pc": {
        "n": (_INT, REQUIRED, "side length"), **_LATTICE,
        "alpha": (_FLOAT, 0.5, "target percolation probability"),
        "tol": (_FLOAT, 0.005, "final bracket width"),
        "max_trials": (_INT, 4096, "trial cap per bisection step"),
        "confidence": (_FLOAT, 0.99, "Wilson interval confidence"),
        "padded": (_BOOL, False, "use the padded region"),
    },
    "event": {
        "n": (_INT, REQUIRED, "side length"), **_LATTICE,
        "p": (_FLOAT, REQUIRED, "initial infection probability"),
        "trials": (_INT, REQUIRED, "number of trials"),
        "event": (_STR, REQUIRED, "true | D | T | growth, or a full spec such as D:6,14"),
        "a": (_INT, None, "lower end (D, T)"),
        "b": (_INT, None, "upper end (D)"),
        "bvec": (_INTS, None, "gap vector b^(1..d-1) (T)"),
        "confidence": (_FLOAT, 0.99, "Wilson interval confidence"),
        "padded": (_BOOL, False, "use the padded region"),
    },
    "lambda": {
        "d": (_INT, REQUIRED, "dimension"),
        "r": (_INT, REQUIRED, "threshold"),
        "tol": (_FLOAT, 1e-8, "absolute error target"),
    },
    "lgap": {
        "m": (_INT, REQUIRED, "number of gap positions"),
        "ell": (_INT, 0, "companion events per position"),
        "u": (_FLOATS, REQUIRED, "m+1 event probabilities"),
    },
    "count-seq": {
        "p": (_FLOAT, REQUIRED, "probability"),
        "d": (_INT, REQUIRED, "dimension"),
        "c": (_FLOAT, REQUIRED, "constant in the (1/(4cp))^m bound"),
        "m": (_INT, REQUIRED, "number of gaps"),
    },
    "verify": {
        "suite": (_STR, "all", "all | analytic | lgap | events | harris | dynamics"),
    },
}
for _k in KINDS:
    KINDS[_k].update(_COMMON)

_EST = ("n", "d", "ell", "r", "p", "padded", "trials", "successes", "p_hat", "ci_low", "ci_high",
        "confidence", "seed", "rng_id")
ROW_SCHEMAS: dict[str, tuple[str, ...]] = {
    "estimate": _EST,
    "pc-step": _EST + ("alpha", "decided"),
    "pc": ("n", "d", "ell", "r", "alpha", "tol", "padded", "p_lo", "p_hi", "status", "flagged_steps",
           "steps", "seed"),
    "event": ("event", "n", "d", "ell", "r", "padded", "p", "trials", "successes", "p_hat", "ci_low",
              "ci_high", "confidence", "seed", "rng_id"),
    "lambda": ("d", "r", "tol", "value", "error", "method"),
    "lgap": ("m", "ell", "u", "exact", "lower_bound", "enumerated"),
    "count-seq": ("p", "d", "c", "m", "count", "bound", "holds", "lo", "hi", "max_width"),
    "verify": ("suite", "check", "passed", "skipped", "params", "observed"),
}


@dataclass
class ExperimentSpec:
    kind: str
    params: dict[str, Any]
    output: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: Any) -> "ExperimentSpec":
        if not isinstance(raw, dict):
            raise SpecError("spec must be a JSON object")
        extra = set(raw) - {"kind", "params", "output"}
        if extra:
            raise SpecError(f"unknown top-level keys: {sorted(extra)}")
        kind = raw.get("kind")
        if kind not in KINDS:
            raise SpecError(f"kind must be one of {sorted(KINDS)}, got {kind!r}")
        params = _validate_params(kind, raw.get("params", {}))
        output = raw.get("output", {}) or {}
        if not isinstance(output, dict) or set(output) - {"path", "format"}:
            raise SpecError("output must be an object with keys path and format")
        fmt = output.get("format", "jsonl")
        if fmt not in ("jsonl", "csv"):
            raise SpecError(f"output format must be jsonl or csv, got {fmt!r}")
        return cls(kind, params, {"path": output.get("path"), "format": fmt})

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "output": dict(self.output)}


def _coerce(name, typ, value):
    try:
        if typ == _INT:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if typ == _FLOAT:
            if isinstance(value, bool):
                raise TypeError
            out = float(value)
            if not math.isfinite(out):
                raise TypeError
            return out
        if typ == _BOOL:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if typ == _STR:
            if not isinstance(value, str):
                raise TypeError
            return value
        if typ in (_INTS, _FLOATS):
            if not isinstance(value, (list, tuple)) or not value:
                raise TypeError
            return [_coerce(name, _INT if typ == _INTS else _FLOAT, v) for v in value]
    except (TypeError, ValueError):
        raise SpecError(f"parameter {name!r} must be of type {typ}, got {value!r}") from None
    raise AssertionError(typ)


def _validate_params(kind: str, params: Any) -> dict:
    if not isinstance(params, dict):
        raise SpecError("params must be an object")
    schema = KINDS[kind]
    unknown = set(params) - set(schema)
    if unknown:
        raise SpecError(f"unknown parameters for {kind}: {sorted(unknown)}")
    out = {}
    for name, (typ, default, _) in schema.items():
        if name in params and params[name] is not None:
            out[name] = _coerce(name, typ, params[name])
        elif default is REQUIRED:
            raise SpecError(f"{kind} needs parameter {name!r}")
        else:
            out[name] = default
    return out


# ---------------------------------------------------------------------------
# execution


def _est_row(rec: montecarlo.EstimateRecord, seed: int) -> dict:
    p = rec.params
    return {"n": p["n"], "d": p["d"], "ell": p["ell"], "r": p["r"], "p": p["p"],
            "padded": p["padded"], "trials": rec.trials, "successes": rec.successes,
            "p_hat": rec.p_hat, "ci_low": rec.ci_low, "ci_high": rec.ci_high,
            "confidence": rec.confidence, "seed": seed, "rng_id": rec.rng_id}


def _event_string(P: dict) -> str:
    ev = P["event"]
    if ":" in ev or ev == "true":
        return ev
    if ev == "D":
        if P["a"] is None or P["b"] is None:
            raise SpecError("event D needs a and b")
        return f"D:{P['a']},{P['b']}"
    if ev == "T":
        if P["a"] is None or P["bvec"] is None:
            raise SpecError("event T needs a and bvec")
        return "T:" + ",".join(str(x) for x in [P["a"]] + P["bvec"])
    raise SpecError(f"event {ev!r} needs a full spec string (e.g. growth:10;3,7)")


def execute(spec: ExperimentSpec) -> tuple[list[dict], bool]:
    """Run a validated spec; returns ``(rows, all_checks_passed)``."""
    P, kind = spec.params, spec.kind
    seed, workers = P["seed"], P["workers"]
    if not 0 <= seed < 2**64:
        raise SpecError("seed must fit in 64 bits")
    if workers is not None and workers < 1:
        raise SpecError("workers must be >= 1")
    rows: list[dict] = []
    ok = True
    try:
        if kind == "estimate":
            rec = montecarlo.estimate_P(P["n"], P["d"], P["ell"], P["r"], P["p"], P["trials"], seed,
                                        P["confidence"], workers, P["padded"])
            rows.append(_row("estimate", _est_row(rec, seed)))
        elif kind == "scan":
            for rec in montecarlo.scan(P["n_list"], P["p_grid"], P["d"], P["ell"], P["r"], P["trials"],
                                       seed, P["confidence"], P["padded"], workers=workers):
                rows.append(_row("estimate", _est_row(rec, seed)))
        elif kind == "pc":
            res = montecarlo.find_p_alpha(P["n"], P["d"], P["ell"], P["r"], P["alpha"], P["tol"],
                                          P["max_trials"], seed, P["confidence"], P["padded"],
                                          workers=workers)
            for rec in res.steps:
                row = _est_row(rec, seed)
                row.update(alpha=P["alpha"], decided=rec.params["decided"])
                rows.append(_row("pc-step", row))
            rows.append(_row("pc", {"n": P["n"], "d": P["d"], "ell": P["ell"], "r": P["r"],
                                    "alpha": P["alpha"], "tol": P["tol"], "padded": P["padded"],
                                    "p_lo": res.bracket[0], "p_hi": res.bracket[1], "status": res.status,
                                    "flagged_steps": res.flagged_steps, "steps": len(res.steps),
                                    "seed": seed}))
        elif kind == "event":
            ev = _event_string(P)
            st = build_structure(P["n"], P["d"], P["ell"], P["r"], padded=P["padded"])
            rec = montecarlo.estimate_event(st, ev, P["p"], P["trials"], seed, P["confidence"], workers)
            rows.append(_row("event", {"event": ev, "n": P["n"], "d": P["d"], "ell": P["ell"],
                                       "r": P["r"], "padded": P["padded"], "p": P["p"],
                                       "trials": rec.trials, "successes": rec.successes,
                                       "p_hat": rec.p_hat, "ci_low": rec.ci_low, "ci_high": rec.ci_high,
                                       "confidence": rec.confidence, "seed": seed, "rng_id": rec.rng_id}))
        elif kind == "lambda":
            res = analytic.lambda_const(P["d"], P["r"], P["tol"])
            rows.append(_row("lambda", {"d": P["d"], "r": P["r"], "tol": P["tol"], "value": res.value,
                                        "error": res.error, "method": res.method}))
        elif kind == "lgap":
            es = lgaps.EventSeqSpec(P["m"], P["ell"], tuple(P["u"]))
            lower = lgaps.lgap_lower_bound(es) if es.nondecreasing else None
            enum = lgaps.lgap_enumerate(es) if es.n_events <= 24 else None
            rows.append(_row("lgap", {"m": es.m, "ell": es.ell, "u": list(es.u),
                                      "exact": lgaps.lgap_exact(es), "lower_bound": lower,
                                      "enumerated": enum}))
        elif kind == "count-seq":
            gc = lgaps.count_gap_sequences(P["p"], P["d"], P["c"], P["m"])
            rows.append(_row("count-seq", {"p": P["p"], "d": P["d"], "c": P["c"], "m": P["m"],
                                           "count": gc.count, "bound": gc.bound, "holds": gc.holds,
                                           "lo": gc.lo, "hi": gc.hi, "max_width": gc.max_width}))
        elif kind == "verify":
            from .verify import SUITES, verify_suite

            if P["suite"] not in ("all",) + SUITES:
                raise SpecError(f"unknown suite {P['suite']!r}")
            for rep in verify_suite(P["suite"]):
                ok &= rep.passed
                for c in rep.checks:
                    rows.append(_row("verify", {"suite": rep.suite, "check": c.name, "passed": c.passed,
                                                "skipped": c.skipped, "params": c.params,
                                                "observed": c.observed}))
    except (analytic.AnalyticError, lgaps.LgapError, montecarlo.EstimationError, RegionError) as exc:
        raise SpecError(str(exc)) from None
    return rows, ok


def _row(kind: str, values: dict) -> dict:
    cols = ROW_SCHEMAS[kind]
    if set(values) != set(cols):
        raise AssertionError(f"row {kind} has columns {sorted(values)}, schema {cols}")
    out = {"row": kind}
    out.update((c, values[c]) for c in cols)
    return out


# ---------------------------------------------------------------------------
# persistence


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def _dump(row: dict) -> str:
    return json.dumps(row, separators=(",", ":"), allow_nan=False, default=_json_default)


def _json_default(o):
    try:
        import numpy as np

        if isinstance(o, np.generic):
            return o.item()
    except ImportError:  # pragma: no cover
        pass
    raise TypeError(f"cannot serialise {type(o).__name__}")


def atomic_write(path: str, text: str):
    """Write ``text`` to ``path`` via a temporary file in the same directory and a rename."""
    target = os.path.abspath(path)
    fd, tmp = tempfile.mkstemp(prefix=".perclab-", dir=os.path.dirname(target))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metadata(spec: ExperimentSpec, started: str, finished: str, passed: bool) -> dict:
    return {"meta": {"spec": spec.to_dict(), "rng_id": RNG_ID, "version": __version__,
                     "started": started, "finished": finished, "passed": passed}}


def render_jsonl(meta: dict, rows: list[dict]) -> str:
    return "".join(_dump(x) + "\n" for x in [meta] + rows)


def render_csv(rows: list[dict]) -> str:
    """CSV with one column set; estimate-like rows use the curve columns."""
    kinds = {r["row"] for r in rows}
    if not rows or kinds <= {"estimate", "pc-step"}:
        return _curve_csv([r for r in rows if r["row"] in ("estimate", "pc-step")])
    if len(kinds) != 1:
        raise CurveError(f"csv needs a single row type, got {sorted(kinds)}")
    cols = ROW_SCHEMAS[kinds.pop()]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_csv_cell(r[c]) for c in cols])
    return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, (dict, list)):
        return _dump(v)
    return repr(v) if isinstance(v, float) else v


def _curve_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in rows:
        w.writerow([_csv_cell(r[c]) for c in CURVE_COLUMNS])
    return buf.getvalue()


def write_results(spec: ExperimentSpec, rows: list[dict], meta: dict, path: str | None = None,
                  fmt: str | None = None) -> str | None:
    """Write rows to ``path`` (or stdout when no path); returns the path."""
    path = path if path is not None else spec.output.get("path")
    fmt = fmt or spec.output.get("format") or "jsonl"
    text = render_jsonl(meta, rows) if fmt == "jsonl" else render_csv(rows)
    if path in (None, "-"):
        sys.stdout.write(text)
        return None
    atomic_write(path, text)
    if fmt == "csv":
        atomic_write(path + ".meta.json", _dump(meta) + "\n")
    return path


def read_results(path: str) -> tuple[dict | None, list[dict]]:
    meta, rows = None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "meta" in obj and "row" not in obj:
                meta = obj["meta"]
            else:
                rows.append(obj)
    return meta, rows


def emit_curve(results_file: str, out_path: str | None = None, axes=("n", "p")) -> str:
    """Plot-ready CSV (columns ``n,d,ell,r,p,trials,successes,p_hat,ci_low,ci_high,seed``).

    Estimate rows are sorted by ``axes``; other row types are ignored, but a
    nonempty file with no usable rows is an error.
    """
    for a in axes:
        if a not in CURVE_COLUMNS:
            raise CurveError(f"axis {a!r} is not a curve column")
    _, rows = read_results(results_file)
    usable = [r for r in rows if all(c in r for c in CURVE_COLUMNS)]
    if rows and not usable:
        raise CurveError(f"no rows in {results_file} carry the columns {', '.join(CURVE_COLUMNS)}")
    usable.sort(key=lambda r: tuple(r[a] for a in axes))
    text = _curve_csv(usable)
    if out_path is None:
        out_path = os.path.splitext(results_file)[0] + ".csv"
    atomic_write(out_path, text)
    return out_path


def parse_curve(path: str) -> list[dict]:
    """Read a curve CSV back into typed rows."""
    ints = {"n", "d", "ell", "r", "trials", "successes", "seed"}
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != CURVE_COLUMNS:
            raise CurveError(f"unexpected header {rd.fieldnames}")
        return [{k: int(v) if k in ints else float(v) for k, v in row.items()} for row in rd]


def run(spec_file: str, out: str | None = None, fmt: str | None = None) -> tuple[int, str | None]:
    """Execute a JSON spec file; returns ``(exit_code, results_path)``."""
    try:
        with open(spec_file, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read spec {spec_file}: {exc}") from None
    return run_spec(ExperimentSpec.from_dict(raw), out, fmt)


def run_spec(spec: ExperimentSpec, out: str | None = None, fmt: str | None = None) -> tuple[int, str | None]:
    if fmt is not None and fmt not in ("jsonl", "csv"):
        raise SpecError("format must be jsonl or csv")
    started = _now()
    rows, ok = execute(spec)
    meta = metadata(spec, started, _now(), ok)
    path = write_results(spec, rows, meta, out, fmt)
    return (EXIT_OK if ok else EXIT_FAILED), path


# ---------------------------------------------------------------------------
# command line


def _add_field(p: argparse.ArgumentParser, name: str, typ: str, default, help_: str):
    flag = "--" + name.replace("_", "-")
    req = default is REQUIRED
    shown = "" if req or default is None else f" (default: {default})"
    kw: dict[str, Any] = {"dest": name, "help": help_ + shown, "default": None}
    if typ == _BOOL:
        kw["action"] = argparse.BooleanOptionalAction
    else:
        kw["type"] = {_INT: int, _FLOAT: float, _STR: str, _INTS: int, _FLOATS: float}[typ]
        if typ in (_INTS, _FLOATS):
            kw["nargs"] = "+"
        kw["metavar"] = name.upper()
    if req:
        kw["help"] += " [required]"
    p.add_argument(flag, **kw)


def build_parser() -> argparse.ArgumentParser:
    glob = argparse.ArgumentParser(add_help=False)
    g = glob.add_argument_group("global options")
    g.add_argument("--out", default=argparse.SUPPRESS, help="result file (default: stdout)")
    g.add_argument("--format", choices=("jsonl", "csv"), default=argparse.SUPPRESS,
                   help="result format (default: jsonl)")
    for name in ("seed", "workers"):
        typ, default, help_ = _COMMON[name]
        g.add_argument("--" + name, type=int, default=argparse.SUPPRESS, dest=name,
                       help=help_ + ("" if default is None else f" (default: {default})"))
    parser = argparse.ArgumentParser(prog="perclab", parents=[glob],
                                     description="Bootstrap percolation laboratory.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for kind, schema in KINDS.items():
        sp = sub.add_parser(kind, parents=[glob], help=f"run the {kind} experiment")
        for name, (typ, default, help_) in schema.items():
            if name not in _COMMON:
                _add_field(sp, name, typ, default, help_)
    sp = sub.add_parser("run", parents=[glob], help="run a JSON experiment spec")
    sp.add_argument("spec_file")
    sp = sub.add_parser("emit-curve", help="turn a JSONL result file into the plot CSV")
    sp.add_argument("results_file")
    sp.add_argument("--out", default=None, help="CSV path (default: results file with .csv)")
    sp.add_argument("--axes", nargs="+", default=["n", "p"], help="sort columns (default: n p)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    ns = vars(args)
    cmd = ns.pop("command")
    try:
        if cmd == "emit-curve":
            print(emit_curve(ns["results_file"], ns["out"], tuple(ns["axes"])))
            return EXIT_OK
        out, fmt = ns.pop("out", None), ns.pop("format", None)
        if cmd == "run":
            code, _ = run(ns.pop("spec_file"), out, fmt)
            return code
        params = {k: v for k, v in ns.items() if v is not None}
        spec = ExperimentSpec.from_dict({"kind": cmd, "params": params,
                                         "output": {"format": fmt or "jsonl"}})
        code, _ = run_spec(spec, out, fmt)
        return code
    except (SpecError, CurveError) as exc:
        print(f"perclab: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"perclab: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

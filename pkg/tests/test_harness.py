import json
import math
import os

import pytest

from perclab import harness
from perclab.harness import (
    CURVE_COLUMNS,
    KINDS,
    ROW_SCHEMAS,
    CurveError,
    ExperimentSpec,
    SpecError,
    atomic_write,
    emit_curve,
    execute,
    main,
    parse_curve,
    read_results,
)
from perclab.verify import Check, SuiteReport


def write_spec(tmp_path, obj, name="spec.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


EST = {"kind": "estimate", "params": {"n": 6, "d": 2, "ell": 1, "r": 2, "p": 0.2, "trials": 60, "seed": 3}}


# ---------------------------------------------------------------------------
# spec validation


def test_defaults_are_filled():
    spec = ExperimentSpec.from_dict(EST)
    assert spec.params["confidence"] == 0.99
    assert spec.params["padded"] is True
    assert spec.params["workers"] is None
    assert spec.output == {"path": None, "format": "jsonl"}


@pytest.mark.parametrize("raw", [
    [],
    {"kind": "nope", "params": {}},
    {"kind": "estimate", "params": {"n": 6}},
    {"kind": "estimate", "params": {**EST["params"], "bogus": 1}},
    {"kind": "estimate", "params": {**EST["params"], "n": 6.5}},
    {"kind": "estimate", "params": {**EST["params"], "n": True}},
    {"kind": "estimate", "params": {**EST["params"], "padded": "yes"}},
    {"kind": "estimate", "params": {**EST["params"], "p": float("nan")}},
    {"kind": "scan", "params": {"n_list": [], "d": 2, "r": 2, "p_grid": [0.1], "trials": 5}},
    {**EST, "output": {"format": "xml"}},
    {**EST, "extra": 1},
])
def test_invalid_specs_are_rejected(raw):
    with pytest.raises(SpecError):
        ExperimentSpec.from_dict(raw)


def test_library_errors_become_spec_errors():
    bad = ExperimentSpec.from_dict({"kind": "estimate", "params": {**EST["params"], "p": 1.5}})
    with pytest.raises(SpecError):
        execute(bad)
    with pytest.raises(SpecError):
        execute(ExperimentSpec.from_dict({"kind": "lambda", "params": {"d": 2, "r": 3}}))


def test_every_kind_has_a_row_schema():
    for kind in KINDS:
        assert kind in ROW_SCHEMAS or kind in ("scan",)


# ---------------------------------------------------------------------------
# execution and rows


def test_estimate_rows_follow_schema():
    rows, ok = execute(ExperimentSpec.from_dict(EST))
    assert ok and len(rows) == 1
    assert list(rows[0]) == ["row", *ROW_SCHEMAS["estimate"]]
    assert rows[0]["successes"] <= 60 and rows[0]["seed"] == 3


def test_rows_are_byte_identical_across_reruns_and_workers(tmp_path):
    outs = []
    for w in (1, 2):
        spec = {**EST, "params": {**EST["params"], "workers": w}}
        path = str(tmp_path / f"r{w}.jsonl")
        assert main(["run", write_spec(tmp_path, spec, f"s{w}.json"), "--out", path]) == 0
        outs.append(open(path).read().splitlines()[1:])  # drop the metadata header
    assert outs[0] == outs[1]


def test_lambda_row():
    rows, ok = execute(ExperimentSpec.from_dict({"kind": "lambda", "params": {"d": 2, "r": 2}}))
    assert ok
    assert abs(rows[0]["value"] - math.pi**2 / 18) < 1e-8


def test_lgap_and_count_rows():
    rows, _ = execute(ExperimentSpec.from_dict({"kind": "lgap", "params": {"m": 1, "u": [0.5, 0.5]}}))
    assert rows[0]["exact"] == pytest.approx(0.75) and rows[0]["enumerated"] == pytest.approx(0.75)
    rows, _ = execute(ExperimentSpec.from_dict(
        {"kind": "count-seq", "params": {"p": 0.04, "d": 2, "c": 0.2, "m": 1}}))
    assert rows[0]["count"] == 66 and rows[0]["holds"] is True


def test_event_spec_forms_agree():
    base = {"n": 8, "d": 2, "ell": 1, "r": 2, "p": 0.2, "trials": 40, "seed": 1}
    a, _ = execute(ExperimentSpec.from_dict({"kind": "event", "params": {**base, "event": "D:3,7"}}))
    b, _ = execute(ExperimentSpec.from_dict({"kind": "event", "params": {**base, "event": "D", "a": 3, "b": 7}}))
    assert a == b
    with pytest.raises(SpecError):
        execute(ExperimentSpec.from_dict({"kind": "event", "params": {**base, "event": "D", "a": 3}}))


def test_pc_rows_end_with_summary():
    spec = {"kind": "pc", "params": {"n": 4, "d": 2, "r": 2, "tol": 0.1, "max_trials": 256}}
    rows, _ = execute(ExperimentSpec.from_dict(spec))
    assert [r["row"] for r in rows[:-1]] == ["pc-step"] * (len(rows) - 1)
    last = rows[-1]
    assert last["row"] == "pc" and last["p_hi"] - last["p_lo"] <= 0.1


def test_verify_lgap_suite_rows():
    rows, ok = execute(ExperimentSpec.from_dict({"kind": "verify", "params": {"suite": "lgap"}}))
    assert ok and rows and all(r["suite"] == "lgap" and r["passed"] for r in rows)


# ---------------------------------------------------------------------------
# exit codes


def test_exit_codes(tmp_path, monkeypatch, capsys):
    out = str(tmp_path / "x.jsonl")
    assert main(["lambda", "--d", "2", "--r", "2", "--out", out]) == 0
    assert main(["estimate", "--n", "4", "--d", "2", "--r", "2", "--p", "0.3"]) == 2  # trials missing
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert main(["estimate", "--n", "4", "--d", "2", "--r", "2", "--p", "2", "--trials", "3"]) == 2

    failing = [SuiteReport("lgap", [Check("always_red", False, {}, {})])]
    monkeypatch.setattr("perclab.verify.verify_suite", lambda name: failing)
    assert main(["verify", "--suite", "lgap", "--out", out]) == 1
    meta, rows = read_results(out)
    assert meta["passed"] is False and rows[0]["check"] == "always_red"

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(harness, "execute", boom)
    assert main(["lambda", "--d", "2", "--r", "2"]) == 3
    assert "disk on fire" in capsys.readouterr().err


def test_help_lists_fields(capsys):
    with pytest.raises(SystemExit):
        harness.build_parser().parse_args(["estimate", "--help"])
    text = capsys.readouterr().out
    for name in KINDS["estimate"]:
        assert "--" + name.replace("_", "-") in text


# ---------------------------------------------------------------------------
# files


def test_metadata_header(tmp_path):
    out = str(tmp_path / "r.jsonl")
    assert main(["run", write_spec(tmp_path, EST), "--out", out]) == 0
    meta, rows = read_results(out)
    assert meta["spec"]["kind"] == "estimate" and meta["rng_id"].startswith("numpy.Philox")
    assert meta["passed"] is True and "started" in meta and "finished" in meta
    assert len(rows) == 1


def test_csv_output_has_sidecar(tmp_path):
    out = str(tmp_path / "r.csv")
    assert main(["run", write_spec(tmp_path, EST), "--out", out, "--format", "csv"]) == 0
    assert parse_curve(out)[0]["n"] == 6
    assert json.load(open(out + ".meta.json"))["meta"]["spec"]["kind"] == "estimate"


def test_atomic_write_leaves_no_partial_file(tmp_path, monkeypatch):
    path = str(tmp_path / "f.txt")
    atomic_write(path, "old\n")

    def fail(src, dst):
        raise OSError("rename failed")

    monkeypatch.setattr(os, "replace", fail)
    with pytest.raises(OSError):
        atomic_write(path, "new\n")
    assert open(path).read() == "old\n"
    assert os.listdir(tmp_path) == ["f.txt"]


def test_emit_curve_round_trip(tmp_path):
    spec = {"kind": "scan", "params": {"n_list": [6, 4], "d": 2, "r": 2, "p_grid": [0.3, 0.1],
                                       "trials": 30, "seed": 2}}
    res = str(tmp_path / "scan.jsonl")
    assert main(["run", write_spec(tmp_path, spec), "--out", res]) == 0
    csv_path = emit_curve(res)
    assert csv_path == str(tmp_path / "scan.csv")
    rows = parse_curve(csv_path)
    assert [(r["n"], r["p"]) for r in rows] == [(4, 0.1), (4, 0.3), (6, 0.1), (6, 0.3)]
    _, raw = read_results(res)
    by_key = {(r["n"], r["p"]): r for r in raw}
    for r in rows:
        src = by_key[(r["n"], r["p"])]
        assert all(r[c] == src[c] for c in CURVE_COLUMNS)


def test_emit_curve_header_only_and_errors(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text(json.dumps({"meta": {}}) + "\n")
    out = emit_curve(str(empty))
    assert open(out).read().strip() == ",".join(CURVE_COLUMNS)
    assert parse_curve(out) == []
    lam = str(tmp_path / "lam.jsonl")
    assert main(["lambda", "--d", "2", "--r", "2", "--out", lam]) == 0
    with pytest.raises(CurveError):
        emit_curve(lam)
    with pytest.raises(CurveError):
        emit_curve(str(empty), axes=("bogus",))
    assert main(["emit-curve", lam]) == 2

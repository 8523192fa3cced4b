import json
from pathlib import Path

import pytest

from remrate.cli import main

SYNTH = {"area_width_m": 400, "area_height_m": 400, "n_base_stations": 2,
         "shadowing": {"resolution_m": 50, "sigma_db": 6, "smoothing_cells": 1},
         "snapshot_noise_sigma_db": 3, "rate_noise_sigma": 0.1,
         "trace": {"n_records": 120, "n_waypoints": 5, "speed_mps": 5}}
FOREST = {"n_trees": 4, "max_depth": 6}


def write(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write(root / "synth.json", {"seed": 3, "synth": SYNTH, "output_dir": "synth"})
    assert main(["synth", "--config", str(cfg), "--threads", "1"]) == 0
    return root


def run_cmd(root, sub, config, *flags):
    cfg = write(root / f"{sub}.json", config)
    return main([sub, "--config", str(cfg), "--threads", "1", *flags])


def base(out, **kw):
    return {"seed": 5, "bundle": "synth/bundle.json", "forest": FOREST, "output_dir": out, **kw}


def artifacts(out: Path):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())
            if p.name not in ("manifest.json", "error.json")}


def test_synth_outputs(workspace):
    out = workspace / "synth"
    assert {"trace.csv", "mapping.json", "truth.json", "bundle.json", "manifest.json"} <= \
        {p.name for p in out.iterdir()}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and "created_at" in manifest


def test_eval_instantaneous(workspace):
    assert run_cmd(workspace, "eval", base("ev", cv={"k": 3, "repetitions": 2}),
                   "--mode", "instantaneous") == 0
    out = workspace / "ev"
    rep = json.loads((out / "cv_instantaneous.json").read_text())
    assert len(rep["runs"]) == 6
    lines = (out / "cv_instantaneous.csv").read_text().splitlines()
    assert lines[0].startswith("# manifest_hash=") and lines[1] == "repetition,fold,rmse,n_test"


def test_every_artifact_carries_manifest_hash(workspace):
    assert run_cmd(workspace, "eval", base("ev2", cv={"k": 2, "repetitions": 1}, cell_width=50),
                   "--mode", "rem,combined") == 0
    out = workspace / "ev2"
    h = json.loads((out / "manifest.json").read_text())["manifest_hash"]
    for p in out.iterdir():
        if p.suffix == ".json":
            assert json.loads(p.read_text())["manifest_hash"] == h
        else:
            assert p.read_text().splitlines()[0] == f"# manifest_hash={h}"


def test_rerun_is_byte_identical(workspace):
    for out in ("a", "b"):
        assert run_cmd(workspace, "optimize-irem",
                       base(out, irem={"iterations": 6, "candidate_widths": [20, 50, 100],
                                       "final_cv": True}, cv={"k": 2, "repetitions": 1})) == 0
    assert artifacts(workspace / "a") == artifacts(workspace / "b")


def test_pipeline_of_subcommands(workspace):
    assert run_cmd(workspace, "build-rem", base("rem", cell_width=75)) == 0
    assert json.loads((workspace / "rem" / "rem.json").read_text())["layers"]
    assert run_cmd(workspace, "train", base("tr", layer_plan={"rsrp": 50, "rsrq": 100, "sinr": 20}),
                   "--mode", "combined") == 0
    assert {"model.json", "rem.json", "pipeline.json"} <= set(artifacts(workspace / "tr"))
    assert run_cmd(workspace, "ecdf", base("ec")) == 0
    assert run_cmd(workspace, "feasibility", base("fe")) == 0
    rows = json.loads((workspace / "fe" / "feasibility.json").read_text())["rows"]
    assert len(rows) == 10
    assert run_cmd(workspace, "eval", base("cmp_in", cv={"k": 2, "repetitions": 1}, cell_width=50),
                   "--mode", "instantaneous,rem") == 0
    assert run_cmd(workspace, "compare", {"seed": 0, "output_dir": "cmp", "reports": {
        "instantaneous": "cmp_in/cv_instantaneous.json", "rem": "cmp_in/cv_rem.json"}}) == 0
    table = json.loads((workspace / "cmp" / "comparison.json").read_text())["rows"]
    assert table[0]["mode"] == "instantaneous" and table[0]["gain"] == 0.0


def test_ingest_roundtrip(workspace):
    assert run_cmd(workspace, "ingest", {"seed": 0, "output_dir": "ing",
                                         "trace": "synth/trace.csv",
                                         "mapping": "synth/mapping.json"}) == 0
    report = json.loads((workspace / "ing" / "ingest_report.json").read_text())
    assert report["n_records"] == 120 and report["rejected"] == 0


def test_rem_eval_without_plan_is_config_error(workspace, capsys):
    code = run_cmd(workspace, "eval", base("bad"), "--mode", "rem")
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert any(p["field"] == "layer_plan" for p in err["problems"])


def test_missing_seed_and_bad_values(workspace, capsys):
    cfg = base("bad2", forest={"n_trees": 0})
    del cfg["seed"]
    assert run_cmd(workspace, "eval", cfg, "--mode", "nonsense") == 2
    fields = {p["field"] for p in json.loads(capsys.readouterr().err.strip())["problems"]}
    assert {"seed", "forest", "modes[0]"} <= fields


def test_missing_file_is_config_error(workspace):
    assert run_cmd(workspace, "eval", base("bad3", bundle="nope.json")) == 2


def test_corrupt_bundle_is_data_error(workspace):
    (workspace / "broken.json").write_text('{"format_version": 1, "records": [')
    assert run_cmd(workspace, "ecdf", base("bad4", bundle="broken.json")) == 3
    assert json.loads((workspace / "bad4" / "error.json").read_text())["exit_code"] == 3


def test_seed_flag_overrides(workspace):
    assert run_cmd(workspace, "eval", base("s1", cv={"k": 2, "repetitions": 1}), "--seed", "9") == 0
    assert json.loads((workspace / "s1" / "manifest.json").read_text())["seed"] == 9

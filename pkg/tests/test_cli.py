import json
import os

import numpy as np
import pytest

from lesionflow import io
from lesionflow.cli import build_parser, main
from lesionflow.overlay import FLAG_TEMPLATE, export_overlay, pair_color
from lesionflow.templates import icosphere


@pytest.fixture(scope="module")
def made(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "make", "--seed", "2", "--count", "2", "--out", str(root), "--resolution", "30",
                 "--n-lesions", "10"]) == 0
    return root


def test_synth_writes_configs(made):
    lines = (made / "subjects.txt").read_text().split()
    assert lines == ["subject_002/config.toml", "subject_003/config.toml"]
    cfg = io.read_toml(made / "subject_002" / "config.toml")
    assert cfg["inputs"]["ground_truth"] == "gt.json"


def test_run_evaluate_match_overlay(made, capsys, tmp_path):
    cfg = str(made / "subject_002" / "config.toml")
    assert main(["run", "--config", cfg, "--set", "flow.levels=2"]) == 0
    run = made / "subject_002" / "run"
    assert (run / "report.json").exists()
    # a different configuration is refused, then forced
    assert main(["run", "--config", cfg]) == 1
    assert "--force" in capsys.readouterr().err
    assert main(["run", "--config", cfg, "--force"]) == 0
    capsys.readouterr()
    assert main(["evaluate", str(run), "--json", str(tmp_path / "ev.json")]) == 0
    table = capsys.readouterr().out
    assert "D_LP mm" in table and "refined" in table and "(" in table
    ev = io.read_json(tmp_path / "ev.json")
    assert ev["refined"]["d_lp_mean"] < ev["coarse"]["d_lp_mean"]
    assert main(["match", "--run-dir", str(run), "--beta", "0.001", "--out", str(tmp_path / "m.json")]) == 0
    assert main(["export-overlay", "--run-dir", str(run), "--out", str(tmp_path / "o.ply")]) == 0
    d = io.read_ply(tmp_path / "o.ply")
    rep = io.read_json(run / "report.json")
    glyph_flags = d["vertex_props"]["flag"][d["vertex_props"]["flag"] != FLAG_TEMPLATE]
    assert len(glyph_flags) == 42 * (2 * len(rep["matches"]) + len(rep["unmatched_src"])
                                      + len(rep["unmatched_tgt"]))


def test_flow_solve(made, tmp_path, capsys):
    cfg = str(made / "subject_003" / "config.toml")
    assert main(["flow", "solve", "--config", cfg, "--out", str(tmp_path / "f.lflw"), "--set", "flow.levels=1"]) == 0
    assert "energy" in capsys.readouterr().out
    assert io.read_field_blob(tmp_path / "f.lflw")[1].shape[1] == 2


def test_batch_manifest(made):
    assert main(["run", "--manifest", str(made / "subjects.txt"), "--workers", "1", "--force",
                 "--set", "flow.levels=1"]) == 0
    assert (made / "subject_003" / "run" / "report.json").exists()


def test_usage_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2
    with pytest.raises(SystemExit):
        main(["run", "--set", "novalue"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["frobnicate"])


def test_overlay_counts_and_colors(tmp_path):
    t = icosphere(2, 50.0)
    locs = {"src": {"a": (0, np.array([1.0, 0, 0])), "b": (5, np.array([0, 1.0, 0]))},
            "tgt": {"x": (1, np.array([1.0, 0, 0])), "y": (9, np.array([0, 0, 1.0]))}}
    rep = {"matches": [{"src": "a", "tgt": "x", "geodesic_mm": 1.0}, {"src": "b", "tgt": "y", "geodesic_mm": 2.0}],
           "unmatched_src": [], "unmatched_tgt": []}
    n = export_overlay(t, rep, tmp_path / "o.ply", locs)
    assert n == 4
    d = io.read_ply(tmp_path / "o.ply")
    glyph = d["vertex_props"]["flag"] != FLAG_TEMPLATE
    colors = {tuple(c) for c in np.round(d["colors"][glyph] * 255).astype(int)}
    assert len(colors) == 2
    assert pair_color("a", "x") == pair_color("a", "x") != pair_color("b", "y")
    with pytest.raises(ValueError):
        export_overlay(t, rep, tmp_path / "p.ply")


def test_overlay_empty_report_is_template(tmp_path):
    t = icosphere(1, 10.0)
    io.write_ply(tmp_path / "t.ply", t.vertices, t.triangles)
    assert export_overlay(t, {"matches": [], "unmatched_src": [], "unmatched_tgt": []}, tmp_path / "e.ply") == 0
    a = (tmp_path / "t.ply").read_bytes()
    b = (tmp_path / "e.ply").read_bytes()
    strip = lambda raw: b"\n".join(ln for ln in raw.split(b"\n") if not ln.startswith(b"comment"))  # noqa: E731
    assert strip(a) == strip(b) and a != b

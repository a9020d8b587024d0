"""End-to-end command-line behavior via subprocess."""

import json
import subprocess
import sys

import numpy as np
import pytest

from metaselect import compute_all, load_bundle, load_features, normalize, select


def run_cli(*argv):
    return subprocess.run(
        [sys.executable, "-m", "metaselect", *map(str, argv)],
        capture_output=True, text=True,
    )


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One synth -> characterize run shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    bundle_dir = root / "bundle"
    features_dir = root / "features"
    synth = run_cli("synth", "--out", bundle_dir, "--n-samples", 100,
                    "--noise-fraction", "0.1", "--rng-seed", 11)
    assert synth.returncode == 0, synth.stderr
    char = run_cli("characterize", bundle_dir, "--out", features_dir)
    assert char.returncode == 0, char.stderr
    return root, bundle_dir, features_dir


def test_synth_then_validate_exits_zero(pipeline):
    _, bundle_dir, _ = pipeline
    got = run_cli("validate", bundle_dir)
    assert got.returncode == 0
    assert "100 samples" in got.stderr
    assert got.stdout == ""  # diagnostics stay on stderr


def test_validate_missing_dir_exits_one(tmp_path):
    got = run_cli("validate", tmp_path / "nope")
    assert got.returncode == 1
    assert "error:" in got.stderr


def test_characterize_writes_full_artifact(pipeline):
    _, _, features_dir = pipeline
    art = load_features(features_dir)
    assert art.features.values.shape == (100, 23)
    assert art.label_source == "gold"
    for name in ("features.json", "features.f64", "measures.f32",
                 "labels.i32", "correctness.f32"):
        assert (features_dir / name).is_file(), name


def test_characterize_measure_subset_and_corr(pipeline, tmp_path):
    _, bundle_dir, _ = pipeline
    out = tmp_path / "subset"
    corr = tmp_path / "corr.csv"
    got = run_cli("characterize", bundle_dir, "--out", out,
                  "--measures", "aum,badge,pll", "--corr", corr)
    assert got.returncode == 0
    art = load_features(out)
    assert art.features.names == ["badge", "aum", "pll"]
    lines = corr.read_text().splitlines()
    assert lines[0] == "measure,badge,aum,pll"
    assert len(lines) == 4


def test_characterize_unknown_measure_exits_two(pipeline, tmp_path):
    _, bundle_dir, _ = pipeline
    got = run_cli("characterize", bundle_dir, "--out", tmp_path / "x",
                  "--measures", "velocity")
    assert got.returncode == 2
    assert "velocity" in got.stderr


def test_characterize_requires_out(pipeline):
    _, bundle_dir, _ = pipeline
    got = run_cli("characterize", bundle_dir)
    assert got.returncode == 2
    assert "--out" in got.stderr


def test_select_ratio_floors_with_minimum_one(pipeline, tmp_path):
    _, _, features_dir = pipeline
    out = tmp_path / "sel.json"
    got = run_cli("select", features_dir, "--mode", "prune", "--method",
                  "dpp", "--ratio", "0.17", "--seed", "0", "--out", out)
    assert got.returncode == 0, got.stderr
    payload = json.loads(out.read_text())
    assert len(payload["indices"]) == 17

    tiny = tmp_path / "tiny.json"
    got = run_cli("select", features_dir, "--mode", "prune", "--method",
                  "random", "--ratio", "0.001", "--seed", "0", "--out", tiny)
    assert got.returncode == 0
    assert len(json.loads(tiny.read_text())["indices"]) == 1


def test_select_result_key_order(pipeline, tmp_path):
    _, _, features_dir = pipeline
    out = tmp_path / "sel.json"
    run_cli("select", features_dir, "--mode", "acquire", "--method",
            "topk:static_entropy", "--budget", "5", "--out", out)
    pairs = json.loads(out.read_text(),
                       object_pairs_hook=lambda p: [k for k, _ in p])
    assert pairs == ["method", "mode", "seed", "beta", "knn_k", "indices",
                     "gains", "total_logdet"]


def test_select_matches_library_composition(pipeline, tmp_path):
    _, bundle_dir, features_dir = pipeline
    out = tmp_path / "sel.json"
    got = run_cli("select", features_dir, "--mode", "prune", "--method",
                  "dpp", "--budget", "12", "--seed", "3", "--out", out)
    assert got.returncode == 0
    payload = json.loads(out.read_text())

    bundle = load_bundle(bundle_dir)
    features = normalize(compute_all(bundle))
    from metaselect import resolve_labels
    composed = select(features, resolve_labels(bundle), mode="prune",
                      budget=12, method="dpp", seed=3)
    assert payload["indices"] == composed.indices
    assert payload["gains"] == [float(g) for g in composed.gains]
    assert payload["total_logdet"] == composed.total_logdet


def test_select_usage_errors_exit_two(pipeline, tmp_path):
    _, _, features_dir = pipeline
    base = ["select", features_dir, "--mode", "prune", "--method", "random",
            "--out", tmp_path / "x.json"]
    both = run_cli(*base, "--budget", "3", "--ratio", "0.5")
    neither = run_cli(*base)
    bad_ratio = run_cli(*base, "--ratio", "1.0")
    bad_budget = run_cli(*base, "--budget", "0")
    for got in (both, neither, bad_ratio, bad_budget):
        assert got.returncode == 2
        assert "error:" in got.stderr


def test_select_unknown_topk_measure_exits_two(pipeline, tmp_path):
    _, _, features_dir = pipeline
    got = run_cli("select", features_dir, "--mode", "prune", "--method",
                  "topk:nonexistent", "--budget", "3",
                  "--out", tmp_path / "x.json")
    assert got.returncode == 2
    assert "nonexistent" in got.stderr


def test_select_topk_measure_missing_from_artifact_exits_one(pipeline,
                                                             tmp_path):
    _, bundle_dir, _ = pipeline
    subset = tmp_path / "subset"
    run_cli("characterize", bundle_dir, "--out", subset,
            "--measures", "aum,badge")
    got = run_cli("select", subset, "--mode", "prune", "--method",
                  "topk:pll", "--budget", "3", "--out", tmp_path / "x.json")
    assert got.returncode == 1
    assert "pll" in got.stderr


def test_select_overbudget_exits_two(pipeline, tmp_path):
    _, _, features_dir = pipeline
    got = run_cli("select", features_dir, "--mode", "prune", "--method",
                  "random", "--budget", "101", "--out", tmp_path / "x.json")
    assert got.returncode == 2


def test_select_embedding_space_requires_bundle(pipeline, tmp_path):
    _, bundle_dir, features_dir = pipeline
    base = ["select", features_dir, "--mode", "prune", "--method", "coreset",
            "--budget", "5", "--out", tmp_path / "x.json"]
    missing = run_cli(*base, "--space", "embedding")
    assert missing.returncode == 2
    ok = run_cli(*base, "--space", "embedding", "--bundle", bundle_dir)
    assert ok.returncode == 0, ok.stderr


def test_identical_flags_give_byte_identical_outputs(pipeline, tmp_path):
    _, bundle_dir, _ = pipeline
    outs = []
    for name in ("a", "b"):
        fdir = tmp_path / f"f_{name}"
        sel = tmp_path / f"sel_{name}.json"
        rep = tmp_path / f"map_{name}.csv"
        assert run_cli("characterize", bundle_dir, "--out", fdir
                       ).returncode == 0
        assert run_cli("select", fdir, "--mode", "prune", "--method", "dpp",
                       "--budget", "10", "--seed", "5", "--out", sel
                       ).returncode == 0
        assert run_cli("report", fdir, "--out", rep).returncode == 0
        outs.append((fdir, sel, rep))
    (fa, sa, ra), (fb, sb, rb) = outs
    for name in ("features.json", "features.f64", "measures.f32",
                 "labels.i32", "correctness.f32"):
        assert (fa / name).read_bytes() == (fb / name).read_bytes(), name
    assert sa.read_bytes() == sb.read_bytes()
    assert ra.read_bytes() == rb.read_bytes()


def test_report_emits_data_map(pipeline, tmp_path):
    _, _, features_dir = pipeline
    out = tmp_path / "map.csv"
    got = run_cli("report", features_dir, "--out", out)
    assert got.returncode == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "index,avg_confidence,variability,correctness,proj_x,proj_y"
    assert len(lines) == 101
    first = lines[1].split(",")
    assert first[0] == "0"
    assert all(np.isfinite(float(v)) for v in first[1:])


def test_report_accepts_external_coords(pipeline, tmp_path):
    _, _, features_dir = pipeline
    coords = tmp_path / "coords.csv"
    coords.write_text("x,y\n" + "\n".join(f"{i},{-i}" for i in range(100)) + "\n")
    out = tmp_path / "map.csv"
    got = run_cli("report", features_dir, "--coords", coords, "--out", out)
    assert got.returncode == 0
    row3 = out.read_text().splitlines()[4].split(",")
    assert float(row3[4]) == 3.0 and float(row3[5]) == -3.0


def test_report_wrong_coord_count_exits_one(pipeline, tmp_path):
    _, _, features_dir = pipeline
    coords = tmp_path / "coords.csv"
    coords.write_text("0.0,1.0\n2.0,3.0\n")
    got = run_cli("report", features_dir, "--coords", coords,
                  "--out", tmp_path / "map.csv")
    assert got.returncode == 1


def test_report_needs_dynamics_measures(pipeline, tmp_path):
    _, bundle_dir, _ = pipeline
    subset = tmp_path / "subset"
    run_cli("characterize", bundle_dir, "--out", subset, "--measures", "badge")
    got = run_cli("report", subset, "--out", tmp_path / "map.csv")
    assert got.returncode == 1
    assert "avg_confidence" in got.stderr


def test_config_file_supplies_options_and_flags_win(tmp_path):
    bundle_dir = tmp_path / "bundle"
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps({"n_samples": 30, "rng_seed": 5,
                               "n_classes": 3}))
    got = run_cli("synth", "--config", cfg, "--out", bundle_dir,
                  "--n-samples", "24")
    assert got.returncode == 0, got.stderr
    bundle = load_bundle(bundle_dir)
    assert bundle.n_samples == 24  # flag beat the config file
    assert bundle.n_classes == 3   # config beat the default


def test_config_unknown_key_exits_two(tmp_path):
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps({"n_sample": 30}))
    got = run_cli("synth", "--config", cfg, "--out", tmp_path / "b")
    assert got.returncode == 2
    assert "n_sample" in got.stderr


def test_config_select_options(pipeline, tmp_path):
    _, _, features_dir = pipeline
    cfg = tmp_path / "select.json"
    cfg.write_text(json.dumps({"mode": "prune", "method": "random",
                               "ratio": 0.1, "seed": 7}))
    out = tmp_path / "sel.json"
    got = run_cli("select", features_dir, "--config", cfg, "--out", out)
    assert got.returncode == 0, got.stderr
    payload = json.loads(out.read_text())
    assert payload["seed"] == 7
    assert len(payload["indices"]) == 10


def test_synth_bad_flag_value_exits_two(tmp_path):
    got = run_cli("synth", "--out", tmp_path / "b", "--n-classes", "1")
    assert got.returncode == 2


def test_unknown_subcommand_exits_two():
    got = run_cli("transmogrify")
    assert got.returncode == 2

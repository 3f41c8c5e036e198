"""Command-line interface: schemas, exit codes, reports, determinism."""

import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

import volatix as vx
from volatix import io
from volatix.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """traces + events + features + attributes + spec, ready for fitting."""
    root = tmp_path_factory.mktemp("cli")
    cfg = vx.TraceConfig(n_baseline=40, n_near_crash=12, n_crash=8, prefix_samples=60,
                         no_reaction_fraction=0.3, target_jitter=0.3,
                         near_crash_cv_scale=1.15, crash_cv_scale=1.5, seed=21)
    traces = vx.generate_traces(cfg)
    io.write_traces(traces, root / "traces.csv", root / "events.csv")

    rc = main(["featurize", "--traces", str(root / "traces.csv"),
               "--events", str(root / "events.csv"), "--out", str(root / "feat")])
    assert rc == 0
    features = pd.read_csv(root / "feat" / "features.csv")

    rng = np.random.default_rng(33)
    attributes = pd.DataFrame({
        "event_id": features["event_id"],
        "outcome": features["event_type"],
        "speeding": rng.integers(0, 2, len(features)).astype(float),
    })
    attributes.to_csv(root / "attributes.csv", index=False)

    spec_doc = {
        "model_class": "mnl",
        "coefficients": {
            "crash": [{"name": "const"}, {"name": "cv_jerk_pos_long"}],
            "near_crash": [{"name": "const"}, {"name": "cv_jerk_pos_long"}],
        },
        "scale_covariates": [], "n_draws": 1, "draw_scheme": "halton", "seed": 0,
    }
    (root / "spec.json").write_text(json.dumps(spec_doc))

    rc = main(["fit", "--features", str(root / "feat" / "features.csv"),
               "--attributes", str(root / "attributes.csv"),
               "--spec", str(root / "spec.json"), "--out", str(root / "fit")])
    assert rc == 0
    return root


def fit_args(root, extra):
    return ["--fit", str(root / "fit" / "fit.json"),
            "--features", str(root / "feat" / "features.csv"),
            "--attributes", str(root / "attributes.csv")] + extra


class TestFeaturize:
    def test_outputs_and_manifest(self, workspace):
        out = workspace / "feat"
        features = pd.read_csv(out / "features.csv")
        assert len(features) == 60
        assert (out / "rejects.csv").exists()
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["command"] == "featurize"
        assert any(k.endswith("traces.csv") for k in manifest["inputs"])

    def test_empty_trace_file(self, tmp_path):
        path = tmp_path / "traces.csv"
        pd.DataFrame(columns=list(io.TRACE_COLUMNS)).to_csv(path, index=False)
        rc = main(["featurize", "--traces", str(path), "--out", str(tmp_path / "out")])
        assert rc == 0
        assert len(pd.read_csv(tmp_path / "out" / "features.csv")) == 0

    def test_malformed_timestamp_exits_2(self, tmp_path, capsys):
        frame = pd.DataFrame({
            "event_id": ["a"] * 3, "event_type": ["baseline"] * 3,
            "t_sec": [0.0, "bad", 0.2], "speed_kph": [50.0] * 3,
            "accel_long_mps2": [0.0] * 3, "accel_lat_mps2": [0.0] * 3})
        path = tmp_path / "traces.csv"
        frame.to_csv(path, index=False)
        rc = main(["featurize", "--traces", str(path), "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "t_sec" in capsys.readouterr().err

    def test_row_count_matches_generator_minus_rejects(self, tmp_path):
        cfg = vx.TraceConfig(n_baseline=5, n_crash=3, prefix_samples=40, seed=3)
        io.write_traces(vx.generate_traces(cfg), tmp_path / "t.csv", tmp_path / "e.csv")
        rc = main(["featurize", "--traces", str(tmp_path / "t.csv"),
                   "--events", str(tmp_path / "e.csv"), "--out", str(tmp_path / "o")])
        assert rc == 0
        features = pd.read_csv(tmp_path / "o" / "features.csv")
        rejects = pd.read_csv(tmp_path / "o" / "rejects.csv")
        assert len(features) + len(rejects) == 8

    def test_featurize_rerun_is_byte_identical(self, tmp_path):
        cfg = vx.TraceConfig(n_baseline=4, n_crash=2, prefix_samples=40, seed=6)
        io.write_traces(vx.generate_traces(cfg), tmp_path / "t.csv", tmp_path / "e.csv")
        for out in ("o1", "o2"):
            assert main(["featurize", "--traces", str(tmp_path / "t.csv"),
                         "--events", str(tmp_path / "e.csv"),
                         "--out", str(tmp_path / out)]) == 0
        assert ((tmp_path / "o1" / "features.csv").read_bytes()
                == (tmp_path / "o2" / "features.csv").read_bytes())


class TestFit:
    def test_summary_layout(self, workspace, capsys):
        rc = main(["fit", "--features", str(workspace / "feat" / "features.csv"),
                   "--attributes", str(workspace / "attributes.csv"),
                   "--spec", str(workspace / "spec.json"), "--out", str(workspace / "fit2")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "z-stat" in out and "AIC" in out and "Log-likelihood" in out

    def test_fit_json_contents(self, workspace):
        doc = json.loads((workspace / "fit" / "fit.json").read_text())
        assert doc["converged"] is True
        assert doc["k"] == 4
        assert "warnings" in doc and doc["warnings"] == 0
        assert doc["draw_config"]["scheme"] == "halton"

    def test_rerun_is_byte_identical(self, workspace):
        a = (workspace / "fit" / "fit.json").read_bytes()
        b = (workspace / "fit2" / "fit.json").read_bytes()
        assert a == b

    def test_zero_draws_spec_exits_2(self, workspace, tmp_path, capsys):
        doc = json.loads((workspace / "spec.json").read_text())
        doc["n_draws"] = 0
        bad = tmp_path / "bad_spec.json"
        bad.write_text(json.dumps(doc))
        rc = main(["fit", "--features", str(workspace / "feat" / "features.csv"),
                   "--attributes", str(workspace / "attributes.csv"),
                   "--spec", str(bad), "--out", str(tmp_path / "out")])
        assert rc == 2

    def test_join_miss_exits_3_listing_orphans(self, workspace, tmp_path, capsys):
        attrs = pd.read_csv(workspace / "attributes.csv").iloc[:-2]
        attrs.to_csv(tmp_path / "attrs.csv", index=False)
        rc = main(["fit", "--features", str(workspace / "feat" / "features.csv"),
                   "--attributes", str(tmp_path / "attrs.csv"),
                   "--spec", str(workspace / "spec.json"), "--out", str(tmp_path / "out")])
        assert rc == 3
        err = capsys.readouterr().err
        missing = pd.read_csv(workspace / "attributes.csv")["event_id"].iloc[-1]
        assert str(missing) in err


class TestReports:
    def test_effects(self, workspace):
        rc = main(["effects"] + fit_args(workspace, ["--out", str(workspace / "eff")]))
        assert rc == 0
        table = pd.read_csv(workspace / "eff" / "effects.csv")
        assert {"covariate", "utility", "effect_crash"} <= set(table.columns)
        sums = table[["effect_baseline", "effect_near_crash", "effect_crash"]].sum(axis=1)
        assert np.all(np.abs(sums) < 1e-10)

    def test_curve_grid_rows(self, workspace):
        rc = main(["curve"] + fit_args(workspace, [
            "--covariate", "cv_jerk_pos_long", "--grid-min", "0.5", "--grid-max", "1.5",
            "--grid-points", "50", "--out", str(workspace / "curve")]))
        assert rc == 0
        curve = pd.read_csv(workspace / "curve" / "curve.csv")
        assert len(curve) == 150

    def test_simulate_scheme_rows(self, workspace):
        rc = main(["simulate"] + fit_args(workspace, [
            "--covariate", "cv_jerk_pos_long", "--scheme", "paper",
            "--out", str(workspace / "sim")]))
        assert rc == 0
        table = pd.read_csv(workspace / "sim" / "scenarios.csv")
        assert table["scenario"].nunique() == 8
        assert len(table) == 24

    def test_simulate_zero_percent_baseline_row(self, workspace):
        rc = main(["simulate"] + fit_args(workspace, [
            "--covariate", "cv_jerk_pos_long", "--percent", "0",
            "--out", str(workspace / "sim0")]))
        assert rc == 0
        table = pd.read_csv(workspace / "sim0" / "scenarios.csv")
        assert np.all(table["delta_share_pct"] == 0.0)
        assert np.all(table["delta_count"] == 0)

    def test_unknown_covariate_exits_2_with_names(self, workspace, capsys):
        rc = main(["curve"] + fit_args(workspace, [
            "--covariate", "nope", "--out", str(workspace / "bad")]))
        assert rc == 2
        assert "cv_jerk_pos_long" in capsys.readouterr().err

    def test_json_format(self, workspace):
        rc = main(["simulate"] + fit_args(workspace, [
            "--covariate", "cv_jerk_pos_long", "--percent", "10", "--format", "json",
            "--out", str(workspace / "simjson")]))
        assert rc == 0
        doc = json.loads((workspace / "simjson" / "scenarios.json").read_text())
        assert len(doc) == 6  # baseline + one scenario, three outcomes each


class TestEntryPoint:
    def test_console_script_help(self):
        proc = subprocess.run([sys.executable, "-m", "volatix.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for command in ("featurize", "fit", "effects", "curve", "simulate", "synth"):
            assert command in proc.stdout


class TestSynth:
    def test_synth_dataset(self, tmp_path):
        config = {
            "spec": {"model_class": "mnl",
                     "coefficients": {"crash": [{"name": "const"}, {"name": "v1"}],
                                      "near_crash": [{"name": "const"}]},
                     "n_draws": 1},
            "params": {"beta_crash": [-1.0, 0.5], "beta_near_crash": [-0.4]},
            "n_events": 300,
            "covariates": {"v1": {"dist": "normal", "mean": 1.0, "sd": 0.4}},
            "seed": 12}
        path = tmp_path / "gen.json"
        path.write_text(json.dumps(config))
        rc = main(["synth", "--kind", "dataset", "--config", str(path),
                   "--out", str(tmp_path / "out")])
        assert rc == 0
        frame = pd.read_csv(tmp_path / "out" / "attributes.csv")
        assert len(frame) == 300
        assert {"event_id", "outcome", "v1"} <= set(frame.columns)

    def test_synth_traces_roundtrip(self, tmp_path):
        config = {"n_baseline": 4, "n_crash": 2, "prefix_samples": 40, "seed": 9}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config))
        rc = main(["synth", "--kind", "traces", "--config", str(path),
                   "--out", str(tmp_path / "out")])
        assert rc == 0
        rc = main(["featurize", "--traces", str(tmp_path / "out" / "traces.csv"),
                   "--events", str(tmp_path / "out" / "events.csv"),
                   "--out", str(tmp_path / "feat")])
        assert rc == 0
        assert len(pd.read_csv(tmp_path / "feat" / "features.csv")) == 6

    def test_seed_flag_overrides_config(self, tmp_path):
        config = {"n_baseline": 3, "prefix_samples": 40, "seed": 1}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config))
        main(["synth", "--kind", "traces", "--config", str(path), "--seed", "7",
              "--out", str(tmp_path / "a")])
        main(["synth", "--kind", "traces", "--config", str(path), "--seed", "7",
              "--out", str(tmp_path / "b")])
        main(["synth", "--kind", "traces", "--config", str(path),
              "--out", str(tmp_path / "c")])
        a = (tmp_path / "a" / "traces.csv").read_bytes()
        b = (tmp_path / "b" / "traces.csv").read_bytes()
        c = (tmp_path / "c" / "traces.csv").read_bytes()
        assert a == b
        assert a != c

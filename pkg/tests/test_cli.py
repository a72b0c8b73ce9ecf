import json

import pytest

from pulsekin.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> extract (multi + holistic) -> train, shared across tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main([
        "synth", "--out", str(data), "--families", "4", "--rois", "6",
        "--duration-s", "3.0", "--flicker-gain", "0.3", "--seed", "5",
    ]) == 0
    assert main([
        "extract", "--traces", str(data / "traces"), "--method", "green",
        "--out", str(root / "rppg"), "--jobs", "1",
    ]) == 0
    assert main([
        "extract", "--traces", str(data / "traces"), "--method", "green",
        "--channels", "holistic", "--out", str(root / "rppg1"), "--jobs", "1",
    ]) == 0
    assert main([
        "train", "--registry", str(data / "registry.json"),
        "--rppg", str(root / "rppg" / "green"), "--out", str(root / "run"),
        "--relation", "F-S", "--max-epochs", "3", "--patience", "3",
        "--seed", "3", "--jobs", "1",
    ]) == 0
    return root


class TestSynth:
    def test_outputs_and_manifest(self, workspace):
        data = workspace / "data"
        assert (data / "registry.json").exists()
        assert len(list((data / "traces").glob("*.csv"))) == 8
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["config"]["families"] == 4
        assert manifest["config"]["seed"] == 5


class TestExtract:
    def test_method_subdirectory(self, workspace):
        assert len(list((workspace / "rppg" / "green").glob("*.csv"))) == 8

    def test_all_methods_make_five_subdirectories(self, workspace, tmp_path):
        assert main([
            "extract", "--traces", str(workspace / "data" / "traces"),
            "--method", "all", "--out", str(tmp_path), "--jobs", "1",
        ]) == 0
        subdirs = sorted(p.name for p in tmp_path.iterdir() if p.is_dir())
        assert subdirs == ["chrom", "green", "lgi", "omit", "pos"]

    def test_unknown_method_is_usage_error(self, workspace, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main([
                "extract", "--traces", str(workspace / "data" / "traces"),
                "--method", "bogus", "--out", str(tmp_path),
            ])
        assert exc.value.code == 2

    def test_bad_trace_collected_and_exit_one(self, workspace, tmp_path):
        traces = tmp_path / "traces"
        traces.mkdir()
        for src in (workspace / "data" / "traces").glob("*.csv"):
            (traces / src.name).write_bytes(src.read_bytes())
        (traces / "broken.csv").write_text("# not a header\n1,2,3\n")
        code = main([
            "extract", "--traces", str(traces), "--method", "green",
            "--out", str(tmp_path / "out"), "--jobs", "1",
        ])
        assert code == 1
        # the good files still extracted
        assert len(list((tmp_path / "out" / "green").glob("*.csv"))) == 8
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert len(manifest["failures"]) == 1


class TestTrain:
    def test_artifacts(self, workspace):
        run = workspace / "run"
        assert len(list((run / "checkpoints").glob("F-S_fold*.pkin"))) == 4
        assert len(list((run / "history").glob("F-S_fold*.csv"))) == 4
        assert (run / "scores_F-S.csv").exists()
        manifest = json.loads((run / "manifest.json").read_text())
        assert "F-S" in manifest["test_pair_hashes"]


class TestEvaluate:
    def test_results_and_plots(self, workspace):
        out = workspace / "eval"
        assert main([
            "evaluate", "--registry", str(workspace / "data" / "registry.json"),
            "--rppg", str(workspace / "rppg" / "green"),
            "--checkpoints", str(workspace / "run" / "checkpoints"),
            "--out", str(out), "--relation", "F-S",
            "--max-epochs", "3", "--patience", "3", "--seed", "3",
        ]) == 0
        results = (out / "results.csv").read_text().strip().split("\n")
        assert results[0] == "relation,auc_percent,n_pos,n_neg,n_folds"
        assert results[1].startswith("F-S,")
        assert results[2].startswith("MEAN,") and results[3].startswith("STD,")
        assert (out / "roc_F-S.svg").exists()
        assert (out / "roc_all.svg").exists()

    def test_plot_overlay(self, workspace):
        out = workspace / "eval"
        assert main([
            "plot", "--scores", str(out / "scores_F-S.csv"),
            "--labels", "GREEN", "--out", str(out / "overlay.svg"),
        ]) == 0
        blob = (out / "overlay.svg").read_bytes()
        assert b"GREEN (AUC" in blob


class TestReplayDeterminism:
    def test_train_replay_byte_identical(self, workspace, tmp_path):
        out2 = tmp_path / "run2"
        assert main([
            "replay", str(workspace / "run" / "manifest.json"), "--out", str(out2),
        ]) == 0
        first = workspace / "run"
        assert (out2 / "scores_F-S.csv").read_bytes() == (first / "scores_F-S.csv").read_bytes()
        for ckpt in sorted((first / "checkpoints").glob("*.pkin")):
            assert (out2 / "checkpoints" / ckpt.name).read_bytes() == ckpt.read_bytes()
        for hist in sorted((first / "history").glob("*.csv")):
            assert (out2 / "history" / hist.name).read_bytes() == hist.read_bytes()

    def test_evaluate_replay_byte_identical(self, workspace, tmp_path):
        first = workspace / "eval"
        if not (first / "manifest.json").exists():
            pytest.skip("evaluate test must run first")
        out2 = tmp_path / "eval2"
        assert main([
            "replay", str(first / "manifest.json"), "--out", str(out2),
        ]) == 0
        for name in ("results.csv", "roc_F-S.svg", "roc_all.svg", "scores_F-S.csv"):
            assert (out2 / name).read_bytes() == (first / name).read_bytes()

    def test_synth_replay_byte_identical(self, workspace, tmp_path):
        out2 = tmp_path / "data2"
        assert main([
            "replay", str(workspace / "data" / "manifest.json"), "--out", str(out2),
        ]) == 0
        for trace in sorted((workspace / "data" / "traces").glob("*.csv")):
            assert (out2 / "traces" / trace.name).read_bytes() == trace.read_bytes()
        assert (out2 / "registry.json").read_bytes() == (
            workspace / "data" / "registry.json"
        ).read_bytes()


class TestAblate:
    def test_three_variants_share_test_pairs(self, workspace, tmp_path):
        out = tmp_path / "abl"
        assert main([
            "ablate", "--registry", str(workspace / "data" / "registry.json"),
            "--rppg", str(workspace / "rppg" / "green"),
            "--rppg-holistic", str(workspace / "rppg1" / "green"),
            "--out", str(out), "--relation", "F-S",
            "--max-epochs", "2", "--patience", "2", "--seed", "3", "--jobs", "1",
        ]) == 0
        lines = (out / "ablation.csv").read_text().strip().split("\n")
        assert lines[0] == "variant,F-S,mean"
        assert lines[-1].startswith("# reference:")
        variants = [ln.split(",")[0] for ln in lines[1:] if not ln.startswith("#")]
        assert variants == [
            "full", "single_channel", "no_attention",
            "multi_over_single", "attention_over_none",
        ]
        manifest = json.loads((out / "manifest.json").read_text())
        hashes = {v: manifest["test_pair_hashes"][v]["F-S"] for v in
                  ("full", "single_channel", "no_attention")}
        assert len(set(hashes.values())) == 1


class TestConfigFile:
    def test_config_precedence(self, workspace, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text("[global]\nseed = 9\n\n[synth]\nfamilies = 5\nrois = 4\n")
        out = tmp_path / "d"
        assert main([
            "synth", "--out", str(out), "--config", str(cfg),
            "--rois", "3", "--duration-s", "3.0",
        ]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["families"] == 5  # from config file
        assert manifest["config"]["rois"] == 3  # CLI beats config file
        assert manifest["config"]["seed"] == 9  # from [global]
        assert manifest["config"]["duration_s"] == 3.0

"""Command-line driver: configs, seeds, exit codes, end-to-end pipeline."""

import json

import numpy as np
import pytest

from rlqls.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_OK, ConfigError,
                       load_config, main, rng_stream)


def _write_config(tmp_path, text):
    path = tmp_path / "run.yaml"
    path.write_text(text)
    return str(path)


class TestLoadConfig:
    def test_defaults_without_file(self):
        cfg = load_config(None)
        assert cfg.preset == "synthetic" and cfg.seed == 0

    def test_reads_fields(self, tmp_path):
        path = _write_config(tmp_path, "version: 1\npreset: synthetic\nseed: 7\n")
        cfg = load_config(path)
        assert cfg.seed == 7

    def test_unknown_key_rejected(self, tmp_path):
        path = _write_config(tmp_path, "presett: synthetic\n")
        with pytest.raises(ConfigError, match="unknown config keys"):
            load_config(path)

    def test_bad_version_rejected(self, tmp_path):
        path = _write_config(tmp_path, "version: 99\n")
        with pytest.raises(ConfigError, match="version"):
            load_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(str(tmp_path / "absent.yaml"))

    def test_unknown_preset_rejected(self, tmp_path):
        path = _write_config(tmp_path, "preset: nope\n")
        with pytest.raises(ConfigError, match="unknown preset"):
            load_config(path)

    def test_missing_referenced_file_rejected(self, tmp_path):
        path = _write_config(tmp_path, f"levels_path: {tmp_path}/no.tsv\n")
        with pytest.raises(ConfigError, match="does not exist"):
            load_config(path)

    def test_env_var_path_override(self, tmp_path, monkeypatch):
        levels = tmp_path / "levels.tsv"
        levels.write_text("")
        monkeypatch.setenv("RLQLS_LEVELS_PATH", str(levels))
        cfg = load_config(None)
        assert cfg.levels_path == str(levels)


class TestRngStream:
    def test_deterministic(self):
        a = rng_stream(42, "train").random(5)
        b = rng_stream(42, "train").random(5)
        assert np.array_equal(a, b)

    def test_streams_are_independent(self):
        a = rng_stream(42, "train").random(5)
        b = rng_stream(42, "evaluate").random(5)
        assert not np.array_equal(a, b)

    def test_seed_changes_stream(self):
        assert not np.array_equal(rng_stream(1, "train").random(5),
                                  rng_stream(2, "train").random(5))


class TestExitCodes:
    def test_bad_config_exits_2(self, tmp_path):
        path = _write_config(tmp_path, "preset: nope\n")
        assert main(["train", "--config", path]) == EXIT_CONFIG

    def test_bad_jobs_exits_2(self, tmp_path):
        assert main(["train", "--jobs", "0", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_checkpoint_exits_3(self, tmp_path):
        assert main(["evaluate", "--out", str(tmp_path)]) == EXIT_DATA

    def test_report_without_stats_exits_3(self, tmp_path):
        assert main(["report", "--out", str(tmp_path)]) == EXIT_DATA


class TestPipeline:
    @pytest.fixture()
    def config(self, tmp_path):
        return _write_config(tmp_path, "\n".join([
            "version: 1",
            "preset: synthetic",
            "seed: 11",
            "n_eval_episodes: 400",
            "dqn:",
            "  n_training: 60",
            "  hidden_widths: [16]",
            "  batch_size: 32",
        ]) + "\n")

    def test_full_pipeline(self, tmp_path, config, capsys):
        out = str(tmp_path / "run")
        for cmd in ("build-tm", "train", "evaluate", "baseline", "tree", "report"):
            assert main([cmd, "--config", config, "--out", out]) == EXIT_OK
        produced = {p.name for p in (tmp_path / "run").iterdir()}
        assert {"transition_matrices.npz", "checkpoint.npz",
                "training_curve.csv", "evaluate_stats.json",
                "baseline_stats.json", "decision_tree.dot",
                "report.csv", "report.svg"} <= produced
        with open(tmp_path / "run" / "evaluate_stats.json") as fh:
            stats = json.load(fh)
        assert stats["n_episodes"] == 400
        assert 1.0 <= stats["mean_length"] <= 3.0
        text = capsys.readouterr().out
        assert "mean length" in text

    def test_rerun_is_deterministic(self, tmp_path, config):
        outputs = []
        for tag in ("a", "b"):
            out = str(tmp_path / tag)
            for cmd in ("build-tm", "train", "evaluate"):
                assert main([cmd, "--config", config, "--out", out]) == EXIT_OK
            outputs.append({
                "curve": (tmp_path / tag / "training_curve.csv").read_text(),
                "stats": (tmp_path / tag / "evaluate_stats.json").read_text(),
            })
        assert outputs[0] == outputs[1]

    def test_build_tm_cache_hit(self, tmp_path, config, capsys):
        out = str(tmp_path / "run")
        assert main(["build-tm", "--config", config, "--out", out]) == EXIT_OK
        # the synthetic preset is analytic, so rebuilds always rewrite; use a
        # compiled preset for the cache check
        desk = _write_config(tmp_path, "preset: cah_desk\n")
        out2 = str(tmp_path / "desk")
        assert main(["build-tm", "--config", desk, "--out", out2]) == EXIT_OK
        capsys.readouterr()
        assert main(["build-tm", "--config", desk, "--out", out2]) == EXIT_OK
        assert "cache hit" in capsys.readouterr().out

    def test_seed_flag_overrides_config(self, tmp_path, config):
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        for out in (out_a, out_b):
            assert main(["build-tm", "--config", config, "--out", out]) == EXIT_OK
        assert main(["train", "--config", config, "--out", out_a,
                     "--seed", "1"]) == EXIT_OK
        assert main(["train", "--config", config, "--out", out_b,
                     "--seed", "2"]) == EXIT_OK
        curves = [(tmp_path / t / "training_curve.csv").read_text()
                  for t in ("a", "b")]
        assert curves[0] != curves[1]

"""Command-line behaviour: exit codes, output inventories and reproducibility."""

import csv
import json
import os

import numpy as np
import pytest

from fairis.cli import main, tail_mean
from fairis.telemetry import SERIES_WINDOWS

TINY = """\
scene:
  n_ris: 4
  nt: 2
env:
  steps_per_episode: 5
agent:
  batch_size: 16
  hidden_sizes: [8]
run:
  episodes: 3
  parallel_envs: 3
  checkpoint_interval: 2
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.yaml").write_text(TINY)
    (root / "tiny_k1.yaml").write_text(TINY.replace("scene:\n", "scene:\n  k: 1\n"))
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace / "run"
    assert main(["train", "--config", str(workspace / "tiny.yaml"), "--out", str(out)]) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestTrain:
    def test_inventory(self, trained):
        names = set(os.listdir(trained))
        for name in SERIES_WINDOWS:
            assert f"{name}.csv" in names and f"{name}.svg" in names
        assert {"manifest.json", "checkpoint.json"} <= names
        man = json.loads((trained / "manifest.json").read_text())
        assert set(man["files"]) == names
        assert man["config"]["run.episodes"] == 3
        assert man["notes"]["transitions"] == 3 * 5 * 3

    def test_seed_fixed_repetition_is_identical(self, workspace, trained):
        out = workspace / "again"
        assert main(["train", "--config", str(workspace / "tiny.yaml"), "--out", str(out),
                     "--no-svg"]) == 0
        for name in SERIES_WINDOWS:
            assert (out / f"{name}.csv").read_bytes() == (trained / f"{name}.csv").read_bytes()

    def test_flags_override(self, workspace):
        out = workspace / "flags"
        assert main(["train", "--config", str(workspace / "tiny.yaml"), "--out", str(out),
                     "--episodes", "2", "--agent", "td3", "--decisive", "fqos", "--seed", "4",
                     "--set", "agent.tau=0.01", "--no-svg"]) == 0
        man = json.loads((out / "manifest.json").read_text())
        cfg = man["config"]
        assert (cfg["run.episodes"], cfg["agent.variant"], cfg["env.decisive_reward"]) == (2, "td3", "fqos")
        assert man["master_seed"] == 4 and cfg["agent.tau"] == 0.01
        assert len(read_csv(out / "reward_baseline.csv")) == 3

    def test_usage_errors(self, workspace, capsys):
        with pytest.raises(SystemExit) as info:
            main(["train", "--bogus"])
        assert info.value.code == 1
        assert main(["train", "--config", str(workspace / "tiny.yaml"),
                     "--set", "thresholds.alpha=1.5"]) == 1
        assert "thresholds.alpha" in capsys.readouterr().err
        assert main(["train", "--set", "novalue"]) == 1

    def test_missing_config_is_runtime_error(self, workspace):
        assert main(["train", "--config", str(workspace / "absent.yaml")]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_runtime_error(self, workspace, capsys):
        code = main(["train", "--config", str(workspace / "tiny.yaml"),
                     "--out", str(workspace / "diverge"), "--no-svg",
                     "--set", "agent.critic_lr=1e300", "--set", "agent.gamma=1.0"])
        assert code == 2
        assert "non-finite" in capsys.readouterr().err


class TestEvaluate:
    def test_metrics_written_and_reproducible(self, trained, workspace):
        ck = str(trained / "checkpoint.json")
        out1, out2 = workspace / "ev1", workspace / "ev2"
        assert main(["evaluate", "--checkpoint", ck, "--n-episodes", "4", "--out", str(out1)]) == 0
        assert main(["evaluate", "--checkpoint", ck, "--n-episodes", "4", "--out", str(out2)]) == 0
        assert (out1 / "evaluation.json").read_bytes() == (out2 / "evaluation.json").read_bytes()
        metrics = json.loads((out1 / "evaluation.json").read_text())
        for name in ("reward_baseline", "mean_jfi", "jfi_at_best"):
            assert np.isfinite(metrics[name]["mean"]) and np.isfinite(metrics[name]["std"])
        assert 0.5 <= metrics["mean_jfi"]["mean"] <= 1
        rows = read_csv(out1 / "evaluation.csv")
        assert rows[0] == ["metric", "mean", "std"]

    def test_dimension_mismatch(self, trained):
        code = main(["evaluate", "--checkpoint", str(trained / "checkpoint.json"),
                     "--set", "scene.n_ris=8"])
        assert code == 2

    def test_bad_episode_count(self, trained):
        assert main(["evaluate", "--checkpoint", str(trained / "checkpoint.json"),
                     "--n-episodes", "0"]) == 1


class TestPattern:
    def test_k1_inventory(self, workspace):
        run = workspace / "k1"
        assert main(["train", "--config", str(workspace / "tiny_k1.yaml"), "--out", str(run),
                     "--no-svg"]) == 0
        out = workspace / "k1_patterns"
        assert main(["pattern", "--checkpoint", str(run / "checkpoint.json"),
                     "--episode-seed", "2", "--out", str(out)]) == 0
        csvs = sorted(n for n in os.listdir(out) if n.endswith(".csv"))
        assert csvs == ["bs_dl_ue0.csv", "ris_dl_ue0.csv", "ris_ul_ue0.csv"]
        for name in csvs:
            rows = read_csv(out / name)
            assert rows[0] == ["angle_rad", "power_linear"]
            assert len(rows) == 361
            angles = np.array([float(r[0]) for r in rows[1:]])
            np.testing.assert_allclose(np.diff(angles), np.deg2rad(1.0))
        bearings = json.loads((out / "bearings.json").read_text())
        assert "ue0" in bearings["bearings_rad"]
        assert (out / "ris_patterns.svg").exists()


class TestReport:
    def test_single_run(self, trained, workspace):
        out = workspace / "rep1"
        assert main(["report", str(trained), "--out", str(out)]) == 0
        rows = read_csv(out / "summary.csv")
        assert len(rows) == 2 and rows[1][0] == "ddpg-baseline"
        for name in SERIES_WINDOWS:
            assert (out / f"{name}.svg").exists()

    def test_six_runs(self, workspace):
        dirs = []
        for variant in ("ddpg", "td3"):
            for reward in ("baseline", "qos", "fqos"):
                out = workspace / "six" / f"{variant}-{reward}"
                assert main(["train", "--config", str(workspace / "tiny.yaml"), "--out", str(out),
                             "--agent", variant, "--decisive", reward, "--episodes", "2",
                             "--no-svg"]) == 0
                dirs.append(str(out))
        rep = workspace / "six_report"
        assert main(["report", *dirs, "--out", str(rep), "--png"]) == 0
        rows = read_csv(rep / "summary.csv")
        assert len(rows) == 7
        assert {r[0] for r in rows[1:]} == {f"{v}-{r}" for v in ("ddpg", "td3")
                                            for r in ("baseline", "qos", "fqos")}
        svg = (rep / "mean_jfi.svg").read_text()
        for label in ("ddpg-qos", "td3-fqos"):
            assert label in svg
        assert (rep / "mean_jfi.png").exists()

    def test_summary_values(self, trained, workspace):
        out = workspace / "rep_vals"
        main(["report", str(trained), "--out", str(out), "--tail", "0.5"])
        rows = read_csv(out / "summary.csv")
        raw = [float(r[1]) for r in read_csv(trained / "mean_jfi.csv")[1:]]
        col = rows[0].index("mean_jfi")
        assert float(rows[1][col]) == pytest.approx(tail_mean(np.array(raw), 0.5))

    def test_missing_and_corrupt(self, trained, workspace):
        assert main(["report", str(workspace / "nowhere"), "--out", str(workspace / "r")]) == 2
        broken = workspace / "broken"
        broken.mkdir()
        for name in SERIES_WINDOWS:
            (broken / f"{name}.csv").write_text("x,raw,smoothed\n1,abc,2\n")
        assert main(["report", str(broken), "--out", str(workspace / "r")]) == 2
        (broken / "mean_jfi.csv").unlink()
        assert main(["report", str(broken), "--out", str(workspace / "r")]) == 2


def test_tail_mean():
    assert tail_mean(np.arange(10.0), 0.1) == 9.0
    assert tail_mean(np.arange(10.0), 0.3) == 8.0
    assert np.isnan(tail_mean(np.zeros(0), 0.1))


def test_config_command(capsys):
    assert main(["config", "--episodes", "12"]) == 0
    assert "run.episodes: 12" in capsys.readouterr().out

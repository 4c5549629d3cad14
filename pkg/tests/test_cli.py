import json
import os
import subprocess
import sys

import numpy as np
import pytest

from gortho import cli, verify
from gortho.experiment import ConfigError, ExperimentConfig, load_config, parse_config, run_experiment
from gortho.training import TrainingDiverged

TINY = """
[experiment]
task = {task}
form_mode = {mode}
n_samples = 96
n_test = 48
n_points = 3
hidden = 8
output_dir = {out}
noise_sigmas = {sigmas}

[train]
epochs = 2
batch_size = 32
"""


def write_config(tmp_path, name="cfg.ini", task="synthetic_o22", mode="frozen", sigmas="0.0", out=None):
    out = out or str(tmp_path / name.replace(".ini", ""))
    path = tmp_path / name
    path.write_text(TINY.format(task=task, mode=mode, sigmas=sigmas, out=out))
    return path


def report_metrics(rep):
    # everything but timings and the paths derived from output_dir
    out = {k: v for k, v in rep.items() if k not in ("wall_clock_s", "A_learnt_path", "params_path")}
    out["config"] = "\n".join(ln for ln in out["config"].splitlines() if not ln.startswith("output_dir"))
    return out


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg == ExperimentConfig()
        assert cfg.train.lr == 1e-3 and cfg.train.batch_size == 128

    def test_round_trip(self):
        cfg = parse_config("[experiment]\ntask = inertia\nseed = 7\nnoise_sigmas = 0, 0.5\n[train]\nepochs = 3\n")
        again = parse_config(cfg.to_ini())
        assert again == cfg
        assert again.train.seed == 7 and again.noise_sigmas == [0.0, 0.5]

    @pytest.mark.parametrize("text", [
        "[other]\nx = 1\n",
        "[experiment]\nbogus = 1\n",
        "[train]\nbogus = 1\n",
        "[experiment]\nn_samples = many\n",
        "[experiment]\ntask = mnist\n",
        "[train]\nlr = -1\n",
        "[train]\nseed = 3\n",
        "[train]\nnoise_sigma = 0.5\n",
        "[experiment]\nform_mode = frozen\n[train]\nform_mode = learnable\n",
        "[experiment]\ntask = lorentz_cls\nnoise_sigmas = 0.5\n",
        "[experiment]\nnormalize_targets = maybe\n",
        "not an ini file",
    ])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_seed_env_override(self, tmp_path, monkeypatch):
        path = write_config(tmp_path)
        monkeypatch.setenv("GORTHO_SEED", "42")
        cfg = load_config(path)
        assert cfg.seed == 42 and cfg.train.seed == 42
        monkeypatch.setenv("GORTHO_SEED", "x")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.ini")


class TestRun:
    def test_frozen_synthetic(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert cli.main(["run", "--config", str(path)]) == 0
        out = tmp_path / "cfg"
        for name in ("report.json", "metrics.csv", "A_true.csv", "A_learnt.csv", "params.gon1"):
            assert (out / name).exists()
        rep = json.loads((out / "report.json").read_text())
        assert rep["cos"] == pytest.approx(1.0) and rep["d_pa"] == pytest.approx(0.0, abs=1e-8)
        assert rep["status"] == "ok"
        assert rep["train_loss_final"] <= rep["initial_train_loss"]
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == "metric,value,gauge,notes"
        line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert line["task"] == "synthetic_o22"

    def test_report_reproducible(self, tmp_path):
        cfg = load_config(write_config(tmp_path, mode="learnable"))
        first = run_experiment(cfg)[0]
        replay = parse_config(first["config"])
        replay.output_dir = str(tmp_path / "replay")
        second = run_experiment(replay)[0]
        assert report_metrics(first) == report_metrics(second)
        assert (tmp_path / "cfg" / "params.gon1").read_bytes() == (tmp_path / "replay" / "params.gon1").read_bytes()

    def test_every_metric_present_or_explained(self, tmp_path):
        rep = run_experiment(load_config(write_config(tmp_path, task="inertia", mode="learnable")))[0]
        for key in ("test_loss", "cos", "abs_cos", "cos_raw", "d_pa", "equivariance_error", "wall_clock_s"):
            assert key in rep
            if rep[key] is None:
                assert key in rep["undefined"]

    def test_classification(self, tmp_path):
        rep = run_experiment(load_config(write_config(tmp_path, task="lorentz_cls")))[0]
        assert 0.0 <= rep["test_accuracy"] <= 1.0
        assert rep["equivariance_error"] <= 1e-8

    def test_noise_sweep(self, tmp_path):
        reports = run_experiment(load_config(write_config(tmp_path, sigmas="0, 0.5, 1.0")), jobs=2)
        assert [r["noise_sigma"] for r in reports] == [0.0, 0.5, 1.0]
        for s in ("0", "0.5", "1"):
            assert (tmp_path / "cfg" / f"sigma_{s}" / "report.json").exists()
        sweep = json.loads((tmp_path / "cfg" / "sweep.json").read_text())
        assert len(sweep["rows"]) == 3 and "abs_cos_non_increasing" in sweep

    def test_parallel_configs(self, tmp_path):
        a = write_config(tmp_path, "a.ini")
        b = write_config(tmp_path, "b.ini", task="lorentz_cls")
        assert cli.main(["run", "--config", str(a), "--config", str(b), "--jobs", "2"]) == 0
        assert (tmp_path / "a" / "report.json").exists() and (tmp_path / "b" / "report.json").exists()

    def test_exit_codes(self, tmp_path, monkeypatch):
        bad = tmp_path / "bad.ini"
        bad.write_text("[experiment]\ntask = mnist\n")
        assert cli.main(["run", "--config", str(bad)]) == 2
        assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
        same = write_config(tmp_path, "x.ini", out=str(tmp_path / "shared"))
        other = write_config(tmp_path, "y.ini", out=str(tmp_path / "shared"))
        assert cli.main(["run", "--config", str(same), "--config", str(other)]) == 2
        assert cli.main(["run", "--config", str(same), "--jobs", "0"]) == 2
        assert cli.main(["nonsense"]) == 2

    def test_nan_exit(self, tmp_path, monkeypatch):
        import gortho.experiment as ex

        def boom(*a, **k):
            raise TrainingDiverged("non-finite loss at epoch 0; guarded ops fired on 3 entries of this batch")

        monkeypatch.setattr(ex, "train", boom)
        path = write_config(tmp_path)
        assert cli.main(["run", "--config", str(path)]) == 3
        rep = json.loads((tmp_path / "cfg" / "report.json").read_text())
        assert rep["status"] == "diverged" and "guarded" in rep["diagnostic"]


class TestVerify:
    def test_single_suite(self, capsys):
        assert cli.main(["verify", "group"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        rows = [json.loads(ln) for ln in lines[:-1]]
        assert {r["name"] for r in rows} >= set(verify.CHECKLIST["group"])
        assert lines[-1].startswith("# ")

    def test_all(self, capsys):
        assert cli.main(["verify", "all", "--seed", "3"]) == 0
        assert " 0 failed" in capsys.readouterr().out

    def test_unknown_suite(self):
        assert cli.main(["verify", "nonsense"]) == 2

    def test_failure_exit(self, monkeypatch):
        monkeypatch.setitem(verify.SUITES, "numerics", lambda rng, full: [])
        assert cli.main(["verify", "numerics"]) == 1

    def test_crash_is_failure(self, monkeypatch):
        def crash(rng, full):
            raise RuntimeError("bug")

        monkeypatch.setitem(verify.SUITES, "numerics", crash)
        res = verify.run(["numerics"])
        assert len(res) == 1 and res[0].passed is False and "bug" in res[0].detail

    def test_checklist_covers_every_suite(self):
        assert set(verify.CHECKLIST) == set(verify.SUITES)
        assert set(verify.SUITES) == {"numerics", "quadform", "group", "autodiff", "model", "training", "tasks",
                                      "metrics", "cli"}


class TestAlign:
    def run(self, tmp_path, form, x, capsys, header=True):
        f = tmp_path / "form.csv"
        body = "\n".join(",".join(map(str, r)) for r in form)
        f.write_text((f"n={len(form)}\n" if header else "") + body + "\n")
        v = tmp_path / "x.csv"
        v.write_text(",".join(map(str, x)) + "\n")
        code = cli.main(["align", "--form", str(f), "--x", str(v)])
        return code, capsys.readouterr()

    def test_lorentz_plane(self, tmp_path, capsys):
        code, out = self.run(tmp_path, [[1, 0], [0, -1]], [5, 3], capsys)
        assert code == 0
        assert "gamma = 4.0" in out.out and "target axis = 1" in out.out

    def test_euclidean(self, tmp_path, capsys):
        code, out = self.run(tmp_path, np.eye(3).tolist(), [0, 0, 2], capsys, header=False)
        assert code == 0
        assert "gamma = 2.0" in out.out and "target axis = 1" in out.out

    def test_negative_axis(self, tmp_path, capsys):
        code, out = self.run(tmp_path, [[1, 0], [0, -1]], [3, 5], capsys)
        assert code == 0 and "target axis = 2" in out.out

    def test_null(self, tmp_path, capsys):
        assert self.run(tmp_path, [[1, 0], [0, -1]], [1, 1], capsys)[0] == 4

    def test_bad_inputs(self, tmp_path, capsys):
        assert self.run(tmp_path, [[1, 0.5], [0.5, -1]], [1, 0], capsys)[0] == 2
        assert self.run(tmp_path, [[1, 0], [0, -1]], [1, 0, 3], capsys)[0] == 2
        assert cli.main(["align", "--form", str(tmp_path / "none"), "--x", str(tmp_path / "none")]) == 2


def test_console_script(tmp_path):
    f = tmp_path / "form.csv"
    f.write_text("n=2\n1,0\n0,-1\n")
    v = tmp_path / "x.csv"
    v.write_text("5 3\n")
    env = dict(os.environ)
    proc = subprocess.run([sys.executable, "-m", "gortho.cli", "align", "--form", str(f), "--x", str(v)],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    assert "membership residual" in proc.stdout

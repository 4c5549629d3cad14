"""Config-driven experiments: data, training, metrics and the report files.

A config is an INI file with an ``[experiment]`` and a ``[train]`` section::

    [experiment]
    task = synthetic_o22
    form_mode = learnable
    n_samples = 8000
    output_dir = runs/o22

    [train]
    epochs = 300
    lr = 1e-3

Every key has a default; the resolved config (all defaults filled in) is
embedded in ``report.json`` and can be fed back to reproduce the run.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from . import quadform as qf
from . import tasks
from .model import GOrthoNet
from .training import TrainConfig, TrainingDiverged, evaluate, inject_label_noise, train

TASKS = ("synthetic_o22", "inertia", "lorentz_cls")
SEED_ENV = "GORTHO_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: str = "synthetic_o22"
    form_mode: str = "learnable"
    n_samples: int = 8000
    n_test: int = 2000
    n_points: int = 5
    output_dir: str = "runs/experiment"
    noise_sigmas: list[float] = field(default_factory=lambda: [0.0])
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    normalize_targets: bool = True
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.form_mode not in ("frozen", "learnable"):
            raise ConfigError("form_mode must be 'frozen' or 'learnable'")
        if self.n_samples <= 0 or self.n_test <= 0 or self.n_points < 1:
            raise ConfigError("sample counts must be positive")
        if self.activation not in ("tanh", "relu", "sigmoid"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not self.hidden or min(self.hidden) <= 0:
            raise ConfigError("hidden widths must be positive")
        if any(s < 0 for s in self.noise_sigmas) or not self.noise_sigmas:
            raise ConfigError("noise_sigmas must be a non-empty list of values >= 0")
        if self.task == "lorentz_cls" and any(s > 0 for s in self.noise_sigmas):
            raise ConfigError("label noise applies to regression tasks only")

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        exp = {k: v for k, v in dataclasses.asdict(self).items() if k != "train"}
        cp["experiment"] = {k: _fmt(v) for k, v in exp.items()}
        derived = ("seed", "noise_sigma")  # set from the experiment section
        cp["train"] = {k: _fmt(v) for k, v in dataclasses.asdict(self.train).items() if k not in derived}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(repr(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            kind = type(default[0]) if default else float
            return [kind(p) for p in raw.replace(",", " ").split()]
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config(text: str, seed_override: str | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown = set(cp.sections()) - {"experiment", "train"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    defaults = {
        f.name: f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        for f in dataclasses.fields(ExperimentConfig)
    }
    train_defaults = dataclasses.asdict(TrainConfig())
    exp_kw, train_kw = {}, {}
    if cp.has_section("experiment"):
        for k, v in cp["experiment"].items():
            if k not in defaults or k == "train":
                raise ConfigError(f"unknown experiment key {k!r}")
            exp_kw[k] = _coerce(k, v, defaults[k])
    if cp.has_section("train"):
        for k, v in cp["train"].items():
            if k not in train_defaults:
                raise ConfigError(f"unknown train key {k!r}")
            if k in ("seed", "noise_sigma"):
                raise ConfigError(f"train.{k} is set from experiment.{'seed' if k == 'seed' else 'noise_sigmas'}")
            train_kw[k] = _coerce(k, v, train_defaults[k])
    if seed_override is not None:
        try:
            seed = int(seed_override)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {seed_override!r}") from exc
        exp_kw["seed"] = seed
    train_kw.setdefault("form_mode", exp_kw.get("form_mode", defaults["form_mode"]))
    if train_kw["form_mode"] != exp_kw.get("form_mode", defaults["form_mode"]):
        raise ConfigError("train.form_mode disagrees with experiment.form_mode")
    train_kw["seed"] = exp_kw.get("seed", defaults["seed"])
    try:
        train_cfg = TrainConfig(**train_kw)
        return ExperimentConfig(**exp_kw, train=train_cfg)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, os.environ.get(SEED_ENV))


def _seeds(seed: int) -> dict[str, np.random.Generator]:
    kids = np.random.SeedSequence(seed).spawn(4)
    return {k: np.random.default_rng(s) for k, s in zip(("form", "data", "test", "noise"), kids)}


def make_data(cfg: ExperimentConfig) -> tuple[tasks.Dataset, tasks.Dataset]:
    rngs = _seeds(cfg.seed)
    if cfg.task == "synthetic_o22":
        form = tasks.o22_form(rngs["form"])
        return (
            tasks.gen_synthetic_o22(cfg.n_samples, rngs["data"], form),
            tasks.gen_synthetic_o22(cfg.n_test, rngs["test"], form),
        )
    if cfg.task == "inertia":
        return (
            tasks.gen_inertia(cfg.n_points, cfg.n_samples, rngs["data"]),
            tasks.gen_inertia(cfg.n_points, cfg.n_test, rngs["test"]),
        )
    return tasks.gen_lorentz_cls(cfg.n_samples, rngs["data"]), tasks.gen_lorentz_cls(cfg.n_test, rngs["test"])


def make_model(cfg: ExperimentConfig, ds: tasks.Dataset) -> GOrthoNet:
    form = ds.true_form if cfg.form_mode == "frozen" else None
    common = dict(form=form, hidden=tuple(cfg.hidden), activation=cfg.activation, seed=cfg.seed)
    if cfg.task == "synthetic_o22":
        return GOrthoNet(4, "conjugation", **common)
    if cfg.task == "inertia":
        p = cfg.n_points
        return GOrthoNet(3, "conjugation", tuple_size=p, extra_features=p, symmetric_output=True, **common)
    return GOrthoNet(4, "invariant", out_dim=1, **common)


def _accuracy(model: GOrthoNet, ds: tasks.Dataset) -> float:
    logits = model.predict(ds.inputs).ravel()
    return float(np.mean((logits > 0) == (ds.targets > 0.5)))


def _metric_rows(report: dict) -> list[tuple[str, str, str, str]]:
    rows = []
    for name, gauge in (
        ("test_loss", "-"),
        ("test_accuracy", "-"),
        ("train_loss_final", "-"),
        ("cos_raw", "raw"),
        ("cos", "gauged"),
        ("abs_cos", "gauged"),
        ("d_pa", "gauged"),
        ("equivariance_error", "-"),
        ("wall_clock_s", "-"),
    ):
        if name not in report:
            continue
        val = report[name]
        note = report.get("undefined", {}).get(name, "")
        rows.append((name, "" if val is None else repr(val), gauge, note))
    return rows


def run_single(cfg: ExperimentConfig, sigma: float, out_dir: Path) -> dict:
    """Train one model at one noise level and write all report files to ``out_dir``."""
    t0 = time.perf_counter()
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = make_data(cfg)
    scale = 1.0
    if cfg.normalize_targets and not train_ds.classification:
        scale = tasks.target_rms(train_ds)
        train_ds = train_ds.with_targets(train_ds.targets / scale)
        test_ds = test_ds.with_targets(test_ds.targets / scale)
    noisy = inject_label_noise(train_ds, sigma, _seeds(cfg.seed)["noise"]) if sigma > 0 else train_ds
    model = make_model(cfg, train_ds)
    initial_train_loss = evaluate(model, noisy)
    report: dict = {
        "config": cfg.to_ini(),
        "task": cfg.task,
        "form_mode": cfg.form_mode,
        "noise_sigma": sigma,
        "seed": cfg.seed,
        "target_scale": scale,
        "initial_train_loss": initial_train_loss,
        "undefined": {},
    }
    true_form = train_ds.true_form
    qf_path = out_dir / "A_true.csv"
    qf_path.write_text(qf.to_csv(qf.canonical_gauge(true_form).A))
    try:
        tcfg = dataclasses.replace(cfg.train, noise_sigma=sigma)
        model, hist = train(model, noisy, tcfg, true_form=true_form)
    except TrainingDiverged as exc:
        report.update(status="diverged", diagnostic=str(exc), wall_clock_s=time.perf_counter() - t0)
        (out_dir / "report.json").write_text(json.dumps(report, indent=2))
        raise
    learnt = model.current_form()
    report["status"] = "ok"
    report["train_loss_final"] = hist.train_loss[-1] if hist.train_loss else initial_train_loss
    report["train_loss_clean"] = evaluate(model, train_ds)
    report["history"] = dataclasses.asdict(hist)
    report["test_loss"] = evaluate(model, test_ds)
    if test_ds.classification:
        report["test_accuracy"] = _accuracy(model, test_ds)
    report["cos_raw"] = metrics.cos_similarity(true_form, learnt, gauge=False)
    report["cos"] = metrics.cos_similarity(true_form, learnt)
    report["abs_cos"] = abs(report["cos"])
    report["learnt_signature"] = list(learnt.signature)
    if learnt.invertible and true_form.invertible:
        report["d_pa"] = metrics.form_distance(true_form, learnt)
    else:
        report["d_pa"] = None
        report["undefined"]["d_pa"] = f"learnt form is numerically singular, signature {learnt.signature}"
    extra = test_ds.masses
    if true_form.invertible:
        report["equivariance_error"] = metrics.equivariance_error(
            model, true_form, test_ds.inputs[:500], np.random.default_rng(cfg.seed), None if extra is None else extra[:500]
        )
    (out_dir / "A_learnt.csv").write_text(qf.to_csv(qf.canonical_gauge(learnt).A))
    (out_dir / "params.gon1").write_bytes(model.to_blob())
    report["A_learnt_path"] = str(out_dir / "A_learnt.csv")
    report["params_path"] = str(out_dir / "params.gon1")
    report["wall_clock_s"] = time.perf_counter() - t0
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value", "gauge", "notes"])
        w.writerows(_metric_rows(report))
    return report


def _sigma_dir(root: Path, sigma: float, many: bool) -> Path:
    return root / f"sigma_{sigma:g}" if many else root


def _run_job(args) -> dict:
    cfg, sigma, out_dir = args
    return run_single(cfg, sigma, Path(out_dir))


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    """Run every noise level of ``cfg``; a sweep also writes ``sweep.json``."""
    root = Path(cfg.output_dir)
    many = len(cfg.noise_sigmas) > 1
    work = [(cfg, s, str(_sigma_dir(root, s, many))) for s in cfg.noise_sigmas]
    if jobs > 1 and many:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_job, work))
    else:
        reports = [_run_job(w) for w in work]
    if many:
        summary = summarize_sweep(reports)
        root.mkdir(parents=True, exist_ok=True)
        (root / "sweep.json").write_text(json.dumps(summary, indent=2))
    return reports


def summarize_sweep(reports: list[dict]) -> dict:
    rows = sorted(
        ({"sigma": r["noise_sigma"], "abs_cos": r.get("abs_cos"), "d_pa": r.get("d_pa"),
          "test_loss": r.get("test_loss")} for r in reports),
        key=lambda r: r["sigma"],
    )
    cos = [r["abs_cos"] for r in rows]
    monotone = all(a >= b for a, b in zip(cos, cos[1:])) if None not in cos else None
    return {"rows": rows, "abs_cos_non_increasing": monotone}

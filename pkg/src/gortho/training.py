"""Losses, Adam, label noise and the joint (form + network) training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import quadform as qf
from .autodiff import Node, Tape
from .model import GOrthoNet
from .tasks import Dataset, split

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    noise_sigma: float = 0.0
    form_mode: str = "learnable"
    reg_weight: float = 0.0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("lr and batch_size must be positive, epochs non-negative")
        if self.form_mode not in ("frozen", "learnable"):
            raise ValueError("form_mode must be 'frozen' or 'learnable'")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    cos: list[float] = field(default_factory=list)


def loss_mse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def loss_bce(logit, label) -> float:
    """Mean binary cross-entropy of sigmoid(logit), computed stably."""
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def mse_node(tape: Tape, pred: Node, target: Node) -> Node:
    return tape.mean(tape.square(pred - target))


def bce_node(tape: Tape, logit: Node, label: Node) -> Node:
    return tape.mean(tape.softplus(logit) - logit * label)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1**self.t
        b2t = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            mhat = self.m[k] / b1t
            vhat = self.v[k] / b2t
            params[k] = params[k] - c.lr * mhat / (np.sqrt(vhat) + c.adam_eps)


def adam_step(params, grads, state: Adam | None, cfg: TrainConfig) -> Adam:
    state = Adam(params, cfg) if state is None else state
    state.step(params, grads)
    return state


def inject_label_noise(ds: Dataset, sigma: float, rng: np.random.Generator) -> Dataset:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if ds.classification:
        raise ValueError("label noise applies to regression targets only")
    if sigma == 0:
        return ds
    return ds.with_targets(ds.targets + rng.normal(0.0, sigma, size=ds.targets.shape))


def form_cos(form0: qf.QuadraticForm, form1: qf.QuadraticForm) -> float:
    a0 = qf.canonical_gauge(form0).A
    a1 = qf.canonical_gauge(form1).A
    return float(np.sum(a0 * a1))


class _Graph:
    """A training graph built once and re-run with new batches."""

    def __init__(self, model: GOrthoNet, ds: Dataset):
        self.tape = tape = Tape()
        self.x = tape.constant(None, "x")
        self.extra = tape.constant(None, "extra") if ds.masses is not None else None
        self.y = tape.constant(None, "y")
        self.nodes = model.leaves(tape)
        self.graph = model.build(tape, self.x, self.extra, self.nodes)
        out = self.graph["out"]
        self.loss = bce_node(tape, out, self.y) if ds.classification else mse_node(tape, out, self.y)

    def run(self, model: GOrthoNet, ds: Dataset, idx=None) -> float:
        sub = ds if idx is None else ds.subset(idx)
        feed = {"x": sub.inputs, "y": _target_view(sub), **model.params}
        if self.extra is not None:
            feed["extra"] = sub.masses
        self.tape.forward(feed)
        return float(self.loss.value)

    def guards_fired(self) -> int:
        return int(sum(m.sum() for m in self.tape.guard_masks()))


def _target_view(ds: Dataset) -> np.ndarray:
    return ds.targets.reshape(-1, 1) if ds.classification else ds.targets


def evaluate(model: GOrthoNet, ds: Dataset) -> float:
    """Mean loss (MSE or BCE) of the model on a dataset."""
    return _Graph(model, ds).run(model, ds)


def train(
    model: GOrthoNet,
    ds: Dataset,
    cfg: TrainConfig,
    val: Dataset | None = None,
    true_form: qf.QuadraticForm | None = None,
) -> tuple[GOrthoNet, TrainHistory]:
    """Minibatch Adam on all parameters jointly; deterministic for a fixed seed."""
    rng = np.random.default_rng(cfg.seed)
    if val is None:
        ds, val = split(ds, rng, cfg.val_fraction)
    history = TrainHistory()
    if cfg.epochs == 0:
        return model, history
    graph = _Graph(model, ds)
    val_graph = _Graph(model, val) if len(val) else None
    opt = Adam(model.params, cfg)
    reg = _EquivarianceRegularizer(model, cfg, rng) if cfg.reg_weight > 0 else None
    n = len(ds)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss = graph.run(model, ds, idx)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}; guarded ops fired on "
                    f"{graph.guards_fired()} entries of this batch"
                )
            grads = graph.tape.backward(graph.loss)
            if reg is not None:
                for k, g in reg.grads(ds.inputs[idx]).items():
                    grads[k] = grads[k] + g
            opt.step(model.params, grads)
            total += loss * len(idx)
        history.train_loss.append(total / n)
        history.val_loss.append(val_graph.run(model, val) if val_graph else float("nan"))
        if true_form is not None:
            history.cos.append(form_cos(true_form, model.current_form()))
        if log.isEnabledFor(logging.DEBUG) and (epoch % 10 == 0 or epoch == cfg.epochs - 1):
            log.debug(
                "epoch %d train %.4g val %.4g cos %s",
                epoch,
                history.train_loss[-1],
                history.val_loss[-1],
                history.cos[-1] if history.cos else "-",
            )
    return model, history


class _EquivarianceRegularizer:
    """Penalty |phi_s(g x) - g phi_s(x) g^-1|^2 over sampled g (frozen forms only)."""

    def __init__(self, model: GOrthoNet, cfg: TrainConfig, rng: np.random.Generator):
        if model.learnable or model.phi_s is None or model.tuple_size:
            raise ValueError("the phi_s regularizer needs a frozen form and single-vector phi_s")
        self.model, self.cfg, self.rng = model, cfg, rng

    def grads(self, x: np.ndarray) -> dict[str, np.ndarray]:
        from .group import sample_element

        model = self.model
        form = model.frozen_form
        g = sample_element(form, self.rng, 0.5).g
        g_inv = np.linalg.inv(g)
        tape = Tape()
        nodes = model.leaves(tape)
        a = tape.constant(form.A)
        a_fro = tape.constant(form.fro)
        r = np.sqrt(np.abs(np.einsum("bi,ij,bj->b", x, form.A, x)))[:, None]
        xh = x / r
        r0 = model.phi_s_on_tape(tape, tape.constant(xh), nodes, a, a_fro)
        r1 = model.phi_s_on_tape(tape, tape.constant(xh @ g.T), nodes, a, a_fro)
        diff = r1 - tape.constant(g) @ r0 @ tape.constant(g_inv)
        penalty = tape.scale(tape.mean(tape.square(diff)), self.cfg.reg_weight)
        tape.forward()
        return tape.backward(penalty)

"""Optimization engine: Adam with step decay, phased parameter freezing,
class-weighted verb loss helpers, and dev-selected training.

A trainable object ("trainer") provides a ParameterStore plus
compute_batch(batch, annotation_index) -> (loss, gradient dict); the RNN
models, the CRF, and the discrete classifier all satisfy this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .decode import evaluate_dataset
from .metrics import Metrics
from .numeric import ParameterStore


class TrainingError(RuntimeError):
    """Divergence or invalid training configuration."""


@dataclass(frozen=True)
class PhaseSpec:
    """Parameter groups trainable until the given iteration (None = rest)."""

    until_iteration: int | None
    trainable_groups: tuple[str, ...] | None = None  # None = all groups


@dataclass
class TrainConfig:
    lr_initial: float = 4e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 2000
    batch_size: int = 32
    max_iters: int = 5000
    seed: int = 0
    weighted_verb_loss: bool = True
    eval_every: int = 500
    phases: tuple[PhaseSpec, ...] | None = None
    select_metric: str = "mean"
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr_initial <= 0 or self.lr_decay_every <= 0:
            raise TrainingError("rates and decay interval must be positive")
        if not 0 < self.lr_decay_factor <= 1:
            raise TrainingError("decay factor must be in (0, 1]")
        if self.batch_size < 1 or self.max_iters < 1:
            raise TrainingError("batch size and max_iters must be positive")

    @classmethod
    def paper_preset(cls, **overrides) -> "TrainConfig":
        """Full-scale schedule: batch 64, decay every 28,800 iterations."""
        base = dict(lr_initial=4e-4, lr_decay_factor=0.1, lr_decay_every=28800,
                    batch_size=64, max_iters=60000, eval_every=2000)
        base.update(overrides)
        return cls(**base)


def effective_lr(config: TrainConfig, iteration: int) -> float:
    return config.lr_initial * config.lr_decay_factor ** (iteration // config.lr_decay_every)


def class_weights(freqs) -> np.ndarray:
    """Inverse-frequency class weights normalized to mean 1.

    Classes absent from training (frequency 0) are excluded from the
    normalization and get the largest present weight.
    """
    f = np.asarray(freqs, dtype=np.float64)
    if (f < 0).any():
        raise ValueError("frequencies must be nonnegative")
    present = f > 0
    if not present.any():
        raise ValueError("all class frequencies are zero")
    inv = np.zeros_like(f)
    inv[present] = 1.0 / f[present]
    w = np.zeros_like(f)
    w[present] = inv[present] * present.sum() / inv[present].sum()
    if (~present).any():
        w[~present] = w[present].max()
    return w


def verb_class_weights(lex) -> np.ndarray:
    return class_weights([lex.verb_freq.get(v, 0) for v in lex.verbs])


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global norm is <= max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def adam_step(store: ParameterStore, grads: dict[str, np.ndarray],
              config: TrainConfig, iteration: int,
              active_groups: tuple[str, ...] | None = None) -> bool:
    """One Adam update with bias correction at the decayed learning rate.

    Returns False (and updates nothing) when any gradient is non-finite.
    Parameters outside the active groups keep both values and moments.
    """
    for name, g in grads.items():
        if store[name].data.shape != g.shape:
            raise TrainingError(f"gradient shape mismatch for {name!r}")
        if not np.isfinite(g).all():
            return False
    state = store.opt_state.setdefault(
        "adam", {"t": 0, "m": {}, "v": {}}
    )
    state["t"] += 1
    t = state["t"]
    lr = effective_lr(config, iteration)
    b1, b2 = config.beta1, config.beta2
    for name, g in grads.items():
        if active_groups is not None and store.groups.get(name) not in active_groups:
            continue
        m = state["m"].setdefault(name, np.zeros_like(g))
        v = state["v"].setdefault(name, np.zeros_like(g))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        store[name].data -= lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return True


@dataclass
class TrainResult:
    best_iteration: int
    best_metric: float
    best_metrics: Metrics | None
    log: list[dict] = field(default_factory=list)


def _active_groups(config: TrainConfig, iteration: int) -> tuple[str, ...] | None:
    if not config.phases:
        return None
    for phase in config.phases:
        if phase.until_iteration is None or iteration < phase.until_iteration:
            return phase.trainable_groups
    return config.phases[-1].trainable_groups


def _select_value(metrics: Metrics, key: str) -> float:
    value = metrics.get(key)
    if value is None:
        value = metrics.get("value@gt")
    if value is None:
        raise TrainingError(f"selection metric {key!r} unavailable")
    return value


def train_loop(trainer, train_ds, dev_ds, config: TrainConfig) -> TrainResult:
    """Seeded minibatch training with periodic dev evaluation.

    The trainer's parameters end at the best dev checkpoint (by the
    configured selection metric, falling back to value@gt for models
    without an action path). The log carries one record per iteration
    plus one per dev evaluation; no wall-clock data, so identical seeds
    reproduce it bit for bit.
    """
    pairs = train_ds.pairs()
    if not pairs:
        raise TrainingError("empty training dataset")
    rng = np.random.default_rng(config.seed)
    n = len(pairs)
    bs = min(config.batch_size, n)
    order = rng.permutation(n)
    pos = 0
    epoch = 0
    log: list[dict] = []
    best_value = -math.inf
    best_iteration = -1
    best_metrics: Metrics | None = None
    best_snapshot = None
    nonfinite_streak = 0

    for it in range(config.max_iters):
        if pos + bs > n:
            epoch += 1
            order = rng.permutation(n)
            pos = 0
        batch = [pairs[i] for i in order[pos:pos + bs]]
        pos += bs
        loss, grads = trainer.compute_batch(batch, epoch % 3)
        lr = effective_lr(config, it)
        if not math.isfinite(loss):
            nonfinite_streak += 1
            log.append({"iteration": it, "event": "nonfinite_loss"})
            if nonfinite_streak >= 2:
                raise TrainingError(
                    f"non-finite loss at iterations {it - 1} and {it}; aborting"
                )
            continue
        nonfinite_streak = 0
        clip_global_norm(grads, config.clip_norm)
        applied = adam_step(trainer.store, grads, config, it, _active_groups(config, it))
        if not applied:
            log.append({"iteration": it, "event": "nonfinite_gradient"})
            continue
        log.append({"iteration": it, "loss": loss, "lr": lr})

        last = it + 1 == config.max_iters
        if config.eval_every and ((it + 1) % config.eval_every == 0 or last):
            metrics, _ = evaluate_dataset(trainer, dev_ds)
            log.append({"iteration": it, "dev": metrics.as_dict()})
            value = _select_value(metrics, config.select_metric)
            if value > best_value:
                best_value = value
                best_iteration = it
                best_metrics = metrics
                best_snapshot = trainer.store.snapshot()

    if best_snapshot is not None:
        trainer.store.load_values(best_snapshot)
    return TrainResult(
        best_iteration=best_iteration,
        best_metric=best_value,
        best_metrics=best_metrics,
        log=log,
    )

"""Loss, optimizer, fold training loop and evaluation."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .archive import atomic_write_bytes
from .tensor import ShapeError, make_rng

BCE_EPS = 1e-7


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    iterations: int = 7500
    rmsprop_decay: float = 0.99
    rmsprop_epsilon: float = 1e-8
    seed: int = 0
    grad_clip: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.rmsprop_decay < 1:
            raise ValueError("rmsprop_decay must lie in (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")


def bce_loss(p, y):
    """Binary cross-entropy of probability ``p`` against label ``y``.

    ``p`` is clamped to ``[eps, 1 - eps]``; the returned derivative is taken
    w.r.t. the unclamped ``p`` (so it vanishes outside the clamp range).
    Works elementwise on arrays.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError(f"labels must be 0 or 1, got {y}")
    pc = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    loss = -(y * np.log(pc) + (1 - y) * np.log1p(-pc))
    inside = (p >= BCE_EPS) & (p <= 1 - BCE_EPS)
    grad = np.where(inside, -y / pc + (1 - y) / (1 - pc), 0.0)
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def rmsprop_update(param, grad, accum, cfg: TrainConfig):
    """One RMSprop step, returning new ``(param, accum)``."""
    param, grad, accum = np.asarray(param), np.asarray(grad), np.asarray(accum)
    if param.shape != grad.shape or param.shape != accum.shape:
        raise ShapeError(
            f"rmsprop shapes differ: param {list(param.shape)}, grad {list(grad.shape)}, "
            f"accum {list(accum.shape)}"
        )
    d = cfg.rmsprop_decay
    accum = d * accum + (1 - d) * grad * grad
    param = param - cfg.learning_rate * grad / (np.sqrt(accum) + cfg.rmsprop_epsilon)
    return param, accum


class RMSprop:
    """In-place RMSprop over a ``{name: array}`` parameter store."""

    def __init__(self, params, grads, cfg: TrainConfig):
        self.params, self.grads, self.cfg = params, grads, cfg
        self.accum = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self):
        cfg = self.cfg
        scale = 1.0
        if cfg.grad_clip is not None:
            norm = math.sqrt(sum(float(np.square(g, dtype=np.float64).sum()) for g in self.grads.values()))
            if norm > cfg.grad_clip:
                scale = cfg.grad_clip / norm
        for k, p in self.params.items():
            g = self.grads[k] * scale if scale != 1.0 else self.grads[k]
            a = self.accum[k]
            a *= cfg.rmsprop_decay
            a += (1 - cfg.rmsprop_decay) * g * g
            p -= cfg.learning_rate * g / (np.sqrt(a) + cfg.rmsprop_epsilon)


@dataclass
class RunLog:
    losses: list[float] = field(default_factory=list)
    fold_accuracy: dict[str, float] = field(default_factory=dict)
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)
    seed: int = 0

    def to_jsonl(self) -> str:
        lines = [json.dumps({"record": "config", "seed": self.seed, "config": self.config})]
        lines += [
            json.dumps({"record": "iteration", "iteration": i, "loss": loss})
            for i, loss in enumerate(self.losses)
        ]
        lines.append(json.dumps({
            "record": "summary",
            "fold_accuracy": self.fold_accuracy,
            "wall_clock": self.wall_clock,
        }))
        return "\n".join(lines) + "\n"

    def save(self, path):
        atomic_write_bytes(path, self.to_jsonl().encode())

    @classmethod
    def from_jsonl(cls, text):
        log = cls()
        for line in text.splitlines():
            rec = json.loads(line)
            if rec["record"] == "config":
                log.seed, log.config = rec["seed"], rec["config"]
            elif rec["record"] == "iteration":
                log.losses.append(rec["loss"])
            else:
                log.fold_accuracy = rec["fold_accuracy"]
                log.wall_clock = rec["wall_clock"]
        return log


def batch_order(ids, rng):
    """Endless stream of clip ids: a fresh seeded shuffle per pass over ``ids``."""
    ids = list(ids)
    while True:
        for i in rng.permutation(len(ids)):
            yield ids[i]


def train_fold(model, store, train_ids, stats, cfg: TrainConfig, log_every: int = 0, echo=None):
    """Train ``model`` in place on ``train_ids``; returns the :class:`RunLog`.

    ``store`` is a :class:`fightnet.data.ClipStore`. One iteration is one
    batch update.
    """
    if not train_ids:
        raise ValueError("no training clips")
    rng = make_rng(cfg.seed)
    order = batch_order(train_ids, rng)
    opt = RMSprop(model.params, model.grads, cfg)
    log = RunLog(config=asdict(cfg), seed=cfg.seed)
    labels = {c: store.label(c) for c in train_ids}
    start = time.perf_counter()
    model.train()
    for it in range(cfg.iterations):
        ids = [next(order) for _ in range(cfg.batch_size)]
        x = np.stack([store.train_input(c, rng, stats) for c in ids]).astype(model.dtype, copy=False)
        y = np.array([labels[c] for c in ids])
        model.zero_grads()
        p = model.forward(x)
        losses, dp = bce_loss(p, y)
        loss = float(losses.mean())
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at iteration {it}")
        model.backward((dp / len(ids)).astype(model.dtype))
        opt.step()
        log.losses.append(loss)
        if log_every and echo is not None and (it % log_every == 0 or it == cfg.iterations - 1):
            echo(f"iter {it:5d}  loss {loss:.4f}")
    log.wall_clock = time.perf_counter() - start
    return log


@dataclass
class EvalResult:
    accuracy: float
    predictions: list[tuple[str, float, int]]


def score_predictions(clip_ids, probs, labels) -> EvalResult:
    """Threshold at 0.5 and compute accuracy."""
    if len(clip_ids) == 0:
        raise ValueError("cannot evaluate an empty clip set")
    preds = [(str(c), float(p), int(y)) for c, p, y in zip(clip_ids, probs, labels)]
    correct = sum(int(p >= 0.5) == y for _, p, y in preds)
    return EvalResult(correct / len(preds), preds)


def evaluate(model, store, clip_ids, stats, batch_size: int = 16) -> EvalResult:
    """Eval-mode accuracy and per-clip ``(id, p, label)`` predictions."""
    clip_ids = list(clip_ids)
    if not clip_ids:
        raise ValueError("cannot evaluate an empty clip set")
    was_training = model.training
    model.eval()
    probs = []
    try:
        for s in range(0, len(clip_ids), batch_size):
            chunk = clip_ids[s:s + batch_size]
            x = np.stack([store.eval_input(c, stats) for c in chunk]).astype(model.dtype, copy=False)
            probs.extend(model.forward(x).tolist())
    finally:
        model.train(was_training)
    return score_predictions(clip_ids, probs, [store.label(c) for c in clip_ids])


def cv_summary(accuracies):
    """Mean and population std of per-fold accuracies, as fractions."""
    a = np.asarray(accuracies, dtype=np.float64)
    if a.size == 0:
        raise ValueError("no fold accuracies")
    return float(a.mean()), float(a.std())


def format_accuracy(mean: float, std: float) -> str:
    """Render as e.g. ``97.1±0.55%``."""
    def fmt(v):
        return f"{100 * v:.2f}".rstrip("0").rstrip(".")

    return f"{fmt(mean)}±{fmt(std)}%"

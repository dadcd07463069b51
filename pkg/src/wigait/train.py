"""Minibatch SGD for the encoder-decoder, with best-epoch selection."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, ParameterError
from .evaluation import confusion, scores
from .model import ModelParams, backward, cross_entropy, forward
from .profile import WalkingProfile, opposite_direction, reverse_features, standardize_features

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "lr", "train_loss", "val_loss", "val_acc_dir", "val_acc_gait", "val_macro_f1")


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 32
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    clip_norm: float = 5.0
    momentum: float = 0.0
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ParameterError("batch_size and epochs must be >= 1")
        if not self.lr_start >= self.lr_end > 0:
            raise ParameterError("need lr_start >= lr_end > 0")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must be in [0, 1)")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    """Geometric decay: ``lr_start`` at epoch 1, ``lr_end`` at the last epoch."""
    if cfg.epochs == 1:
        return cfg.lr_start
    frac = (epoch - 1) / (cfg.epochs - 1)
    return float(cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac)


@dataclass
class ProfileSet:
    """Labelled profiles addressed by (index, reversed) entries.

    ``features`` holds raw (unstandardised) 768 x T matrices, either as one
    (N, 768, T) array or a list of arrays of possibly different T. Reversed
    entries are materialised on the fly, so augmentation costs no memory.
    """

    features: object
    subjects: np.ndarray
    directions: np.ndarray
    index: np.ndarray
    reversed: np.ndarray

    def __post_init__(self):
        self.subjects = np.asarray(self.subjects, dtype=int)
        self.directions = np.asarray(self.directions, dtype=int)
        self.index = np.asarray(self.index, dtype=int)
        self.reversed = np.asarray(self.reversed, dtype=bool)

    @classmethod
    def from_profiles(cls, profiles: Sequence[WalkingProfile]) -> "ProfileSet":
        """Wrap already-built profiles (reversed ones included as they are)."""
        return cls([p.features for p in profiles], [p.subject_label for p in profiles],
                   [p.direction_label for p in profiles], np.arange(len(profiles)),
                   np.zeros(len(profiles), dtype=bool))

    def __len__(self) -> int:
        return len(self.index)

    def lengths(self) -> np.ndarray:
        if isinstance(self.features, np.ndarray):
            return np.full(len(self), self.features.shape[-1])
        return np.array([self.features[i].shape[-1] for i in self.index])

    def labels(self, rows=None):
        rows = np.arange(len(self)) if rows is None else np.asarray(rows)
        idx = self.index[rows]
        d = self.directions[idx]
        d = np.where(self.reversed[rows], opposite_direction(d), d)
        return d, self.subjects[idx]

    def raw(self, rows) -> np.ndarray:
        """Unstandardised (B, 768, T) matrices, reversal applied."""
        rows = np.asarray(rows)
        idx = self.index[rows]
        if isinstance(self.features, np.ndarray):
            f = np.array(self.features[idx])
        else:
            f = np.stack([self.features[i] for i in idx])
        rev = self.reversed[rows]
        if rev.any():
            f[rev] = reverse_features(f[rev])
        return f

    def batch(self, rows, dtype=np.float32):
        """Model-ready (B, T, 768) standardised inputs and (direction, gait) labels."""
        x = standardize_features(self.raw(rows).astype(dtype, copy=False))
        d, g = self.labels(rows)
        return np.ascontiguousarray(np.swapaxes(x, 1, 2)), d, g


def make_batches(lengths: np.ndarray, batch_size: int, rng) -> list[np.ndarray]:
    """Shuffled batches that never mix sequence lengths."""
    batches = []
    for T in np.unique(lengths):
        rows = np.flatnonzero(lengths == T)
        rows = rows[rng.permutation(len(rows))]
        batches.extend(rows[i:i + batch_size] for i in range(0, len(rows), batch_size))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _ordered_batches(lengths, batch_size):
    out = []
    for T in np.unique(lengths):
        rows = np.flatnonzero(lengths == T)
        out.extend(rows[i:i + batch_size] for i in range(0, len(rows), batch_size))
    return out


@dataclass
class SetEvaluation:
    loss: float
    pred_dir: np.ndarray
    pred_gait: np.ndarray
    true_dir: np.ndarray
    true_gait: np.ndarray
    weights: np.ndarray | None = None  # (N, 2, T) when all T agree

    def accuracy(self, task: str) -> float:
        p, t = (self.pred_dir, self.true_dir) if task == "direction" else (self.pred_gait, self.true_gait)
        return float(np.mean(p == t)) if len(t) else 0.0

    def macro_f1(self, task: str, n_classes: int) -> float:
        p, t = (self.pred_dir, self.true_dir) if task == "direction" else (self.pred_gait, self.true_gait)
        return scores(confusion(t, p, n_classes)).macro_f1


def evaluate_set(params: ModelParams, data: ProfileSet, batch_size: int = 256,
                 keep_weights: bool = False) -> SetEvaluation:
    """Deterministic (no dropout, no noise) pass over a whole set, in stored order."""
    dtype = next(iter(params.values())).dtype
    n = len(data)
    pd = np.empty(n, dtype=int)
    pg = np.empty(n, dtype=int)
    td, tg = data.labels()
    total = 0.0
    weights = [None] * n if keep_weights else None
    for rows in _ordered_batches(data.lengths(), batch_size):
        x, d, g = data.batch(rows, dtype)
        tr = forward(params, x)
        total += float(np.sum(cross_entropy(tr.logits_dir, d) + cross_entropy(tr.logits_gait, g)))
        pd[rows] = np.argmax(tr.logits_dir, axis=-1)
        pg[rows] = np.argmax(tr.logits_gait, axis=-1)
        if keep_weights:
            for j, r in enumerate(rows):
                weights[r] = tr.weights[j]
    if keep_weights and len({w.shape for w in weights}) == 1:
        weights = np.stack(weights)
    return SetEvaluation(total / max(n, 1), pd, pg, td, tg, weights)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


@dataclass
class TrainResult:
    params: ModelParams  # best validation epoch
    history: list
    best_epoch: int
    last_params: ModelParams
    state: dict = field(default_factory=dict)


def train(params: ModelParams, train_set: ProfileSet, val_set: ProfileSet, cfg: TrainConfig,
          *, start_epoch: int = 1, state: dict | None = None,
          on_epoch: Callable[[int, ModelParams, dict], None] | None = None) -> TrainResult:
    """Train for epochs ``start_epoch..cfg.epochs`` and return the best-validation parameters.

    Each epoch draws its shuffling, input noise and dropout masks from a
    generator seeded by ``(cfg.seed, epoch)``, so a run resumed from the
    parameters and ``state`` saved after epoch k replays epochs k+1.. exactly.
    ``on_epoch(epoch, params, state)`` is called after every epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ParameterError("training and validation sets must be non-empty")
    dtype = np.dtype(cfg.dtype)
    params = params.astype(dtype)
    mcfg = params.cfg
    state = dict(state or {})
    history = list(state.get("history", []))
    best_score = float(state.get("best_score", -np.inf))
    best_epoch = int(state.get("best_epoch", 0))
    best = state.get("best_params")
    best = best.astype(dtype) if best is not None else params.copy()
    velocity = state.get("velocity") or {k: np.zeros_like(v) for k, v in params.items()}
    lengths = train_set.lengths()

    for epoch in range(start_epoch, cfg.epochs + 1):
        t0 = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, epoch])
        lr = learning_rate(epoch, cfg)
        running, seen = 0.0, 0
        for rows in make_batches(lengths, cfg.batch_size, rng):
            x, d, g = train_set.batch(rows, dtype)
            if mcfg.noise_std_train > 0:
                x = x + (mcfg.noise_std_train * rng.standard_normal(x.shape)).astype(dtype)
            trace = forward(params, x, rng=rng if mcfg.dropout_rate > 0 else None)
            batch_loss = float(np.mean(cross_entropy(trace.logits_dir, d) + cross_entropy(trace.logits_gait, g)))
            if not np.isfinite(batch_loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch} (lr={lr:g})")
            grads = backward(params, trace, d, g)
            norm = global_norm(grads)
            if not np.isfinite(norm):
                raise DivergenceError(f"non-finite gradient norm at epoch {epoch}")
            scale = min(1.0, cfg.clip_norm / norm) if norm > 0 else 1.0
            for k, p in params.items():
                step = grads[k] * dtype.type(scale)
                if cfg.momentum:
                    velocity[k] *= dtype.type(cfg.momentum)
                    velocity[k] += step
                    step = velocity[k]
                p -= dtype.type(lr) * step
                if not np.all(np.isfinite(p)):
                    raise DivergenceError(f"{k} became non-finite at epoch {epoch} (lr={lr:g})")
            running += batch_loss * len(rows)
            seen += len(rows)

        ev = evaluate_set(params, val_set, batch_size=max(cfg.batch_size, 256))
        f1 = 0.5 * (ev.macro_f1("direction", mcfg.n_directions_out) + ev.macro_f1("gait", mcfg.n_subjects_out))
        row = {"epoch": epoch, "lr": lr, "train_loss": running / seen, "val_loss": ev.loss,
               "val_acc_dir": ev.accuracy("direction"), "val_acc_gait": ev.accuracy("gait"),
               "val_macro_f1": f1}
        history.append(row)
        if f1 > best_score:
            best_score, best_epoch, best = f1, epoch, params.copy()
        log.info("epoch %d lr %.3g train %.4f val %.4f acc %.3f/%.3f f1 %.3f (%.1fs)", epoch, lr,
                 row["train_loss"], ev.loss, row["val_acc_dir"], row["val_acc_gait"], f1,
                 time.perf_counter() - t0)
        state = {"history": history, "best_score": best_score, "best_epoch": best_epoch,
                 "best_params": best, "velocity": velocity, "epoch": epoch}
        if on_epoch is not None:
            on_epoch(epoch, params, state)
    return TrainResult(best, history, best_epoch, params, state)


def write_history(history: list, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=HISTORY_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in HISTORY_FIELDS})


def read_history(path) -> list:
    with open(path, newline="") as f:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(f)]

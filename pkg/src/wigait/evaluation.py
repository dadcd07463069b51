"""Classification metrics and attention-map rendering."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, DataError
from .profile import BLOCK, N_BINS

TASKS = ("direction", "gait")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(true_labels, pred_labels, n_classes: int) -> ConfusionMatrix:
    true_labels = np.asarray(true_labels, dtype=int)
    pred_labels = np.asarray(pred_labels, dtype=int)
    if true_labels.shape != pred_labels.shape:
        raise DataError("true and predicted label arrays differ in length")
    for arr in (true_labels, pred_labels):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise DataError(f"labels must lie in [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true_labels, pred_labels), 1)
    return ConfusionMatrix(counts)


@dataclass
class Scores:
    accuracy: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray

    @property
    def macro_accuracy(self) -> float:
        return float(self.accuracy.mean())

    @property
    def macro_precision(self) -> float:
        return float(self.precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())


def scores(cm: ConfusionMatrix) -> Scores:
    """Per-class one-vs-rest accuracy, precision, recall and F1.

    Undefined ratios (empty row or column) count as 0, so a class that is
    never predicted has F1 = 0.
    """
    c = np.asarray(cm.counts, dtype=float)
    if c.size == 0 or c.sum() == 0:
        raise DataError("empty confusion matrix")
    tp = np.diag(c)
    row = c.sum(axis=1)
    col = c.sum(axis=0)
    total = c.sum()
    recall = np.divide(tp, row, out=np.zeros_like(tp), where=row > 0)
    precision = np.divide(tp, col, out=np.zeros_like(tp), where=col > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    tn = total - row - col + tp
    accuracy = (tp + tn) / total
    return Scores(accuracy, precision, recall, f1)


@dataclass
class EvalReport:
    confusions: dict  # task -> ConfusionMatrix
    scores: dict = field(default_factory=dict)  # task -> Scores
    attention_exports: list = field(default_factory=list)

    @classmethod
    def from_predictions(cls, true: dict, pred: dict, n_classes: dict) -> "EvalReport":
        cms = {t: confusion(true[t], pred[t], n_classes[t]) for t in true}
        return cls(cms, {t: scores(cm) for t, cm in cms.items()})

    def summary(self) -> dict:
        out = {}
        for task, s in self.scores.items():
            out[task] = {
                "macro_accuracy": s.macro_accuracy,
                "macro_precision": s.macro_precision,
                "macro_recall": s.macro_recall,
                "macro_f1": s.macro_f1,
                "classes": [
                    {"class": c, "accuracy": float(s.accuracy[c]), "precision": float(s.precision[c]),
                     "recall": float(s.recall[c]), "f1": float(s.f1[c])}
                    for c in range(len(s.f1))
                ],
            }
        return out

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "report.json", "w") as f:
            json.dump({"tasks": self.summary(), "attention_maps": self.attention_exports}, f, indent=2,
                      sort_keys=True)
        for task, cm in self.confusions.items():
            write_confusion_csv(cm, directory / f"confusion_{task}.csv")


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["true\\pred"] + list(range(cm.n_classes)))
        for i, row in enumerate(cm.counts):
            w.writerow([i] + row.tolist())


def read_confusion_csv(path) -> ConfusionMatrix:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))[1:]
    return ConfusionMatrix(np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.int64))


# --- attention rendering ------------------------------------------------------


def _to_gray(block):
    lo, hi = float(block.min()), float(block.max())
    if hi == lo:
        return np.zeros(block.shape, dtype=np.uint8)
    return np.round(255 * (block - lo) / (hi - lo)).astype(np.uint8)


def attention_rows(w1, w2) -> np.ndarray:
    """Two rows of 8-bit gray; each row is scaled so its largest weight is white."""
    rows = np.vstack([np.asarray(w1, float), np.asarray(w2, float)])
    peak = rows.max(axis=1, keepdims=True)
    peak[peak == 0] = 1.0
    return np.round(255 * rows / peak).astype(np.uint8)


def render_attention(w1, w2, spec_high, spec_low, col_scale: int = 1, attn_height: int = 1) -> np.ndarray:
    """Image rows: high-Rx spectrogram, direction weights, gait weights, low-Rx spectrogram.

    Spectrograms are (bins, T) with low frequencies at the bottom of the image.
    """
    T = len(w1)
    if len(w2) != T or spec_high.shape[1] != T or spec_low.shape[1] != T:
        raise AlignmentError("attention rows and spectrograms need the same chunk count")
    attn = np.repeat(attention_rows(w1, w2), attn_height, axis=0)
    img = np.vstack([_to_gray(spec_high[::-1]), attn, _to_gray(spec_low[::-1])])
    return np.repeat(img, col_scale, axis=1)


def write_pgm(image: np.ndarray, path) -> None:
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary graymap")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w)


def profile_spectrograms(features: np.ndarray, component: int = 0):
    """(high, low) spectrogram blocks of one PCA component from a 768-row profile."""
    rows = slice(component * N_BINS, (component + 1) * N_BINS)
    low = features[rows]
    high = features[2 * BLOCK:][rows]
    return high, low


def export_attention(features, w1, w2, path_stem, spectrograms=None, col_scale: int = 1,
                     attn_height: int = 1) -> dict:
    """Write ``<stem>.pgm`` and a ``<stem>.csv`` sidecar with the raw weights."""
    w1 = np.asarray(w1, float)
    w2 = np.asarray(w2, float)
    high, low = spectrograms if spectrograms is not None else profile_spectrograms(features)
    img = render_attention(w1, w2, high, low, col_scale, attn_height)
    stem = Path(path_stem)
    write_pgm(img, stem.with_suffix(".pgm"))
    with open(stem.with_suffix(".csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["chunk", "direction_weight", "gait_weight"])
        for t in range(len(w1)):
            w.writerow([t, repr(float(w1[t])), repr(float(w2[t]))])
    return {"image": str(stem.with_suffix(".pgm")), "sidecar": str(stem.with_suffix(".csv"))}


def chunk_energy(features: np.ndarray) -> np.ndarray:
    """Linear in-band power per chunk summed over the primary rows of both receivers.

    Expects an unstandardised profile whose primary rows are log10 power.
    """
    primary = np.concatenate([features[..., :BLOCK, :], features[..., 2 * BLOCK:3 * BLOCK, :]], axis=-2)
    return np.sum(np.power(10.0, primary.astype(np.float64)), axis=-2)


def attention_energy_mass(weights: np.ndarray, energy: np.ndarray) -> np.ndarray:
    """Share of attention on chunks whose energy exceeds the window median, per profile."""
    weights = np.atleast_2d(weights)
    energy = np.atleast_2d(energy)
    above = energy > np.median(energy, axis=-1, keepdims=True)
    return np.sum(weights * above, axis=-1)

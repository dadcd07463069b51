"""Walking detection and walking-profile construction.

A profile for one antenna pair is the 768 x T matrix::

    rows   0..191  low receiver, 3 PCA components x 64 spectrogram bins
    rows 192..383  first-order time difference of the rows above
    rows 384..575  high receiver, same layout
    rows 576..767  its time difference
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AlignmentError, DegenerateInputError, LengthError

EI_FRAME = 256
EI_HOP = 64
EI_BAND = (20.0, 60.0)

STFT_WINDOW = 1024
STFT_HOP = 128
STFT_EPS = 1e-12
KEEP_BINS = (11, 75)  # 64 bins, ~10.7-72.3 Hz at fs = 1000

N_BINS = KEEP_BINS[1] - KEEP_BINS[0]
N_COMPONENTS = 3
BLOCK = N_COMPONENTS * N_BINS  # 192
PROFILE_ROWS = 4 * BLOCK  # 768

WINDOW_LEN = 4000
WINDOW_STRIDE = 500


@dataclass
class Spectrogram:
    bins: np.ndarray  # (n_kept_bins, T_chunks), log10 power
    bin_frequencies: np.ndarray
    chunk_times: np.ndarray


@dataclass
class WalkingProfile:
    features: np.ndarray  # (768, T)
    subject_label: int
    direction_label: int
    provenance: dict = field(default_factory=dict)
    reversed: bool = False

    @property
    def n_chunks(self) -> int:
        return self.features.shape[1]


def energy_of_interest(series, fs: float = 1000.0, frame_len: int = EI_FRAME,
                       hop: int = EI_HOP, band=EI_BAND) -> np.ndarray:
    """Fraction of each frame's spectral energy that lies in ``band``.

    Frames are Hann-tapered; an all-zero frame scores 0.
    """
    series = np.asarray(series, dtype=float)
    if series.shape[-1] < frame_len:
        raise LengthError(f"need at least {frame_len} samples for one EI frame")
    frames = sliding_window_view(series, frame_len, axis=-1)[..., ::hop, :]
    frames = frames - frames.mean(axis=-1, keepdims=True)
    power = np.abs(np.fft.rfft(frames * np.hanning(frame_len), axis=-1)) ** 2
    freqs = np.fft.rfftfreq(frame_len, 1.0 / fs)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    total = power.sum(axis=-1)
    inside = power[..., in_band].sum(axis=-1)
    out = np.zeros_like(total)
    np.divide(inside, total, out=out, where=total > 0)
    return out


def ei_frame_times(n_frames: int, fs: float = 1000.0, frame_len: int = EI_FRAME, hop: int = EI_HOP):
    """Centre time (s) of every EI frame."""
    return (np.arange(n_frames) * hop + frame_len / 2) / fs


def calibrate_threshold(idle_ei) -> float:
    """Detection threshold ``mean + 3 std`` of EI over an idle capture."""
    idle_ei = np.asarray(idle_ei, dtype=float)
    return float(idle_ei.mean() + 3 * idle_ei.std())


def detect_walking(ei_series, threshold: float, frame_period: float = EI_HOP / 1000.0,
                   min_duration: float = 1.0, max_gap: float = 0.25,
                   t0: float = 0.0) -> list[tuple[float, float]]:
    """Intervals (start, end) in seconds where EI strictly exceeds ``threshold``.

    Runs separated by gaps of at most ``max_gap`` are merged, then runs
    shorter than ``min_duration`` are dropped. Frame ``i`` covers
    ``[t0 + i*frame_period, t0 + (i+1)*frame_period)``.
    """
    active = np.asarray(ei_series) > threshold
    if not active.any():
        return []
    edges = np.diff(np.concatenate([[0], active.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    runs = [[starts[0], ends[0]]]
    for s, e in zip(starts[1:], ends[1:]):
        if (s - runs[-1][1]) * frame_period <= max_gap + 1e-12:
            runs[-1][1] = e
        else:
            runs.append([s, e])
    return [(t0 + s * frame_period, t0 + e * frame_period)
            for s, e in runs if (e - s) * frame_period >= min_duration - 1e-12]


def stft_spectrogram(component, fs: float = 1000.0, window: int = STFT_WINDOW,
                     hop: int = STFT_HOP, keep=KEEP_BINS) -> Spectrogram:
    """Log10 power spectrogram of one series, restricted to the walking band.

    Hann-weighted chunks of ``window`` samples every ``hop`` samples, FFT
    size equal to the window; ``keep`` selects the retained bin range.
    Leading axes of ``component`` are carried through to ``bins``.
    """
    component = np.asarray(component, dtype=float)
    n = component.shape[-1]
    if n < window:
        raise LengthError(f"need at least {window} samples, got {n}")
    chunks = sliding_window_view(component, window, axis=-1)[..., ::hop, :]
    spec = np.fft.rfft(chunks * np.hanning(window + 1)[:-1], axis=-1)[..., keep[0]:keep[1]]
    power = spec.real ** 2 + spec.imag ** 2
    bins = np.log10(power + STFT_EPS)
    bins = np.swapaxes(bins, -1, -2)
    freqs = np.arange(keep[0], keep[1]) * fs / window
    times = (np.arange(chunks.shape[-2]) * hop + window / 2) / fs
    return Spectrogram(bins, freqs, times)


def n_chunks(n_samples: int, window: int = STFT_WINDOW, hop: int = STFT_HOP) -> int:
    return (n_samples - window) // hop + 1


def time_delta(block: np.ndarray) -> np.ndarray:
    """First-order difference along time with a zero first column."""
    d = np.zeros_like(block)
    d[..., 1:] = block[..., 1:] - block[..., :-1]
    return d


def _receiver_block(spectrograms) -> np.ndarray:
    if isinstance(spectrograms, np.ndarray):
        primary = spectrograms.reshape(*spectrograms.shape[:-3], -1, spectrograms.shape[-1])
    else:
        bins = [s.bins if isinstance(s, Spectrogram) else np.asarray(s) for s in spectrograms]
        if len({b.shape[-1] for b in bins}) != 1:
            raise AlignmentError("spectrograms of one receiver differ in chunk count")
        primary = np.concatenate(bins, axis=-2)
    return np.concatenate([primary, time_delta(primary)], axis=-2)


def build_profile(spectrograms_low, spectrograms_high, subject_label: int = 0,
                  direction_label: int = 0, provenance: dict | None = None) -> WalkingProfile:
    """Stack 3 component spectrograms per receiver, add deltas, splice low over high.

    Either pass sequences of ``Spectrogram`` or arrays shaped (3, 64, T).
    """
    low = _receiver_block(spectrograms_low)
    high = _receiver_block(spectrograms_high)
    if low.shape[-1] != high.shape[-1]:
        raise AlignmentError(f"chunk counts differ: low {low.shape[-1]}, high {high.shape[-1]}")
    if low.shape[-2] != 2 * BLOCK or high.shape[-2] != 2 * BLOCK:
        raise AlignmentError("each receiver needs 3 components x 64 bins")
    features = np.concatenate([low, high], axis=-2)
    return WalkingProfile(features, subject_label, direction_label, dict(provenance or {}))


def reverse_features(features: np.ndarray) -> np.ndarray:
    """Time-reverse a (..., 768, T) profile matrix.

    Primary rows are simply flipped. Delta rows are rebuilt from the flipped
    deltas (negated and shifted by one chunk) so they equal the difference
    of the reversed primary rows; the first delta column is left as is,
    which makes the map an exact involution.
    """
    out = np.empty_like(features)
    for base in (0, 2 * BLOCK):
        prim = slice(base, base + BLOCK)
        delta = slice(base + BLOCK, base + 2 * BLOCK)
        out[..., prim, :] = features[..., prim, ::-1]
        out[..., delta, 0] = features[..., delta, 0]
        out[..., delta, 1:] = -features[..., delta, :0:-1]
    return out


def opposite_direction(label):
    return (label + 4) % 8


def reverse_profile(p: WalkingProfile) -> WalkingProfile:
    return replace(p, features=reverse_features(p.features),
                   direction_label=int(opposite_direction(p.direction_label)),
                   provenance=dict(p.provenance), reversed=not p.reversed)


def standardize_features(features: np.ndarray) -> np.ndarray:
    """Global z-score of each (768, T) matrix; leading axes are independent profiles."""
    features = np.asarray(features)
    axes = (-2, -1)
    mu = features.mean(axis=axes, keepdims=True, dtype=np.float64)
    sigma = features.std(axis=axes, keepdims=True, dtype=np.float64)
    if np.any(sigma == 0):
        raise DegenerateInputError("profile has zero variance")
    return ((features - mu) / sigma).astype(features.dtype, copy=False)


def standardize(p: WalkingProfile) -> WalkingProfile:
    return replace(p, features=standardize_features(p.features), provenance=dict(p.provenance))


def window_offsets(n_samples: int, window: int = WINDOW_LEN, stride: int = WINDOW_STRIDE) -> list[int]:
    if n_samples < window:
        return []
    return list(range(0, (n_samples - window) // stride * stride + 1, stride))


@dataclass
class Window:
    start: int  # sample index into the recording
    length: int
    labels: dict


def segment_windows(n_samples: int, intervals: Sequence[tuple[int, int, dict]],
                    window: int = WINDOW_LEN, stride: int = WINDOW_STRIDE):
    """Cut fixed-size windows from labelled sample intervals ``(start, end, labels)``.

    ``end`` is exclusive. Returns (windows, skipped) where ``skipped`` lists
    the intervals too short to hold one window.
    """
    windows, skipped = [], []
    for start, end, labels in intervals:
        end = min(end, n_samples)
        offsets = window_offsets(end - start, window, stride)
        if not offsets:
            skipped.append((start, end, labels))
        windows.extend(Window(start + o, window, dict(labels, offset=o)) for o in offsets)
    return windows, skipped


@dataclass
class DatasetSplit:
    """Indices into a profile store; train entries may carry a reversed flag."""

    train: list = field(default_factory=list)  # (index, reversed)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)


def split_windows(groups: dict, holdout_fraction: float = 0.2, seed: int = 0):
    """Assign windows to train / validation / test by walking instance.

    ``groups`` maps (subject, path, direction) to ``{trip_id: [window ids]}``.
    For each group a ``holdout_fraction`` share of the trips (at least one
    when there are two or more) is held out; the held-out windows are
    shuffled and halved into validation and test.
    """
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for key in sorted(groups):
        trips = groups[key]
        ids = sorted(trips)
        n_hold = int(round(holdout_fraction * len(ids)))
        if len(ids) >= 2:
            n_hold = max(1, n_hold)
        n_hold = min(n_hold, len(ids) - 1) if len(ids) > 1 else 0
        held = set(rng.permutation(len(ids))[:n_hold].tolist())
        held_windows = []
        for i, trip in enumerate(ids):
            (held_windows if i in held else train).extend(trips[trip])
        held_windows = [held_windows[i] for i in rng.permutation(len(held_windows))]
        half = (len(held_windows) + 1) // 2
        val.extend(held_windows[:half])
        test.extend(held_windows[half:])
    return train, val, test

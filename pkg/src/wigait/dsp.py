"""Raw CSI clean-up: long-delay removal, band-pass, smoothing and PCA."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .errors import DegenerateInputError, LengthError, ParameterError

KEEP_TAPS = 10  # 500 ns at 50 ns per tap
MIN_FILTER_LENGTH = 100


@dataclass
class AmplitudeWindow:
    stream_id: int
    amplitudes: np.ndarray  # (n_subcarriers, T)
    sampling_rate: float = 1000.0


@dataclass
class RefinedStream:
    stream_id: int
    components: np.ndarray  # (3, T)
    explained_variance: np.ndarray  # (3,)
    loadings: np.ndarray  # (n_subcarriers, 3), orthonormal columns


def remove_long_delays(csi: np.ndarray, keep_taps: int = KEEP_TAPS, axis: int = -2) -> np.ndarray:
    """Drop multipath energy arriving later than ``keep_taps`` CIR taps.

    Each CSI snapshot (the subcarrier axis) is taken to the delay domain
    with an inverse FFT, taps ``>= keep_taps`` are zeroed, and the result
    is transformed back. With 30 subcarriers over 20 MHz a tap is 50 ns.
    """
    csi = np.asarray(csi)
    if csi.shape[axis] != 30:
        raise ParameterError(f"expected 30 subcarriers along axis {axis}, got {csi.shape[axis]}")
    cir = np.fft.ifft(csi, axis=axis)
    index = [slice(None)] * cir.ndim
    index[axis] = slice(keep_taps, None)
    cir[tuple(index)] = 0
    return np.fft.fft(cir, axis=axis)


@lru_cache(maxsize=16)
def butter_bandpass(low: float, high: float, fs: float, order: int = 4) -> np.ndarray:
    return signal.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")


def bandpass_filter(series, fs: float = 1000.0, low: float = 5.0, high: float = 90.0,
                    order: int = 4, axis: int = -1) -> np.ndarray:
    """Zero-phase Butterworth band-pass (forward-backward second-order sections).

    Linear in ``series``; a constant input is removed to numerical precision.
    Edges are padded by mirror reflection: the default odd extension turns
    any out-of-band tone not ending on a zero crossing into a step, whose
    transient then leaks through the passband.
    """
    series = np.asarray(series, dtype=float)
    if series.shape[axis] < MIN_FILTER_LENGTH:
        raise LengthError(f"need at least {MIN_FILTER_LENGTH} samples, got {series.shape[axis]}")
    return signal.sosfiltfilt(butter_bandpass(low, high, fs, order), series, axis=axis, padtype="even")


def weighted_moving_average(series, window_len: int = 10, axis: int = -1) -> np.ndarray:
    """Causal moving average with weights ``window_len, ..., 1`` (newest sample heaviest).

    The first ``window_len - 1`` outputs renormalise over the samples that exist.
    """
    if window_len < 1:
        raise ParameterError("window_len must be >= 1")
    series = np.asarray(series, dtype=float)
    if window_len == 1:
        return series.copy()
    weights = np.arange(window_len, 0, -1, dtype=float)
    num = signal.lfilter(weights, [1.0], series, axis=axis)
    n = series.shape[axis]
    norm = np.cumsum(weights)[np.minimum(np.arange(n), window_len - 1)]
    shape = [1] * series.ndim
    shape[axis] = n
    return num / norm.reshape(shape)


def _sign_fix(vectors):
    # make the largest-magnitude loading of every column positive
    idx = np.argmax(np.abs(vectors), axis=-2)
    picked = np.take_along_axis(vectors, idx[..., None, :], axis=-2)
    return vectors * np.where(picked < 0, -1.0, 1.0)


def principal_components(data: np.ndarray, n_components: int = 3):
    """Top principal directions of the rows of ``data`` (..., n_vars, T).

    Returns (components (..., k, T), eigenvalues (..., k), loadings (..., n_vars, k)).
    Works on stacked windows so many streams can be refined in one call.
    """
    data = np.asarray(data, dtype=float)
    centered = data - data.mean(axis=-1, keepdims=True)
    cov = centered @ np.swapaxes(centered, -1, -2) / (data.shape[-1] - 1)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals[..., ::-1][..., :n_components], 0.0, None)
    vecs = _sign_fix(vecs[..., ::-1][..., :n_components])
    comps = np.swapaxes(vecs, -1, -2) @ centered
    return comps, vals, vecs


def pca_refine(window: AmplitudeWindow, n_components: int = 3) -> RefinedStream:
    """Project the subcarrier series onto their leading principal directions."""
    amps = np.asarray(window.amplitudes, dtype=float)
    n_vars, T = amps.shape
    if T <= n_vars:
        raise LengthError("need more time samples than subcarriers")
    if not np.any(np.ptp(amps, axis=1) > 0):
        raise DegenerateInputError("all subcarrier series are constant")
    comps, vals, vecs = principal_components(amps, n_components)
    return RefinedStream(window.stream_id, comps, vals, vecs)


def clean_amplitudes(csi: np.ndarray, fs: float = 1000.0, band=(5.0, 90.0), order: int = 4,
                     wma_len: int = 10, keep_taps: int = KEEP_TAPS) -> np.ndarray:
    """Run the per-recording part of the chain on complex CSI (..., 30, T).

    Long-delay removal, amplitude, band-pass, weighted moving average.
    PCA is left to the caller because it runs per analysis window.
    """
    amp = np.abs(remove_long_delays(csi, keep_taps, axis=-2))
    amp = bandpass_filter(amp, fs, band[0], band[1], order, axis=-1)
    return weighted_moving_average(amp, wma_len, axis=-1)


def write_refined_csv(stream: RefinedStream, path) -> None:
    """Debug dump: one column per component, one row per time sample."""
    k = stream.components.shape[0]
    header = ",".join(f"pc{i}" for i in range(k))
    np.savetxt(path, stream.components.T, delimiter=",", header=header, comments="")

"""End-to-end dataset generation and preprocessing, in memory.

The CLI wraps these functions with file I/O; tests and the acceptance
suite call them directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import dsp
from .channel import (TRIP_DURATION_RANGE, CsiRecording, SceneConfig, Trajectories, WalkerParams,
                      WalkSegment, bearing_label, scatterer_trajectories, synthesize_csi)
from .errors import DataError
from .profile import (build_profile, calibrate_threshold, detect_walking, energy_of_interest,
                      n_chunks, segment_windows, split_windows, stft_spectrogram)
from .train import ProfileSet

log = logging.getLogger(__name__)

# Floor plan (m) of the walking area; devices sit off-centre on the south wall
# so that no two paths present mirror-image geometry.
DEFAULT_PATHS = (
    ((1.5, 2.5), (7.5, 2.5)),
    ((1.5, 4.5), (8.5, 4.5)),
    ((1.0, 6.5), (8.5, 6.5)),
    ((2.5, 1.0), (2.5, 7.0)),
    ((4.5, 0.8), (4.5, 7.5)),
    ((6.5, 1.0), (6.5, 7.5)),
    ((1.5, 1.5), (7.5, 7.5)),
    ((3.5, 1.5), (7.5, 5.5)),
    ((1.5, 3.5), (5.5, 7.5)),
    ((7.5, 1.5), (1.5, 7.5)),
    ((5.5, 1.5), (1.5, 5.5)),
    ((7.5, 3.5), (3.5, 7.5)),
)


@dataclass
class PathSpec:
    path_id: int
    start: tuple
    end: tuple

    @property
    def length(self) -> float:
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    @property
    def out_label(self) -> int:
        return bearing_label(np.subtract(self.end, self.start))

    def segment(self, outbound: bool, duration: float) -> WalkSegment:
        a, b = (self.start, self.end) if outbound else (self.end, self.start)
        return WalkSegment(a, b, bearing_label(np.subtract(b, a)), duration)


def default_paths() -> list[PathSpec]:
    return [PathSpec(i, s, e) for i, (s, e) in enumerate(DEFAULT_PATHS)]


def default_roster(n_subjects: int = 8, seed: int = 0) -> list[WalkerParams]:
    """Distinct synthetic subjects spread over plausible gait parameters.

    Speeds stay inside the range where every default path is walked within
    the trip-duration envelope.
    """
    rng = np.random.default_rng([seed, 104729])
    speeds = np.linspace(0.85, 1.3, n_subjects)[rng.permutation(n_subjects)]
    steps = np.linspace(0.75, 1.25, n_subjects)[rng.permutation(n_subjects)]
    legs = np.linspace(0.25, 0.8, n_subjects)[rng.permutation(n_subjects)]
    arms = np.linspace(0.15, 0.5, n_subjects)[rng.permutation(n_subjects)]
    stature = np.linspace(0.85, 1.15, n_subjects)[rng.permutation(n_subjects)]
    roster = []
    for i in range(n_subjects):
        s = stature[i]
        heights = np.array([1.05, 0.45, 0.45, 0.95, 0.95]) * s
        refl = np.array([1.0, 0.4, 0.4, 0.15, 0.15]) * rng.uniform(0.8, 1.2, 5)
        roster.append(WalkerParams(
            subject_id=i, torso_speed=float(speeds[i]), step_frequency=float(steps[i]),
            leg_swing_speed_amp=float(legs[i]), arm_swing_speed_amp=float(arms[i]),
            part_heights=heights, part_reflectivity=refl,
            gait_phase_offsets=(0.0, 0.0, np.pi / 2, np.pi / 2, 0.0)))
    return roster


@dataclass
class Trip:
    subject: int
    path_id: int
    trip_index: int
    direction: int
    start_sample: int
    end_sample: int  # exclusive
    speed: float

    @property
    def duration(self) -> float:
        return (self.end_sample - self.start_sample) / 1000.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SessionConfig:
    minutes_per_path: float = 5.0
    lead_in: float = 1.0
    turn_duration: float = 1.0
    speed_jitter: float = 0.03
    min_trips: int = 2


def session_seed(seed: int, subject: int, path_id: int) -> int:
    return int(np.random.SeedSequence([seed, subject, path_id]).generate_state(1)[0])


def plan_trips(walker: WalkerParams, path: PathSpec, cfg: SessionConfig, rng, fs: float):
    """Trip speeds and sample spans for one subject walking back and forth on one path."""
    lo, hi = TRIP_DURATION_RANGE
    budget = cfg.minutes_per_path * 60.0
    t = cfg.lead_in
    trips = []
    while True:
        speed = walker.torso_speed * (1 + cfg.speed_jitter * rng.standard_normal())
        speed = float(np.clip(speed, path.length / (hi - 1e-3), path.length / (lo + 1e-3)))
        n = int(round(path.length / speed * fs))
        if len(trips) >= cfg.min_trips and t + n / fs > budget:
            break
        outbound = len(trips) % 2 == 0
        start = int(round(t * fs))
        label = path.out_label if outbound else (path.out_label + 4) % 8
        trips.append((outbound, speed, start, start + n, label))
        t = (start + n) / fs + cfg.turn_duration
    return trips


def simulate_session(scene: SceneConfig, walker: WalkerParams, path: PathSpec, cfg: SessionConfig,
                     seed: int) -> tuple[CsiRecording, CsiRecording, list[Trip]]:
    """Both receivers' CSI for a subject walking a path back and forth, with trip labels."""
    fs = scene.sampling_rate
    sseed = session_seed(seed, walker.subject_id, path.path_id)
    rng = np.random.default_rng(sseed)
    planned = plan_trips(walker, path, cfg, rng, fs)
    pieces, trips = [], []
    cursor = 0
    here = path.start
    for i, (outbound, speed, start, end, label) in enumerate(planned):
        if start > cursor:
            pieces.append(Trajectories.stationary(walker, here, start - cursor, fs, cursor / fs))
        phase = walker.gait_phase_offsets + rng.uniform(0, 2 * np.pi)
        w = replace(walker, torso_speed=speed, gait_phase_offsets=phase)
        seg = path.segment(outbound, (end - start) / fs)
        tr = scatterer_trajectories(w, seg, fs, t0=start / fs)
        pieces.append(Trajectories(tr.times[:-1], tr.positions[:, :-1], tr.velocities[:, :-1],
                                   tr.reflectivity))
        trips.append(Trip(walker.subject_id, path.path_id, i, label, start, end, speed))
        here = tuple(tr.positions[0, -1, :2])
        cursor = end
    tail = int(round(cfg.turn_duration * fs))
    pieces.append(Trajectories.stationary(walker, here, tail, fs, cursor / fs))
    traj = Trajectories.concatenate(pieces)
    low, high = synthesize_csi(replace(scene, rng_seed=sseed), traj)
    return low, high, trips


@dataclass
class PreprocessConfig:
    band: tuple = (5.0, 90.0)
    filter_order: int = 4
    wma_window: int = 10
    keep_taps: int = 10
    window: int = 4000
    stride: int = 500
    stft_window: int = 1024
    stft_hop: int = 128
    keep_bins: tuple = (11, 75)
    holdout_fraction: float = 0.2


def clean_recording(rec: CsiRecording, cfg: PreprocessConfig) -> np.ndarray:
    """Amplitudes after delay removal, band-pass and smoothing: (streams, subcarriers, T)."""
    return dsp.clean_amplitudes(rec.csi.astype(np.complex128), rec.sampling_rate, cfg.band,
                                cfg.filter_order, cfg.wma_window, cfg.keep_taps)


def window_profiles(clean_low: np.ndarray, clean_high: np.ndarray, start: int,
                    cfg: PreprocessConfig, fs: float = 1000.0) -> np.ndarray:
    """The six antenna-pair profiles (6, 768, T) of one analysis window."""
    blocks = []
    for clean in (clean_low, clean_high):
        comps, _, _ = dsp.principal_components(clean[:, :, start:start + cfg.window], 3)
        spec = stft_spectrogram(comps, fs, cfg.stft_window, cfg.stft_hop, cfg.keep_bins)
        blocks.append(spec.bins)  # (streams, 3, 64, T)
    return build_profile(blocks[0], blocks[1]).features.astype(np.float32)


@dataclass
class ProfileStore:
    """Raw profiles of a dataset plus per-profile provenance."""

    features: np.ndarray  # (N, 768, T) float32
    subjects: np.ndarray
    directions: np.ndarray
    window_ids: np.ndarray  # which source window each profile came from
    pairs: np.ndarray  # antenna pair 0..5
    windows: list = field(default_factory=list)  # per window: dict of labels / provenance

    def subset(self, entries) -> ProfileSet:
        entries = list(entries)
        idx = np.array([e[0] for e in entries], dtype=int)
        rev = np.array([e[1] for e in entries], dtype=bool)
        return ProfileSet(self.features, self.subjects, self.directions, idx, rev)


@dataclass
class Splits:
    train: list  # (profile index, reversed)
    validation: list
    test: list

    def counts(self) -> dict:
        return {"train": len(self.train), "validation": len(self.validation), "test": len(self.test)}


def profiles_from_session(low: CsiRecording, high: CsiRecording, trips: list[Trip],
                          cfg: PreprocessConfig):
    """Profiles of every window of every trip: (features (W*6, 768, T), window dicts, skipped)."""
    if low.n_samples != high.n_samples:
        raise DataError("receiver recordings are not aligned")
    clean_low = clean_recording(low, cfg)
    clean_high = clean_recording(high, cfg)
    intervals = [(t.start_sample, t.end_sample,
                  {"subject": t.subject, "path": t.path_id, "trip": t.trip_index, "direction": t.direction})
                 for t in trips]
    windows, skipped = segment_windows(low.n_samples, intervals, cfg.window, cfg.stride)
    feats = [window_profiles(clean_low, clean_high, w.start, cfg, low.sampling_rate) for w in windows]
    out = np.stack(feats) if feats else np.zeros((0, 6, 768, n_chunks(cfg.window, cfg.stft_window, cfg.stft_hop)),
                                                   dtype=np.float32)
    metas = [dict(w.labels, start=w.start) for w in windows]
    return out, metas, skipped


def detection_coverage(low: CsiRecording, trips: list[Trip], threshold: float, cfg: PreprocessConfig) -> float:
    """Fraction of labelled walking time covered by the energy-based detector."""
    series = detection_series(low, cfg)
    ei = energy_of_interest(series, low.sampling_rate)
    intervals = detect_walking(ei, threshold, t0=0.0)
    covered = np.zeros(low.n_samples, dtype=bool)
    for s, e in intervals:
        covered[int(s * low.sampling_rate):int(e * low.sampling_rate)] = True
    truth = np.zeros(low.n_samples, dtype=bool)
    for t in trips:
        truth[t.start_sample:t.end_sample] = True
    return float(covered[truth].mean()) if truth.any() else 0.0


def detection_series(rec: CsiRecording, cfg: PreprocessConfig) -> np.ndarray:
    """First principal component of stream 0's amplitudes over the whole recording.

    No band-pass here: filtered noise alone would already concentrate its
    energy in the walking band and blur the idle/walking contrast.
    """
    amp = np.abs(dsp.remove_long_delays(rec.csi[0].astype(np.complex128), cfg.keep_taps, axis=0))
    comps, _, _ = dsp.principal_components(amp, 1)
    return comps[0]


def idle_threshold(scene: SceneConfig, walker: WalkerParams, cfg: PreprocessConfig,
                   seconds: float = 20.0, seed: int = 0) -> float:
    """Calibrate the walking threshold on a capture of the subject standing still."""
    fs = scene.sampling_rate
    n = int(seconds * fs)
    traj = Trajectories.stationary(walker, (4.5, 4.5), n, fs)
    low, _ = synthesize_csi(replace(scene, rng_seed=seed), traj)
    return calibrate_threshold(energy_of_interest(detection_series(low, cfg), fs))


def assemble_splits(windows: list[dict], holdout_fraction: float, seed: int, n_pairs: int = 6) -> Splits:
    """Instance-level hold-out, expanded to antenna-pair profiles; train gets reversed copies."""
    groups: dict = {}
    for wid, w in enumerate(windows):
        key = (w["subject"], w["path"], w["direction"])
        groups.setdefault(key, {}).setdefault(w["trip"], []).append(wid)
    train_w, val_w, test_w = split_windows(groups, holdout_fraction, seed)

    def expand(ws, with_reversed):
        out = []
        for wid in sorted(ws):
            for pair in range(n_pairs):
                out.append((wid * n_pairs + pair, False))
                if with_reversed:
                    out.append((wid * n_pairs + pair, True))
        return out

    return Splits(expand(train_w, True), expand(val_w, False), expand(test_w, False))


def build_dataset(scene: SceneConfig, roster: list[WalkerParams], paths: list[PathSpec],
                  session: SessionConfig, pre: PreprocessConfig, seed: int,
                  progress=None) -> tuple[ProfileStore, Splits, dict]:
    """Simulate every subject x path session and turn it into profiles and splits."""
    feats, windows, skipped, trips_all = [], [], 0, []
    for walker in roster:
        for path in paths:
            low, high, trips = simulate_session(scene, walker, path, session, seed)
            f, metas, skip = profiles_from_session(low, high, trips, pre)
            feats.append(f)
            windows.extend(metas)
            skipped += len(skip)
            trips_all.extend(trips)
            if progress:
                progress(walker.subject_id, path.path_id, len(metas))
    features = np.concatenate(feats) if feats else np.zeros((0, 6, 768, 0), np.float32)
    n_w = features.shape[0]
    store = ProfileStore(
        features.reshape(n_w * 6, *features.shape[2:]),
        np.repeat([w["subject"] for w in windows], 6).astype(int),
        np.repeat([w["direction"] for w in windows], 6).astype(int),
        np.repeat(np.arange(n_w), 6), np.tile(np.arange(6), n_w), windows)
    splits = assemble_splits(windows, pre.holdout_fraction, seed)
    summary = summarize(trips_all, windows, skipped, splits, pre)
    return store, splits, summary


def expected_window_count(trips, pre: PreprocessConfig) -> int:
    return sum(max(0, (t.end_sample - t.start_sample - pre.window) // pre.stride + 1)
               for t in trips if t.end_sample - t.start_sample >= pre.window)


def summarize(trips, windows, skipped, splits: Splits, pre: PreprocessConfig) -> dict:
    per_subject, per_direction = {}, {}
    for w in windows:
        per_subject[w["subject"]] = per_subject.get(w["subject"], 0) + 1
        per_direction[w["direction"]] = per_direction.get(w["direction"], 0) + 1
    n_train_windows = len({e[0] // 6 for e in splits.train})
    return {
        "trips": len(trips),
        "windows": len(windows),
        "expected_windows": expected_window_count(trips, pre),
        "profiles": 6 * len(windows),
        "skipped_intervals": skipped,
        "windows_per_subject": {str(k): v for k, v in sorted(per_subject.items())},
        "windows_per_direction": {str(k): v for k, v in sorted(per_direction.items())},
        "train_windows": n_train_windows,
        "splits": splits.counts(),
    }

"""Two-receiver CSI simulator for a single walker.

The channel frequency response seen by each receiver is the sum of a
constant static-path term and one reflected path per body part::

    H(f_i, t) = H_s(f_i) + sum_k a_k(t) exp(-j 2 pi d_k(t) / lambda_i) + noise

where ``d_k`` is the bistatic path length Tx -> part -> Rx and ``a_k`` falls
off as ``1 / (d_tx d_rx)`` times a reflectivity and a vertical-gap weight
that lets the low receiver favour the legs and the high one the arms.

All lengths are metres, times seconds, frequencies Hz.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.constants import speed_of_light

from .errors import GeometryError, LengthError, NumericError, ParameterError

PART_NAMES = ("torso", "left_leg", "right_leg", "left_arm", "right_arm")
RECEIVERS = ("low", "high")

# Single-trip duration envelope (s) of the recorded walks.
TRIP_DURATION_RANGE = (4.135, 10.626)

MIN_DEVICE_CLEARANCE = 0.1


def _default_static_paths():
    return [
        (0.0, 1.0 + 0.0j),
        (100e-9, 0.5 * np.exp(0.7j)),
        (300e-9, 0.3 * np.exp(-1.9j)),
    ]


@dataclass
class SceneConfig:
    """Room geometry, radio parameters and noise for a simulated capture."""

    tx_position: Sequence[float] = (3.0, 0.2, 0.75)
    rx_positions: Sequence[Sequence[float]] = ((2.4, 0.2, 0.5), (3.6, 0.2, 1.0))
    carrier_frequency: float = 5.745e9
    subcarrier_spacing: float = 20e6 / 30
    n_subcarriers: int = 30
    n_streams: int = 6
    sampling_rate: float = 1000.0
    static_paths: list = field(default_factory=_default_static_paths)
    noise_std: float = 0.02
    stream_phase_spread: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        self.tx_position = np.asarray(self.tx_position, dtype=float)
        self.rx_positions = np.asarray(self.rx_positions, dtype=float)
        self.static_paths = [(float(d), complex(g)) for d, g in self.static_paths]
        self.validate()

    def validate(self):
        if self.tx_position.shape != (3,) or self.rx_positions.shape != (2, 3):
            raise GeometryError("tx must be a 3-vector and rx_positions two 3-vectors")
        if not (np.all(np.isfinite(self.tx_position)) and np.all(np.isfinite(self.rx_positions))):
            raise GeometryError("device positions must be finite")
        if self.rx_positions[0, 2] == self.rx_positions[1, 2]:
            raise GeometryError("receiver heights must differ")
        if self.n_subcarriers != 30 or self.n_streams != 6:
            raise ParameterError("CSI layout is fixed at 6 streams x 30 subcarriers")
        if self.sampling_rate <= 0 or self.carrier_frequency <= 0 or self.subcarrier_spacing <= 0:
            raise ParameterError("sampling rate and frequencies must be positive")
        if self.noise_std < 0:
            raise ParameterError("noise_std must be nonnegative")

    @property
    def tx_height(self) -> float:
        return float(self.tx_position[2])

    @property
    def subcarrier_frequencies(self) -> np.ndarray:
        offsets = np.arange(self.n_subcarriers) - (self.n_subcarriers - 1) / 2
        return self.carrier_frequency + offsets * self.subcarrier_spacing

    @property
    def wavelengths(self) -> np.ndarray:
        return speed_of_light / self.subcarrier_frequencies

    def static_response(self) -> np.ndarray:
        """Static CFR per receiver and stream, shape (2, n_streams, n_subcarriers).

        Streams differ only by small seeded phase offsets on each static path.
        """
        rng = np.random.default_rng([self.rng_seed, 7919])
        f = self.subcarrier_frequencies
        out = np.zeros((2, self.n_streams, self.n_subcarriers), dtype=complex)
        for p, (delay, gain) in enumerate(self.static_paths):
            offsets = rng.uniform(-self.stream_phase_spread, self.stream_phase_spread,
                                  size=(2, self.n_streams))
            steer = gain * np.exp(-2j * np.pi * f * delay)
            out += np.exp(1j * offsets)[..., None] * steer
        return out


@dataclass
class WalkerParams:
    """Gait kinematics of one synthetic subject.

    Parts are ordered as in ``PART_NAMES``: torso, two legs, two arms.
    """

    subject_id: int
    torso_speed: float = 1.0
    step_frequency: float = 1.0
    leg_swing_speed_amp: float = 0.5
    arm_swing_speed_amp: float = 0.3
    part_heights: Sequence[float] = (1.1, 0.45, 0.45, 1.0, 1.0)
    part_reflectivity: Sequence[float] = (1.0, 0.4, 0.4, 0.15, 0.15)
    gait_phase_offsets: Sequence[float] = (0.0, 0.0, np.pi / 2, np.pi / 2, 0.0)

    def __post_init__(self):
        self.part_heights = np.asarray(self.part_heights, dtype=float)
        self.part_reflectivity = np.asarray(self.part_reflectivity, dtype=float)
        self.gait_phase_offsets = np.asarray(self.gait_phase_offsets, dtype=float)
        n = len(PART_NAMES)
        for name in ("part_heights", "part_reflectivity", "gait_phase_offsets"):
            if getattr(self, name).shape != (n,):
                raise ParameterError(f"{name} must have {n} entries")
        if not self.torso_speed > 0:
            raise ParameterError("torso_speed must be positive")
        if not 0.5 < self.step_frequency < 3.0:
            raise ParameterError("step_frequency must lie in (0.5, 3.0) Hz")
        if np.any(self.part_reflectivity < 0):
            raise ParameterError("reflectivities must be nonnegative")
        if self.leg_swing_speed_amp < 0 or self.arm_swing_speed_amp < 0:
            raise ParameterError("swing amplitudes must be nonnegative")


def bearing_label(delta) -> int:
    """Compass label 0..7 of a displacement: 0 = +x, counting counter-clockwise in 45 deg steps."""
    angle = np.arctan2(delta[1], delta[0])
    return int(np.round(angle / (np.pi / 4))) % 8


@dataclass
class WalkSegment:
    """A straight single trip between two floor points."""

    start: Sequence[float]
    end: Sequence[float]
    direction_label: int
    duration: float
    check_duration: bool = True

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.end = np.asarray(self.end, dtype=float)
        if self.length == 0:
            raise GeometryError("zero-length walk segment")
        if not 0 <= self.direction_label < 8:
            raise ParameterError("direction_label must be in 0..7")
        if bearing_label(self.end - self.start) != self.direction_label:
            raise ParameterError(
                f"direction_label {self.direction_label} does not match segment bearing "
                f"{bearing_label(self.end - self.start)}")
        lo, hi = TRIP_DURATION_RANGE
        if self.check_duration and not lo <= self.duration <= hi:
            raise ParameterError(f"trip duration {self.duration:.3f} s outside [{lo}, {hi}] s")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def unit(self) -> np.ndarray:
        return (self.end - self.start) / self.length


@dataclass
class Trajectories:
    """Per-part sampled motion: positions and velocities have shape (n_parts, n_samples, 3)."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    reflectivity: np.ndarray
    part_names: tuple = PART_NAMES

    @property
    def n_samples(self) -> int:
        return self.times.shape[0]

    @classmethod
    def stationary(cls, walker: WalkerParams, xy, n_samples: int, fs: float, t0: float = 0.0):
        """A walker standing still at ``xy`` (still reflects, but statically)."""
        times = t0 + np.arange(n_samples) / fs
        pos = np.empty((len(PART_NAMES), n_samples, 3))
        pos[:, :, 0] = xy[0]
        pos[:, :, 1] = xy[1]
        pos[:, :, 2] = walker.part_heights[:, None]
        return cls(times, pos, np.zeros_like(pos), walker.part_reflectivity.copy())

    @staticmethod
    def concatenate(parts: Sequence["Trajectories"]) -> "Trajectories":
        return Trajectories(
            np.concatenate([p.times for p in parts]),
            np.concatenate([p.positions for p in parts], axis=1),
            np.concatenate([p.velocities for p in parts], axis=1),
            parts[0].reflectivity.copy(),
        )


def _abs_sin_integral(theta):
    # antiderivative of |sin| that is continuous and nondecreasing
    k = np.floor(theta / np.pi)
    return 2.0 * k + 1.0 - np.cos(theta - k * np.pi)


def scatterer_trajectories(walker: WalkerParams, segment: WalkSegment, fs: float,
                           t0: float = 0.0) -> Trajectories:
    """Sample the motion of every body part along ``segment``.

    The torso moves at ``walker.torso_speed`` along the segment bearing.
    Limb speed oscillates as ``torso + amp * |sin(2 pi f t + phi)|``; the
    swing is centred on its cycle mean so limbs stay with the body instead
    of drifting ahead of it. Positions are the exact integral of the
    velocities, sampled at ``t = 0, 1/fs, ..., duration``.
    """
    n = int(round(segment.duration * fs)) + 1
    if n < 2:
        raise LengthError("segment shorter than two samples")
    t = np.arange(n) / fs
    omega = 2 * np.pi * walker.step_frequency
    amps = np.array([0.0,
                     walker.leg_swing_speed_amp, walker.leg_swing_speed_amp,
                     walker.arm_swing_speed_amp, walker.arm_swing_speed_amp])
    phase = omega * t[None, :] + walker.gait_phase_offsets[:, None]
    swing = np.abs(np.sin(phase)) - 2 / np.pi
    speed = walker.torso_speed + amps[:, None] * swing
    travelled = walker.torso_speed * t[None, :] + amps[:, None] * (
        (_abs_sin_integral(phase) - _abs_sin_integral(walker.gait_phase_offsets)[:, None]) / omega
        - 2 / np.pi * t[None, :])

    u = segment.unit
    pos = np.empty((len(PART_NAMES), n, 3))
    pos[:, :, 0] = segment.start[0] + travelled * u[0]
    pos[:, :, 1] = segment.start[1] + travelled * u[1]
    pos[:, :, 2] = walker.part_heights[:, None]
    vel = np.zeros_like(pos)
    vel[:, :, 0] = speed * u[0]
    vel[:, :, 1] = speed * u[1]
    return Trajectories(t0 + t, pos, vel, walker.part_reflectivity.copy())


def doppler_frequency(speed: float, wavelength: float) -> float:
    """Amplitude-fluctuation frequency ``2 V / lambda`` of a scatterer moving radially."""
    if not wavelength > 0:
        raise ParameterError("wavelength must be positive")
    return 2.0 * speed / wavelength


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def vertical_gain(dz):
    return 1.0 / (1.0 + np.square(dz))


@dataclass
class CsiRecording:
    receiver_id: str
    timestamps: np.ndarray
    csi: np.ndarray  # (n_streams, n_subcarriers, T)
    sampling_rate: float = 1000.0

    def __post_init__(self):
        if self.receiver_id not in RECEIVERS:
            raise ParameterError(f"receiver_id must be one of {RECEIVERS}")
        if self.csi.ndim != 3 or self.csi.shape[2] != self.timestamps.shape[0]:
            raise ParameterError("csi must be (streams, subcarriers, T) matching timestamps")

    @property
    def n_samples(self) -> int:
        return self.timestamps.shape[0]

    def validate(self):
        if not np.all(np.isfinite(self.csi.view(np.float32 if self.csi.dtype == np.complex64 else float))):
            raise NumericError("non-finite CSI values")
        steps = np.diff(self.timestamps)
        if steps.size and not np.allclose(steps, 1.0 / self.sampling_rate, rtol=1e-6, atol=1e-9):
            raise ParameterError("timestamps must be spaced by 1/sampling_rate")


def synthesize_csi(scene: SceneConfig, trajectories: Trajectories | None, reflectivities=None,
                   *, n_samples: int | None = None, t0: float = 0.0, dtype=np.complex64,
                   chunk: int = 8192) -> tuple[CsiRecording, CsiRecording]:
    """Simulate the CSI both receivers capture while the parts follow ``trajectories``.

    Pass ``trajectories=None`` (with ``n_samples``) for an empty room.
    Noise is drawn from generators seeded by ``scene.rng_seed`` and the
    receiver index, so identical inputs give bit-identical output.
    """
    if trajectories is None:
        if n_samples is None:
            raise ParameterError("n_samples is required without trajectories")
        times = t0 + np.arange(n_samples) / scene.sampling_rate
        pos = np.zeros((0, n_samples, 3))
        refl = np.zeros(0)
    else:
        times = trajectories.times
        pos = trajectories.positions
        refl = trajectories.reflectivity if reflectivities is None else np.asarray(reflectivities, float)
        if refl.shape != (pos.shape[0],):
            raise ParameterError("one reflectivity per part required")
        steps = np.diff(times)
        if steps.size and not np.allclose(steps, 1.0 / scene.sampling_rate, rtol=1e-6, atol=1e-12):
            raise ParameterError("trajectories must be sampled at scene.sampling_rate")
    T = times.shape[0]

    devices = np.vstack([scene.tx_position[None], scene.rx_positions])
    for dev in devices:
        if pos.size and np.min(np.linalg.norm(pos - dev, axis=-1)) < MIN_DEVICE_CLEARANCE:
            raise GeometryError("walker passes within 0.1 m of a device")

    if pos.size:
        # path-length rate bounds the Doppler; it must stay below Nyquist
        vel = trajectories.velocities
        rate = np.abs(np.sum(_unit(pos - scene.tx_position) * vel, axis=-1))
        rate = rate + np.max([np.abs(np.sum(_unit(pos - rx) * vel, axis=-1))
                              for rx in scene.rx_positions], axis=0)
        max_f = np.max(rate) / scene.wavelengths.min()
        if scene.sampling_rate <= 2 * max_f:
            raise ParameterError("sampling rate too low for the modelled Doppler")

    static = scene.static_response()
    f = scene.subcarrier_frequencies
    k_wave = 2 * np.pi * f / speed_of_light
    recordings = []
    for r, rx in enumerate(scene.rx_positions):
        rng = np.random.default_rng([scene.rng_seed, r])
        out = np.empty((scene.n_streams, scene.n_subcarriers, T), dtype=dtype)
        for s0 in range(0, T, chunk):
            s1 = min(T, s0 + chunk)
            H = np.broadcast_to(static[r][:, :, None], (scene.n_streams, scene.n_subcarriers, s1 - s0)).copy()
            if pos.size:
                p = pos[:, s0:s1]
                d_tx = np.linalg.norm(p - scene.tx_position, axis=-1)
                d_rx = np.linalg.norm(p - rx, axis=-1)
                amp = refl[:, None] * vertical_gain(p[..., 2] - rx[2]) / (d_tx * d_rx)
                dyn = np.einsum("kt,kti->it", amp,
                                np.exp(-1j * (d_tx + d_rx)[..., None] * k_wave))
                H += dyn[None]
            if scene.noise_std > 0:
                noise = rng.standard_normal((2, scene.n_streams, scene.n_subcarriers, s1 - s0))
                H += (scene.noise_std / np.sqrt(2)) * (noise[0] + 1j * noise[1])
            out[:, :, s0:s1] = H
        recordings.append(CsiRecording(RECEIVERS[r], times.copy(), out, scene.sampling_rate))
    return recordings[0], recordings[1]

"""Binary file formats: CSI recordings, walking profiles and model checkpoints.

All formats are little-endian with a 4-byte magic and a u32 version.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .channel import RECEIVERS, CsiRecording
from .errors import DataError, VersionError
from .model import ModelConfig, ModelParams, expected_shapes
from .profile import WalkingProfile

CSIR_MAGIC = b"CSIR"
WPRF_MAGIC = b"WPRF"
GWMD_MAGIC = b"GWMD"
VERSION = 1

_CSIR_HEADER = struct.Struct("<4sIBHHQd")
_WPRF_HEADER = struct.Struct("<4sIHBBHI")
# input_dim, projected_dim, hidden_dim, n_layers, n_directions_out, n_subjects_out,
# dropout_rate, noise_std_train, rng_seed
_GWMD_HEADER = struct.Struct("<4sI6Iddq")


def _read_exact(f, n):
    data = f.read(n)
    if len(data) != n:
        raise DataError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def write_recording(rec: CsiRecording, path) -> None:
    M, S, T = rec.csi.shape
    with open(path, "wb") as f:
        f.write(_CSIR_HEADER.pack(CSIR_MAGIC, VERSION, RECEIVERS.index(rec.receiver_id), M, S, T,
                                  rec.sampling_rate))
        f.write(np.ascontiguousarray(rec.timestamps, dtype="<f8").tobytes())
        # complex64 memory layout is already interleaved (re, im) float32
        f.write(np.ascontiguousarray(rec.csi, dtype=np.complex64).astype("<c8").tobytes())


def read_recording(path) -> CsiRecording:
    with open(path, "rb") as f:
        magic, version, rx, M, S, T, fs = _CSIR_HEADER.unpack(_read_exact(f, _CSIR_HEADER.size))
        if magic != CSIR_MAGIC:
            raise DataError(f"{path}: not a CSI recording")
        if version != VERSION:
            raise VersionError(f"{path}: unsupported version {version}")
        if rx >= len(RECEIVERS):
            raise DataError(f"{path}: bad receiver id {rx}")
        ts = np.frombuffer(_read_exact(f, 8 * T), dtype="<f8").copy()
        csi = np.frombuffer(_read_exact(f, 8 * M * S * T), dtype="<c8").reshape(M, S, T).copy()
    rec = CsiRecording(RECEIVERS[rx], ts, csi.astype(np.complex64), fs)
    rec.validate()
    return rec


def write_profile(p: WalkingProfile, path) -> None:
    rows, chunks = p.features.shape
    with open(path, "wb") as f:
        f.write(_WPRF_HEADER.pack(WPRF_MAGIC, VERSION, p.subject_label, p.direction_label,
                                  int(p.reversed), rows, chunks))
        f.write(np.ascontiguousarray(p.features, dtype="<f4").tobytes())


def read_profile(path) -> WalkingProfile:
    with open(path, "rb") as f:
        magic, version, subject, direction, rev, rows, chunks = _WPRF_HEADER.unpack(
            _read_exact(f, _WPRF_HEADER.size))
        if magic != WPRF_MAGIC:
            raise DataError(f"{path}: not a walking profile")
        if version != VERSION:
            raise VersionError(f"{path}: unsupported version {version}")
        feats = np.frombuffer(_read_exact(f, 4 * rows * chunks), dtype="<f4").reshape(rows, chunks)
    return WalkingProfile(feats.astype(np.float32), subject, direction, {"file": str(path)}, bool(rev))


def save_checkpoint(params: ModelParams, path, extra: dict | None = None) -> None:
    """Write every model tensor, plus optional extra named arrays (training state)."""
    cfg = params.cfg
    tensors = dict(params)
    for k, v in (extra or {}).items():
        tensors[k] = np.asarray(v)
    with open(path, "wb") as f:
        f.write(_GWMD_HEADER.pack(GWMD_MAGIC, VERSION, cfg.input_dim, cfg.projected_dim,
                                  cfg.hidden_dim, cfg.n_layers, cfg.n_directions_out,
                                  cfg.n_subjects_out, cfg.dropout_rate, cfg.noise_std_train,
                                  cfg.rng_seed))
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode()
            f.write(struct.pack("<H", len(raw)) + raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Return (params, extra) where ``extra`` holds non-model tensors.

    If ``expect`` is given, a stored config that disagrees in any shape
    field raises VersionError.
    """
    with open(path, "rb") as f:
        head = _GWMD_HEADER.unpack(_read_exact(f, _GWMD_HEADER.size))
        magic, version = head[:2]
        if magic != GWMD_MAGIC:
            raise DataError(f"{path}: not a model checkpoint")
        if version != VERSION:
            raise VersionError(f"{path}: unsupported version {version}")
        cfg = ModelConfig(*head[2:8], dropout_rate=head[8], noise_std_train=head[9], rng_seed=head[10])
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, n).decode()
            (rank,) = struct.unpack("<B", _read_exact(f, 1))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            size = int(np.prod(dims)) if rank else 1
            tensors[name] = np.frombuffer(_read_exact(f, 4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    if expect is not None:
        for key in ("input_dim", "projected_dim", "hidden_dim", "n_layers",
                    "n_directions_out", "n_subjects_out"):
            if getattr(expect, key) != getattr(cfg, key):
                raise VersionError(f"checkpoint {key}={getattr(cfg, key)} but config has {getattr(expect, key)}")
    names = expected_shapes(cfg)
    params = ModelParams(cfg, {k: v for k, v in tensors.items() if k in names})
    params.check()
    extra = {k: v for k, v in tensors.items() if k not in names}
    return params, extra


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path

"""Experiment configuration: one YAML file with a section per module."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .channel import SceneConfig, WalkerParams
from .errors import ConfigError, WiGaitError
from .model import ModelConfig
from .pipeline import PathSpec, PreprocessConfig, SessionConfig, default_paths, default_roster
from .train import TrainConfig

SECTIONS = ("seed", "output_dir", "scene", "roster", "paths", "session", "preprocess", "model",
            "train", "evaluation")


@dataclass
class EvaluationConfig:
    n_attention_maps: int = 8
    col_scale: int = 4
    attn_height: int = 8

    def __post_init__(self):
        if self.n_attention_maps < 0 or self.col_scale < 1 or self.attn_height < 1:
            raise ConfigError("evaluation: counts and scales must be positive")


@dataclass
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    roster: list = field(default_factory=default_roster)
    paths: list = field(default_factory=default_paths)
    session: SessionConfig = field(default_factory=SessionConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output_dir: str = "runs/default"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.roster:
            raise ConfigError("roster is empty")
        ids = [w.subject_id for w in self.roster]
        if sorted(ids) != list(range(len(ids))):
            raise ConfigError("subject ids must be 0..n-1")
        if self.model.n_subjects_out != len(self.roster):
            raise ConfigError(f"model.n_subjects_out={self.model.n_subjects_out} but roster has "
                              f"{len(self.roster)} subjects")
        labels = {p.out_label for p in self.paths} | {(p.out_label + 4) % 8 for p in self.paths}
        if len(labels) != 8:
            raise ConfigError(f"paths cover only directions {sorted(labels)}; all 8 are required")
        if self.session.minutes_per_path <= 0:
            raise ConfigError("session.minutes_per_path must be positive")
        if not 0 < self.preprocess.holdout_fraction < 1:
            raise ConfigError("preprocess.holdout_fraction must lie in (0, 1)")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with a new global seed; it also seeds model init and training."""
        return replace(self, seed=int(seed), model=replace(self.model, rng_seed=int(seed)),
                       train=replace(self.train, seed=int(seed)))

    def to_dict(self) -> dict:
        scene = {f.name: _plain(getattr(self.scene, f.name)) for f in fields(self.scene)}
        scene["static_paths"] = [[d, [g.real, g.imag]] for d, g in self.scene.static_paths]
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "scene": scene,
            "roster": {"subjects": [{f.name: _plain(getattr(w, f.name)) for f in fields(w)}
                                    for w in self.roster]},
            "paths": [[list(p.start), list(p.end)] for p in self.paths],
            "session": _section(self.session),
            "preprocess": _section(self.preprocess),
            "model": _section(self.model),
            "train": _section(self.train),
            "evaluation": _section(self.evaluation),
        }


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _section(obj) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}


def _build(cls, raw, name, **fixed):
    raw = dict(raw or {})
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    try:
        return cls(**{**raw, **fixed})
    except ConfigError:
        raise
    except (WiGaitError, TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _roster(raw):
    if raw is None:
        return default_roster()
    if not isinstance(raw, dict):
        raise ConfigError("roster must be a mapping")
    if "subjects" in raw:
        return [_build(WalkerParams, w, f"roster.subjects[{i}]") for i, w in enumerate(raw["subjects"])]
    extra = set(raw) - {"n_subjects", "seed"}
    if extra:
        raise ConfigError(f"roster: unknown keys {sorted(extra)}")
    n = int(raw.get("n_subjects", 8))
    if n < 2:
        raise ConfigError("roster.n_subjects must be >= 2")
    return default_roster(n, int(raw.get("seed", 0)))


def _paths(raw):
    if raw is None or raw == "default":
        return default_paths()
    try:
        return [PathSpec(i, tuple(map(float, s)), tuple(map(float, e))) for i, (s, e) in enumerate(raw)]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"paths: expected a list of [[x, y], [x, y]] pairs ({exc})") from exc


def _scene(raw):
    raw = dict(raw or {})
    if "static_paths" in raw:
        raw["static_paths"] = [(d, complex(*g) if isinstance(g, (list, tuple)) else g)
                               for d, g in raw["static_paths"]]
    return _build(SceneConfig, raw, "scene")


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw or {})
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    pre = dict(raw.get("preprocess") or {})
    for key in ("band", "keep_bins"):
        if key in pre:
            pre[key] = tuple(pre[key])
    roster = _roster(raw.get("roster"))
    model_raw = dict(raw.get("model") or {})
    model_raw.setdefault("n_subjects_out", len(roster))
    seed = int(raw.get("seed", 0))
    model_raw.setdefault("rng_seed", seed)
    train_raw = dict(raw.get("train") or {})
    train_raw.setdefault("seed", seed)
    cfg = ExperimentConfig(
        scene=_scene(raw.get("scene")),
        roster=roster,
        paths=_paths(raw.get("paths")),
        session=_build(SessionConfig, raw.get("session"), "session"),
        preprocess=_build(PreprocessConfig, pre, "preprocess"),
        model=_build(ModelConfig, model_raw, "model"),
        train=_build(TrainConfig, train_raw, "train"),
        evaluation=_build(EvaluationConfig, raw.get("evaluation"), "evaluation"),
        output_dir=str(raw.get("output_dir", "runs/default")),
        seed=seed,
    )
    return cfg


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    """Read a YAML experiment file; ``seed`` (from the command line) wins over the file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg = config_from_dict(raw or {})
    return cfg.with_seed(seed) if seed is not None else cfg

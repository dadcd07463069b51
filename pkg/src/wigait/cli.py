"""Command-line entry point: ``wigait {simulate,preprocess,train,evaluate,attend}``.

Every command reads one YAML experiment file and works inside one output
directory::

    <out>/dataset/manifest.json, recordings/*.csir
    <out>/profiles/manifest.json, splits.json, summary.json, *.wprf
    <out>/model/last.gwmd, best.gwmd, history.csv
    <out>/report/report.json, confusion_*.csv, attention/*.pgm|csv

On failure the last line on stderr is ``error code=<n> kind=<type> message=<json>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import io
from .channel import RECEIVERS
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DataError, NumericError, WiGaitError
from .evaluation import TASKS, EvalReport, export_attention
from .model import ModelParams, predict
from .pipeline import (ProfileStore, Splits, Trip, assemble_splits, profiles_from_session,
                       simulate_session, summarize)
from .profile import WalkingProfile, standardize_features
from .train import TrainConfig, evaluate_set, read_history, train, write_history

log = logging.getLogger("wigait")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
LOCK_NAME = ".lock"


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericError):
        return EXIT_DIVERGENCE
    return EXIT_DATA


@contextmanager
def output_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(f"{out} is locked by another run (remove {lock} if that run is gone)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _write_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise DataError(f"missing {path}; run the previous stage first") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from exc


# --- simulate -----------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    ds = io.ensure_dir(out / "dataset")
    rec_dir = io.ensure_dir(ds / "recordings")
    sessions = []
    for walker in cfg.roster:
        for path in cfg.paths:
            low, high, trips = simulate_session(cfg.scene, walker, path, cfg.session, cfg.seed)
            files = {}
            for rec in (low, high):
                name = f"s{walker.subject_id:02d}_p{path.path_id:02d}_{rec.receiver_id}.csir"
                io.write_recording(rec, rec_dir / name)
                files[rec.receiver_id] = f"recordings/{name}"
            sessions.append({"subject": walker.subject_id, "path": path.path_id,
                             "n_samples": low.n_samples, "files": files,
                             "trips": [t.to_dict() for t in trips]})
            log.info("simulated subject %d path %d: %d trips", walker.subject_id, path.path_id, len(trips))
    manifest = {"seed": cfg.seed, "sampling_rate": cfg.scene.sampling_rate, "sessions": sessions}
    _write_json(manifest, ds / "manifest.json")
    _write_json(cfg.to_dict(), out / "config.json")
    return manifest


# --- preprocess ---------------------------------------------------------------


def profile_name(window_id: int, pair: int) -> str:
    return f"w{window_id:06d}_a{pair}.wprf"


def cmd_preprocess(cfg: ExperimentConfig, out: Path) -> dict:
    ds = out / "dataset"
    manifest = _read_json(ds / "manifest.json")
    prof_dir = io.ensure_dir(out / "profiles")
    windows, trips_all, errors, skipped = [], [], [], 0
    for sess in manifest["sessions"]:
        try:
            low, high = (io.read_recording(ds / sess["files"][r]) for r in RECEIVERS)
        except (DataError, OSError) as exc:
            errors.append({"subject": sess["subject"], "path": sess["path"], "error": str(exc)})
            log.warning("skipping subject %d path %d: %s", sess["subject"], sess["path"], exc)
            continue
        trips = [Trip(**t) for t in sess["trips"]]
        feats, metas, skip = profiles_from_session(low, high, trips, cfg.preprocess)
        for f, meta in zip(feats, metas):
            wid = len(windows)
            for pair in range(f.shape[0]):
                p = WalkingProfile(f[pair], meta["subject"], meta["direction"])
                io.write_profile(p, prof_dir / profile_name(wid, pair))
            windows.append(meta)
        trips_all.extend(trips)
        skipped += len(skip)
    splits = assemble_splits(windows, cfg.preprocess.holdout_fraction, cfg.seed)
    summary = summarize(trips_all, windows, skipped, splits, cfg.preprocess)
    summary["errors"] = errors
    _write_json(summary, prof_dir / "summary.json")
    _write_json({"windows": windows, "pairs": 6}, prof_dir / "manifest.json")
    _write_json({k: [[int(i), bool(r)] for i, r in getattr(splits, k)]
                 for k in ("train", "validation", "test")}, prof_dir / "splits.json")
    if not windows:
        raise DataError("no walking profiles were produced (see profiles/summary.json)")
    log.info("%d windows, %d profiles, splits %s", len(windows), 6 * len(windows), splits.counts())
    return summary


def load_store(out: Path) -> tuple[ProfileStore, Splits]:
    prof_dir = out / "profiles"
    manifest = _read_json(prof_dir / "manifest.json")
    raw_splits = _read_json(prof_dir / "splits.json")
    windows, n_pairs = manifest["windows"], manifest["pairs"]
    if not windows:
        raise DataError("profile store is empty")
    profiles = [io.read_profile(prof_dir / profile_name(w, a))
                for w in range(len(windows)) for a in range(n_pairs)]
    shapes = {p.features.shape for p in profiles}
    if len(shapes) != 1:
        raise DataError(f"profiles disagree in shape: {sorted(shapes)}")
    store = ProfileStore(np.stack([p.features for p in profiles]),
                         np.array([p.subject_label for p in profiles]),
                         np.array([p.direction_label for p in profiles]),
                         np.repeat(np.arange(len(windows)), n_pairs),
                         np.tile(np.arange(n_pairs), len(windows)), windows)
    splits = Splits(*([tuple(e) for e in raw_splits[k]] for k in ("train", "validation", "test")))
    return store, splits


# --- train --------------------------------------------------------------------

_STATE_PREFIX = "state."
_VELOCITY_PREFIX = "velocity."


def _save_training(model_dir: Path, params: ModelParams, state: dict, tcfg: TrainConfig) -> None:
    extra = {_STATE_PREFIX + "epoch": np.array(state["epoch"])}
    if tcfg.momentum:
        extra.update({_VELOCITY_PREFIX + k: v for k, v in state["velocity"].items()})
    io.save_checkpoint(params, model_dir / "last.gwmd", extra)
    io.save_checkpoint(state["best_params"], model_dir / "best.gwmd")
    write_history(state["history"], model_dir / "history.csv")


def _resume_state(model_dir: Path, cfg: ExperimentConfig):
    params, extra = io.load_checkpoint(model_dir / "last.gwmd", expect=cfg.model)
    epoch = int(extra[_STATE_PREFIX + "epoch"])
    history = [r for r in read_history(model_dir / "history.csv") if r["epoch"] <= epoch]
    if len(history) != epoch:
        raise DataError(f"history.csv has {len(history)} rows but the checkpoint is at epoch {epoch}")
    best, _ = io.load_checkpoint(model_dir / "best.gwmd", expect=cfg.model)
    # best score comes from the full-precision history, not a float32 tensor
    scores = [r["val_macro_f1"] for r in history]
    best_epoch = int(np.argmax(scores)) + 1
    dtype = np.dtype(cfg.train.dtype)
    state = {"history": history, "best_score": scores[best_epoch - 1], "best_epoch": best_epoch,
             "best_params": best.astype(dtype), "epoch": epoch}
    velocity = {k[len(_VELOCITY_PREFIX):]: v.astype(dtype) for k, v in extra.items()
                if k.startswith(_VELOCITY_PREFIX)}
    if velocity:
        state["velocity"] = velocity
    return params, state, epoch + 1


def cmd_train(cfg: ExperimentConfig, out: Path, resume: bool = False):
    store, splits = load_store(out)
    model_dir = io.ensure_dir(out / "model")
    if resume and (model_dir / "last.gwmd").exists():
        params, state, start = _resume_state(model_dir, cfg)
        log.info("resuming at epoch %d", start)
    else:
        params = ModelParams.initialize(cfg.model, np.dtype(cfg.train.dtype))
        state, start = None, 1
    train_set, val_set = store.subset(splits.train), store.subset(splits.validation)

    def on_epoch(epoch, p, st):
        _save_training(model_dir, p, st, cfg.train)

    result = train(params, train_set, val_set, cfg.train, start_epoch=start, state=state, on_epoch=on_epoch)
    if result.history:
        best = result.history[result.best_epoch - 1]
        print(f"best epoch {result.best_epoch}: val macro-F1 {best['val_macro_f1']:.4f} "
              f"(direction acc {best['val_acc_dir']:.4f}, gait acc {best['val_acc_gait']:.4f})")
    return result


# --- evaluate / attend --------------------------------------------------------


def _load_best(cfg: ExperimentConfig, out: Path, checkpoint=None) -> ModelParams:
    path = Path(checkpoint) if checkpoint else out / "model" / "best.gwmd"
    if not path.exists():
        raise DataError(f"missing checkpoint {path}; run train first")
    params, _ = io.load_checkpoint(path, expect=cfg.model)
    return params


def _sample_rows(n_total: int, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 7])
    return np.sort(rng.choice(n_total, size=min(n, n_total), replace=False))


def _export_maps(cfg, features_list, weights_list, names, directory) -> list:
    directory = io.ensure_dir(directory)
    ev = cfg.evaluation
    return [export_attention(f, w[0], w[1], directory / name, col_scale=ev.col_scale, attn_height=ev.attn_height)
            for f, w, name in zip(features_list, weights_list, names)]


def cmd_evaluate(cfg: ExperimentConfig, out: Path, checkpoint=None) -> EvalReport:
    params = _load_best(cfg, out, checkpoint)
    store, splits = load_store(out)
    test = store.subset(splits.test)
    if len(test) == 0:
        raise DataError("test split is empty")
    res = evaluate_set(params, test, keep_weights=True)
    n_classes = {"direction": cfg.model.n_directions_out, "gait": cfg.model.n_subjects_out}
    report = EvalReport.from_predictions(
        {"direction": res.true_dir, "gait": res.true_gait},
        {"direction": res.pred_dir, "gait": res.pred_gait}, n_classes)
    report_dir = io.ensure_dir(out / "report")
    rows = _sample_rows(len(test), cfg.evaluation.n_attention_maps, cfg.seed)
    names = [f"test_{int(test.index[r]):06d}" for r in rows]
    report.attention_exports = _export_maps(cfg, [test.raw([r])[0] for r in rows],
                                            [res.weights[r] for r in rows], names, report_dir / "attention")
    report.write(report_dir)
    for task in TASKS:
        s = report.scores[task]
        print(f"{task}: macro-F1 {s.macro_f1:.4f} macro-accuracy {s.macro_accuracy:.4f}")
    return report


def cmd_attend(cfg: ExperimentConfig, out: Path, profiles=(), checkpoint=None) -> list:
    """Attention maps only: for the given WPRF files, or sampled test profiles."""
    params = _load_best(cfg, out, checkpoint)
    if profiles:
        feats = [io.read_profile(p).features for p in profiles]
        names = [Path(p).stem for p in profiles]
    else:
        store, splits = load_store(out)
        test = store.subset(splits.test)
        rows = _sample_rows(len(test), cfg.evaluation.n_attention_maps, cfg.seed)
        feats = [test.raw([r])[0] for r in rows]
        names = [f"test_{int(test.index[r]):06d}" for r in rows]
    weights = []
    for f in feats:
        x = standardize_features(f.astype(np.float32)).T
        _, _, w1, w2 = predict(params, x)
        weights.append((w1, w2))
    exports = _export_maps(cfg, feats, weights, names, out / "attention")
    print(f"wrote {len(exports)} attention maps to {out / 'attention'}")
    return exports


# --- argument handling --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML experiment file")
    common.add_argument("--seed", type=int, default=None, help="override the config's global seed")
    common.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    parser = argparse.ArgumentParser(prog="wigait", description="Synthetic Wi-Fi gait recognition pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="synthesize CSI recordings and a trip manifest")
    sub.add_parser("preprocess", parents=[common], help="build walking profiles and splits")
    p = sub.add_parser("train", parents=[common], help="train the encoder-decoder")
    p.add_argument("--resume", action="store_true", help="continue from model/last.gwmd")
    p = sub.add_parser("evaluate", parents=[common], help="score the test split and export attention maps")
    p.add_argument("--checkpoint", default=None)
    p = sub.add_parser("attend", parents=[common], help="export attention maps only")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("profiles", nargs="*", help="WPRF files (default: sampled test profiles)")
    return parser


def run(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = Path(args.out or cfg.output_dir)
    with output_lock(out):
        if args.command == "simulate":
            cmd_simulate(cfg, out)
        elif args.command == "preprocess":
            cmd_preprocess(cfg, out)
        elif args.command == "train":
            cmd_train(cfg, out, resume=args.resume)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, out, args.checkpoint)
        else:
            cmd_attend(cfg, out, args.profiles, args.checkpoint)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return run(args)
    except (WiGaitError, OSError) as exc:
        code = exit_code(exc)
        print(f"error code={code} kind={type(exc).__name__} message={json.dumps(str(exc))}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())

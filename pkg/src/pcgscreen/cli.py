"""Command-line driver for the screening pipeline.

Subcommands: prepare (dataset -> segment + spectrogram caches), train
(study 1/2), evaluate (checkpoint vs a prepared cache), transfer (study 3
fine-tuning), predict (single WAV verdict) and report (re-render a metrics
CSV).  Exit codes: 0 success, 2 input/configuration error, 3 data-contract
violation, 1 internal failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dsp, metrics, spectrogram, training
from .errors import ConfigError, DataError, RecordingTooShort
from .nn import load_checkpoint, save_checkpoint
from .signal_io import (
    DatasetKind,
    Label,
    build_manifest,
    load_wav,
    resample,
    write_manifest,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3

CACHE_ENV = "PCGSCREEN_CACHE_DIR"
DEFAULT_SEED = 42

# Casts for keys accepted in key=value configuration files.
_CONFIG_CASTS = {
    "epochs": int, "batch_size": int, "seed": int, "k": int, "jobs": int,
    "study": int, "learning_rate": float, "threshold": float,
    "smoke": lambda v: v.lower() in ("1", "true", "yes"),
    "class_weight": lambda v: v.lower() in ("1", "true", "yes"),
    "reinit_head": lambda v: v.lower() in ("1", "true", "yes"),
}


def _read_config_file(path) -> dict:
    """Flat key=value study configuration; '#' starts a comment."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _CONFIG_CASTS.get(key, str)(value)
    return out


def _require(args, *names) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            raise ConfigError(f"missing required option --{name.replace('_', '-')} "
                              f"(or config file key {name})")


def _echo_config(args, extra: dict | None = None) -> dict:
    echo = {k: v for k, v in sorted(vars(args).items())
            if not k.startswith("_") and k != "func" and v is not None}
    if extra:
        echo.update(extra)
    return echo


def _write_echo(out_dir: Path, name: str, echo: dict) -> None:
    lines = [f"{k} = {echo[k]}" for k in sorted(echo)]
    (out_dir / f"config_{name}.txt").write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# prepare
# --------------------------------------------------------------------------

def _spectrogram_cache_dir(cache_dir: Path) -> Path:
    return cache_dir / "spectrograms"


def _guard(fn, *fn_args):
    try:
        return fn(*fn_args)
    except Exception as exc:  # noqa: BLE001 - isolated per file
        return exc


def cmd_prepare(args) -> int:
    _require(args, "cache_dir")
    cache_dir = Path(args.cache_dir)
    manifest = build_manifest([Path(r) for r in args.data_root],
                              DatasetKind(args.dataset))
    if len(manifest) == 0:
        print("no recordings found", file=sys.stderr)
        return EXIT_CONFIG

    cache_dir.mkdir(parents=True, exist_ok=True)
    seg_dir = cache_dir / "segments"
    spc_dir = _spectrogram_cache_dir(cache_dir)
    seg_dir.mkdir(exist_ok=True)
    spc_dir.mkdir(exist_ok=True)
    write_manifest(manifest, cache_dir / "manifest.csv")

    filt = dsp.design_bandpass()
    window = spectrogram.hamming()

    def process(entry):
        rec = load_wav(entry.path)
        rec.source_id = entry.source_id
        rec.dataset = entry.dataset
        rec.label = entry.label
        count = {Label.NORMAL: 0, Label.ABNORMAL: 0}
        for seg in dsp.preprocess_recording(rec, filt):
            dsp.write_segment(seg, seg_dir)
            image = spectrogram.to_image(spectrogram.stft(seg, window))
            spectrogram.write_spectrogram(image, spc_dir / f"{seg.segment_id}.spc")
            count[seg.label] += 1
        return count

    counts = {Label.NORMAL: 0, Label.ABNORMAL: 0}
    failures = []
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        outcomes = list(pool.map(lambda e: _guard(process, e), manifest.entries))
    for entry, outcome in zip(manifest.entries, outcomes):
        if isinstance(outcome, Exception):
            log.warning("skipping %s: %s", entry.path, outcome)
            failures.append((entry.path, outcome))
        else:
            for key, val in outcome.items():
                counts[key] += val

    total = counts[Label.NORMAL] + counts[Label.ABNORMAL]
    print(f"{total} spectrograms ({counts[Label.NORMAL]} normal / "
          f"{counts[Label.ABNORMAL]} abnormal)")
    if failures:
        print(f"{len(failures)} file(s) skipped:", file=sys.stderr)
        for path, exc in failures:
            print(f"  {path}: {exc}", file=sys.stderr)
        if len(failures) == len(manifest):
            return EXIT_DATA
    return EXIT_OK


def load_spectrogram_cache(cache_dir) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Load every cached spectrogram, sorted by filename for determinism."""
    spc_dir = _spectrogram_cache_dir(Path(cache_dir))
    files = sorted(spc_dir.glob("*.spc"))
    if not files:
        raise ConfigError(f"{spc_dir}: no cached spectrograms "
                          f"(run `pcgscreen prepare` first)")
    images, labels, ids = [], [], []
    for f in files:
        img = spectrogram.read_spectrogram(f)
        images.append(img.pixels)
        labels.append(int(img.label))
        ids.append(img.source_id)
    return np.stack(images), np.asarray(labels), ids


# --------------------------------------------------------------------------
# train / evaluate / transfer
# --------------------------------------------------------------------------

def _train_config(args) -> training.TrainConfig:
    return training.TrainConfig(
        epochs=args.epochs, learning_rate=args.learning_rate,
        batch_size=args.batch_size, threshold=args.threshold,
        seed=args.seed, class_weight=args.class_weight)


def _smoke_subset(x, y, per_class: int = 40):
    keep = []
    for cls in np.unique(y):
        keep.extend(np.flatnonzero(y == cls)[:per_class])
    keep = np.sort(np.asarray(keep))
    return x[keep], y[keep]


def _study_rows(result: training.VariantResult):
    return [(o.fold, o.cm, o.report) for o in result.folds]


def _emit_variant(out_dir: Path, study: str, result: training.VariantResult,
                  echo: dict, reference=None) -> None:
    stem = f"{study}_{result.preset}"
    metrics.write_metrics_csv(out_dir / f"metrics_{stem}.csv", _study_rows(result))
    training.write_epoch_csv(out_dir / f"epochs_{stem}.csv",
                             {o.fold: o.records for o in result.folds})
    text = metrics.format_report(
        f"{study} [{result.preset}]", echo, _study_rows(result),
        result.aggregate, reference=reference,
        reference_tolerance=training.REFERENCE_TOLERANCE)
    if result.overfit:
        text += "note: train/test accuracy gap exceeds 0.15 (overfitting)\n"
    (out_dir / f"report_{stem}.txt").write_text(text)


def cmd_train(args) -> int:
    _require(args, "cache_dir", "out_dir")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = _train_config(args)
    k = 1 if args.smoke else args.k
    if args.smoke:
        tc = dataclasses.replace(tc, epochs=1)

    x, y, _ = load_spectrogram_cache(args.cache_dir)
    if args.study == 2:
        if not args.extra_cache_dir:
            raise ConfigError("--study 2 needs --extra-cache-dir for the "
                              "second dataset")
        x2, y2, _ = load_spectrogram_cache(args.extra_cache_dir)
        x, y = np.concatenate([x, x2]), np.concatenate([y, y2])
    if args.smoke:
        x, y = _smoke_subset(x, y)

    echo = _echo_config(args, {"resolved_epochs": tc.epochs, "resolved_k": k})
    _write_echo(out_dir, f"study{args.study}", echo)

    if args.study == 1:
        presets = tuple(args.preset.split(",")) if args.preset else \
            tuple(f"EXP{i}" for i in range(1, 8))
        results = training.run_study1(x, y, tc, k=k, presets=presets)
        for name, result in results.items():
            ref = metrics.MetricsReport(
                accuracy=training.STUDY1_REFERENCE_TEST_ACC.get(name))
            _emit_variant(out_dir, "study1", result, echo, reference=ref)
            save_checkpoint(result.folds[0].result.best,
                            out_dir / f"study1_{name}_fold0.pcgm")
        ranked = sorted(results.items(),
                        key=lambda kv: kv[1].aggregate.mean.accuracy or 0.0,
                        reverse=True)
        print("variant ranking by mean test accuracy:")
        for name, result in ranked:
            acc = result.aggregate.mean.accuracy
            shown = "undefined" if acc is None else f"{100 * acc:.2f}%"
            flag = "  [overfit]" if result.overfit else ""
            print(f"  {name}: {shown}{flag}")
        print(f"{len(results)} metric rows written to {out_dir}")
    else:
        result = training.run_study2(x, y, tc, k=k)
        _emit_variant(out_dir, "study2", result, echo,
                      reference=training.STUDY2_REFERENCE)
        save_checkpoint(result.folds[0].result.best,
                        out_dir / "study2_BEST_fold0.pcgm")
        acc = result.aggregate.mean.accuracy
        print(f"study 2 mean test accuracy: {100 * acc:.2f}%")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _require(args, "cache_dir")
    ck = load_checkpoint(args.checkpoint)
    x, y, _ = load_spectrogram_cache(args.cache_dir)
    cm, rep = training.evaluate_checkpoint(ck, x, y, args.threshold)
    agg = metrics.aggregate_folds([rep])
    echo = _echo_config(args, {"model": ck.config.name})
    print(metrics.format_report(f"evaluate [{ck.config.name}]", echo,
                                [(0, cm, rep)], agg))
    return EXIT_OK


def cmd_transfer(args) -> int:
    _require(args, "cache_dir", "out_dir", "source")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    source = load_checkpoint(args.source)
    x, y, _ = load_spectrogram_cache(args.cache_dir)
    k = 1 if args.smoke else args.k
    epochs = 1 if args.smoke else args.epochs
    if args.smoke:
        x, y = _smoke_subset(x, y)
    frozen = tuple(s.strip() for s in args.freeze.split(",") if s.strip())
    tcfg = training.TransferConfig(frozen=frozen,
                                   learning_rate=args.learning_rate,
                                   epochs=epochs, batch_size=args.batch_size,
                                   threshold=args.threshold, seed=args.seed,
                                   reinit_head=args.reinit_head)
    echo = _echo_config(args, {"frozen_layers": ",".join(frozen),
                               "resolved_epochs": epochs, "resolved_k": k})
    _write_echo(out_dir, "study3", echo)
    result = training.run_study3_transfer(x, y, source, tcfg, k=k)
    _emit_variant(out_dir, "study3", result, echo,
                  reference=training.STUDY3_REFERENCE)
    save_checkpoint(result.folds[0].result.best, out_dir / "study3_fold0.pcgm")
    acc = result.aggregate.mean.accuracy
    print(f"study 3 mean test accuracy: {100 * acc:.2f}% "
          f"(frozen: {', '.join(frozen) or 'none'})")
    return EXIT_OK


# --------------------------------------------------------------------------
# predict / report
# --------------------------------------------------------------------------

def cmd_predict(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model = ck.to_model()
    rec = load_wav(args.wav)
    rec = resample(rec)
    rec = dsp.apply_filter(dsp.design_bandpass(), rec)
    segments = dsp.segment(rec)
    if not segments:
        raise RecordingTooShort(
            f"{args.wav}: {rec.duration:.2f}s after resampling, need >= "
            f"{dsp.SEGMENT_SECONDS}s")
    images = np.stack([spectrogram.segment_to_image(s).pixels for s in segments])
    probs = model.predict_proba(images)
    abnormal_votes = 0
    for i, p in enumerate(probs):
        is_abnormal = p >= args.threshold
        abnormal_votes += int(is_abnormal)
        lo, hi = i * dsp.SEGMENT_SECONDS, (i + 1) * dsp.SEGMENT_SECONDS
        label = "abnormal" if is_abnormal else "normal"
        print(f"segment {i} [{lo}s-{hi}s]: p={p:.4f} ({label})")
    overall = "ABNORMAL" if 2 * abnormal_votes >= len(probs) else "NORMAL"
    print(f"verdict: {overall} ({abnormal_votes}/{len(probs)} abnormal segments)")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = metrics.read_metrics_csv(args.csv)
    agg = metrics.aggregate_folds([rep for _, _, rep in rows])
    print(metrics.format_report(args.study, {"source_csv": args.csv}, rows, agg))
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _add_train_common(p: argparse.ArgumentParser, lr_default: float) -> None:
    p.add_argument("--out-dir")
    p.add_argument("--epochs", type=int, default=110)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=lr_default)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--k", type=int, default=training.K_FOLDS)
    p.add_argument("--class-weight", action="store_true", default=False)
    p.add_argument("--smoke", action="store_true", default=False,
                   help="1 fold, 1 epoch, truncated data")
    p.add_argument("--config", help="key=value study configuration file")


def _merge_config_defaults(p: argparse.ArgumentParser, command: str,
                           config: tuple[str, dict] | None) -> None:
    if config is None or config[0] != command:
        return
    dests = {a.dest for a in p._actions}
    unknown = set(config[1]) - dests
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    p.set_defaults(**config[1])


def build_parser(config: tuple[str, dict] | None = None) -> argparse.ArgumentParser:
    """Build the CLI parser.

    ``config`` is (subcommand, overrides) from a key=value file; the
    overrides become that subcommand's defaults, so explicit flags still
    win over the file.
    """
    parser = argparse.ArgumentParser(
        prog="pcgscreen",
        description="Heart-sound screening pipeline: preprocessing, "
                    "spectrograms, CNN training and prediction.")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    cache_default = os.environ.get(CACHE_ENV)

    p = sub.add_parser("prepare", help="build segment + spectrogram caches")
    p.add_argument("--data-root", nargs="+", required=True)
    p.add_argument("--dataset", choices=[k.value for k in DatasetKind],
                   required=True)
    p.add_argument("--cache-dir", default=cache_default)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_prepare)
    _merge_config_defaults(p, "prepare", config)

    p = sub.add_parser("train", help="run study 1 (variant sweep) or 2 (combined)")
    p.add_argument("--study", type=int, choices=(1, 2), default=1)
    p.add_argument("--cache-dir", default=cache_default)
    p.add_argument("--extra-cache-dir",
                   help="second dataset cache for --study 2")
    p.add_argument("--preset", help="comma-separated subset of EXP1..EXP7")
    _add_train_common(p, lr_default=0.001)
    p.set_defaults(func=cmd_train)
    _merge_config_defaults(p, "train", config)

    p = sub.add_parser("evaluate", help="score a checkpoint on a prepared cache")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache-dir", default=cache_default)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_evaluate)
    _merge_config_defaults(p, "evaluate", config)

    p = sub.add_parser("transfer", help="fine-tune a checkpoint (study 3)")
    p.add_argument("--source", help="pre-trained checkpoint")
    p.add_argument("--cache-dir", default=cache_default)
    p.add_argument("--freeze", default="conv1,conv2,conv3")
    p.add_argument("--reinit-head", action="store_true", default=False)
    _add_train_common(p, lr_default=1e-4)
    p.set_defaults(func=cmd_transfer)
    _merge_config_defaults(p, "transfer", config)

    p = sub.add_parser("predict", help="classify one WAV recording")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("wav")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="re-render a metrics CSV as text")
    p.add_argument("--csv", required=True)
    p.add_argument("--study", default="report")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            # Reparse with file values as defaults: flags still win.
            overrides = _read_config_file(args.config)
            args = build_parser((args.command, overrides)).parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort exit-code mapping
        log.exception("internal failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

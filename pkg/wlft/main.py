from dotenv import load_dotenv

load_dotenv()

import argparse
import csv
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from autograd import Tensor, default_dtype, no_grad
from backbone import tap_max_levels
from checkpoint import load_checkpoint, restore
from config import (
    BackbonePreset,
    RunConfig,
    TapPosition,
    Variant,
    parse_key_values,
)
from dataset import DataPipeline, Manifest, Split, carve_validation, read_manifest
from diagnostics import run_gradcheck
from errors import CheckpointError, ConfigError, MetricError, WltError
from events import (
    EventAction,
    EventSeverity,
    close_event_store,
    initialize_event_store,
    log_event,
)
from metrics import (
    accuracy,
    confusion_table,
    percent,
    roc_auc,
    write_confusion_csv,
    write_metrics_csv,
    write_predictions_csv,
    write_roc_csv,
)
from model import build_model
from preprocessing import hist_equalize, load_image
from synth import haar_energy_baseline, synth_textures
from train import EpochLog, evaluate, repeat_runs, resume, train
from wavelets import WaveletBranch, dawn_branch_forward, dump_subbands, max_levels, wavelet_branch_forward

SWEEP_COLUMNS = ["tap", "levels", "runs", "accuracy_mean", "accuracy_std", "recall_mean", "recall_std"]


def _levels_arg(value: Optional[str]):
    if value is None or value == "auto":
        return value
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"--levels must be an integer or 'auto', got {value!r}")


def _file_keys(path: Optional[str]) -> Dict[str, str]:
    if not path:
        return {}
    try:
        return parse_key_values(Path(path).read_text(encoding="utf-8"), source=path)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def load_run_config(args, manifest: Optional[Manifest] = None, with_levels: bool = True) -> RunConfig:
    """Config file, then CLI flags; num_classes follows the manifest unless the file sets it."""
    overrides = {
        "variant": getattr(args, "variant", None),
        "tap": getattr(args, "tap", None),
        "levels": _levels_arg(getattr(args, "levels", None)) if with_levels else None,
        "epochs": getattr(args, "epochs", None),
        "seed": getattr(args, "seed", None),
        "batch_size": getattr(args, "batch_size", None),
        "lr0": getattr(args, "lr0", None),
        "preset": getattr(args, "preset", None),
        "input_side": getattr(args, "side", None),
    }
    if manifest is not None and "num_classes" not in _file_keys(args.config):
        overrides["num_classes"] = manifest.num_classes
    run = RunConfig.from_file(args.config, overrides)
    if manifest is not None and run.model.num_classes != manifest.num_classes:
        raise ConfigError(
            f"config num_classes={run.model.num_classes} but the manifest has {manifest.num_classes} classes"
        )
    return run


def load_manifest(args) -> Manifest:
    manifest = read_manifest(args.data)
    fraction = getattr(args, "val_fraction", None)
    if fraction and not manifest.has_split(Split.VAL):
        manifest = carve_validation(manifest, fraction, seed=getattr(args, "seed", None) or 0)
        print(f"📦 Carved {len(manifest.rows_for(Split.VAL))} validation rows from train")
    return manifest


def make_pipeline(manifest: Manifest, run: RunConfig, seed: Optional[int] = None) -> DataPipeline:
    backbone = run.model.backbone
    return DataPipeline(
        manifest, backbone.input_side, backbone.input_channels, run.augment,
        seed=run.train.seed if seed is None else seed,
    )


def _print_epoch(entry: EpochLog):
    print(
        f"📈 epoch {entry.epoch:3d}  lr={entry.lr:.3e}  loss={entry.train_loss:.4f} "
        f"(ce {entry.train_ce:.4f}, wt {entry.train_loss_wt:.4f})  "
        f"val_acc={percent(entry.val_acc)}%  val_recall={percent(entry.val_recall)}%"
    )


def cmd_train(args) -> int:
    out = Path(args.out)
    initialize_event_store(out)
    manifest = load_manifest(args)
    run = load_run_config(args, manifest)
    run.write_resolved(out)
    print(
        f"🚀 Training {run.model.variant.value} ({run.model.backbone.preset.value} backbone, "
        f"tap {run.model.tap.value}, levels {run.model.levels}) for {run.train.epochs} epochs"
    )
    log_event(EventAction.RUN_START, out, command="train", config=run.flat())
    pipeline = make_pipeline(manifest, run)

    if args.resume:
        result = resume(Path(args.resume), run, pipeline, out, on_epoch=_print_epoch)
    else:
        with default_dtype(np.dtype(run.train.precision.value)):
            model = build_model(run.model, run.train.seed)
        print(f"🧱 Model has {model.num_parameters()} parameters")
        result = train(model, pipeline, run, out, on_epoch=_print_epoch)

    print(f"✅ Training complete: {result.epochs_completed} epochs, best val acc "
          f"{percent(result.best_val_acc) if result.best_val_acc is not None else 'n/a'}%")
    if result.final_checkpoint:
        print(f"💾 Final checkpoint: {result.final_checkpoint}")
    log_event(EventAction.RUN_COMPLETE, out, command="train", epochs=result.epochs_completed,
              best_val_acc=result.best_val_acc)
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    initialize_event_store(out)
    checkpoint = load_checkpoint(args.checkpoint)
    if args.config:
        run = RunConfig.from_file(args.config)
    else:
        run = RunConfig.from_mapping(checkpoint.meta.config)
    run.write_resolved(out)
    manifest = read_manifest(args.data)
    if manifest.num_classes > run.model.num_classes:
        raise CheckpointError(
            f"checkpoint head has {run.model.num_classes} classes but the manifest has {manifest.num_classes}"
        )
    split = Split(args.split)
    if not manifest.has_split(split):
        raise ConfigError(f"manifest has no {split.value} split")
    pipeline = make_pipeline(manifest, run)

    with default_dtype(np.dtype(run.train.precision.value)):
        model = build_model(run.model, run.train.seed)
        restore(model, checkpoint)
        result = evaluate(model, pipeline, split, run.train.batch_size, run.train.positive_class)

    metrics = {"accuracy": result.accuracy, "recall": result.recall}
    try:
        curve, area = roc_auc(result.scores, result.labels, run.train.positive_class)
        write_roc_csv(out / "roc.csv", curve)
        metrics["auc"] = area
    except MetricError as e:
        print(f"⚠️  ROC skipped: {e}")
        metrics["auc"] = float("nan")
    cm = result.confusion
    metrics["positive_vs_rest_accuracy"] = accuracy(cm)
    metrics.update({"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn})
    write_metrics_csv(out / "metrics.csv", metrics)
    write_confusion_csv(out / "confusion.csv", confusion_table(result.predictions, result.labels, run.model.num_classes))
    write_predictions_csv(out / "predictions.csv", result.paths, result.labels, result.predictions, result.scores)

    print(f"📊 {split.value}: accuracy {percent(result.accuracy)}%  recall {percent(result.recall)}%  "
          f"auc {metrics['auc']:.3f}  (tp={cm.tp} fp={cm.fp} fn={cm.fn} tn={cm.tn})")
    log_event(EventAction.EVAL_COMPLETE, out, split=split.value, **metrics)
    return 0


def cmd_decompose(args) -> int:
    out = Path(args.out)
    initialize_event_store(out)
    levels = _levels_arg(args.levels)
    stem = Path(args.image).stem

    with default_dtype(np.float64), no_grad():
        if args.identity:
            sample = load_image(args.image)
            x = Tensor(sample.pixels[None])
            side = min(x.shape[2], x.shape[3])
            levels = max_levels(side) if levels in (None, "auto") else levels
            if levels < 1:
                raise ConfigError(f"--levels must be at least 1, got {levels}")
            branch = WaveletBranch(sample.channels, levels, np.random.default_rng(0))
            output = branch(x)
        else:
            checkpoint = load_checkpoint(args.checkpoint)
            run = RunConfig.from_mapping(checkpoint.meta.config)
            if not run.model.has_branch:
                raise ConfigError("checkpoint has no wavelet branch to decompose with")
            model = build_model(run.model, run.train.seed).eval()
            restore(model, checkpoint)
            sample = load_image(args.image, side=run.model.backbone.input_side)
            if run.augment.equalize:
                sample = hist_equalize(sample)
            _, tap_feature = model.backbone(Tensor(sample.pixels[None]), run.model.tap)
            levels = run.model.levels if levels in (None, "auto") else levels
            forward = dawn_branch_forward if model.branch.directional else wavelet_branch_forward
            output = forward(tap_feature, levels, model.branch.levels)

    written = dump_subbands(output, stem, out)
    print(f"🌊 Wrote {len(written)} subband images for {levels} level(s) to {out}")
    log_event(EventAction.DECOMPOSE_COMPLETE, out, image=str(args.image), levels=levels, files=len(written))
    return 0


def cmd_gradcheck(args) -> int:
    initialize_event_store(Path(args.out) if args.out else None)
    print(f"🔬 Gradient check: {args.variant} variant, tap {args.tap}, levels {args.levels or 'auto'} (64-bit)")
    levels = _levels_arg(args.levels)
    try:
        groups = run_gradcheck(
            variant=Variant(args.variant), tap=TapPosition(args.tap), levels=None if levels == "auto" else levels,
            seed=args.seed, max_entries=args.max_entries, corrupt_backward=args.corrupt_backward,
        )
    except WltError as e:
        log_event(EventAction.GRADCHECK_RESULT, None, EventSeverity.ERROR, error=e, variant=args.variant)
        if getattr(e, "offenders", None):
            for name, error in e.offenders:
                print(f"❌ {name:<24} max rel error {error:.3e}")
        raise
    for g in groups:
        print(f"✅ {g.group:<24} max rel error {g.max_rel_error:.3e}  ({g.checked} checked, {g.skipped} skipped)")
    log_event(EventAction.GRADCHECK_RESULT, None, variant=args.variant,
              groups={g.group: g.max_rel_error for g in groups})
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    initialize_event_store(out)
    manifest = synth_textures(out, args.classes, args.per_class, args.side, args.seed)
    print(f"🎨 Wrote {len(manifest.rows)} textures ({args.classes} classes) and manifest.csv to {out}")
    metadata = {"classes": args.classes, "per_class": args.per_class, "side": args.side, "seed": args.seed}
    if args.baseline:
        baseline = haar_energy_baseline(manifest)
        print(f"📏 Haar-energy nearest-centroid baseline: {percent(baseline['accuracy'])}% test accuracy")
        metadata["baseline_accuracy"] = baseline["accuracy"]
    log_event(EventAction.SYNTH_COMPLETE, out, **metadata)
    return 0


def _sweep_levels(value: Optional[str], limit: int) -> List[int]:
    if value in (None, "", "all"):
        return list(range(1, limit + 1))
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--levels must be comma-separated integers or 'all', got {value!r}") from e


def cmd_sweep(args) -> int:
    out = Path(args.out)
    initialize_event_store(out)
    manifest = load_manifest(args)
    try:
        taps = [TapPosition(t.strip()) for t in args.taps.split(",")] if args.taps else list(TapPosition)
    except ValueError as e:
        raise ConfigError(f"--taps: {e}") from e
    variant = args.variant or _file_keys(args.config).get("variant", Variant.AWTM.value)
    # resolved without a branch first; a tap with no decomposition level is skipped per cell
    args.tap, args.variant = None, Variant.BACKBONE_ONLY.value
    base = load_run_config(args, manifest, with_levels=False)
    usable = [t for t in taps if tap_max_levels(base.model.backbone, t) >= 1]
    if not usable:
        raise ConfigError(f"none of the swept taps supports a decomposition level: {args.taps}")
    base = base.with_overrides(variant=variant, tap=usable[0].value, levels="auto")
    base.write_resolved(out)

    rows = []
    for tap in taps:
        limit = tap_max_levels(base.model.backbone, tap)
        for levels in _sweep_levels(args.levels, limit):
            if not 1 <= levels <= limit:
                print(f"⚠️  Skipping {tap.value} level {levels} (maximum {limit})")
                continue
            run = base.with_overrides(tap=tap.value, levels=levels)
            cell_dir = out / f"{tap.value}_L{levels}"
            print(f"🧪 {tap.value} level {levels}: {args.repeats} run(s)")
            summary = repeat_runs(run, lambda seed: make_pipeline(manifest, run, seed), args.repeats, cell_dir)
            rows.append([
                tap.value, levels, summary.runs,
                percent(summary.accuracy_mean), percent(summary.accuracy_std),
                percent(summary.recall_mean), percent(summary.recall_std),
            ])
            print(f"   accuracy {percent(summary.accuracy_mean)} ± {percent(summary.accuracy_std)}%")
            log_event(EventAction.SWEEP_CELL_COMPLETE, out, tap=tap.value, levels=levels, **summary.model_dump())

    with (out / "sweep.csv").open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        writer.writerows(rows)
    print(f"✅ Sweep complete: {len(rows)} cell(s) written to {out / 'sweep.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wlft", description="ResNet with an adaptive lifting-wavelet branch")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_flags(p, with_data=True):
        p.add_argument("--config", help="key=value run configuration file")
        if with_data:
            p.add_argument("--data", required=True, help="manifest.csv (path,label,split)")
        p.add_argument("--variant", choices=[v.value for v in Variant])
        p.add_argument("--preset", choices=[b.value for b in BackbonePreset])
        p.add_argument("--side", type=int, help="input side length")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr0", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--val-fraction", type=float, help="carve a stratified val split from train")

    p = sub.add_parser("train", help="train a model")
    model_flags(p)
    p.add_argument("--tap", choices=[t.value for t in TapPosition])
    p.add_argument("--levels", help="decomposition levels or 'auto'")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=Split.TEST.value, choices=[s.value for s in Split])
    p.add_argument("--config", help="override the configuration stored in the checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("decompose", help="dump wavelet subbands of one image")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint")
    source.add_argument("--identity", action="store_true", help="fixed Haar lifting (zero-initialized)")
    p.add_argument("--image", required=True)
    p.add_argument("--levels", help="levels or 'auto'")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_decompose)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check of a small model")
    p.add_argument("--variant", default=Variant.AWTM.value, choices=[v.value for v in Variant])
    p.add_argument("--tap", default=TapPosition.POS2.value, choices=[t.value for t in TapPosition])
    p.add_argument("--levels", default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-entries", type=int, default=6, help="entries sampled per parameter")
    p.add_argument("--out", help="directory for the event log")
    p.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("synth", help="write the synthetic texture dataset")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--baseline", action="store_true", help="report the Haar-energy baseline accuracy")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("sweep", help="tap x level study with repeated seeded runs")
    model_flags(p)
    p.add_argument("--taps", help="comma-separated taps (default all)")
    p.add_argument("--levels", help="comma-separated levels or 'all'")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_sweep, tap=None)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except WltError as e:
        print(f"❌ {type(e).__name__}: {e.message}", file=sys.stderr)
        log_event(EventAction.RUN_FAILED, None, EventSeverity.ERROR, error=e, command=args.command)
        return e.exit_code
    finally:
        close_event_store()


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``nnuzoo <subcommand> ...``.

Exit codes: 0 success, 2 validation failure (bad arguments, unknown
architecture or preset, malformed data), 3 undefined statistical test.
Commands that produce files write ``run_manifest.json`` into their output
directory before any result; ``nnuzoo rerun <manifest>`` replays it.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from functools import partial
from pathlib import Path

import torch

MANIFEST = "run_manifest.json"
EXIT_OK, EXIT_INVALID, EXIT_UNDEFINED = 0, 2, 3
# flag naming the output location of each file-producing command
OUTPUT_FLAG = {"build": "--out", "synth": "--out", "train": "--out", "eval": "--report", "bench": "--out",
               "compare": "--out", "convert": "--out"}


class CommandError(Exception):
    """Validation failure reported with exit code 2."""


def code_version() -> str:
    from . import __version__

    h = hashlib.sha256()
    root = Path(__file__).resolve().parent
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def write_manifest(out_dir, command: str, argv: list[str], args: dict, config: dict | None = None,
                   seed: int | None = None, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = {"command": command, "argv": list(argv), "args": args, "config": config or {}, "seed": seed,
         "code_version": code_version(), "output_dir": str(out)}
    if extra:
        m.update(extra)
    path = out / MANIFEST
    path.write_text(json.dumps(m, sort_keys=True, indent=1, default=str) + "\n")
    return path


def _threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("NNUZOO_THREADS")
        value = int(env) if env else 1
    if value < 1:
        raise CommandError("--threads must be >= 1")
    torch.set_num_threads(value)
    return value


def _arch(name: str) -> str:
    from .models.zoo import ArchitectureId, UnknownArchitectureError

    try:
        return ArchitectureId.parse(name).value
    except UnknownArchitectureError:
        raise CommandError(f"unknown architecture {name!r}") from None


def _preset(name: str) -> str:
    from .models.presets import DATASETS

    if name not in DATASETS:
        raise CommandError(f"unknown preset {name!r} (choose from {', '.join(DATASETS)})")
    return name


def _vars(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def protocol(train_cfg, split_ratio: float, split_seed: int) -> dict:
    """Fields that must be identical across architectures for a fair comparison."""
    return {"split": {"ratio": split_ratio, "seed": split_seed},
            "loss": {"w_dice": train_cfg.w_dice, "w_ce": train_cfg.w_ce},
            "augmentation": train_cfg.augment.to_dict() if train_cfg.augment else None,
            "epochs": train_cfg.epochs, "optimizer": train_cfg.optimizer, "lr": train_cfg.lr}


# ----------------------------------------------------------------------------- commands

def cmd_list(args, argv, out=print):
    from .models import ARCHITECTURES, DATASETS

    out("architectures:")
    for a in ARCHITECTURES:
        out(f"  {a}")
    out("presets:")
    for d in DATASETS.values():
        out(f"  {d.name:12s} {d.patch[0]}x{d.patch[1]}  classes={d.num_classes}  batch={d.batch_size}")
    return EXIT_OK


def cmd_params(args, argv, out=print):
    from .models import build_model, count_params, preset_config, reference_params

    arch, preset = _arch(args.arch), _preset(args.preset)
    cfg = preset_config(arch, preset, tiny=args.tiny)
    n = count_params(build_model(arch, cfg, device="meta"))
    line = f"{arch} {preset}{' (tiny)' if args.tiny else ''}: {n} parameters ({n / 1e6:.2f}M)"
    ref = None if args.tiny else reference_params(arch, preset)
    if ref is not None:
        delta = n / 1e6 - ref
        line += f"; reference {ref:.2f}M, delta {delta:+.2f}M ({delta / ref:+.1%})"
    out(line)
    return EXIT_OK


def cmd_build(args, argv, out=print):
    from .models import build_model, preset_config, save_checkpoint

    arch, preset = _arch(args.arch), _preset(args.preset)
    cfg = preset_config(arch, preset, tiny=args.tiny, seed=args.seed)
    ckpt = Path(args.out)
    write_manifest(ckpt.parent, "build", argv, _vars(args), cfg.to_dict(), args.seed)
    save_checkpoint(build_model(arch, cfg), ckpt)
    out(f"wrote {ckpt}")
    return EXIT_OK


def cmd_synth(args, argv, out=print):
    from .data import SynthSpec, generate_synthetic, save_dataset

    spec = SynthSpec()
    if args.spec:
        try:
            spec = SynthSpec.from_dict(json.loads(Path(args.spec).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise CommandError(f"cannot read synth spec: {e}") from None
    if args.count < 1:
        raise CommandError("--count must be >= 1")
    write_manifest(args.out, "synth", argv, _vars(args), spec.to_dict(), args.seed)
    path = save_dataset(generate_synthetic(spec, args.count, args.seed), args.out)
    out(f"wrote {args.count} samples, manifest {path}")
    return EXIT_OK


def _load_for_preset(data: str, preset: str):
    from .data import load_dataset, preprocess_dataset
    from .models.presets import DATASETS

    ds = load_dataset(data)
    p = DATASETS[preset]
    if ds.num_classes != p.num_classes:
        raise CommandError(f"dataset has {ds.num_classes} classes, preset {preset} expects {p.num_classes}")
    return preprocess_dataset(ds, p.patch)


def _train_cfg(args):
    from .data import AugmentConfig
    from .train import TrainConfig

    base = TrainConfig.sgd_profile if args.optimizer == "sgd" else TrainConfig
    kw = dict(epochs=max(args.epochs, 1), seed=args.seed, w_dice=args.w_dice, w_ce=args.w_ce,
              augment=None if args.no_augment else AugmentConfig())
    if args.batch_size:
        kw["batch_size"] = args.batch_size
    if args.lr is not None:
        kw["lr"] = args.lr
    return base(**kw)


def _train_one(arch, preset, ds, args, out_dir, argv, tiny, log, command="train"):
    from .data import split_dataset
    from .models import build_model, preset_config
    from .train import evaluate, train_loop

    cfg = preset_config(arch, preset, tiny=tiny, seed=args.seed)
    tcfg = _train_cfg(args)
    if not args.batch_size:
        tcfg.batch_size = cfg.batch_size
    write_manifest(out_dir, command, argv, _vars(args), {"model": cfg.to_dict(), "train": tcfg.to_dict()},
                   args.seed, {"protocol": protocol(tcfg, args.split, args.seed)})
    train, val = split_dataset(ds, args.split, args.seed)
    model = build_model(arch, cfg)
    res = train_loop(model, train, val, tcfg, out_dir, log=log)
    model.load_state_dict(res.best_state)
    _, dice, cases = evaluate(model, val, tcfg.batch_size, tcfg.w_dice, tcfg.w_ce)
    _write_cases(Path(out_dir) / "dice_cases.csv", val.ids, cases)
    summary = {"arch": arch, "preset": preset, "best_epoch": res.best_epoch, "best_val_dice": res.best_val_dice,
               "final_val_dice": res.history[-1]["val_dice"], "train_cases": len(train), "val_cases": len(val)}
    (Path(out_dir) / "result.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return model, summary, cases


def _write_cases(path: Path, ids, dices):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["case_id", "dice"])
        for i, d in zip(ids, dices):
            w.writerow([i, repr(float(d))])


def cmd_train(args, argv, out=print):
    arch, preset = _arch(args.arch), _preset(args.preset)
    ds = _load_for_preset(args.data, preset)
    log = None if args.quiet else (lambda r: out(
        f"epoch {r['epoch']:3d} lr {r['lr']:.2e} train {r['train_loss']:.4f} val {r['val_loss']:.4f} "
        f"dice {r['val_dice']:.4f}"))
    _, summary, _ = _train_one(arch, preset, ds, args, args.out, argv, args.tiny, log)
    out(f"best val dice {summary['best_val_dice']:.4f} at epoch {summary['best_epoch']}")
    return EXIT_OK


def cmd_eval(args, argv, out=print):
    from .data import load_dataset, preprocess_dataset, split_dataset
    from .models import load_checkpoint
    from .models.checkpoint import CheckpointError
    from .train import evaluate

    try:
        model = load_checkpoint(args.ckpt)
    except (CheckpointError, FileNotFoundError) as e:
        raise CommandError(f"cannot load checkpoint: {e}") from None
    cfg = model.config
    write_manifest(args.report, "eval", argv, _vars(args), cfg.to_dict(), args.seed)
    ds = load_dataset(args.data)
    if ds.num_classes != cfg.num_classes:
        raise CommandError(f"dataset has {ds.num_classes} classes, checkpoint expects {cfg.num_classes}")
    ds = preprocess_dataset(ds, cfg.input_hw)
    if args.subset == "val":
        ds = split_dataset(ds, args.split, args.seed)[1]
    loss, dice, cases = evaluate(model, ds, args.batch_size)
    rep = Path(args.report)
    _write_cases(rep / "dice_cases.csv", ds.ids, cases)
    (rep / "summary.json").write_text(json.dumps({"arch": cfg.arch, "cases": len(cases), "mean_dice": dice,
                                                   "loss": loss}, sort_keys=True, indent=1) + "\n")
    out(f"{cfg.arch}: mean foreground dice {dice:.4f} over {len(cases)} cases")
    return EXIT_OK


def cmd_bench(args, argv, out=print):
    from .eval import BenchReport, benchmark_model, emit_report, pairwise_wilcoxon
    from .models import ARCHITECTURES, build_model, count_params, preset_config

    archs = [_arch(a) for a in (args.archs.split(",") if args.archs else ARCHITECTURES)]
    preset = _preset(args.preset)
    outdir = Path(args.out)
    write_manifest(outdir, "bench", argv, _vars(args), {"archs": archs, "preset": preset}, args.seed)
    ds = _load_for_preset(args.data, preset) if args.data and args.epochs > 0 else None
    reports, dice = [], {}
    for arch in archs:
        cfg = preset_config(arch, preset, tiny=args.tiny, seed=args.seed)
        arch_dir = outdir / arch
        cases = []
        if ds is not None:
            _, _, cases = _train_one(arch, preset, ds, args, arch_dir, argv, args.tiny, None, "bench")
            dice[arch] = cases
        else:
            tcfg = _train_cfg(args)
            proto = {**protocol(tcfg, args.split, args.seed), "epochs": 0}
            write_manifest(arch_dir, "bench", argv, _vars(args), {"model": cfg.to_dict(), "train": None},
                           args.seed, {"protocol": proto})
        if args.reps > 0:
            timing = benchmark_model(arch, cfg, args.reps, args.warmup, args.batch_size or None, args.seed)
            n = timing.param_count
            out(f"{arch:12s} params {n / 1e6:8.3f}M  fwd {timing.forward_median:9.1f} ms  "
                f"fwd+bwd {timing.step_median:9.1f} ms (IQR {timing.step_iqr:.1f})")
        else:
            timing, n = None, count_params(build_model(arch, cfg, device="meta"))
        reports.append(BenchReport(arch, preset, n, timing, cases))
    pv = pairwise_wilcoxon(dice) if len(dice) > 1 else None
    emit_report(reports, outdir, pvalues=pv)
    if any(r.timing is not None for r in reports):
        (outdir / "timing.json").write_text(
            json.dumps([r.timing.to_dict() for r in reports if r.timing], indent=1) + "\n")
    return EXIT_OK


def read_case_scores(path) -> dict[str, float]:
    try:
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise CommandError(f"cannot read {path}: {e}") from None
    if not rows or "dice" not in rows[0]:
        raise CommandError(f"{path}: expected a CSV with a 'dice' column")
    key = "case_id" if "case_id" in rows[0] else None
    try:
        return {(r[key] if key else str(i)): float(r["dice"]) for i, r in enumerate(rows)}
    except ValueError as e:
        raise CommandError(f"{path}: malformed dice value ({e})") from None


def cmd_compare(args, argv, out=print):
    from .eval import pairwise_wilcoxon
    from .eval.report import pvalue_table, _csv, _md

    if len(args.runs) < 2:
        raise CommandError("compare needs at least two result files")
    scores = {}
    for p in args.runs:
        name = Path(p).parent.name or Path(p).stem
        if name in scores or not name:
            name = str(p)
        scores[name] = read_case_scores(p)
    ids = list(next(iter(scores.values())))
    for name, s in scores.items():
        if sorted(s) != sorted(ids):
            raise CommandError(f"{name}: case ids differ from {next(iter(scores))}")
    if args.out:
        write_manifest(args.out, "compare", argv, _vars(args))
    names, m = pairwise_wilcoxon({n: [s[i] for i in ids] for n, s in scores.items()},
                                 zero_method=args.zero_method)
    header, rows = pvalue_table(names, m)
    out(_md(header, [[r[0], *[("" if v is None else f"{v:.4g}") for v in r[1:]]] for r in rows]).rstrip())
    if args.out:
        (Path(args.out) / "pvalues.csv").write_text(_csv(header, rows))
    return EXIT_OK


def cmd_convert(args, argv, out=print):
    from .data import convert_npy_dir

    preset = _preset(args.preset)
    write_manifest(args.out, "convert", argv, _vars(args))
    path = convert_npy_dir(args.src, args.out, preset, args.name)
    out(f"wrote {path}")
    return EXIT_OK


def cmd_rerun(args, argv, out=print):
    try:
        m = json.loads(Path(args.manifest).read_text())
        old = list(m["argv"])
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise CommandError(f"cannot read manifest: {e}") from None
    if args.out:
        flag = OUTPUT_FLAG.get(m["command"])
        if flag is None or flag not in old:
            raise CommandError(f"cannot redirect output of {m['command']!r}")
        i = old.index(flag)
        target = args.out
        if m["command"] == "build":
            target = str(Path(args.out) / Path(old[i + 1]).name)
        old[i + 1] = target
    return run_command(old, out=out)


# ----------------------------------------------------------------------------- parser

class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    def __init__(self, prog):
        super().__init__(prog, width=100, max_help_position=32)


def _train_flags(p, epochs_default: int):
    p.add_argument("--epochs", type=int, default=epochs_default, help="training epochs")
    p.add_argument("--seed", type=int, default=0, help="seed for init, split, batch order and augmentation")
    p.add_argument("--tiny", action="store_true", help="desk-scale width/depth overrides")
    p.add_argument("--batch-size", type=int, default=0, help="batch size (0: preset value)")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam", help="optimizer profile")
    p.add_argument("--lr", type=float, default=None, help="initial learning rate; None takes the optimizer profile value (default: %(default)s)")
    p.add_argument("--w-dice", type=float, default=1.0, help="dice loss weight")
    p.add_argument("--w-ce", type=float, default=1.0, help="cross-entropy weight")
    p.add_argument("--split", type=float, default=0.8, help="train fraction of the 80/20 split")
    p.add_argument("--no-augment", action="store_true", help="disable flips and rotations")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nnuzoo", formatter_class=_Formatter,
                                 description="Segmentation model zoo: build, train, evaluate, benchmark, compare.")
    ap.add_argument("--threads", type=int, default=None, help="torch threads (env NNUZOO_THREADS, else 1)")
    sub = ap.add_subparsers(dest="command", metavar="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_, formatter_class=_Formatter)
        p.set_defaults(func=func)
        return p

    add("list", cmd_list, "list architectures and dataset presets")

    p = add("params", cmd_params, "parameter count and delta to the reference count")
    p.add_argument("arch", help="architecture id")
    p.add_argument("--preset", default="AbdomenCT", help="dataset preset")
    p.add_argument("--tiny", action="store_true", help="desk-scale width/depth overrides")

    p = add("build", cmd_build, "build an initialized model and write a checkpoint")
    p.add_argument("arch", help="architecture id")
    p.add_argument("--preset", required=True, help="dataset preset")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, default=0, help="initialization seed")
    p.add_argument("--tiny", action="store_true", help="desk-scale width/depth overrides")

    p = add("synth", cmd_synth, "generate a synthetic shapes dataset")
    p.add_argument("--spec", default=None, help="JSON file with SynthSpec fields; None uses the built-in shapes (default: %(default)s)")
    p.add_argument("--count", type=int, default=64, help="number of images")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = add("train", cmd_train, "train one architecture on a dataset")
    p.add_argument("arch", help="architecture id")
    p.add_argument("--data", required=True, help="dataset directory or manifest")
    p.add_argument("--preset", required=True, help="dataset preset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--quiet", action="store_true", help="no per-epoch log")
    _train_flags(p, 20)

    p = add("eval", cmd_eval, "evaluate a checkpoint; writes per-case dice")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory or manifest")
    p.add_argument("--report", required=True, help="output directory")
    p.add_argument("--subset", choices=("all", "val"), default="all", help="evaluate all cases or the val split")
    p.add_argument("--split", type=float, default=0.8, help="train fraction when --subset val")
    p.add_argument("--seed", type=int, default=0, help="split seed when --subset val")
    p.add_argument("--batch-size", type=int, default=8, help="evaluation batch size")

    p = add("bench", cmd_bench, "parameter, step-time (and optionally dice) tables across architectures")
    p.add_argument("--archs", default="", help="comma-separated architectures (default: all)")
    p.add_argument("--preset", default="SynthShapes", help="dataset preset")
    p.add_argument("--reps", type=int, default=5, help="timed repetitions (0: skip timing)")
    p.add_argument("--warmup", type=int, default=1, help="untimed warmup repetitions")
    p.add_argument("--data", default=None, help="dataset directory; with --epochs > 0 each model is trained")
    p.add_argument("--out", required=True, help="output directory")
    _train_flags(p, 0)

    p = add("compare", cmd_compare, "pairwise Wilcoxon signed-rank p-values over per-case dice files")
    p.add_argument("--runs", nargs="+", required=True, help="dice_cases.csv files (one per model)")
    p.add_argument("--zero-method", choices=("wilcox", "pratt"), default="wilcox", help="zero-difference handling")
    p.add_argument("--out", default=None, help="output directory for pvalues.csv")

    p = add("convert", cmd_convert, "convert <id>_image.npy / <id>_label.npy pairs to an NZT1 dataset")
    p.add_argument("--preset", required=True, help="dataset preset providing classes and modality")
    p.add_argument("--src", required=True, help="directory of .npy pairs")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--name", default=None, help="dataset name (default: preset name)")

    p = add("rerun", cmd_rerun, "replay the command recorded in a run manifest")
    p.add_argument("manifest", help="run_manifest.json")
    p.add_argument("--out", default=None, help="redirect outputs to this directory")
    return ap


def run_command(argv=None, out=print) -> int:
    from .data import DataValidationError
    from .eval.stats import UndefinedTestError
    from .models.zoo import UnknownPresetError
    from .tensor_core import ShapeMismatchError

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID
    err = partial(print, file=sys.stderr)
    try:
        _threads(args.threads)
        return args.func(args, argv, out=out)
    except UndefinedTestError as e:
        err(f"error: undefined test: {e}")
        return EXIT_UNDEFINED
    except (CommandError, DataValidationError, UnknownPresetError, ShapeMismatchError, FileNotFoundError,
            ValueError) as e:
        err(f"error: {e}")
        return EXIT_INVALID


def main() -> None:
    sys.exit(run_command())


__all__ = ["MANIFEST", "build_parser", "main", "run_command", "write_manifest"]

"""Command-line entry point.

Subcommands: preprocess, gen-synthetic, pretrain, finetune, eval, gradcheck,
bench. Every run accepts --seed and an optional --config key-value file
(file values < explicit flags), rejects unknown keys, and logs the fully
resolved configuration it ran with. Report-producing commands write figures
next to their delimited outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__, bench, data_io, dsp, montage
from . import model as mdl
from . import train as trn
from . import autodiff as ad


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


# Config-file keys (dotted sections) and their parsers.
def _parse_int_list(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.replace(" ", "").split(",") if x)


KNOWN_KEYS = {
    "model.layers": int,
    "model.embed_dim": int,
    "model.dropout": float,
    "model.patch_len": int,
    "model.mask_ratio": float,
    "model.layer_unit": str,
    "model.mask_token": str,
    "cst.kernels": _parse_int_list,
    "cst.scales": int,
    "ssa.window": int,
    "ssa.heads": int,
    "ssa.ffn_dim": int,
    "dsp.band_lo": float,
    "dsp.band_hi": float,
    "dsp.notch": float,
    "dsp.rate": float,
    "train.steps": int,
    "train.batch_size": int,
    "train.lr": float,
    "train.min_lr": float,
    "train.weight_decay": float,
    "train.epochs": int,
    "train.label_smoothing": float,
}


def load_config_file(path: str) -> dict:
    """Flat `key = value` document with dotted section keys and # comments."""
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip().strip('"')
            if key not in KNOWN_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown configuration key {key!r}")
            try:
                values[key] = KNOWN_KEYS[key](val)
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def _resolve(args: argparse.Namespace, mapping: dict[str, str], defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    resolved = dict(defaults)
    overlay = load_config_file(args.config) if getattr(args, "config", None) else {}
    for key, value in overlay.items():
        if key in mapping:
            resolved[mapping[key]] = value
    for dest in mapping.values():
        flag_value = getattr(args, dest, None)
        if flag_value is not None:
            resolved[dest] = flag_value
    return resolved


def _log_resolved(resolved: dict, out_dir: str | None) -> None:
    as_json = json.dumps(
        {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(resolved.items())},
        sort_keys=True,
    )
    print(f"resolved-config: {as_json}")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "resolved_config.json"), "w", encoding="utf-8") as fh:
            fh.write(as_json + "\n")


_MODEL_KEYMAP = {
    "model.layers": "layers",
    "model.embed_dim": "embed_dim",
    "model.dropout": "dropout",
    "model.patch_len": "patch_len",
    "model.mask_ratio": "mask_ratio",
    "model.layer_unit": "layer_unit",
    "model.mask_token": "mask_token",
    "cst.kernels": "kernels",
    "cst.scales": "scales",
    "ssa.window": "window",
    "ssa.heads": "heads",
    "ssa.ffn_dim": "ffn_dim",
}

_MODEL_DEFAULTS = {
    "layers": 12, "embed_dim": 200, "dropout": 0.1, "patch_len": 200,
    "mask_ratio": 0.5, "layer_unit": "pair", "mask_token": "zero",
    "kernels": (1, 3, 5), "scales": None, "window": 5, "heads": 8, "ffn_dim": 800,
}


def _model_config(resolved: dict, max_channels: int, max_segments: int) -> mdl.ModelConfig:
    kernels = tuple(resolved["kernels"])
    scales = resolved.get("scales")
    if scales is not None and scales != len(kernels):
        raise UsageError(f"cst.scales={scales} disagrees with {len(kernels)} kernels")
    return mdl.ModelConfig(
        layers=resolved["layers"], embed_dim=resolved["embed_dim"], kernels=kernels,
        window=resolved["window"], heads=resolved["heads"], ffn_dim=resolved["ffn_dim"],
        dropout=resolved["dropout"], patch_len=resolved["patch_len"],
        mask_ratio=resolved["mask_ratio"], layer_unit=resolved["layer_unit"],
        mask_token=resolved["mask_token"],
        max_channels=max_channels, max_segments=max_segments,
    )


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.add_argument("--kernels", type=_parse_int_list, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--ffn-dim", dest="ffn_dim", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--patch-len", dest="patch_len", type=int, default=None)
    p.add_argument("--mask-ratio", dest="mask_ratio", type=float, default=None)
    p.add_argument("--layer-unit", dest="layer_unit", choices=("pair", "single"), default=None)
    p.add_argument("--mask-token", dest="mask_token", choices=("zero", "learnable"), default=None)


def _load_split(index: data_io.DatasetIndex, split: str, resolved: dict):
    """Load, standardize, and patch every recording of a split."""
    out = []
    for path, label in index.split(split):
        rec = data_io.read_recording(path)
        patched = dsp.standardize(
            rec, band_lo=resolved["band_lo"], band_hi=resolved["band_hi"],
            notch=resolved["notch"] if resolved["notch"] > 0 else None,
            rate=resolved["rate"], patch_len=resolved["patch_len"],
        )
        out.append((patched, label))
    return out


_DSP_KEYMAP = {
    "dsp.band_lo": "band_lo", "dsp.band_hi": "band_hi",
    "dsp.notch": "notch", "dsp.rate": "rate", "model.patch_len": "patch_len",
}
_DSP_DEFAULTS = {"band_lo": 0.3, "band_hi": 75.0, "notch": 60.0, "rate": 200.0,
                 "patch_len": 200}


def _add_dsp_flags(p: argparse.ArgumentParser, with_patch_len: bool = False) -> None:
    p.add_argument("--band-lo", dest="band_lo", type=float, default=None)
    p.add_argument("--band-hi", dest="band_hi", type=float, default=None)
    p.add_argument("--notch", type=float, default=None, help="mains Hz; 0 disables")
    p.add_argument("--rate", type=float, default=None)
    if with_patch_len:
        p.add_argument("--patch-len", dest="patch_len", type=int, default=None)


# -- subcommand handlers -------------------------------------------------------

def cmd_preprocess(args) -> int:
    resolved = _resolve(args, _DSP_KEYMAP, _DSP_DEFAULTS)
    _log_resolved(resolved, None)
    rec = data_io.read_recording(args.input)
    rec = dsp.filter_signal(rec, resolved["band_lo"], resolved["band_hi"],
                            resolved["notch"] if resolved["notch"] > 0 else None)
    rec = dsp.resample(rec, resolved["rate"])
    rec = dsp.normalize_amplitude(rec)
    if rec.num_samples < resolved["patch_len"]:
        raise dsp.TooShort(
            f"standardized recording has {rec.num_samples} samples, "
            f"shorter than one {resolved['patch_len']}-sample patch"
        )
    data_io.write_recording(rec, args.output)
    print(f"wrote standardized recording to {args.output} "
          f"({rec.num_samples // resolved['patch_len']} patches of {resolved['patch_len']})")
    return 0


def cmd_gen_synthetic(args) -> int:
    resolved = {
        "count": args.count, "duration": args.duration, "rate": args.rate,
        "noise": args.noise, "seed": args.seed, "channels": args.channels,
    }
    _log_resolved(resolved, args.out)
    labels = montage.diverse_montage(args.channels)
    spec = data_io.two_class_spec(
        channel_labels=tuple(labels), duration_s=args.duration,
        sample_rate=args.rate, noise_level=args.noise, seed=args.seed,
    )
    index = data_io.write_synthetic_dataset(args.out, spec, args.count)
    print(f"wrote {args.count} recordings to {args.out} "
          f"(splits {index.sizes()[0]}/{index.sizes()[1]}/{index.sizes()[2]})")
    return 0


_TRAIN_KEYMAP = {
    "train.steps": "steps", "train.batch_size": "batch_size", "train.lr": "lr",
    "train.min_lr": "min_lr", "train.weight_decay": "weight_decay",
    "train.epochs": "epochs", "train.label_smoothing": "label_smoothing",
}


def cmd_pretrain(args) -> int:
    defaults = dict(_MODEL_DEFAULTS, **_DSP_DEFAULTS,
                    steps=200, batch_size=16, lr=5e-4, min_lr=1e-5,
                    weight_decay=5e-2, epochs=40, label_smoothing=0.1)
    resolved = _resolve(args, {**_MODEL_KEYMAP, **_DSP_KEYMAP, **_TRAIN_KEYMAP}, defaults)
    resolved["seed"] = args.seed
    _log_resolved(resolved, args.out)
    index = data_io.build_dataset(args.data)
    samples = [p for p, _ in _load_split(index, "train", resolved)]
    if not samples:
        raise ValueError("no training recordings in the dataset")
    first_rec = data_io.read_recording(index.train[0][0])
    rm = montage.build_region_map(list(first_rec.labels))
    C, n = samples[0].num_channels, samples[0].num_segments
    cfg = _model_config(resolved, max_channels=C, max_segments=n)
    model = mdl.build_model(cfg, rm, seed=args.seed)
    model.channel_labels = first_rec.labels
    pcfg = trn.PretrainConfig(
        steps=resolved["steps"], batch_size=resolved["batch_size"],
        max_lr=resolved["lr"], min_lr=resolved["min_lr"],
        weight_decay=resolved["weight_decay"], cycle_epochs=resolved["epochs"],
        seed=args.seed, dropout=resolved["dropout"] > 0,
    )
    model.meta = {"dsp": {k: resolved[k] for k in ("band_lo", "band_hi", "notch", "rate")}}
    result = trn.pretrain(model, samples, pcfg)
    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, "loss_trace.csv")
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr"])
        for i, (loss, lr) in enumerate(zip(result.loss_trace, result.lr_trace)):
            writer.writerow([i, repr(loss), repr(lr)])
    mdl.save_checkpoint(model, os.path.join(args.out, "checkpoint.nsck"))
    from . import report
    report.save_loss_curve(result.loss_trace, os.path.join(args.out, "loss_curve.png"),
                           title="Masked-reconstruction pretraining loss")
    print(f"pretrain: {len(result.loss_trace)} steps, "
          f"initial loss {result.loss_trace[0]:.4f}, final loss {result.loss_trace[-1]:.4f}")
    print(f"artifacts in {args.out}: checkpoint.nsck, loss_trace.csv, loss_curve.png")
    return 0


def cmd_finetune(args) -> int:
    defaults = dict(_MODEL_DEFAULTS, **_DSP_DEFAULTS,
                    steps=200, batch_size=64, lr=1e-4, min_lr=1e-6,
                    weight_decay=1e-2, epochs=50, label_smoothing=0.1)
    model = None
    if args.checkpoint:
        model = mdl.load_checkpoint(args.checkpoint)
        # The checkpoint's preprocessing settings are the defaults; explicit
        # flags or a config file still override them.
        defaults.update(model.meta.get("dsp", {}))
    resolved = _resolve(args, {**_MODEL_KEYMAP, **_DSP_KEYMAP, **_TRAIN_KEYMAP}, defaults)
    resolved["seed"] = args.seed
    if model is not None:
        resolved["patch_len"] = model.config.patch_len  # segmentation must match the encoder
    _log_resolved(resolved, args.out)
    index = data_io.build_dataset(args.data)
    train_set = _load_split(index, "train", resolved)
    val_set = _load_split(index, "val", resolved)
    test_set = _load_split(index, "test", resolved)
    if args.head == "classification":
        to_label = int
    else:
        to_label = float
    train_set = [(p, to_label(l)) for p, l in train_set]
    val_set = [(p, to_label(l)) for p, l in val_set]
    test_set = [(p, to_label(l)) for p, l in test_set]
    if model is None:
        first_rec = data_io.read_recording(index.train[0][0])
        rm = montage.build_region_map(list(first_rec.labels))
        C, n = train_set[0][0].num_channels, train_set[0][0].num_segments
        cfg = _model_config(resolved, max_channels=C, max_segments=n)
        model = mdl.build_model(cfg, rm, seed=args.seed)
        model.channel_labels = first_rec.labels
        model.meta = {"dsp": {k: resolved[k] for k in ("band_lo", "band_hi", "notch", "rate")}}
    fcfg = trn.FinetuneConfig(
        epochs=resolved["epochs"], batch_size=resolved["batch_size"],
        max_lr=resolved["lr"], min_lr=resolved["min_lr"],
        weight_decay=resolved["weight_decay"],
        label_smoothing=resolved["label_smoothing"], seed=args.seed,
        dropout=resolved["dropout"] > 0,
    )
    result = trn.finetune(model, train_set, val_set, test_set, args.head, fcfg,
                          num_classes=args.classes)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump({"task": result.report.task, "best_epoch": result.best_epoch,
                   **result.report.metrics}, fh, indent=1, sort_keys=True)
    with open(os.path.join(args.out, "history.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(result.history[0].keys()))
        writer.writeheader()
        writer.writerows(result.history)
    mdl.save_checkpoint(result.model, os.path.join(args.out, "checkpoint.nsck"))
    from . import report
    report.save_history_curves(result.history, os.path.join(args.out, "history.png"))
    print("test metrics: " + json.dumps(result.report.metrics, sort_keys=True))
    print(f"artifacts in {args.out}: checkpoint.nsck, metrics.json, history.csv, history.png")
    return 0


def cmd_eval(args) -> int:
    model = mdl.load_checkpoint(args.checkpoint)
    defaults = dict(_DSP_DEFAULTS)
    defaults.update(model.meta.get("dsp", {}))
    resolved = _resolve(args, _DSP_KEYMAP, defaults)
    resolved["seed"] = args.seed
    resolved["patch_len"] = model.config.patch_len
    _log_resolved(resolved, args.out)
    if model.task_head is None:
        raise ValueError("checkpoint has no task head; fine-tune first")
    index = data_io.build_dataset(args.data)
    to_label = int if model.task_head.kind == "classification" else float
    dataset = [(p, to_label(l)) for p, l in _load_split(index, args.split, resolved)]
    report_obj = trn.evaluate_model(model, model.task_head, dataset)
    print(f"{args.split} metrics: " + json.dumps(report_obj.metrics, sort_keys=True))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8") as fh:
            json.dump({"task": report_obj.task, **report_obj.metrics}, fh,
                      indent=1, sort_keys=True)
    return 0


def cmd_gradcheck(args) -> int:
    defaults = dict(_MODEL_DEFAULTS)
    defaults.update(layers=2, embed_dim=16, kernels=(1, 3), window=4, heads=2,
                    ffn_dim=32, dropout=0.0, patch_len=20, mask_ratio=0.5)
    resolved = _resolve(args, _MODEL_KEYMAP, defaults)
    resolved.update(seed=args.seed, channels=args.channels, segments=args.segments,
                    eps=args.eps, tolerance=args.tolerance)
    _log_resolved(resolved, None)
    labels = montage.diverse_montage(args.channels)
    rm = montage.build_region_map(list(labels))
    cfg = _model_config(resolved, max_channels=args.channels, max_segments=args.segments)
    model = mdl.build_model(cfg, rm, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    if not args.no_randomize:
        # Zero-initialized tables put layer norm at a degenerate point where
        # central differences lose accuracy; check at a generic point instead.
        for p in model.parameters():
            p.data = p.data + 0.02 * rng.standard_normal(p.shape)
    patches = dsp.PatchedSignal(
        rng.standard_normal((args.channels, args.segments, cfg.patch_len)) * 0.5,
        patch_len=cfg.patch_len,
    )
    mask = mdl.sample_mask(args.segments, cfg.mask_ratio, args.seed + 1)

    def objective():
        pred = mdl.forward_pretrain(model, patches, mask)
        return mdl.reconstruction_loss(pred, patches, mask).value

    params = model.parameters()
    t0 = time.time()
    err = ad.finite_diff_check(objective, params, eps=args.eps, grad_floor=1e-4)
    elapsed = time.time() - t0
    count = sum(p.data.size for p in params)
    status = "PASS" if err <= args.tolerance else "FAIL"
    print(f"gradcheck: {count} parameters, max rel err {err:.3e} "
          f"(tolerance {args.tolerance:g}), {elapsed:.1f} s -> {status}")
    return 0 if err <= args.tolerance else 2


def cmd_bench(args) -> int:
    resolved = {"channels": args.channels, "segments": list(args.segments),
                "d": args.d, "window": args.window, "repeats": args.repeats,
                "seed": args.seed}
    _log_resolved(resolved, args.out)
    sizes = [(args.channels, n) for n in args.segments]
    rep = bench.run_benchmark(
        sizes, rm_builder=synthetic_region_map, d=args.d, w=args.window,
        repeats=args.repeats, seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    bench.write_csv(rep, os.path.join(args.out, "bench.csv"))
    from . import report
    report.save_bench_figure(rep, os.path.join(args.out, "bench_scaling.png"))
    for variant, slope in sorted(rep.slopes.items()):
        print(f"{variant}: wall-clock log-log slope {slope:.2f}, "
              f"score-entry slope {rep.count_slopes[variant]:.2f}")
    largest = max(n for _, n in sizes)
    d_cell = {c.variant: c.median_ns for c in rep.cells if c.segments == largest}
    if "dense" in d_cell and "ssa" in d_cell:
        print(f"dense/ssa wall-clock ratio at n={largest}: "
              f"{d_cell['dense'] / d_cell['ssa']:.2f}x")
    print(f"artifacts in {args.out}: bench.csv, bench_scaling.png")
    return 0


def synthetic_region_map(C: int) -> montage.RegionMap:
    """Contiguous 5-region partition with sizes proportional to the 19-channel montage."""
    proportions = np.array([7, 5, 3, 2, 2], dtype=float) / 19.0
    counts = np.maximum(1, np.round(proportions * C).astype(int))
    while counts.sum() > C:
        counts[np.argmax(counts)] -= 1
    while counts.sum() < C:
        counts[np.argmin(counts)] += 1
    counts = counts[counts > 0]
    regions = []
    start = 0
    for region, size in zip(montage.REGION_ORDER, counts):
        regions.append((region, tuple(range(start, start + size))))
        start += size
    return montage.RegionMap(regions=tuple(regions))


# -- parser ----------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="neuroscale", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", type=str, default=None,
                       help="key-value config file with dotted keys")

    p = sub.add_parser("preprocess", help="standardize a recording file")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_dsp_flags(p, with_patch_len=True)
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("gen-synthetic", help="write a planted-class synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--channels", type=int, default=19)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--rate", type=float, default=200.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.set_defaults(handler=cmd_gen_synthetic)

    p = sub.add_parser("pretrain", help="masked-reconstruction pretraining")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory with manifest.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--min-lr", dest="min_lr", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None, help="cosine cycle length")
    _add_model_flags(p)
    _add_dsp_flags(p)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised fine-tuning with a task head")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None, help="pretrained checkpoint; fresh init if omitted")
    p.add_argument("--head", choices=("classification", "regression"), default="classification")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--min-lr", dest="min_lr", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    _add_model_flags(p)
    _add_dsp_flags(p)
    p.set_defaults(handler=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a fine-tuned checkpoint on a split")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", default=None)
    _add_dsp_flags(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model gradient")
    common(p)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--segments", type=int, default=8)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--no-randomize", dest="no_randomize", action="store_true",
                   help="check at the exact freshly-initialized parameters")
    _add_model_flags(p)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("bench", help="attention complexity benchmark")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--segments", type=_parse_int_list, default=(16, 32, 64, 128, 256))
    p.add_argument("--d", type=int, default=200)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(handler=cmd_bench)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"neuroscale: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures exit 2
        print(f"neuroscale: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

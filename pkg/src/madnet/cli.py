"""Command-line entry points: train, denoise, eval, analyze-scales, freq-swap.

Exit codes: 0 success, 1 runtime fault, 2 usage error.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import frequency_swap, scale_analysis, trend_ok
from .checkpoint import CheckpointError, load_checkpoint, restore_trainer, save_trainer
from .data import (
    Dataset,
    DatasetManifest,
    ImageFormatError,
    add_awgn,
    list_images,
    load_image,
    parse_kv,
    quantize,
    sample_seed,
    save_image,
    to_channels,
    write_resolved,
)
from .losses import LossConfig, format_db, psnr, ssim
from .model import ABLATION_ROWS, LOSS_ROW_FLAGS, ModelConfig, ablation_variant, build_model
from .train import LOG_FIELDS, Schedule, Trainer, TrainingError, TrainingLog

log = logging.getLogger("madnet")

DTYPES = {"f32": np.float32, "f64": np.float64}

# Training presets.  ``lr`` and ``iters`` feed the schedule; the full-scale
# presets are exposed for completeness and are far beyond desk budgets.
PRESETS = {
    "synthetic-desk": dict(
        base_channels=16, stages=4, blocks=(1, 1, 1, 1), heads=(1, 1, 2, 2),
        patch=64, batch=4, sigma_range=(0.0, 50.0), mode="synthetic",
        schedule="cosine", lr=1e-3, min_lr=1e-6, step_every=100_000, iters=500,
    ),
    "synthetic-full": dict(
        base_channels=32, stages=4, blocks=(2, 2, 2, 2), heads=(1, 2, 4, 8),
        patch=128, batch=8, sigma_range=(0.0, 50.0), mode="synthetic",
        schedule="step_half", lr=1e-4, min_lr=0.0, step_every=100_000, iters=600_000,
    ),
    "real-full": dict(
        base_channels=32, stages=4, blocks=(2, 2, 2, 2), heads=(1, 2, 4, 8),
        patch=128, batch=8, sigma_range=(0.0, 50.0), mode="paired",
        schedule="cosine", lr=2e-4, min_lr=1e-6, step_every=100_000, iters=600_000,
    ),
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _global_flags():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    g.add_argument("--config", help="key=value file; explicit flags win")
    g.add_argument("--dtype", choices=sorted(DTYPES), default="f32", help="model precision")
    g.add_argument("--threads", type=int, default=None, help="worker threads for numeric kernels")
    return p


def build_parser():
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="madnet", description="Multi-scale dual-domain image denoiser.")
    parser.add_argument("--version", action="version", version=f"madnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--preset", choices=sorted(PRESETS), default="synthetic-desk")
    t.add_argument("--data", help="image directory (clean/ or noisy/+gt/ layout)")
    t.add_argument("--manifest", help="dataset manifest file instead of --data")
    t.add_argument("--out", help="output directory")
    t.add_argument("--iters", type=int, help="total training iterations")
    t.add_argument("--batch", type=int)
    t.add_argument("--patch", type=int)
    t.add_argument("--mode", choices=("synthetic", "paired"))
    t.add_argument("--sigma", type=float, help="fixed noise level (0-255 scale)")
    t.add_argument("--sigma-range", type=float, nargs=2, metavar=("LOW", "HIGH"))
    t.add_argument("--lr", type=float, help="base learning rate")
    t.add_argument("--min-lr", type=float)
    t.add_argument("--schedule", choices=("cosine", "step_half"))
    t.add_argument("--step-every", type=int)
    t.add_argument("--channels", type=int, choices=(1, 3), default=3, help="image channels")
    t.add_argument("--base-channels", type=int)
    t.add_argument("--stages", type=int)
    t.add_argument("--blocks", type=int, nargs="+")
    t.add_argument("--heads", type=int, nargs="+")
    t.add_argument("--ablation", choices=ABLATION_ROWS, default="full")
    t.add_argument("--scale-weights", type=float, nargs="+")
    t.add_argument("--clip-norm", type=float, help="global gradient-norm clip (off by default)")
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--fixed-samples", action="store_true", help="same crops and noise every iteration")
    t.add_argument("--checkpoint-every", type=int, default=0, help="save every K iterations (0: final only)")
    t.add_argument("--report-every", type=int, default=50)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("denoise", parents=[common], help="denoise one image")
    d.add_argument("--checkpoint", help="trained checkpoint")
    d.add_argument("--input", help="noisy image (PNG/PGM/PPM)")
    d.add_argument("--output", help="where to write the restored image")
    d.add_argument("--reference", help="clean image; prints PSNR/SSIM when given")
    d.set_defaults(func=cmd_denoise)

    e = sub.add_parser("eval", parents=[common], help="mean PSNR/SSIM over a test set")
    e.add_argument("--checkpoint")
    e.add_argument("--data", help="clean images, or a noisy/+gt/ directory")
    e.add_argument("--sigmas", type=float, nargs="+", default=[15.0, 25.0, 30.0, 50.0])
    e.add_argument("--mode", choices=("auto", "synthetic", "paired"), default="auto")
    e.add_argument("--out", help="directory for metrics.csv and the resolved config")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze-scales", parents=[common], help="noise impact at successive scales")
    a.add_argument("--image")
    a.add_argument("--sigma", type=float, default=25.0)
    a.add_argument("--levels", type=int, default=4)
    a.add_argument("--out", help="directory for scales.csv and the resolved config")
    a.set_defaults(func=cmd_analyze_scales)

    f = sub.add_parser("freq-swap", parents=[common], help="swap low-frequency bands between two images")
    f.add_argument("--clean")
    f.add_argument("--degraded", help="degraded image; synthesised from --sigma when omitted")
    f.add_argument("--sigma", type=float, default=25.0)
    f.add_argument("--ratio", type=float, default=0.125, help="low-pass half-extent ratio")
    f.add_argument("--out", help="output directory")
    f.set_defaults(func=cmd_freq_swap)
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _convert(action, raw):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return str(raw).strip().lower() in ("1", "true", "yes", "on")
    conv = action.type or str
    if action.nargs in ("+", "*") or isinstance(action.nargs, int):
        return [conv(v) for v in str(raw).replace(",", " ").split()]
    return conv(raw)


def config_defaults(subparser, path):
    """Read a key=value file into defaults for ``subparser``."""
    try:
        items = parse_kv(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read --config {path}: {exc}") from exc
    by_key = {}
    for action in subparser._actions:
        by_key[action.dest] = action
        for opt in action.option_strings:
            by_key[opt.lstrip("-")] = action
    out = {}
    for key, raw in items.items():
        if key in ("command", "version", "model_config"):
            continue
        action = by_key.get(key) or by_key.get(key.replace("_", "-"))
        if action is None or action.dest in ("help", "config"):
            raise UsageError(f"--config {path}: unknown key {key!r}")
        if raw == "":
            out[action.dest] = None
            continue
        try:
            out[action.dest] = _convert(action, raw)
        except ValueError as exc:
            raise UsageError(f"--config {path}: bad value for {key!r}: {raw!r}") from exc
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = _subparser(parser, args.command)
        try:
            sub.set_defaults(**config_defaults(sub, args.config))
        except UsageError as exc:
            sub.error(str(exc))
        args = parser.parse_args(argv)
    args._parser = _subparser(parser, args.command)
    return args


def _format_value(v):
    if isinstance(v, (list, tuple)):
        return " ".join(_format_value(x) for x in v)
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def resolved_items(args, **extra):
    """Every parsed option, suitable for feeding back through ``--config``."""
    items = {"command": args.command, "version": __version__}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "config", "command") or k.startswith("_"):
            continue
        items[k] = _format_value(v)
    items.update({k: _format_value(v) for k, v in extra.items()})
    return items


def _require(args, *names):
    missing = [n for n in names if getattr(args, n.lstrip("-").replace("-", "_")) is None]
    if missing:
        raise UsageError("the following arguments are required: " + ", ".join(missing))


def _existing(path, what, directory=False):
    p = Path(path)
    if directory and not p.is_dir():
        raise UsageError(f"{what}: not a directory: {path}")
    if not directory and not p.is_file():
        raise UsageError(f"{what}: no such file: {path}")
    return p


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    threadpool_limits(n)


def _load_checkpoint(path):
    _existing(path, "--checkpoint")
    return load_checkpoint(path)


def _load(path, what, channels=None):
    _existing(path, what)
    img = load_image(path).data
    return img if channels is None else to_channels(img, channels)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _pick(value, default):
    return default if value is None else value


def _train_setup(args):
    preset = PRESETS[args.preset]
    _require(args, "--out")
    if args.data is None and args.manifest is None:
        raise UsageError("the following arguments are required: --data (or --manifest)")
    if args.manifest is not None:
        manifest = DatasetManifest.load(_existing(args.manifest, "--manifest"))
    else:
        _existing(args.data, "--data", directory=True)
        if args.sigma is not None:
            sigma_range = (args.sigma, args.sigma)
        else:
            sigma_range = tuple(_pick(args.sigma_range, preset["sigma_range"]))
        manifest = DatasetManifest(
            root=args.data,
            mode=_pick(args.mode, preset["mode"]),
            sigma_range=sigma_range,
            patch=_pick(args.patch, preset["patch"]),
            seed=args.seed,
            augment=not args.no_augment,
            resample=not args.fixed_samples,
            channels=args.channels,
        )
    stages = _pick(args.stages, preset["stages"])
    blocks = args.blocks or (list(preset["blocks"]) if stages == preset["stages"] else [1] * stages)
    heads = args.heads or (list(preset["heads"]) if stages == preset["stages"] else [1] * stages)
    cfg = ModelConfig(
        base_channels=_pick(args.base_channels, preset["base_channels"]),
        stages=stages,
        blocks_per_stage=tuple(blocks),
        heads_per_stage=tuple(heads),
        in_channels=manifest.channels,
    )
    cfg = ablation_variant(cfg, args.ablation).validate()
    weights = args.scale_weights or [1.0] * stages
    loss_cfg = LossConfig(scale_weights=weights, **LOSS_ROW_FLAGS.get(args.ablation, {}))
    iters = _pick(args.iters, preset["iters"])
    if iters < 0:
        raise UsageError("--iters must be non-negative")
    sched = Schedule(
        kind=_pick(args.schedule, preset["schedule"]),
        base_lr=_pick(args.lr, preset["lr"]),
        step_every=_pick(args.step_every, preset["step_every"]),
        min_lr=_pick(args.min_lr, preset["min_lr"]),
        total=max(iters, 1),
    )
    manifest.check_levels(stages)
    return manifest, cfg, loss_cfg, sched, iters, _pick(args.batch, preset["batch"])


def _write_log(path, rows, keep_before=None):
    previous = []
    if keep_before is not None and path.exists():
        with open(path, newline="") as fh:
            previous = [r for r in csv.DictReader(fh) if int(r["iter"]) < keep_before]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        w.writerows(previous)
        for r in rows:
            w.writerow({k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in LOG_FIELDS})


def cmd_train(args):
    try:
        manifest, cfg, loss_cfg, sched, iters, batch = _train_setup(args)
        dataset = Dataset(manifest)
    except (ValueError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(
        out / "resolved_config.txt",
        resolved_items(args, model_config=json.dumps(cfg.to_dict(), sort_keys=True)),
    )
    if args.resume:
        ckpt = _load_checkpoint(args.resume)
        trainer = restore_trainer(ckpt, dataset)
    else:
        model = build_model(cfg, seed=args.seed, dtype=DTYPES[args.dtype])
        trainer = Trainer(model, dataset, loss_cfg, sched, batch=batch, clip_norm=args.clip_norm)
    start = trainer.iteration
    log.info(
        "training %d parameters, iterations %d..%d", trainer.model.num_parameters(), start, iters
    )
    history = TrainingLog()
    every = args.checkpoint_every

    def on_step(tr):
        if every and tr.iteration % every == 0 and tr.iteration < iters:
            save_trainer(out / f"ckpt_{tr.iteration:07d}.madn", tr)

    try:
        trainer.run(max(iters - start, 0), args.report_every, history, on_step)
    finally:
        _write_log(out / "train_log.csv", history.rows, keep_before=start if args.resume else None)
    save_trainer(out / "final.madn", trainer)
    if len(history):
        print(f"iteration {trainer.iteration}: loss {history.rows[-1]['loss_total']:.6f}")
    print(f"wrote {out / 'final.madn'}")
    return 0


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def _pad_amount(n, f):
    return (-n) % f


def _reflect_pad(img, ph, pw):
    # reflect needs pad < extent; repeat-edge style mirroring covers tiny images
    mode = "reflect" if ph < img.shape[0] and pw < img.shape[1] else "symmetric"
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode=mode)


def restore_image(model, img):
    """Run ``model`` on an (H, W, C) image of any extent via reflect pad and crop."""
    h, w = img.shape[:2]
    f = 2 ** (model.cfg.stages - 1)
    ph, pw = _pad_amount(h, f), _pad_amount(w, f)
    padded = img
    while padded.shape[0] < h + ph or padded.shape[1] < w + pw:
        need_h = min(h + ph - padded.shape[0], padded.shape[0])
        need_w = min(w + pw - padded.shape[1], padded.shape[1])
        padded = _reflect_pad(padded, need_h, need_w)
    x = padded.transpose(2, 0, 1)[None].astype(model.dtype)
    out = model.denoise(x)
    return out[0].transpose(1, 2, 0)[:h, :w].astype(np.float64)


def cmd_denoise(args):
    _require(args, "--checkpoint", "--input", "--output")
    ckpt = _load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    noisy = _load(args.input, "--input", model.cfg.in_channels)
    if args.reference:
        _existing(args.reference, "--reference")
    restored = restore_image(model, noisy)
    save_image(restored, args.output)
    write_resolved(str(args.output) + ".resolved.txt", resolved_items(args))
    print(f"wrote {args.output} ({noisy.shape[1]}x{noisy.shape[0]})")
    if args.reference:
        ref = _load(args.reference, "--reference", model.cfg.in_channels)
        written = _load(args.output, "--output", model.cfg.in_channels)
        if ref.shape != written.shape:
            raise UsageError(f"--reference extents {ref.shape[:2]} differ from input {written.shape[:2]}")
        print(f"PSNR {format_db(psnr(written, ref))} dB  SSIM {ssim(written, ref):.4f}")
    return 0


def _eval_pairs(args, channels):
    root = _existing(args.data, "--data", directory=True)
    mode = args.mode
    if mode == "auto":
        mode = "paired" if (root / "gt").is_dir() and (root / "noisy").is_dir() else "synthetic"
    if mode == "paired":
        ds = Dataset(DatasetManifest(root=str(root), mode="paired", channels=channels))
        return mode, [(p, n) for p, n in zip(ds.clean_paths, ds.noisy_paths)]
    clean_dir = root / "clean" if (root / "clean").is_dir() else root
    return mode, [(p, None) for p in list_images(clean_dir)]


def cmd_eval(args):
    _require(args, "--checkpoint", "--data")
    ckpt = _load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    channels = model.cfg.in_channels
    try:
        mode, pairs = _eval_pairs(args, channels)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    if not pairs:
        raise RuntimeError(f"no images found under {args.data}")
    if any(s < 0 for s in args.sigmas):
        raise UsageError("--sigmas must be non-negative")
    rows = []
    levels = [None] if mode == "paired" else args.sigmas
    for sigma in levels:
        ps, ss = [], []
        for idx, (clean_path, noisy_path) in enumerate(pairs):
            clean = _load(clean_path, "--data", channels)
            if noisy_path is not None:
                noisy = _load(noisy_path, "--data", channels)
            else:
                noisy = add_awgn(clean, sigma, sample_seed(args.seed, round(sigma * 1000), idx))
            # scored as the 8-bit image denoise would write
            restored = quantize(restore_image(model, noisy)) / 255.0
            ps.append(psnr(restored, clean))
            ss.append(ssim(restored, clean))
        rows.append(("real" if sigma is None else f"{sigma:g}", float(np.mean(ps)), float(np.mean(ss))))
    print(f"{'sigma':>6}  {'PSNR':>7}  {'SSIM':>6}")
    for label, p, s in rows:
        print(f"{label:>6}  {format_db(p):>7}  {s:6.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "psnr", "ssim", "images"])
            for label, p, s in rows:
                w.writerow([label, repr(p), repr(s), len(pairs)])
        write_resolved(out / "resolved_config.txt", resolved_items(args))
    return 0


# ---------------------------------------------------------------------------
# analyses
# ---------------------------------------------------------------------------


def cmd_analyze_scales(args):
    _require(args, "--image")
    if not args.sigma > 0:
        raise UsageError("--sigma must be positive")
    if args.levels < 1:
        raise UsageError("--levels must be >= 1")
    clean = _load(args.image, "--image")
    try:
        rows = scale_analysis(clean, args.sigma, args.levels, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"{'Scale':>6}  {'MSE':>10}  {'PSNR':>7}  {'SSIM':>6}")
    for r in rows:
        print(f"{r.scale:>6g}  {r.mse:10.3e}  {format_db(r.psnr):>7}  {r.ssim:6.4f}")
    if not trend_ok(rows):
        print("warning: PSNR does not rise toward coarser scales for this image", file=sys.stderr)
    items = resolved_items(args)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "scales.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scale", "mse", "psnr", "ssim"])
            for r in rows:
                w.writerow([repr(r.scale), repr(r.mse), repr(r.psnr), repr(r.ssim)])
        write_resolved(out / "resolved_config.txt", items)
    else:
        print("# resolved config")
        for k, v in items.items():
            print(f"# {k}={v}")
    return 0


def cmd_freq_swap(args):
    _require(args, "--clean", "--out")
    if not 0 <= args.ratio <= 1:
        raise UsageError("--ratio must lie in [0, 1]")
    clean = _load(args.clean, "--clean")
    if args.degraded:
        degraded = _load(args.degraded, "--degraded", clean.shape[2])
    else:
        degraded = add_awgn(clean, args.sigma, args.seed)
    if degraded.shape != clean.shape:
        raise UsageError(f"image extents differ: {clean.shape[:2]} vs {degraded.shape[:2]}")
    res = frequency_swap(clean, degraded, args.ratio)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(clean, out / "clean.png")
    save_image(degraded, out / "degraded.png")
    save_image(res.hybrid_high_noise, out / "hybrid_high_freq_noise.png")
    save_image(res.hybrid_low_noise, out / "hybrid_low_freq_noise.png")
    report = res.report(clean, degraded)
    write_resolved(out / "report.txt", {k: _format_value(v) for k, v in report.items()})
    write_resolved(out / "resolved_config.txt", resolved_items(args))
    print(f"degraded vs clean:                {format_db(report['psnr_degraded'])} dB")
    print(f"clean lows + degraded highs:      {format_db(report['psnr_hybrid_high_freq_noise'])} dB")
    print(f"degraded lows + clean highs:      {format_db(report['psnr_hybrid_low_freq_noise'])} dB")
    e0, e1 = report["energy_originals"], report["energy_hybrids"]
    print(f"spectral energy originals/hybrids: {e0:.6g} / {e1:.6g}")
    return 0


# ---------------------------------------------------------------------------


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        _set_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        args._parser.print_usage(sys.stderr)
        print(f"madnet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, CheckpointError, ImageFormatError, OSError, ValueError, RuntimeError) as exc:
        print(f"madnet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

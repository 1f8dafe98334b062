"""Command-line surface.

Commands: gradcheck, train-seg, train-cifar, eval, synth-gen,
syncbn-verify, bench. Exit codes: 0 success, 1 validation failure,
2 numerical-check failure, 3 I/O error.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import BACKEND
from .augment import AugmentConfig
from .checkpoint import load_checkpoint
from .checks import run_gradcheck_suite, verify_syncbn
from .config import load_config, parse_config_text, write_config
from .data import cifar, synthseg
from .networks import (BackboneConfig, CifarNetConfig, EncNetConfig, build_cifar_net,
                       build_encnet, build_fcn)
from .trainer import (TrainingDiverged, evaluate_segmentation, train_cifar,
                      train_segmentation)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


SEG_SCHEMA = {
    "model.variant": "encnet",        # fcn | encnet
    "model.k": 32,
    "model.widths": "16,32,48,64",
    "model.blocks": "1,1,1,1",
    "model.stem_width": 16,
    "loss.alpha": 0.2,
    "optim.base_lr": 0.02,
    "optim.epochs": 10,
    "optim.batch_size": 8,
    "optim.weight_decay": 1e-4,
    "data.path": "",
    "data.crop": 64,
    "data.augment": False,
    "data.ignore_label": 255,
    "syncbn.devices": 0,
    "seed": 0,
}

CIFAR_SCHEMA = {
    "model.variant": "plain",         # plain | se | encoding
    "model.k": 16,
    "model.width": 16,
    "optim.base_lr": 0.1,
    "optim.epochs": 30,
    "optim.batch_size": 128,
    "optim.weight_decay": 5e-4,
    "data.path": "",
    "data.limit": 0,
    "data.augment": True,
    "seed": 0,
}

SYNTH_SCHEMA = {
    "data.train": 2000,
    "data.val": 500,
    "data.size": 64,
    "seed": 0,
}


def _ints(text):
    return tuple(int(v) for v in text.split(","))


def _read_config(args, schema):
    cfg = dict(schema)
    if args.config:
        cfg = load_config(args.config, schema)
    for item in args.set or []:
        cfg = parse_config_text(item, {**schema, **cfg})
    return cfg


def _build_seg_model(cfg, num_classes, dtype=np.float32):
    backbone = BackboneConfig(stage_widths=_ints(cfg["model.widths"]),
                              blocks_per_stage=_ints(cfg["model.blocks"]),
                              stem_width=cfg["model.stem_width"])
    if cfg["model.variant"] == "fcn":
        return build_fcn(backbone, num_classes, seed=cfg["seed"], dtype=dtype)
    if cfg["model.variant"] == "encnet":
        return build_encnet(EncNetConfig(backbone=backbone, num_classes=num_classes,
                                         codewords=cfg["model.k"],
                                         se_loss_weight=cfg["loss.alpha"]),
                            seed=cfg["seed"], dtype=dtype)
    raise ValueError(f"model.variant must be fcn or encnet, "
                     f"got {cfg['model.variant']!r}")


def cmd_gradcheck(args):
    if args.precision != 64:
        raise ValueError("gradient checking requires --precision 64 "
                         "(finite differences are unreliable in float32)")
    ok, results = run_gradcheck_suite(tolerance=args.tolerance)
    for name, err, passed in results:
        print(f"{name:24s} max rel err {err:.3e}  "
              f"{'ok' if passed else 'FAIL'}")
    if not ok:
        print(f"gradient check FAILED (tolerance {args.tolerance:g})")
        return EXIT_NUMERIC
    print(f"all {len(results)} checks passed (tolerance {args.tolerance:g})")
    return EXIT_OK


def cmd_train_seg(args):
    cfg = _read_config(args, SEG_SCHEMA)
    if not cfg["data.path"]:
        raise ValueError("data.path must point at a directory containing "
                         "train.ckpt and val.ckpt (see synth-gen)")
    data_dir = Path(cfg["data.path"])
    train = synthseg.load_dataset(data_dir / "train.ckpt")
    val = synthseg.load_dataset(data_dir / "val.ckpt")
    num_classes = train[3]["num_classes"]
    model = _build_seg_model(cfg, num_classes)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(out_dir / "config.resolved", cfg)
    aug = AugmentConfig(crop_size=cfg["data.crop"],
                        ignore_label=cfg["data.ignore_label"]) \
        if cfg["data.augment"] else None
    history, ckpt = train_segmentation(
        model, (train[0], train[1]), (val[0], val[1]),
        num_classes=num_classes, epochs=cfg["optim.epochs"],
        batch_size=cfg["optim.batch_size"], base_lr=cfg["optim.base_lr"],
        out_dir=out_dir, seed=cfg["seed"], weight_decay=cfg["optim.weight_decay"],
        se_alpha=cfg["loss.alpha"], ignore_label=cfg["data.ignore_label"],
        augment_cfg=aug, syncbn_devices=cfg["syncbn.devices"],
        log_wall=args.wall_clock)
    last = history[-1]
    print(f"epoch {last['epoch']}: pixAcc {last['pix_acc']:.4f} "
          f"mIoU {last['miou']:.4f}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def cmd_train_cifar(args):
    cfg = _read_config(args, CIFAR_SCHEMA)
    if not cfg["data.path"]:
        raise ValueError("data.path must point at a directory containing "
                         "train.bin and test.bin in the 3073-byte record format")
    data_dir = Path(cfg["data.path"])
    tr_images, tr_labels = cifar.read_cifar_file(data_dir / "train.bin")
    te_images, te_labels = cifar.read_cifar_file(data_dir / "test.bin")
    limit = cfg["data.limit"]
    if limit:
        tr_images, tr_labels = tr_images[:limit], tr_labels[:limit]
    model = build_cifar_net(CifarNetConfig(variant=cfg["model.variant"],
                                           width=cfg["model.width"],
                                           codewords=cfg["model.k"]),
                            seed=cfg["seed"], dtype=np.float32)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(out_dir / "config.resolved", cfg)
    history, ckpt = train_cifar(
        model, (cifar.standardize(tr_images), tr_labels),
        (cifar.standardize(te_images), te_labels),
        epochs=cfg["optim.epochs"], batch_size=cfg["optim.batch_size"],
        base_lr=cfg["optim.base_lr"], out_dir=out_dir, seed=cfg["seed"],
        weight_decay=cfg["optim.weight_decay"], augment=cfg["data.augment"],
        log_wall=args.wall_clock)
    last = history[-1]
    print(f"epoch {last['epoch']}: test error {1 - last['accuracy']:.4f}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def cmd_eval(args):
    arrays, extra = load_checkpoint(args.checkpoint)
    val = synthseg.load_dataset(Path(args.data) / "val.ckpt")
    num_classes = val[3]["num_classes"]
    cfg = dict(SEG_SCHEMA)
    cfg_path = Path(args.checkpoint).parent / "config.resolved"
    if cfg_path.exists():
        cfg = load_config(cfg_path, SEG_SCHEMA)
    model = _build_seg_model(cfg, num_classes)
    model.load_state_arrays(arrays)
    scales = [float(s) for s in args.scales.split(",")] if args.scales else None
    report, _ = evaluate_segmentation(model, val[0], val[1], num_classes,
                                      scales=scales)
    print(report)
    return EXIT_OK


def cmd_synth_gen(args):
    cfg = _read_config(args, SYNTH_SCHEMA)
    spec = synthseg.SynthSegSpec(image_size=cfg["data.size"],
                                 num_train=cfg["data.train"],
                                 num_val=cfg["data.val"], seed=cfg["seed"])
    out_dir = Path(args.out)
    paths = synthseg.write_dataset(spec, out_dir)
    write_config(out_dir / "config.resolved", cfg)
    _, masks, contexts, _ = synthseg.load_dataset(paths["train"])
    counts, worst = synthseg.audit_balance(masks, contexts)
    print(f"train pixel counts per class: {counts.tolist()}")
    print(f"worst paired ambiguous-class imbalance: {worst:.3f}")
    with_ctx, without = synthseg.self_test(spec)
    print(f"oracle ambiguous mIoU with context {with_ctx:.3f}, "
          f"without {without:.3f}")
    if worst >= 0.2 or with_ctx <= 0.95 or without > 0.55:
        print("generator property check FAILED")
        return EXIT_NUMERIC
    print(f"dataset written to {out_dir}")
    return EXIT_OK


def cmd_syncbn_verify(args):
    max_div, results = verify_syncbn(max_devices=args.devices)
    for label, div in results:
        print(f"{label:14s} max divergence {div:.3e}")
    tol = 1e-10
    print(f"max divergence vs monolithic: {max_div:.3e} (tolerance {tol:g})")
    if max_div >= tol:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_bench(args):
    num_classes = 6
    backbone = BackboneConfig()
    fcn = build_fcn(backbone, num_classes, dtype=np.float32).eval()
    enc = build_encnet(EncNetConfig(backbone=backbone, num_classes=num_classes),
                       dtype=np.float32).eval()
    x = np.random.default_rng(0).standard_normal((1, 3, 64, 64)) \
        .astype(np.float32)

    def clock(model):
        from .autodiff import Tensor, no_grad
        with no_grad():
            model(Tensor(x))  # warm up
            t0 = time.perf_counter()
            for _ in range(args.repeats):
                model(Tensor(x))
        return (time.perf_counter() - t0) / args.repeats

    t_fcn, t_enc = clock(fcn), clock(enc)
    ratio = enc.num_parameters() / fcn.num_parameters()
    print(f"kernel backend: {BACKEND}")
    print(f"FCN   forward {t_fcn * 1e3:8.2f} ms  ({fcn.num_parameters():,} params)")
    print(f"EncNet forward {t_enc * 1e3:7.2f} ms  ({enc.num_parameters():,} params)")
    print(f"EncNet/FCN parameter ratio: {ratio:.4f}")

    from ._kernels import numpy_backend
    try:
        from ._kernels import numba_backend
    except ImportError:
        numba_backend = None
    img = np.random.default_rng(1).standard_normal((4, 16, 32, 32)) \
        .astype(np.float32)

    def clock_kernel(mod):
        mod.im2col(img, 3, 3, 1, 1, 30, 30)  # warm up / jit compile
        t0 = time.perf_counter()
        for _ in range(args.repeats):
            mod.im2col(img, 3, 3, 1, 1, 30, 30)
        return (time.perf_counter() - t0) / args.repeats

    t_np = clock_kernel(numpy_backend)
    print(f"im2col numpy  {t_np * 1e3:8.3f} ms")
    if numba_backend is not None:
        t_nb = clock_kernel(numba_backend)
        print(f"im2col numba  {t_nb * 1e3:8.3f} ms  "
              f"(speedup x{t_np / t_nb:.2f})")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ctxseg",
        description="Context-encoding segmentation toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--precision", type=int, default=64)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    for name, fn in (("train-seg", cmd_train_seg), ("train-cifar", cmd_train_cifar)):
        p = sub.add_parser(name, help=f"run the {name.split('-')[1]} harness")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="key=value",
                       help="override one config entry")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--wall-clock", action="store_true",
                       help="log real wall time (breaks byte-identical reruns)")
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="evaluate a segmentation checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--scales", help="comma-separated multi-scale factors")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("synth-gen", help="generate the synthetic dataset")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="key=value")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth_gen)

    p = sub.add_parser("syncbn-verify", help="shard-invariance sweep")
    p.add_argument("--devices", type=int, default=4)
    p.set_defaults(fn=cmd_syncbn_verify)

    p = sub.add_parser("bench", help="forward timing and parameter ratios")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FileNotFoundError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

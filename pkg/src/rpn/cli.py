"""Command-line interface: train, encode, decode, eval, bdrate, params, dump-uncertainty."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from rpn.container import parse_container, serialize_container
from rpn.data import (
    TEST_SPLIT_SEED,
    TEST_SPLIT_SIZE,
    ingest_directory,
    load_image,
    make_synthetic_corpus,
    save_image,
)
from rpn.entropy import DecodeError
from rpn.errors import ConfigError, FormatError, InsufficientLayersError
from rpn.evaluation import (
    count_parameters,
    evaluate_codec,
    image_to_tensor,
    read_curve_csv,
    tensor_to_uint8,
    write_curve_csv,
    write_report,
)
from rpn.metrics import bd_rate
from rpn.pyramid import PyramidConfig, build_pyramid_inputs, check_aligned, decode_scalable, encode_scalable
from rpn.training import TrainConfig, Trainer, level_sizes, load_checkpoint
from rpn.uncertainty import reverse_pyramid_pass

EXIT_FORMAT = 2
EXIT_CONFIG = 3


def _train_config(args):
    overrides = {"seed": args.seed} if args.seed is not None else {}
    if args.config:
        cfg = TrainConfig.load(args.config, **overrides)
    else:
        cfg = TrainConfig(pyramid=PyramidConfig.default(args.mode or "spatial", args.levels),
                          **overrides)
    if args.steps:
        cfg = TrainConfig(**{**cfg.__dict__, "steps": tuple(args.steps)})
    if args.mode and args.mode != cfg.pyramid.mode:
        raise ConfigError(f"--mode {args.mode} conflicts with config mode {cfg.pyramid.mode}")
    return cfg


def cmd_train(args):
    cfg = _train_config(args)
    images = None
    if args.data:
        crops = ingest_directory(args.data, cfg.crop, cfg.seed)
        images = np.stack([next(crops) for _ in range(cfg.corpus_size)])
    trainer = Trainer(cfg, images=images, out_dir=args.out)
    try:
        trainer.run()
    finally:
        trainer.close()
    print(f"checkpoint written to {args.out}")


def _read_image(path):
    try:
        return load_image(path)
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read image {path}: {e}") from e


def cmd_encode(args):
    model, cfg = load_checkpoint(args.model)
    if args.mode and args.mode != cfg.pyramid.mode:
        raise ConfigError(f"model is {cfg.pyramid.mode}-scalable, not {args.mode}")
    x = image_to_tensor(_read_image(args.input))
    container, _ = encode_scalable(x, model)
    data = serialize_container(container)
    Path(args.out).write_bytes(data)
    sizes = ", ".join(str(r.length) for r in container.records)
    print(f"{len(data)} bytes ({container.header_size()} header; segments {sizes})")


def cmd_decode(args):
    model, _ = load_checkpoint(args.model)
    data = Path(args.input).read_bytes()
    x_hat = decode_scalable(parse_container(data), args.level, model)
    save_image(args.out, tensor_to_uint8(x_hat))
    print(f"level {args.level}: {x_hat.shape[-2]}x{x_hat.shape[-1]} written to {args.out}")


def _eval_images(args, cfg):
    if args.images:
        root = Path(args.images)
        files = sorted(p for p in root.iterdir() if p.is_file())
        if not files:
            raise ConfigError(f"no images in {root}")
        return [_read_image(f) for f in files]
    return list(make_synthetic_corpus(args.count, cfg.crop, args.seed))


def cmd_eval(args):
    _, cfg = load_checkpoint(args.model)
    curve, records = evaluate_codec(args.model, _eval_images(args, cfg), label=args.label)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report.jsonl", curve, records)
    write_curve_csv(out / "curve.csv", curve)
    for p in curve.points:
        print(f"level {p.level}: {p.bpp:.4f} bpp  {p.psnr:.2f} dB  MS-SSIM {p.ms_ssim:.4f}")


def cmd_bdrate(args):
    anchor = read_curve_csv(args.anchor)
    test = read_curve_csv(args.test)
    value = bd_rate(anchor, test, args.metric)
    print(f"BD-rate ({args.metric}): {value:+.4f}%")


def cmd_params(args):
    total, breakdown = count_parameters(args.model)
    for name, n in breakdown.items():
        print(f"{name:24s} {n:10d}")
    print(f"{'total':24s} {total:10d}")


def cmd_dump_uncertainty(args):
    model, cfg = load_checkpoint(args.model)
    x = image_to_tensor(_read_image(args.input))
    check_aligned(x, cfg.pyramid)
    with torch.no_grad():
        states = model(x, noise=False)
        refs = build_pyramid_inputs(x, cfg.pyramid)
        maps = reverse_pyramid_pass([s.y_hat for s in states], model.heads, level_sizes(refs))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for level, u in enumerate(maps):
        m = u[0, 0].numpy()
        span = m.max() - m.min()
        gray = (m - m.min()) / span if span > 0 else np.zeros_like(m)
        save_image(out / f"uncertainty_level{level}.png", np.repeat(gray[..., None], 3, axis=2))
    print(f"{len(maps)} uncertainty maps written to {out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="rpn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the three-stage schedule")
    p.add_argument("--config", help="INI file with [pyramid] and [train] sections")
    p.add_argument("--mode", choices=("spatial", "quality"))
    p.add_argument("--levels", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, nargs=3, metavar=("S1", "S2", "S3"))
    p.add_argument("--data", help="image directory (default: synthetic corpus)")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="compress an image into a scalable container")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("spatial", "quality"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="reconstruct one level from a (possibly truncated) container")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="rate-distortion evaluation from real bytes")
    p.add_argument("--model", required=True)
    p.add_argument("--images", help="directory of test images (default: synthetic test split)")
    p.add_argument("--count", type=int, default=TEST_SPLIT_SIZE)
    p.add_argument("--seed", type=int, default=TEST_SPLIT_SEED)
    p.add_argument("--label")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bdrate", help="BD-rate of a test curve against an anchor (CSV)")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metric", choices=("psnr", "ms_ssim"), default="psnr")
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("params", help="count model parameters")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("dump-uncertainty", help="write uncertainty maps as grayscale PNGs")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_uncertainty)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (FormatError, DecodeError, InsufficientLayersError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())

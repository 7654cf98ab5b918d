"""Rate-distortion evaluation from real container bytes, and parameter counting."""

import json
import math
from pathlib import Path

import numpy as np
import torch

from rpn.container import serialize_container, truncate_to
from rpn.entropy import accumulate_rates
from rpn.metrics import RdCurve, RdPoint, ms_ssim, ms_ssim_scales, psnr
from rpn.pyramid import build_pyramid_inputs, decode_scalable, encode_scalable, pad_to_multiple
from rpn.training import load_checkpoint


def image_to_tensor(image):
    """HWC (uint8 or float in [0, 1]) -> (1, 3, H, W) float32."""
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)).permute(2, 0, 1)[None]


def tensor_to_uint8(x):
    arr = x[0].permute(1, 2, 0).detach().cpu().numpy()
    return np.round(np.clip(arr, 0.0, 1.0) * 255).astype(np.uint8)


def level_references(x, cfg):
    """Reference images each level is judged against, cropped to the decoded size."""
    h, w = x.shape[-2:]
    refs = build_pyramid_inputs(pad_to_multiple(x, cfg.alignment), cfg)
    out = []
    for f, ref in zip(cfg.scale_factors, refs):
        out.append(ref[..., :-(-h // f), :-(-w // f)])
    return out


def evaluate_image(x, model, name=""):
    """Encode once, decode every level from its own prefix; one record per level."""
    cfg = model.cfg
    container, states = encode_scalable(x, model)
    data = serialize_container(container)
    refs = level_references(x, cfg)
    h, w = x.shape[-2:]
    seg_bits = [8 * len(s) for s in container.segments]
    actual = accumulate_rates(seg_bits, h, w)
    estimated = accumulate_rates([float(s.bits) for s in states], h, w)
    records = []
    for level in range(cfg.levels):
        prefix = truncate_to(data, level + 1)
        recon = tensor_to_uint8(decode_scalable(prefix, level, model))
        ref = tensor_to_uint8(refs[level])
        score = ms_ssim(recon, ref, 255.0) if ms_ssim_scales(*ref.shape[:2]) else math.nan
        records.append({
            "image": name,
            "level": level,
            "bpp": actual.bpp[level],
            "estimated_bpp": estimated.bpp[level],
            "bytes": len(prefix),
            "psnr": psnr(recon, ref),
            "ms_ssim": score,
        })
    return records


def aggregate(records, label=""):
    levels = sorted({r["level"] for r in records})
    points = []
    for level in levels:
        rows = [r for r in records if r["level"] == level]
        points.append(RdPoint(
            bpp=float(np.mean([r["bpp"] for r in rows])),
            psnr=float(np.mean([r["psnr"] for r in rows])),
            ms_ssim=float(np.nanmean([r["ms_ssim"] for r in rows])),
            level=level,
        ))
    return RdCurve(points, label)


def evaluate_codec(model_dir, images, label=None):
    """Evaluate a checkpoint on HWC images; returns (RdCurve, per-image-level records)."""
    model, _ = load_checkpoint(model_dir)
    records = []
    for i, image in enumerate(images):
        records.extend(evaluate_image(image_to_tensor(image), model, name=str(i)))
    return aggregate(records, label or str(model_dir)), records


def write_report(path, curve, records):
    """Line-delimited JSON: one 'point' record per level then one 'image' record per row."""
    with open(path, "w") as f:
        for p in curve.points:
            f.write(json.dumps({"kind": "point", "label": curve.label, **p.__dict__}) + "\n")
        for r in records:
            f.write(json.dumps({"kind": "image", **r}) + "\n")


def parse_report(path):
    points, records, label = [], [], ""
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("kind")
            if kind == "point":
                label = rec.pop("label")
                points.append(RdPoint(**rec))
            else:
                records.append(rec)
    return RdCurve(points, label), records


def write_curve_csv(path, curve):
    with open(path, "w") as f:
        f.write("level,bpp,psnr,ms_ssim\n")
        for p in curve.points:
            f.write(f"{p.level},{p.bpp:.6f},{p.psnr:.4f},{p.ms_ssim:.6f}\n")


def read_curve_csv(path, label=""):
    points = []
    with open(path) as f:
        next(f)
        for line in f:
            if line.strip():
                level, bpp, q, ms = line.strip().split(",")
                points.append(RdPoint(float(bpp), float(q), float(ms), int(level)))
    return RdCurve(points, label or Path(path).stem)


def parameter_breakdown(model):
    groups = {}
    for name, p in model.named_parameters():
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[1].isdigit() else parts[0]
        groups[key] = groups.get(key, 0) + p.numel()
    return groups


def count_parameters(model_or_dir):
    """Total scalar parameter count of a model or checkpoint directory, plus a breakdown."""
    model = model_or_dir
    if not isinstance(model_or_dir, torch.nn.Module):
        model, _ = load_checkpoint(model_or_dir)
    breakdown = parameter_breakdown(model)
    return sum(breakdown.values()), breakdown

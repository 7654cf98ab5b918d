"""Three-stage training: R-D only, then with L_U, then with L_UG and frozen heads."""

import configparser
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from rpn.data import make_synthetic_corpus, to_unit
from rpn.errors import ConfigError
from rpn.pyramid import PyramidConfig, ScalableCodec, build_pyramid_inputs
from rpn.uncertainty import (
    U_CLAMP,
    loss_uncertainty,
    loss_uncertainty_guided,
    reverse_pyramid_pass,
)

log = logging.getLogger(__name__)

CHECKPOINT_FILE = "model.pt"
CONFIG_FILE = "config.ini"
METRICS_FILE = "metrics.jsonl"


@dataclass
class TrainConfig:
    steps: tuple = (2000, 500, 1500)
    # 10x the usual 1e-4 / 3e-5: the desk-scale schedule is only a few thousand steps
    learning_rates: tuple = (1e-3, 1e-3, 3e-4)
    batch_size: int = 8
    crop: int = 64
    seed: int = 0
    corpus_size: int = 512
    mask_warmup: int = 500
    uncertainty_weight: float = 1.0
    grad_clip: float = 1.0
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)

    def __post_init__(self):
        self.steps = tuple(int(s) for s in self.steps)
        self.learning_rates = tuple(float(v) for v in self.learning_rates)
        if len(self.steps) != 3 or len(self.learning_rates) != 3:
            raise ConfigError("steps and learning_rates need one entry per stage")
        if any(s <= 0 for s in self.steps):
            raise ConfigError(f"stage step counts must be positive, got {self.steps}")
        if self.crop % self.pyramid.alignment:
            raise ConfigError(f"crop {self.crop} is not a multiple of {self.pyramid.alignment}")
        if self.learning_rates[2] > self.learning_rates[0]:
            raise ConfigError("stage-3 learning rate must not exceed the stage-1 rate")

    def to_ini(self):
        cp = configparser.ConfigParser()
        p = self.pyramid
        cp["pyramid"] = {
            "mode": p.mode,
            "levels": str(p.levels),
            "channels": ",".join(map(str, p.channels)),
            "lambdas": ",".join(map(repr, p.lambdas)),
            "iterations": str(p.iterations),
            "tau": repr(p.tau),
        }
        cp["train"] = {
            "steps": ",".join(map(str, self.steps)),
            "learning_rates": ",".join(map(repr, self.learning_rates)),
            "batch_size": str(self.batch_size),
            "crop": str(self.crop),
            "seed": str(self.seed),
            "corpus_size": str(self.corpus_size),
            "mask_warmup": str(self.mask_warmup),
            "uncertainty_weight": repr(self.uncertainty_weight),
            "grad_clip": repr(self.grad_clip),
        }
        return cp

    def save(self, path):
        with open(path, "w") as f:
            self.to_ini().write(f)

    @classmethod
    def load(cls, path, **overrides):
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise ConfigError(f"cannot read config {path}")
        try:
            return cls.from_ini(cp, **overrides)
        except (KeyError, ValueError) as e:
            raise ConfigError(f"invalid config {path}: {e}") from e

    @classmethod
    def from_ini(cls, cp, **overrides):
        def floats(s):
            return tuple(float(v) for v in s.split(","))

        def ints(s):
            return tuple(int(v) for v in s.split(","))

        kwargs = {}
        if cp.has_section("pyramid"):
            p = cp["pyramid"]
            mode = p.get("mode", "spatial")
            base = PyramidConfig.default(mode, p.getint("levels", fallback=None))
            kwargs["pyramid"] = PyramidConfig(
                mode=mode,
                levels=base.levels,
                channels=ints(p["channels"]) if "channels" in p else base.channels,
                lambdas=floats(p["lambdas"]) if "lambdas" in p else base.lambdas,
                iterations=p.getint("iterations", fallback=base.iterations),
                tau=p.getfloat("tau", fallback=base.tau),
            )
        if cp.has_section("train"):
            t = cp["train"]
            if "steps" in t:
                kwargs["steps"] = ints(t["steps"])
            if "learning_rates" in t:
                kwargs["learning_rates"] = floats(t["learning_rates"])
            for key in ("batch_size", "crop", "seed", "corpus_size", "mask_warmup"):
                if key in t:
                    kwargs[key] = t.getint(key)
            for key in ("uncertainty_weight", "grad_clip"):
                if key in t:
                    kwargs[key] = t.getfloat(key)
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass
class LossBreakdown:
    distortion: list
    rate_self: list
    rate: list
    l_sca: torch.Tensor
    l_u: torch.Tensor = None
    l_ug: torch.Tensor = None

    @property
    def total(self):
        return self.l_sca

    def record(self):
        rec = {f"D_{l}": _scalar(d) for l, d in enumerate(self.distortion)}
        rec.update({f"R_{l}": _scalar(r) for l, r in enumerate(self.rate)})
        rec["L_sca"] = _scalar(self.l_sca)
        rec["L_U"] = _scalar(self.l_u) if self.l_u is not None else 0.0
        rec["L_UG"] = _scalar(self.l_ug) if self.l_ug is not None else 0.0
        return rec


def _scalar(v):
    return float(v.detach()) if torch.is_tensor(v) else float(v)


def loss_rd(states, references, cfg, num_pixels):
    """L_sca = sum_l D_l + lambda_l R_l.

    D_l is the MSE at level l. R_l is cumulative: the level's own bits plus all
    lower levels', in bits per pixel of the full-resolution image (``num_pixels``
    per batch item).
    """
    batch = references[0].shape[0]
    distortion, rate_self, rate = [], [], []
    cumulative = 0.0
    for state, x_l in zip(states, references):
        distortion.append(torch.mean((state.x_hat - x_l) ** 2))
        own = state.bits / (batch * num_pixels)
        cumulative = cumulative + own
        rate_self.append(own)
        rate.append(cumulative)
    l_sca = sum(d + lam * r for d, lam, r in zip(distortion, cfg.lambdas, rate))
    return LossBreakdown(distortion, rate_self, rate, l_sca)


def level_sizes(references):
    return [tuple(x.shape[-2:]) for x in references]


class Trainer:
    """Owns the model, optimizer, data order and random streams for one run."""

    def __init__(self, cfg, images=None, model=None, out_dir=None):
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.model = model if model is not None else ScalableCodec(cfg.pyramid)
        if images is None:
            images = make_synthetic_corpus(cfg.corpus_size, cfg.crop, cfg.seed)
        self.images = images
        self.rng = np.random.default_rng(cfg.seed)
        self.generator = torch.Generator().manual_seed(cfg.seed + 1)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=cfg.learning_rates[0])
        self.step = 0
        self.history = []
        self.out_dir = Path(out_dir) if out_dir else None
        self._metrics = None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self._metrics = open(self.out_dir / METRICS_FILE, "a")

    def next_batch(self):
        idx = self.rng.integers(len(self.images), size=self.cfg.batch_size)
        batch = []
        crop = self.cfg.crop
        for i in idx:
            img = self.images[i]
            top = self.rng.integers(img.shape[0] - crop + 1)
            left = self.rng.integers(img.shape[1] - crop + 1)
            batch.append(img[top:top + crop, left:left + crop])
        return torch.from_numpy(to_unit(np.stack(batch))).permute(0, 3, 1, 2).contiguous()

    def _set_stage(self, stage):
        for group in self.optimizer.param_groups:
            group["lr"] = self.cfg.learning_rates[stage - 1]
        self.model.heads.requires_grad_(stage != 3)

    @torch.no_grad()
    def init_uncertainty_heads(self, batch):
        """Set each head's output bias to the L_U optimum ln(e/3) for the mean error e."""
        self.model.eval()
        states = self.model(batch, noise=False)
        refs = build_pyramid_inputs(batch, self.cfg.pyramid)
        for level, head in enumerate(self.model.heads):
            err = torch.mean((states[level].x_hat - refs[level]) ** 2).item()
            head.proj.bias.fill_(float(np.clip(math.log(max(err, 1e-12) / 3.0), -U_CLAMP, U_CLAMP)))
        self.model.train()

    def train_step(self, batch, stage):
        if stage not in (1, 2, 3):
            raise ConfigError(f"stage must be 1, 2 or 3, got {stage}")
        self._set_stage(stage)
        model = self.model
        model.train()
        model.set_hard_masks(self.step >= self.cfg.mask_warmup)
        states = model(batch, noise=True, generator=self.generator)
        refs = build_pyramid_inputs(batch, self.cfg.pyramid)
        bd = loss_rd(states, refs, self.cfg.pyramid, batch.shape[-2] * batch.shape[-1])
        total = bd.l_sca
        if stage > 1 and len(model.heads):
            latents = [s.y_hat for s in states]
            if stage == 2:
                maps = reverse_pyramid_pass(latents, model.heads, level_sizes(refs))
                bd.l_u = sum(loss_uncertainty(states[l].x_hat, refs[l], u)
                             for l, u in enumerate(maps))
                total = total + self.cfg.uncertainty_weight * bd.l_u
            else:
                with torch.no_grad():
                    maps = reverse_pyramid_pass(latents, model.heads, level_sizes(refs))
                bd.l_ug = sum(loss_uncertainty_guided(states[l].x_hat, refs[l], u)
                              for l, u in enumerate(maps))
                total = total + bd.l_ug
        if not torch.isfinite(total):
            raise FloatingPointError(
                f"non-finite loss at step {self.step} (stage {stage}): "
                f"{json.dumps(bd.record())}"
            )
        self.optimizer.zero_grad()
        total.backward()
        if self.cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(
                [p for p in model.parameters() if p.grad is not None], self.cfg.grad_clip
            )
        self.optimizer.step()
        self.step += 1
        rec = {"step": self.step, "stage": stage, **bd.record()}
        self.history.append(rec)
        if self._metrics:
            self._metrics.write(json.dumps(rec) + "\n")
        return bd

    def run_stage(self, stage, steps=None, log_every=100):
        steps = self.cfg.steps[stage - 1] if steps is None else steps
        if stage == 2:
            self.init_uncertainty_heads(self.next_batch())
        for i in range(steps):
            bd = self.train_step(self.next_batch(), stage)
            if log_every and (i + 1) % log_every == 0:
                log.info("stage %d step %d/%d L_sca=%.5f", stage, i + 1, steps, _scalar(bd.l_sca))
        if self._metrics:
            self._metrics.flush()

    def run(self):
        for stage in (1, 2, 3):
            self.run_stage(stage)
        if self.out_dir:
            save_checkpoint(self.out_dir, self.model, self.cfg)
        return self.model

    def close(self):
        if self._metrics:
            self._metrics.close()
            self._metrics = None


def save_checkpoint(out_dir, model, cfg):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out_dir / CHECKPOINT_FILE)
    cfg.save(out_dir / CONFIG_FILE)


def load_checkpoint(model_dir):
    """Return (model in eval mode, TrainConfig) from a checkpoint directory."""
    model_dir = Path(model_dir)
    if not (model_dir / CHECKPOINT_FILE).is_file() or not (model_dir / CONFIG_FILE).is_file():
        raise ConfigError(f"no checkpoint in {model_dir}")
    cfg = TrainConfig.load(model_dir / CONFIG_FILE)
    model = ScalableCodec(cfg.pyramid)
    try:
        state = torch.load(model_dir / CHECKPOINT_FILE, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    except (RuntimeError, KeyError) as e:
        raise ConfigError(f"checkpoint {model_dir} does not match its config: {e}") from e
    model.eval()
    return model, cfg

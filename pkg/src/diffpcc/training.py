"""Joint training of encoder, denoiser and codebook, plus the synthetic corpus."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .diffnet import tensor as tt
from .diffnet.checkpoint import load_checkpoint, save_checkpoint
from .diffnet.models import encode
from .diffnet.optim import adam_step, clip_by_global_norm
from .diffnet.params import ModelConfig, init_params
from .diffusion import build_schedule, diffusion_loss
from .errors import ConfigurationError, DivergenceError
from .quantizer import init_from_chunks, quantize_st, split_chunks

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "lr", "loss_total", "loss_diff", "loss_vq", "codebook_utilization", "grad_norm")


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 5000
    batch_size: int = 16
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    decay_start_step: int = 2500
    decay_end_step: int = 5000
    T: int = 50
    beta_1: float = 1e-4
    beta_T: float = 0.05
    d: int = 64
    C: int = 32
    N: int = 128
    # corpus
    classes: tuple = geometry.SHAPE_KINDS
    per_class: int = 40
    points: int = 256
    jitter: float = 0.01
    stretch: float = 0.3
    held_out_every: int = 10
    # architecture
    point_widths: tuple = (128, 256)
    head_widths: tuple = (256,)
    denoiser_widths: tuple = (128, 256, 128)
    time_dim: int = 64
    # bookkeeping
    grad_clip: float = 10.0
    log_every: int = 50
    checkpoint_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        for name in ("classes", "point_widths", "head_widths", "denoiser_widths"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        checks = [
            ("total_steps", self.total_steps >= 0),
            ("batch_size", self.batch_size >= 1),
            ("lr_end", 0 <= self.lr_end <= self.lr_start),
            ("decay_start_step", 0 <= self.decay_start_step <= self.decay_end_step),
            ("decay_end_step", self.decay_end_step <= self.total_steps),
            ("C", self.C >= 1 and self.d % self.C == 0),
            ("N", self.N >= 1 and self.N & (self.N - 1) == 0),
            ("T", self.T >= 2),
            ("beta_T", 0 < self.beta_1 <= self.beta_T < 1),
            ("classes", len(self.classes) > 0 and all(c in geometry.SHAPE_KINDS for c in self.classes)),
            ("per_class", self.per_class >= 1),
            ("points", self.points >= 2),
            ("stretch", 0 <= self.stretch < 1),
            ("held_out_every", self.held_out_every >= 0),
            ("log_every", self.log_every >= 1),
            ("checkpoint_every", self.checkpoint_every >= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigurationError(f"invalid value for {name}: {getattr(self, name)!r}")

    def model_config(self):
        return ModelConfig(
            d=self.d, C=self.C, N=self.N, T=self.T, beta_1=self.beta_1, beta_T=self.beta_T,
            point_widths=self.point_widths, head_widths=self.head_widths,
            denoiser_widths=self.denoiser_widths, time_dim=self.time_dim,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


PRESETS = {
    "desk": TrainConfig(),
    "toy": TrainConfig(
        total_steps=500, batch_size=8, decay_start_step=500, decay_end_step=500, lr_end=1e-3,
        T=50, d=32, C=8, N=16, classes=("sphere", "box"), per_class=10, points=64, stretch=0.0,
        point_widths=(64, 128), head_widths=(128,), denoiser_widths=(64, 128, 64), log_every=1,
    ),
    "paper": TrainConfig(
        total_steps=1_000_000, batch_size=128, lr_start=1e-4, lr_end=1e-5,
        decay_start_step=200_000, decay_end_step=400_000, T=200, d=256, C=32, N=128,
        per_class=2000, points=2048, log_every=1000, checkpoint_every=10_000,
    ),
}


# config files


def _coerce(fld, raw):
    kind = type(fld.default)
    try:
        if kind is tuple:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if fld.name == "classes":
                return tuple(items)
            return tuple(int(s) for s in items)
        if kind is bool:
            return raw.lower() in ("1", "true", "yes")
        return kind(float(raw)) if kind is int and "e" in raw.lower() else kind(raw)
    except ValueError:
        raise ConfigurationError(f"invalid value for {fld.name}: {raw!r}") from None


def parse_config(text):
    """Parse ``key = value`` lines; ``preset = NAME`` picks the base configuration."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key != "preset" and key not in fields:
            raise ConfigurationError(f"unknown config field {key!r}")
        pairs[key] = value
    preset = pairs.pop("preset", "desk")
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}")
    changes = {k: _coerce(fields[k], v) for k, v in pairs.items()}
    return PRESETS[preset].replace(**changes)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg):
    lines = []
    for f in dataclasses.fields(TrainConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


# corpus


def shape_seed(seed, class_index, instance):
    return int(np.random.SeedSequence([seed, class_index, instance]).generate_state(1)[0])


def make_shape(kind, P, jitter, stretch, seed):
    """A primitive with a random per-axis stretch in [1 - stretch, 1 + stretch]."""
    pc = geometry.gen_shape(kind, P, jitter=jitter, seed=seed)
    if stretch > 0:
        rng = np.random.default_rng([seed, 1])
        pc = geometry.PointCloud(pc.points * rng.uniform(1 - stretch, 1 + stretch, 3), label=kind)
    return pc


@dataclass
class Corpus:
    train: np.ndarray  # (n, P, 3) normalized
    held_out: np.ndarray
    train_labels: list = field(default_factory=list)
    held_out_labels: list = field(default_factory=list)


def build_corpus(cfg):
    """Generate and normalize every shape; every ``held_out_every``-th instance is held out."""
    train, held, train_lab, held_lab = [], [], [], []
    for kind in cfg.classes:
        ci = geometry.SHAPE_KINDS.index(kind)
        for j in range(cfg.per_class):
            pc = make_shape(kind, cfg.points, cfg.jitter, cfg.stretch, shape_seed(cfg.seed, ci, j))
            normed, _ = geometry.normalize(pc)
            if cfg.held_out_every and j % cfg.held_out_every == cfg.held_out_every - 1:
                held.append(normed.points)
                held_lab.append(kind)
            else:
                train.append(normed.points)
                train_lab.append(kind)
    empty = np.zeros((0, cfg.points, 3))
    return Corpus(
        train=np.stack(train) if train else empty,
        held_out=np.stack(held) if held else empty,
        train_labels=train_lab,
        held_out_labels=held_lab,
    )


# schedule and steps


def lr_at_step(step, cfg):
    if step <= cfg.decay_start_step:
        return cfg.lr_start
    if step >= cfg.decay_end_step:
        return cfg.lr_end
    frac = (step - cfg.decay_start_step) / (cfg.decay_end_step - cfg.decay_start_step)
    return cfg.lr_start + frac * (cfg.lr_end - cfg.lr_start)


def step_rng(cfg, step):
    return np.random.default_rng([cfg.seed, 7, step])


def seed_codebook(params, clouds, seed):
    """Initialize codebook entries from encoder chunk outputs on a warm-up batch."""
    cfg = params.config
    z = encode(params.constants(), clouds, cfg).data
    params.values["codebook"] = init_from_chunks(split_chunks(z, cfg.C), cfg.N, seed)
    params.m["codebook"][:] = 0.0
    params.v["codebook"][:] = 0.0
    params.codebook_ready = True


def _warmup(params, corpus, cfg):
    need = max(cfg.batch_size, math.ceil(cfg.N / cfg.C))
    pick = np.random.default_rng([cfg.seed, 8]).permutation(len(corpus.train))[:need]
    seed_codebook(params, corpus.train[pick], cfg.seed)


def joint_loss(W, batch, t, eps, sched, config):
    """L_diff + L_VQ for a (B, P, 3) batch; returns (total, l_diff, l_vq, indices)."""
    z = encode(W, batch, config)
    zhat, l_vq, idx = quantize_st(z, W["codebook"], config.C)
    l_diff = diffusion_loss(W, batch, zhat, t, eps, sched, config)
    return tt.add(l_diff, l_vq), l_diff, l_vq, idx


def train_step(params, batch, cfg, rng, sched=None, lr=None):
    """One joint update on a (B, P, 3) batch of normalized clouds.

    Draws one timestep per cloud and independent noise per point from ``rng``.
    Returns (params, stats) where stats holds the loss breakdown.
    """
    mcfg = params.config
    sched = sched or build_schedule(mcfg.T, mcfg.beta_1, mcfg.beta_T)
    batch = np.asarray(batch, dtype=np.float64)
    B = batch.shape[0]
    t = rng.integers(1, mcfg.T + 1, size=B)
    eps = rng.standard_normal(batch.shape)

    W = params.leaves()
    total, l_diff, l_vq, idx = joint_loss(W, batch, t, eps, sched, mcfg)
    for name, term in (("loss_diff", l_diff), ("loss_vq", l_vq)):
        if not np.isfinite(term.data):
            raise DivergenceError(f"non-finite {name} at step {params.step}", term=name)
    grads = tt.backward(total, W)
    grads, norm, clipped = clip_by_global_norm(grads, cfg.grad_clip)
    if clipped:
        log.debug("step %d: gradient norm %.3g clipped to %g", params.step, norm, cfg.grad_clip)
    lr = lr_at_step(params.step, cfg) if lr is None else lr
    adam_step(params, grads, lr)
    stats = {
        "lr": lr,
        "loss_total": float(total.data),
        "loss_diff": float(l_diff.data),
        "loss_vq": float(l_vq.data),
        "grad_norm": norm,
        "clipped": clipped,
        "indices": idx,
    }
    return params, stats


def sample_batch(corpus, cfg, rng):
    n = len(corpus.train)
    return corpus.train[rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)]


@dataclass
class TrainResult:
    params: object
    log: list
    corpus: Corpus


def _append_log(path, rows):
    if path is None or not rows:
        return
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(LOG_FIELDS))
        for row in rows:
            writer.writerow({k: row[k] for k in LOG_FIELDS})


def train(cfg, checkpoint_path=None, log_path=None, resume=True, stop_at=None, corpus=None):
    """Run (or resume) training up to ``cfg.total_steps`` (or ``stop_at`` if given).

    All randomness is derived from (cfg.seed, step), so stopping, reloading the
    checkpoint and continuing reproduces an uninterrupted run bit for bit.
    """
    corpus = build_corpus(cfg) if corpus is None else corpus
    if len(corpus.train) == 0:
        raise ConfigurationError("training corpus is empty")
    mcfg = cfg.model_config()
    fresh = True
    if resume and checkpoint_path and os.path.exists(checkpoint_path):
        params, _ = load_checkpoint(checkpoint_path)
        if params.config != mcfg:
            raise ConfigurationError("checkpoint model configuration differs from the training config")
        fresh = False
    else:
        params = init_params(mcfg, seed=cfg.seed)
    end = cfg.total_steps if stop_at is None else min(stop_at, cfg.total_steps)
    if params.step < end and not params.codebook_ready:
        _warmup(params, corpus, cfg)
    sched = build_schedule(mcfg.T, mcfg.beta_1, mcfg.beta_T)
    rows, pending, used = [], [], np.zeros(mcfg.N, dtype=bool)
    extra = {"train_config": format_config(cfg)}
    if fresh and log_path:
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOG_FIELDS)
    while params.step < end:
        rng = step_rng(cfg, params.step)
        batch = sample_batch(corpus, cfg, rng)
        _, stats = train_step(params, batch, cfg, rng, sched=sched)
        used[np.unique(stats["indices"])] = True
        if params.step % cfg.log_every == 0 or params.step == end:
            row = {k: stats[k] for k in ("lr", "loss_total", "loss_diff", "loss_vq", "grad_norm")}
            row["step"] = params.step
            row["codebook_utilization"] = float(used.mean())
            rows.append(row)
            pending.append(row)
            used[:] = False
        if checkpoint_path and (params.step % cfg.checkpoint_every == 0 or params.step == end):
            save_checkpoint(params, checkpoint_path, extra)
            _append_log(log_path, pending)
            pending = []
    if checkpoint_path and (fresh or not os.path.exists(checkpoint_path)):
        save_checkpoint(params, checkpoint_path, extra)
    _append_log(log_path, pending)
    return TrainResult(params=params, log=rows, corpus=corpus)

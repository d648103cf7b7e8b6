"""Patch-based training loop with CSV metrics and periodic checkpoints."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Tape, backward
from .data import sample_batch, synth_pair
from .errors import ConfigError, ContractError
from .io import checkpoint_save
from .losses import LossWeights, loss_terms
from .metrics import psnr
from .network import ModelConfig, build_model, forward, restore
from .optim import CosineSchedule, OptimState, adam_step

LOG_COLUMNS = ("step", "loss", "l_char", "l_edge", "l_p", "lr", "psnr_holdout")


@dataclass
class TrainConfig:
    steps: int = 500
    batch: int = 4
    patch: int = 64
    lr0: float = 1e-4
    lr_min: float = 1e-7
    eval_every: int = 50
    ckpt_every: int = 0  # 0 keeps only the final checkpoint

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps", "must be >= 0")
        if self.batch < 1:
            raise ConfigError("batch", "must be >= 1")
        if self.patch < 8:
            raise ConfigError("patch", "must be >= 8")
        if not self.lr0 > 0 or self.lr_min < 0:
            raise ConfigError("lr0", "need lr0 > 0 and lr_min >= 0")
        if self.eval_every < 0 or self.ckpt_every < 0:
            raise ConfigError("eval_every", "intervals must be >= 0")


@dataclass
class TrainResult:
    weights: dict
    log: list = field(default_factory=list)
    checkpoint: Optional[Path] = None
    state: Optional[OptimState] = None


def holdout_psnr(weights, cfg: ModelConfig, pair) -> float:
    blurred, sharp = pair
    out = np.clip(restore(weights, cfg, blurred), 0.0, 1.0)
    return psnr(out, sharp)


def _write_log(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def train_loop(
    cfg: ModelConfig,
    data_source: Sequence,
    steps: Optional[int] = None,
    seed: int = 0,
    train_cfg: Optional[TrainConfig] = None,
    loss_weights: Optional[LossWeights] = None,
    holdout=None,
    out_dir=None,
    weights: Optional[dict] = None,
    on_step: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Train on ``(blurred, sharp)`` pairs; returns final weights and the log.

    Row ``s`` of the log holds the loss of the weights *before* update ``s``
    on that step's batch; one extra row at ``step == steps`` scores the final
    weights, so ``steps=0`` yields a single row for the initialization.
    ``psnr_holdout`` is filled at step 0, every ``eval_every`` steps and at
    the end. The batch order depends only on ``seed``.
    """
    if not data_source:
        raise ContractError("data source is empty")
    tc = train_cfg or TrainConfig()
    steps = tc.steps if steps is None else int(steps)
    if steps < 0:
        raise ContractError("steps must be >= 0")
    lw = loss_weights or LossWeights()
    if weights is None:
        weights, _ = build_model(cfg)
    weights = dict(weights)
    if holdout is None:
        size = data_source[0][1].shape[:2]
        holdout = synth_pair(np.random.default_rng([seed, 1]), size)
    rng = np.random.default_rng([seed, 0])
    schedule = CosineSchedule(tc.lr0, tc.lr_min, max(steps, 1))
    state = OptimState()
    dtype = cfg.np_dtype
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    log = []
    for step in range(steps + 1):
        blurred, sharp = sample_batch(rng, data_source, tc.batch, tc.patch, dtype)
        final = step == steps
        with Tape() as tape:
            params = {k: tape.watch(v) for k, v in weights.items()}
            pred = forward(params, cfg, blurred)
            terms = loss_terms(pred, sharp, lw)
            if not final:
                grads = backward(tape, terms["total"], leaves=list(params.values()))
        row = {
            "step": step,
            "loss": float(terms["total"].item()),
            "l_char": float(terms["l_char"].item()),
            "l_edge": float(terms["l_edge"].item()),
            "l_p": float(terms["l_p"].item()),
            "lr": "" if final else repr(schedule(step)),
            "psnr_holdout": "",
        }
        if step == 0 or final or (tc.eval_every and step % tc.eval_every == 0):
            row["psnr_holdout"] = repr(holdout_psnr(weights, cfg, holdout))
        log.append(row)
        if on_step is not None:
            on_step(row)
        if final:
            break
        g = {k: grads[t] for k, t in params.items()}
        weights, state = adam_step(weights, g, state, schedule)
        if out is not None and tc.ckpt_every and (step + 1) % tc.ckpt_every == 0 and step + 1 < steps:
            checkpoint_save(out / f"step{step + 1:06d}.xysn", weights, cfg)

    ckpt = None
    if out is not None:
        ckpt = out / "final.xysn"
        checkpoint_save(ckpt, weights, cfg)
        _write_log(out / "metrics.csv", log)
    return TrainResult(weights, log, ckpt, state)

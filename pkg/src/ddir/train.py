"""Training loop, learning-rate schedule, evaluation and model persistence."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config
from .data import DataError, Manifest, TrainBatch, sample_batch
from .imaging import ResampleSpec, bicubic_resize, psnr_y, quantize, read_image
from .model import DdirModel, TrainStepOutput, forward_train, infer_full
from .numerics import Graph, ParamStore, adam_step, backward

LOG_HEADER = "epoch,loss_sr,loss_def,loss_total,wall_time"


def lr_at(epoch: int, base: float, decay: float = 0.5, every: int = 200) -> float:
    """Step schedule: ``base * decay ** (epoch // every)`` for 0-based epochs."""
    return base * decay ** (epoch // every)


def train_step(model: DdirModel, batch: TrainBatch, lr: float, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> TrainStepOutput:
    with Graph() as g:
        out = forward_train(model, batch)
    backward(g, out.loss_total, model.store)
    adam_step(model.store, lr, beta1, beta2, eps)
    return out


def batch_seed(seed: int, step: int) -> list[int]:
    return [seed, 0x5EED, step]


@dataclass
class EpochLog:
    epoch: int
    loss_sr: float
    loss_def: float
    loss_total: float
    wall_time: float

    def csv_row(self, deterministic: bool = True) -> str:
        wall = "-" if deterministic else f"{self.wall_time:.3f}"
        return f"{self.epoch},{self.loss_sr!r},{self.loss_def!r},{self.loss_total!r},{wall}"


def fit(
    model: DdirModel,
    manifest: Manifest,
    epochs: int,
    batch: int = 16,
    queries: int = 2304,
    patch: int = 48,
    seed: int = 0,
    lr: float = 2e-4,
    decay: float = 0.5,
    decay_every: int = 200,
    steps_per_epoch: int = 0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> list[EpochLog]:
    """Train for ``epochs`` epochs; returns one log entry per epoch.

    An epoch is ``steps_per_epoch`` optimiser steps (0 means one pass worth of
    batches over the manifest).  The batch of global step k is drawn from the
    seed ``(seed, k)``, so a run is reproducible.
    """
    steps = steps_per_epoch or max(1, math.ceil(len(manifest) / batch))
    logs = []
    step = 0
    for epoch in range(epochs):
        t0 = time.perf_counter()
        rate = lr_at(epoch, lr, decay, decay_every)
        sums = np.zeros(3)
        for _ in range(steps):
            b = sample_batch(manifest, batch_seed(seed, step), batch, patch, queries, dtype=model.dtype)
            out = train_step(model, b, rate, betas[0], betas[1], eps)
            sums += [out.loss_sr.item(), out.loss_def.item(), out.loss_total.item()]
            step += 1
        mean = sums / steps
        log = EpochLog(epoch, float(mean[0]), float(mean[1]), float(mean[2]), time.perf_counter() - t0)
        logs.append(log)
        if on_epoch is not None:
            on_epoch(log)
    return logs


# ---------------------------------------------------------------------------
# persistence


def save_model(path, model: DdirModel, config: RunConfig) -> Path:
    return save_checkpoint(path, model.store.state(), config.to_text())


def load_model(path) -> tuple[DdirModel, RunConfig]:
    tensors, text = load_checkpoint(path)
    config = parse_config(text, source=f"{path} (embedded config)")
    store = ParamStore()
    for name, arr in tensors.items():
        store.add(name, arr)
    return DdirModel(config.model_config(), store=store), config


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalRow:
    scale: float
    count: int
    psnr_y: float

    def csv_row(self) -> str:
        value = "inf" if math.isinf(self.psnr_y) else f"{self.psnr_y:.2f}"
        return f"{self.scale!r},{self.count},{value}"


def default_shave(scale: float) -> int:
    return int(math.ceil(scale))


def predict_pair(mode: str, lr: np.ndarray, hr: np.ndarray, scale: float, model: DdirModel | None = None,
                 chunk: int = 65536) -> np.ndarray:
    """Prediction for one pair, quantised to 8 bits like a written image."""
    dims = hr.shape[:2]
    if mode == "identity":
        pred = hr
    elif mode == "bicubic":
        pred = bicubic_resize(lr, ResampleSpec(*dims))
    elif mode == "model":
        if model is None:
            raise ValueError("model evaluation needs a checkpoint")
        pred = infer_full(model, lr, scale, chunk=chunk, out_dims=dims)
    else:
        raise ValueError(f"unknown eval mode {mode!r}")
    return quantize(pred)


def evaluate(manifest: Manifest, scales: Sequence[float], mode: str = "model", model: DdirModel | None = None,
             shave: int = -1, chunk: int = 65536) -> list[EvalRow]:
    """Mean PSNR-Y per scale; a negative ``shave`` means ceil(scale) pixels."""
    available = manifest.scales()
    missing = [s for s in scales if not manifest.with_scale(s)]
    if missing:
        raise DataError(
            f"scale(s) {', '.join(map(str, missing))} not in manifest; available: {', '.join(map(str, available))}"
        )
    rows = []
    for s in scales:
        values = []
        for rec in manifest.with_scale(s):
            lr, hr = read_image(rec.lr_path), read_image(rec.hr_path)
            pred = predict_pair(mode, lr, hr, s, model, chunk)
            values.append(psnr_y(pred, hr, shave if shave >= 0 else default_shave(s)))
        rows.append(EvalRow(float(s), len(values), float(np.mean(values))))
    return rows

"""Finite-difference gradient checks on toy shapes (64-bit)."""

from __future__ import annotations

from dataclasses import replace
from types import SimpleNamespace

import numpy as np

from .encoder import EncoderConfig
from .lif import QueryBatch
from .model import DdirConfig, DdirModel, forward_train
from .numerics import ParamStore, finite_diff_check

TOY_ENCODER = EncoderConfig(channels=2, blocks=1)


def toy_config(base: DdirConfig | None = None) -> DdirConfig:
    """Toggles of ``base`` on a 2-channel, 1-block, 6-wide model."""
    base = base or DdirConfig()
    return replace(base, encoder=TOY_ENCODER, def_encoder=TOY_ENCODER, hidden=6, def_hidden=6)


def toy_batch(seed: int = 0, lr_size: int = 4, scale: int = 2, queries: int = 12, items: int = 1):
    """LR images, on-grid HR queries and targets for a small batch."""
    rng = np.random.default_rng(seed)
    hr = lr_size * scale
    lr = rng.uniform(0.1, 0.9, (items, lr_size, lr_size, 3))
    coords, owner = [], []
    for b in range(items):
        pix = rng.choice(hr * hr, queries, replace=False)
        iy, ix = np.divmod(pix, hr)
        coords.append(np.stack([-1 + (2 * iy + 1) / hr, -1 + (2 * ix + 1) / hr], axis=1))
        owner.append(np.full(queries, b))
    q = QueryBatch(
        np.concatenate(coords),
        np.full((items * queries, 2), 2.0 / hr),
        rng.uniform(0.0, 1.0, (items * queries, 3)),
        np.concatenate(owner),
    )
    return SimpleNamespace(lr=lr, queries=q, hr_dims=[(hr, hr)] * items)


def ddir_gradcheck(cfg: DdirConfig | None = None, seed: int = 0, h: float = 1e-4) -> float:
    """Worst relative gradient error of the joint loss of a toy model."""
    model = DdirModel(toy_config(cfg), seed=seed, dtype=np.float64)
    batch = toy_batch(seed)

    def loss(store: ParamStore):
        return forward_train(DdirModel(model.cfg, store=store), batch).loss_total

    return finite_diff_check(loss, model.store, h)

"""Local implicit image function.

Coordinates are normalised to [-1, 1] in (y, x) order, with pixel centres at
``-1 + (2i + 1) / n``.  A query is decoded by the MLP once per surrounding
latent code and the four decodes are blended with area weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, encode, init_encoder
from .numerics import (
    ParamStore,
    Tensor,
    blend,
    concat,
    l1_loss,
    linear,
    map_to_rows,
    relu,
    take_rows,
    unfold3x3,
)

WEIGHTINGS = ("diagonal", "literal")
_SNAP = 1e-9


def coord_grid(h: int, w: int) -> np.ndarray:
    """Pixel-centre coordinates of an h x w grid, row-major, shape (h*w) x 2."""
    if h < 1 or w < 1:
        raise ValueError(f"grid extents must be >= 1, got {h}x{w}")
    ys = -1.0 + (2.0 * np.arange(h) + 1.0) / h
    xs = -1.0 + (2.0 * np.arange(w) + 1.0) / w
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([gy.reshape(-1), gx.reshape(-1)], axis=1)


@dataclass
class QueryBatch:
    """Query coordinates with their cell sizes.

    ``owner`` names the batch item (feature map) each query belongs to; it
    defaults to item 0.  ``targets`` holds ground-truth RGB when training.
    """

    coords: np.ndarray
    cells: np.ndarray
    targets: np.ndarray | None = None
    owner: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        self.cells = np.asarray(self.cells, dtype=np.float64).reshape(-1, 2)
        if self.cells.shape != self.coords.shape:
            raise ValueError("coords and cells must both be Q x 2")
        if np.any(np.abs(self.coords) > 1.0):
            raise ValueError("query coordinates must lie in [-1, 1]")
        if np.any(self.cells <= 0):
            raise ValueError("cells must be strictly positive")
        if self.owner is None:
            self.owner = np.zeros(len(self.coords), dtype=np.intp)
        self.owner = np.asarray(self.owner, dtype=np.intp)
        if self.targets is not None:
            self.targets = np.asarray(self.targets).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.coords)

    @classmethod
    def full_grid(cls, h: int, w: int) -> "QueryBatch":
        coords = coord_grid(h, w)
        cells = np.broadcast_to([2.0 / h, 2.0 / w], coords.shape)
        return cls(coords, cells)

    def subset(self, sel) -> "QueryBatch":
        return QueryBatch(
            self.coords[sel],
            self.cells[sel],
            None if self.targets is None else self.targets[sel],
            self.owner[sel],
        )


@dataclass(frozen=True)
class MlpConfig:
    in_dim: int
    hidden: int = 64
    layers: int = 5
    out_dim: int = 3

    def __post_init__(self):
        if self.layers < 2 or self.hidden < 1:
            raise ValueError(f"MLP needs layers >= 2 and hidden >= 1, got {self.layers}, {self.hidden}")

    def widths(self) -> list[tuple[int, int]]:
        dims = [self.in_dim] + [self.hidden] * (self.layers - 1) + [self.out_dim]
        return list(zip(dims[:-1], dims[1:]))


def init_mlp(store: ParamStore, prefix: str, cfg: MlpConfig, rng: np.random.Generator, dtype=np.float32) -> None:
    for i, (d_in, d_out) in enumerate(cfg.widths()):
        bound = 1.0 / np.sqrt(d_in)
        store.add(f"{prefix}.{i}.weight", rng.uniform(-bound, bound, (d_out, d_in)).astype(dtype))
        store.add(f"{prefix}.{i}.bias", rng.uniform(-bound, bound, d_out).astype(dtype))


def mlp_forward(x: Tensor, store: ParamStore, prefix: str, cfg: MlpConfig) -> Tensor:
    if x.shape[-1] != cfg.in_dim:
        raise ValueError(f"{prefix}: input width {x.shape[-1]} does not match configured {cfg.in_dim}")
    n = cfg.layers
    for i in range(n):
        x = linear(x, store[f"{prefix}.{i}.weight"], store[f"{prefix}.{i}.bias"])
        if i < n - 1:
            x = relu(x)
    return x


def _axis_geometry(c: np.ndarray, n: int):
    # continuous latent index: centres sit on integers 0..n-1
    u = (c + 1.0) * n / 2.0 - 0.5
    r = np.rint(u)
    u = np.where(np.abs(u - r) < _SNAP, r, u)
    uc = np.clip(u, 0.0, n - 1.0)
    i0 = np.clip(np.floor(uc), 0, n - 2).astype(np.intp)
    t = uc - i0
    return u, i0, t


def ensemble_geometry(coords: np.ndarray, h: int, w: int, weighting: str = "diagonal"):
    """Corner indices, blend weights and relative offsets for each query.

    Returns ``(iy, ix, weights, rel)`` with shapes 4 x Q (corner order 00, 01,
    10, 11 = top-left, top-right, bottom-left, bottom-right), 4 x Q, and
    4 x Q x 2.  Offsets are ``x_q - x_i`` in units of the latent grid pitch.
    Queries beyond the outermost latent centres use the nearest corner set and
    weights from the clamped position.
    """
    if h < 2 or w < 2:
        raise ValueError(f"local ensemble needs a feature grid of at least 2x2, got {h}x{w}")
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown area weighting {weighting!r}")
    uy, y0, ty = _axis_geometry(coords[:, 0], h)
    ux, x0, tx = _axis_geometry(coords[:, 1], w)
    iy = np.stack([y0, y0, y0 + 1, y0 + 1])
    ix = np.stack([x0, x0 + 1, x0, x0 + 1])
    # area of the rectangle spanned by the query and each corner
    dy = np.stack([ty, ty, 1 - ty, 1 - ty])
    dx = np.stack([tx, 1 - tx, tx, 1 - tx])
    areas = dy * dx
    if weighting == "diagonal":
        areas = areas[::-1]
    weights = areas / areas.sum(axis=0)
    rel = np.stack([uy[None] - iy, ux[None] - ix], axis=-1)
    return iy, ix, weights, rel


def local_ensemble_decode(
    fm: Tensor,
    queries: QueryBatch,
    store: ParamStore,
    prefix: str,
    cfg: MlpConfig,
    image_extra: Tensor | None = None,
    query_extra: Tensor | None = None,
    weighting: str = "diagonal",
) -> Tensor:
    """Blend the MLP decodes of the four latent codes around each query.

    ``fm`` is an unfolded N x C' x h x w feature map.  The MLP input of every
    (query, corner) pair is [code, image_extra[owner], query_extra, offset,
    cell], with the cell measured in latent pitches like the offset.
    """
    n, _, h, w = fm.shape
    q = len(queries)
    iy, ix, weights, rel = ensemble_geometry(queries.coords, h, w, weighting)
    dtype = fm.dtype
    rows = map_to_rows(fm)
    flat = (queries.owner[None] * (h * w) + iy * w + ix).reshape(-1)
    parts = [take_rows(rows, flat)]
    if image_extra is not None:
        parts.append(take_rows(image_extra, np.tile(queries.owner, 4)))
    if query_extra is not None:
        if query_extra.shape[0] != q:
            raise ValueError(f"per-query features have {query_extra.shape[0]} rows for {q} queries")
        parts.append(concat([query_extra] * 4, axis=0))
    cell = queries.cells * np.array([h / 2.0, w / 2.0])
    parts.append(Tensor(rel.reshape(-1, 2).astype(dtype)))
    parts.append(Tensor(np.tile(cell, (4, 1)).astype(dtype)))
    out = mlp_forward(concat(parts, axis=-1), store, prefix, cfg)
    return blend(out, weights)


def as_batch(lr) -> np.ndarray:
    """An image (H x W x 3) or image batch (N x H x W x 3) as a batch."""
    lr = np.asarray(lr)
    return lr[None] if lr.ndim == 3 else lr


def decoder_width(code_channels: int, extra: int = 0) -> int:
    """MLP input width for unfolded codes plus extras, offset and cell."""
    return 9 * code_channels + extra + 4


class Liif:
    """Plain single-branch local implicit image function.

    Parameter names and initialisation streams match the SR branch of
    :class:`ddir.model.DdirModel`, so both start from identical weights.
    """

    def __init__(self, encoder: EncoderConfig = EncoderConfig(), hidden: int = 64, layers: int = 5,
                 seed: int = 0, dtype=np.float32, weighting: str = "diagonal"):
        self.encoder = encoder
        self.mlp = MlpConfig(decoder_width(encoder.channels), hidden, layers)
        self.weighting = weighting
        self.store = ParamStore()
        init_encoder(self.store, "enc_sr", encoder, np.random.default_rng([seed, 0]), dtype)
        init_mlp(self.store, "mlp_sr", self.mlp, np.random.default_rng([seed, 1]), dtype)

    def predict(self, lr, queries: QueryBatch) -> Tensor:
        fm = encode(as_batch(lr), self.store, "enc_sr", self.encoder)
        return local_ensemble_decode(unfold3x3(fm), queries, self.store, "mlp_sr", self.mlp,
                                     weighting=self.weighting)

    def loss(self, lr, queries: QueryBatch) -> Tensor:
        return l1_loss(self.predict(lr, queries), queries.targets.astype(self.store["mlp_sr.0.weight"].dtype))


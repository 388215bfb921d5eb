"""Dual-branch model: an SR branch and a deformation branch.

Both branches own an encoder and a decoding MLP.  The deformation branch
predicts the RGB residual between the ground truth and the bicubic upscale
of the LR input; the SR branch receives that prediction as a per-query
feature.  The appearance embedding (spatial mean of the SR encoder's feature
map) is handed to the deformation decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderConfig, conv_shapes, encode, init_encoder
from .imaging import ResampleSpec, bicubic_resize, scaled_dims
from .lif import (
    QueryBatch,
    MlpConfig,
    WEIGHTINGS,
    as_batch,
    decoder_width,
    init_mlp,
    local_ensemble_decode,
)
from .numerics import (
    ParamStore,
    Tensor,
    add,
    global_average_pool,
    l1_loss,
    stop_gradient,
    unfold3x3,
)

DEFAULT_CHUNK = 65536
# initialisation stream per parameter group; the SR branch uses the same
# streams as the standalone Liif
GROUP_STREAMS = {"enc_sr": 0, "mlp_sr": 1, "enc_def": 2, "mlp_def": 3}


class WiringError(ValueError):
    pass


@dataclass(frozen=True)
class DdirConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    def_encoder: EncoderConfig = field(default_factory=EncoderConfig)
    hidden: int = 64
    def_hidden: int = 64
    layers: int = 5
    use_deformation_field: bool = True
    use_appearance_embedding: bool = True
    # also concatenate the embedding into the SR decoder when the deformation
    # branch is on (it is always routed there when the branch is off)
    appearance_to_sr: bool = False
    # block SR-loss gradients from flowing into the deformation branch
    stop_deformation_grad: bool = False
    area_weighting: str = "diagonal"

    def __post_init__(self):
        if self.area_weighting not in WEIGHTINGS:
            raise WiringError(f"unknown area weighting {self.area_weighting!r}")
        if self.appearance_to_sr and not self.use_appearance_embedding:
            raise WiringError("appearance_to_sr requires use_appearance_embedding")
        if self.stop_deformation_grad and not self.use_deformation_field:
            raise WiringError("stop_deformation_grad requires use_deformation_field")

    @property
    def embedding_into_sr(self) -> bool:
        return self.use_appearance_embedding and (self.appearance_to_sr or not self.use_deformation_field)

    def sr_mlp(self) -> MlpConfig:
        extra = 3 if self.use_deformation_field else 0
        if self.embedding_into_sr:
            extra += self.encoder.channels
        return MlpConfig(decoder_width(self.encoder.channels, extra), self.hidden, self.layers)

    def def_mlp(self) -> MlpConfig:
        extra = self.encoder.channels if self.use_appearance_embedding else 0
        return MlpConfig(decoder_width(self.def_encoder.channels, extra), self.def_hidden, self.layers)


@dataclass
class TrainStepOutput:
    sr_pred: Tensor
    def_pred: Tensor | None
    loss_sr: Tensor
    loss_def: Tensor
    loss_total: Tensor


@dataclass
class Features:
    fm_sr: Tensor
    sr_codes: Tensor
    def_codes: Tensor | None
    embedding: Tensor | None


class DdirModel:
    """Parameters (groups enc_sr, enc_def, mlp_sr, mlp_def) and wiring.

    The deformation groups only exist when the deformation field is enabled.
    """

    def __init__(self, cfg: DdirConfig = DdirConfig(), seed: int = 0, dtype=np.float32,
                 store: ParamStore | None = None):
        self.cfg = cfg
        if store is None:
            store = ParamStore()
            init_encoder(store, "enc_sr", cfg.encoder, _stream(seed, "enc_sr"), dtype)
            init_mlp(store, "mlp_sr", cfg.sr_mlp(), _stream(seed, "mlp_sr"), dtype)
            if cfg.use_deformation_field:
                init_encoder(store, "enc_def", cfg.def_encoder, _stream(seed, "enc_def"), dtype)
                init_mlp(store, "mlp_def", cfg.def_mlp(), _stream(seed, "mlp_def"), dtype)
        self.store = store
        self._check_store()

    def _check_store(self) -> None:
        want = expected_shapes(self.cfg)
        have = {n: p.shape for n, p in self.store.params.items()}
        if want != have:
            missing = sorted(set(want) - set(have))
            extra = sorted(set(have) - set(want))
            wrong = sorted(n for n in set(want) & set(have) if want[n] != have[n])
            raise WiringError(
                f"parameters do not match the config (missing={missing[:3]}, "
                f"unexpected={extra[:3]}, wrong shape={wrong[:3]})"
            )

    @property
    def dtype(self):
        return self.store["mlp_sr.0.weight"].dtype

    def features(self, lr) -> Features:
        lr = as_batch(lr).astype(self.dtype)
        fm_sr = encode(lr, self.store, "enc_sr", self.cfg.encoder)
        emb = appearance_embedding(fm_sr) if self.cfg.use_appearance_embedding else None
        def_codes = None
        if self.cfg.use_deformation_field:
            def_codes = unfold3x3(encode(lr, self.store, "enc_def", self.cfg.def_encoder))
        return Features(fm_sr, unfold3x3(fm_sr), def_codes, emb)

    def decode(self, feats: Features, queries: QueryBatch) -> tuple[Tensor | None, Tensor]:
        """Deformation prediction (or None) and SR prediction for the queries."""
        cfg = self.cfg
        def_pred = None
        query_extra = None
        if cfg.use_deformation_field:
            def_pred = local_ensemble_decode(
                feats.def_codes, queries, self.store, "mlp_def", cfg.def_mlp(),
                image_extra=feats.embedding, weighting=cfg.area_weighting,
            )
            query_extra = stop_gradient(def_pred) if cfg.stop_deformation_grad else def_pred
        sr_pred = local_ensemble_decode(
            feats.sr_codes, queries, self.store, "mlp_sr", cfg.sr_mlp(),
            image_extra=feats.embedding if cfg.embedding_into_sr else None,
            query_extra=query_extra, weighting=cfg.area_weighting,
        )
        return def_pred, sr_pred


def expected_shapes(cfg: DdirConfig) -> dict[str, tuple[int, ...]]:
    groups = [("enc_sr", cfg.encoder, "mlp_sr", cfg.sr_mlp())]
    if cfg.use_deformation_field:
        groups.append(("enc_def", cfg.def_encoder, "mlp_def", cfg.def_mlp()))
    shapes: dict[str, tuple[int, ...]] = {}
    for enc_name, enc, mlp_name, mlp in groups:
        for name, shape in conv_shapes(enc):
            shapes[f"{enc_name}.{name}.weight"] = shape
            shapes[f"{enc_name}.{name}.bias"] = (shape[0],)
        for i, (d_in, d_out) in enumerate(mlp.widths()):
            shapes[f"{mlp_name}.{i}.weight"] = (d_out, d_in)
            shapes[f"{mlp_name}.{i}.bias"] = (d_out,)
    return shapes


def _stream(seed: int, group: str) -> np.random.Generator:
    return np.random.default_rng([seed, GROUP_STREAMS[group]])


def appearance_embedding(fm_sr: Tensor) -> Tensor:
    """Spatial mean of the SR encoder's (pre-unfolding) feature map."""
    return global_average_pool(fm_sr)


def pixel_indices(coords: np.ndarray, hr_dims: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixel positions of queries that sit on pixel centres of ``hr_dims``."""
    h, w = hr_dims
    fy = ((coords[:, 0] + 1.0) * h - 1.0) / 2.0
    fx = ((coords[:, 1] + 1.0) * w - 1.0) / 2.0
    iy, ix = np.rint(fy), np.rint(fx)
    if np.any(np.abs(fy - iy) > 1e-6) or np.any(np.abs(fx - ix) > 1e-6):
        raise ValueError(f"queries do not lie on the pixel centres of a {h}x{w} grid")
    if iy.min(initial=0) < 0 or ix.min(initial=0) < 0 or iy.max(initial=0) >= h or ix.max(initial=0) >= w:
        raise ValueError(f"queries fall outside a {h}x{w} grid")
    return iy.astype(np.intp), ix.astype(np.intp)


def deformation_target(gt_pixels, lr_img, queries: QueryBatch, hr_dims: tuple[int, int]) -> np.ndarray:
    """Ground truth minus the bicubic upscale of ``lr_img`` at the query pixels."""
    iy, ix = pixel_indices(queries.coords, hr_dims)
    up = bicubic_resize(lr_img, ResampleSpec(*hr_dims))
    return np.asarray(gt_pixels, dtype=np.float64).reshape(-1, 3) - up[iy, ix]


def total_loss(loss_sr: Tensor, loss_def: Tensor) -> Tensor:
    return add(loss_sr, loss_def)


def forward_train(model: DdirModel, batch) -> TrainStepOutput:
    """Predictions and losses for a training batch.

    ``batch`` needs ``lr`` (N x p x p x 3), ``queries`` (with targets and
    owners) and ``hr_dims`` (one HR patch size per item).
    """
    queries = batch.queries
    if queries.targets is None:
        raise ValueError("training queries must carry RGB targets")
    dtype = model.dtype
    feats = model.features(batch.lr)
    def_pred, sr_pred = model.decode(feats, queries)
    loss_sr = l1_loss(sr_pred, queries.targets.astype(dtype))
    if def_pred is not None:
        target = np.empty((len(queries), 3))
        for b, dims in enumerate(batch.hr_dims):
            sel = queries.owner == b
            target[sel] = deformation_target(queries.targets[sel], batch.lr[b], queries.subset(sel), dims)
        loss_def = l1_loss(def_pred, target.astype(dtype))
    else:
        loss_def = Tensor(np.zeros((), dtype=dtype))
    return TrainStepOutput(sr_pred, def_pred, loss_sr, loss_def, total_loss(loss_sr, loss_def))


def infer_full(model: DdirModel, lr_img, scale: float, chunk: int = DEFAULT_CHUNK,
               out_dims: tuple[int, int] | None = None) -> np.ndarray:
    """Super-resolve a whole image; the output is clamped to [0, 1].

    The output size is ``round(scale * dims)`` unless ``out_dims`` is given.
    No bicubic upscale is computed: the deformation branch runs predictively.
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    lr_img = np.asarray(lr_img)
    h, w = lr_img.shape[:2]
    hh, ww = out_dims if out_dims is not None else scaled_dims(h, w, scale)
    feats = model.features(lr_img)
    queries = QueryBatch.full_grid(hh, ww)
    out = np.empty((len(queries), 3), dtype=model.dtype)
    for s in range(0, len(queries), chunk):
        sel = slice(s, s + chunk)
        _, pred = model.decode(feats, queries.subset(sel))
        out[sel] = pred.data
    return np.clip(out.reshape(hh, ww, 3).astype(np.float64), 0.0, 1.0)


__all__ = [
    "DdirConfig",
    "DdirModel",
    "TrainStepOutput",
    "WiringError",
    "appearance_embedding",
    "deformation_target",
    "forward_train",
    "infer_full",
    "total_loss",
]

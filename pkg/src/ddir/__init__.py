"""Dual-level deformable implicit representation for scale-arbitrary super-resolution."""

from .encoder import EncoderConfig, encode
from .imaging import bicubic_resize, psnr_y, read_image, rgb_to_y, write_image
from .lif import Liif, MlpConfig, QueryBatch, coord_grid, local_ensemble_decode
from .model import DdirConfig, DdirModel, forward_train, infer_full
from .numerics import Graph, ParamStore, Tensor, adam_step, backward, finite_diff_check

__version__ = "0.1.0"

__all__ = [
    "DdirConfig",
    "DdirModel",
    "EncoderConfig",
    "Graph",
    "Liif",
    "MlpConfig",
    "ParamStore",
    "QueryBatch",
    "Tensor",
    "adam_step",
    "backward",
    "bicubic_resize",
    "coord_grid",
    "encode",
    "finite_diff_check",
    "forward_train",
    "infer_full",
    "local_ensemble_decode",
    "psnr_y",
    "read_image",
    "rgb_to_y",
    "write_image",
]

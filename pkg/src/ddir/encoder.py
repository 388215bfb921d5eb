"""EDSR-style residual feature extractor without the upsampling tail."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ParamStore, Tensor, add, conv2d, relu, unfold3x3

KERNEL = 3


@dataclass(frozen=True)
class EncoderConfig:
    channels: int = 32
    blocks: int = 4
    kernel: int = KERNEL

    def __post_init__(self):
        if self.channels < 1 or self.blocks < 0:
            raise ValueError(f"invalid encoder config: channels={self.channels}, blocks={self.blocks}")
        if self.kernel % 2 == 0:
            raise ValueError("encoder kernel size must be odd")


def conv_shapes(cfg: EncoderConfig, in_channels: int = 3) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of the encoder's conv weights, in forward order."""
    c, k = cfg.channels, cfg.kernel
    shapes = [("head", (c, in_channels, k, k))]
    for b in range(cfg.blocks):
        shapes.append((f"body.{b}.conv1", (c, c, k, k)))
        shapes.append((f"body.{b}.conv2", (c, c, k, k)))
    shapes.append(("tail", (c, c, k, k)))
    return shapes


def init_encoder(store: ParamStore, prefix: str, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> None:
    """Add uniform(+-1/sqrt(fan_in)) weights and biases for one encoder."""
    for name, shape in conv_shapes(cfg):
        bound = 1.0 / np.sqrt(shape[1] * shape[2] * shape[3])
        store.add(f"{prefix}.{name}.weight", rng.uniform(-bound, bound, shape).astype(dtype))
        store.add(f"{prefix}.{name}.bias", rng.uniform(-bound, bound, shape[0]).astype(dtype))


def _conv(x: Tensor, store: ParamStore, name: str, cfg: EncoderConfig) -> Tensor:
    w, b = store[f"{name}.weight"], store[f"{name}.bias"]
    if w.shape[-1] != cfg.kernel or w.shape[0] != cfg.channels:
        raise ValueError(f"parameter {name}.weight has shape {w.shape}, config expects {cfg}")
    return conv2d(x, w, b, padding=(cfg.kernel - 1) // 2)


def encode(img, store: ParamStore, prefix: str, cfg: EncoderConfig) -> Tensor:
    """Feature map with the input's spatial size.

    ``img`` is either a tensor shaped 3 x H x W / N x 3 x H x W, or an image
    array (H x W x 3, or N x H x W x 3 for a batch).  Layout: head conv, ``cfg.blocks``
    residual blocks (conv-relu-conv plus skip), tail conv, global skip from the
    head output.
    """
    if not isinstance(img, Tensor):
        arr = np.asarray(img)
        arr = np.moveaxis(arr, -1, -3)
        dtype = store[f"{prefix}.head.weight"].dtype
        img = Tensor(np.ascontiguousarray(arr, dtype=dtype))
    head = _conv(img, store, f"{prefix}.head", cfg)
    x = head
    for b in range(cfg.blocks):
        r = _conv(x, store, f"{prefix}.body.{b}.conv1", cfg)
        r = _conv(relu(r), store, f"{prefix}.body.{b}.conv2", cfg)
        x = add(x, r)
    x = _conv(x, store, f"{prefix}.tail", cfg)
    return add(x, head)


__all__ = ["EncoderConfig", "conv_shapes", "init_encoder", "encode", "unfold3x3"]

"""Images, bicubic resampling, luminance PSNR and PNG/PPM I/O.

An image is a float64 ``numpy`` array of shape H x W x 3 (channel-interleaved
RGB) with samples in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

KEYS_A = -0.5


class ImageIOError(OSError):
    pass


def as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected an H x W x 3 image, got shape {arr.shape}")
    return arr


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def scaled_dims(height: int, width: int, scale: float) -> tuple[int, int]:
    """Output extents for an upscale by ``scale``: round(scale * dims), halves up."""
    return round_half_up(scale * height), round_half_up(scale * width)


@dataclass(frozen=True)
class ResampleSpec:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"target extents must be >= 1, got {self.height}x{self.width}")


def keys_kernel(x, a: float = KEYS_A):
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def resample_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """n_dst x n_src matrix applying the 1-D cubic resampler with edge clamping."""
    idx, wgt = _taps(n_src, n_dst)
    m = np.zeros((n_dst, n_src))
    for k in range(4):
        np.add.at(m, (np.arange(n_dst), idx[:, k]), wgt[:, k])
    return m


@lru_cache(maxsize=256)
def _taps(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray]:
    """Clamped source indices and Keys weights of the four taps per output sample."""
    src = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    base = np.floor(src).astype(np.intp)
    offsets = np.arange(-1, 3)
    taps = base[:, None] + offsets[None, :]
    wgt = keys_kernel(src[:, None] - taps)
    idx = np.clip(taps, 0, n_src - 1)
    idx.flags.writeable = False
    wgt.flags.writeable = False
    return idx, wgt


def _resample_axis(img: np.ndarray, n_dst: int, axis: int) -> np.ndarray:
    # x_ref + sum_k w_k (x_k - x_ref): constants pass through exactly
    idx, wgt = _taps(img.shape[axis], n_dst)
    ref = np.take(img, idx[:, 1], axis=axis)
    shape = [1] * img.ndim
    shape[axis] = n_dst
    out = ref.copy()
    for k in range(4):
        out += wgt[:, k].reshape(shape) * (np.take(img, idx[:, k], axis=axis) - ref)
    return out


def bicubic_resize(img, spec: ResampleSpec | tuple[int, int]) -> np.ndarray:
    """Separable Keys (a=-0.5) resampling with align-centres mapping, clamped to [0, 1]."""
    img = as_image(img)
    if not isinstance(spec, ResampleSpec):
        spec = ResampleSpec(*spec)
    h, w, _ = img.shape
    if (h, w) == (spec.height, spec.width):
        return np.clip(img, 0.0, 1.0)
    out = _resample_axis(img, spec.height, 0)
    out = _resample_axis(out, spec.width, 1)
    return np.clip(out, 0.0, 1.0)


def rgb_to_y(img) -> np.ndarray:
    """BT.601 studio-swing luminance in [16/255, 235/255]."""
    img = as_image(img)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    return (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0


def psnr_y(a, b, shave: int = 0) -> float:
    """PSNR (dB, peak 1) on the Y channel after removing a ``shave``-pixel border.

    Returns ``math.inf`` for identical inputs.
    """
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr_y dimension mismatch: {a.shape[:2]} vs {b.shape[:2]}")
    h, w = a.shape[:2]
    if shave < 0 or 2 * shave >= min(h, w):
        raise ValueError(f"shave {shave} leaves nothing of a {h}x{w} image")
    ya, yb = rgb_to_y(a), rgb_to_y(b)
    if shave:
        ya = ya[shave:-shave, shave:-shave]
        yb = yb[shave:-shave, shave:-shave]
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def quantize(img) -> np.ndarray:
    """Round to the nearest 8-bit level and map back to [0, 1]."""
    return to_bytes(img).astype(np.float64) / 255.0


def to_bytes(img) -> np.ndarray:
    img = as_image(img)
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# I/O


def _ppm_tokens(raw: bytes, path: Path):
    """Split the header of a PPM into tokens, skipping comments."""
    tokens: list[bytes] = []
    pos = 0
    n = len(raw)
    while len(tokens) < 4:
        while pos < n and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise ImageIOError(f"{path}: truncated PPM header")
        if raw[pos:pos + 1] == b"#":
            while pos < n and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    return tokens, pos


def _read_ppm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    try:
        (magic, w, h, maxval), pos = _ppm_tokens(raw, path)
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ImageIOError(f"{path}: malformed PPM header") from exc
    if magic not in (b"P3", b"P6") or width < 1 or height < 1 or not 0 < maxval < 256:
        raise ImageIOError(f"{path}: unsupported PPM ({magic!r}, {width}x{height}, maxval {maxval})")
    count = width * height * 3
    if magic == b"P6":
        body = raw[pos + 1:pos + 1 + count]
        if len(body) != count:
            raise ImageIOError(f"{path}: truncated PPM data")
        vals = np.frombuffer(body, dtype=np.uint8).astype(np.float64)
    else:
        try:
            vals = np.array([int(t) for t in raw[pos:].split()], dtype=np.float64)
        except ValueError as exc:
            raise ImageIOError(f"{path}: non-numeric PPM sample") from exc
        if vals.size != count:
            raise ImageIOError(f"{path}: expected {count} samples, found {vals.size}")
    if vals.max(initial=0) > maxval:
        raise ImageIOError(f"{path}: sample exceeds maxval {maxval}")
    return vals.reshape(height, width, 3) / maxval


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"{path}: no such file")
    if path.suffix.lower() in (".ppm", ".pnm"):
        return _read_ppm(path)
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except Exception as exc:
        raise ImageIOError(f"{path}: cannot read image ({exc})") from exc
    return arr / 255.0


def write_image(path, img, binary: bool = True) -> Path:
    """Write an 8-bit PNG, or a PPM (P6, or P3 with ``binary=False``)."""
    path = Path(path)
    if not path.parent.is_dir():
        raise ImageIOError(f"{path.parent}: directory does not exist")
    data = to_bytes(img)
    h, w, _ = data.shape
    if path.suffix.lower() in (".ppm", ".pnm"):
        if binary:
            path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + data.tobytes())
        else:
            rows = [" ".join(str(v) for v in row.reshape(-1)) for row in data]
            path.write_text(f"P3\n{w} {h}\n255\n" + "\n".join(rows) + "\n")
    else:
        PILImage.fromarray(data).save(path, format="PNG")
    return path

"""LR-HR pair manifests, training batches and a synthetic degradation generator."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image as PILImage

from .imaging import (
    ImageIOError,
    ResampleSpec,
    bicubic_resize,
    read_image,
    round_half_up,
    scaled_dims,
    write_image,
)
from .lif import QueryBatch

MANIFEST_HEADER = ["scene", "scale", "lr_path", "hr_path"]
PATCH = 48
QUERIES = 2304


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class PairRecord:
    scene: str
    scale: float
    lr_path: Path
    hr_path: Path


@dataclass
class Manifest:
    records: list[PairRecord] = field(default_factory=list)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.records)

    def scales(self) -> list[float]:
        return sorted({r.scale for r in self.records})

    def with_scale(self, scale: float) -> list[PairRecord]:
        return [r for r in self.records if math.isclose(r.scale, scale, rel_tol=0, abs_tol=1e-9)]


def image_size(path) -> tuple[int, int]:
    """(height, width) read from the file header only."""
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"{path}: no such file")
    if path.suffix.lower() in (".ppm", ".pnm"):
        return read_image(path).shape[:2]
    try:
        with PILImage.open(path) as im:
            w, h = im.size
    except Exception as exc:
        raise ImageIOError(f"{path}: cannot read image ({exc})") from exc
    return h, w


def check_pair_dims(lr_dims, hr_dims, scale: float) -> bool:
    """True when HR extents are round(scale * LR extents) within one pixel."""
    expected = scaled_dims(lr_dims[0], lr_dims[1], scale)
    return all(abs(a - b) <= 1 for a, b in zip(hr_dims, expected))


def load_manifest(path, split: str = "train", min_lr: int | None = None, check_dims: bool = True) -> Manifest:
    """Parse a ``scene,scale,lr_path,hr_path`` CSV.

    Image paths are relative to the manifest's directory.  Each pair's extents
    are checked against the scale; ``min_lr`` additionally requires both LR
    extents to reach that size.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read manifest ({exc})") from exc
    root = path.parent
    records: list[PairRecord] = []
    seen: set[tuple[str, float]] = set()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        return Manifest([], split)
    header = [c.strip() for c in lines[0].split(",")]
    if header != MANIFEST_HEADER:
        raise DataError(f"{path}:1: expected header {','.join(MANIFEST_HEADER)}")
    for lineno, row in enumerate(csv.reader(lines[1:]), start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        scene, scale_s, lr_s, hr_s = (c.strip() for c in row)
        try:
            scale = float(scale_s)
        except ValueError:
            raise DataError(f"{path}:{lineno}: scale {scale_s!r} is not a number") from None
        if not (scale > 0 and math.isfinite(scale)) or not scene or not lr_s or not hr_s:
            raise DataError(f"{path}:{lineno}: malformed record")
        if (scene, scale) in seen:
            raise DataError(f"{path}:{lineno}: duplicate pair ({scene}, {scale})")
        seen.add((scene, scale))
        rec = PairRecord(scene, scale, root / lr_s, root / hr_s)
        if check_dims:
            lr_dims, hr_dims = image_size(rec.lr_path), image_size(rec.hr_path)
            if not check_pair_dims(lr_dims, hr_dims, scale):
                exp = scaled_dims(lr_dims[0], lr_dims[1], scale)
                raise DataError(
                    f"{path}:{lineno}: pair ({scene}, x{scale}) has HR {hr_dims[0]}x{hr_dims[1]} "
                    f"but LR {lr_dims[0]}x{lr_dims[1]} implies about {exp[0]}x{exp[1]}"
                )
            if min_lr is not None and min(lr_dims) < min_lr:
                raise DataError(f"{path}:{lineno}: LR of ({scene}, x{scale}) is smaller than {min_lr}x{min_lr}")
        records.append(rec)
    return Manifest(records, split)


def write_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    root = path.parent.resolve()
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            writer.writerow([
                r.scene,
                repr(float(r.scale)),
                Path(r.lr_path).resolve().relative_to(root).as_posix(),
                Path(r.hr_path).resolve().relative_to(root).as_posix(),
            ])
    return path


@lru_cache(maxsize=256)
def _cached_image(path: str, mtime: float) -> np.ndarray:
    img = read_image(path)
    img.setflags(write=False)
    return img


def load_pair_image(path) -> np.ndarray:
    path = Path(path)
    return _cached_image(str(path), path.stat().st_mtime)


@dataclass
class TrainBatch:
    lr: np.ndarray                     # N x p x p x 3
    scales: list[float]
    queries: QueryBatch                # targets + owner set
    hr_dims: list[tuple[int, int]]     # HR patch extents per item


def sample_batch(manifest: Manifest, seed, batch_size: int = 16, patch: int = PATCH,
                 queries: int = QUERIES, dtype=np.float32) -> TrainBatch:
    """Random LR crops with HR query pixels, reproducible from ``seed``.

    Per item: a uniformly chosen record, a random ``patch`` x ``patch`` LR
    window, the HR window of side round(patch * scale) at round(scale * LR
    origin), and ``queries`` HR pixels drawn without replacement.
    """
    if not manifest.records:
        raise DataError("cannot sample from an empty manifest")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lrs, scales, dims = [], [], []
    coords, cells, targets, owner = [], [], [], []
    for b in range(batch_size):
        rec = manifest.records[int(rng.integers(len(manifest.records)))]
        lr = load_pair_image(rec.lr_path)
        hr = load_pair_image(rec.hr_path)
        lh, lw = lr.shape[:2]
        if lh < patch or lw < patch:
            raise DataError(f"LR of ({rec.scene}, x{rec.scale}) is {lh}x{lw}, smaller than the {patch}px patch")
        y0 = int(rng.integers(lh - patch + 1))
        x0 = int(rng.integers(lw - patch + 1))
        side = round_half_up(patch * rec.scale)
        hh, hw = min(side, hr.shape[0]), min(side, hr.shape[1])
        hy0 = min(round_half_up(rec.scale * y0), hr.shape[0] - hh)
        hx0 = min(round_half_up(rec.scale * x0), hr.shape[1] - hw)
        hr_patch = hr[hy0:hy0 + hh, hx0:hx0 + hw]
        if hh * hw < queries:
            raise DataError(f"HR patch {hh}x{hw} has fewer than {queries} pixels")
        pix = rng.choice(hh * hw, size=queries, replace=False)
        iy, ix = np.divmod(pix, hw)
        coords.append(np.stack([-1.0 + (2.0 * iy + 1.0) / hh, -1.0 + (2.0 * ix + 1.0) / hw], axis=1))
        cells.append(np.broadcast_to([2.0 / hh, 2.0 / hw], (queries, 2)))
        targets.append(hr_patch[iy, ix])
        owner.append(np.full(queries, b))
        lrs.append(lr[y0:y0 + patch, x0:x0 + patch])
        scales.append(rec.scale)
        dims.append((hh, hw))
    qb = QueryBatch(
        np.concatenate(coords),
        np.concatenate(cells),
        np.concatenate(targets).astype(dtype),
        np.concatenate(owner),
    )
    return TrainBatch(np.stack(lrs).astype(dtype), scales, qb, dims)


# ---------------------------------------------------------------------------
# synthetic degradation


@dataclass(frozen=True)
class SyntheticConfig:
    shift: float = 0.08                  # per-channel offset drawn from [-shift, shift]
    gain: tuple[float, float] = (0.9, 1.1)
    sigma: tuple[float, float] = (0.2, 1.5)
    sigma_grid: int = 4                  # coarse grid of blur widths, interpolated per pixel
    noise: float = 0.0
    seed: int = 0
    shared_shift: bool = False           # one offset for all three channels

    def __post_init__(self):
        if not 0 <= self.shift < 0.5 or not 0 < self.gain[0] <= self.gain[1] or self.gain[1] > 2:
            raise ValueError("photometric ranges must keep LR samples clampable to [0, 1]")
        if not 0 <= self.sigma[0] <= self.sigma[1] or self.sigma_grid < 1 or self.noise < 0:
            raise ValueError("invalid blur/noise settings")

    @classmethod
    def bicubic_only(cls, seed: int = 0) -> "SyntheticConfig":
        return cls(shift=0.0, gain=(1.0, 1.0), sigma=(0.0, 0.0), noise=0.0, seed=seed)


@dataclass
class DegradationParams:
    gain: np.ndarray          # per channel
    offset: np.ndarray        # per channel
    sigma_grid: np.ndarray    # g x g blur widths (HR pixels)
    noise: float = 0.0
    noise_seed: int = 0

    def to_json(self) -> dict:
        return {
            "gain": self.gain.tolist(),
            "offset": self.offset.tolist(),
            "sigma_grid": self.sigma_grid.tolist(),
            "noise": self.noise,
            "noise_seed": self.noise_seed,
        }


def draw_params(cfg: SyntheticConfig, rng: np.random.Generator) -> DegradationParams:
    gain = rng.uniform(cfg.gain[0], cfg.gain[1], 3)
    offset = rng.uniform(-cfg.shift, cfg.shift, 3)
    if cfg.shared_shift:
        offset[:] = offset[0]
    sigma = rng.uniform(cfg.sigma[0], cfg.sigma[1], (cfg.sigma_grid, cfg.sigma_grid))
    return DegradationParams(gain, offset, sigma, cfg.noise, int(rng.integers(2**31)))


def sigma_field(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear interpolation of a coarse grid whose corners sit on the image corners."""
    gh, gw = grid.shape
    ys = np.linspace(0.0, gh - 1.0, h) if h > 1 else np.zeros(1)
    xs = np.linspace(0.0, gw - 1.0, w) if w > 1 else np.zeros(1)
    y0 = np.clip(np.floor(ys).astype(int), 0, max(gh - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(gw - 2, 0))
    y1, x1 = np.minimum(y0 + 1, gh - 1), np.minimum(x0 + 1, gw - 1)
    ty, tx = (ys - y0)[:, None], (xs - x0)[None, :]
    top = grid[y0][:, x0] * (1 - tx) + grid[y0][:, x1] * tx
    bottom = grid[y1][:, x0] * (1 - tx) + grid[y1][:, x1] * tx
    return top * (1 - ty) + bottom * ty


def variant_blur(img: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Per-pixel Gaussian blur with edge-clamped samples.

    Each output pixel uses its own normalised Gaussian of width ``sigma[y, x]``
    truncated at 3 sigma of the largest width; widths near zero leave the pixel
    unchanged.
    """
    smax = float(sigma.max(initial=0.0))
    if smax < 1e-3:
        return img.copy()
    h, w, _ = img.shape
    r = int(math.ceil(3.0 * smax))
    s2 = 2.0 * np.maximum(sigma, 1e-3) ** 2
    padded = np.pad(img, ((r, r), (r, r), (0, 0)), mode="edge")
    acc = np.zeros_like(img)
    norm = np.zeros((h, w))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            wgt = np.exp(-(dy * dy + dx * dx) / s2)
            acc += wgt[..., None] * padded[r + dy:r + dy + h, r + dx:r + dx + w]
            norm += wgt
    return acc / norm[..., None]


def lr_dims_for(hr_dims: tuple[int, int], scale: float) -> tuple[int, int]:
    return round_half_up(hr_dims[0] / scale), round_half_up(hr_dims[1] / scale)


def degrade(hr: np.ndarray, scale: float, params: DegradationParams) -> np.ndarray:
    """Blur, bicubic-downsample, then apply gain, offset and noise (clamped)."""
    h, w, _ = hr.shape
    blurred = variant_blur(hr, sigma_field(params.sigma_grid, h, w))
    lr = bicubic_resize(blurred, ResampleSpec(*lr_dims_for((h, w), scale)))
    lr = lr * params.gain + params.offset
    if params.noise > 0:
        lr = lr + np.random.default_rng(params.noise_seed).normal(0.0, params.noise, lr.shape)
    return np.clip(lr, 0.0, 1.0)


def scale_dirname(scale: float) -> str:
    return repr(float(scale))


def synth_generate(sources: Iterable[tuple[str, np.ndarray]] | str | Path, out_root,
                   cfg: SyntheticConfig, scales: Sequence[float], split: str = "train") -> Manifest:
    """Write ``<root>/<scene>/<scale>/{lr,hr}.png`` plus ``meta.json`` and ``manifest.csv``.

    ``sources`` is a directory of RGB images or an iterable of (scene, image).
    """
    if isinstance(sources, (str, Path)):
        src_dir = Path(sources)
        files = sorted(p for p in src_dir.iterdir() if p.suffix.lower() in (".png", ".ppm", ".pnm"))
        if not files:
            raise DataError(f"{src_dir}: no source images")
        sources = [(p.stem, read_image(p)) for p in files]
    out_root = Path(out_root)
    try:
        out_root.mkdir(parents=True, exist_ok=True)
        probe = out_root / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"{out_root}: output directory is not writable ({exc})") from exc
    records = []
    for si, (scene, hr) in enumerate(sources):
        for ki, scale in enumerate(scales):
            pair_seed = [cfg.seed, si, ki]
            params = draw_params(cfg, np.random.default_rng(pair_seed))
            lr = degrade(hr, scale, params)
            pair_dir = out_root / scene / scale_dirname(scale)
            pair_dir.mkdir(parents=True, exist_ok=True)
            write_image(pair_dir / "lr.png", lr)
            write_image(pair_dir / "hr.png", hr)
            meta = {"scene": scene, "scale": float(scale), "seed": pair_seed, **params.to_json()}
            (pair_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
            records.append(PairRecord(scene, float(scale), pair_dir / "lr.png", pair_dir / "hr.png"))
    manifest = Manifest(records, split)
    write_manifest(manifest, out_root / "manifest.csv")
    return manifest


def smooth_images(count: int, size: int | tuple[int, int], seed: int = 0, waves: int = 6,
                  amplitude: float = 0.32, min_period: float = 10.0) -> list[np.ndarray]:
    """Random band-limited RGB test images with per-channel mean exactly 0.5.

    Each channel is a sum of ``waves`` oriented sinusoids with periods of at
    least ``min_period`` pixels, rescaled so its peak deviation from 0.5 is
    ``amplitude``.
    """
    h, w = (size, size) if isinstance(size, int) else size
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    images = []
    for _ in range(count):
        img = np.empty((h, w, 3))
        for c in range(3):
            acc = np.zeros((h, w))
            for _ in range(waves):
                period = rng.uniform(min_period, 3.0 * max(h, w))
                theta = rng.uniform(0, np.pi)
                phase = rng.uniform(0, 2 * np.pi)
                k = 2 * np.pi / period
                acc += rng.uniform(0.3, 1.0) * np.sin(k * (np.cos(theta) * yy + np.sin(theta) * xx) + phase)
            acc -= acc.mean()
            acc *= amplitude / max(np.abs(acc).max(), 1e-12)
            img[..., c] = 0.5 + acc
        images.append(img)
    return images


"""Image ingestion, reference bicubic resampling, and batch sampling.

Images are (H, W, 3) float64 arrays in [0, 1]. The resizer follows the
de-facto reference convention: separable Keys cubic kernel (a = -0.5),
source coordinate u = (i + 0.5)/scale - 0.5, replicate edge handling,
normalized window weights, and kernel support widened by the scale factor
when downscaling (antialiasing). Training batches reproduce the continuous
scale sampling scheme: per item draw s uniform on [1, s_max], crop a
floor(p*s) square, downscale it to p, and sample query pixels from the
crop without replacement.

Randomness is counter based: each (seed, epoch, index) triple opens an
independent Philox stream, so batch composition is identical regardless of
worker count or iteration order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CoordFrame, QueryBatch, axis_centers

logger = logging.getLogger(__name__)

KERNEL_A = -0.5
KERNEL_SUPPORT = 4.0
_SKIP_RESAMPLE_LIMIT = 100


def cubic_kernel(x: np.ndarray, a: float = KERNEL_A) -> np.ndarray:
    """Keys cubic interpolation kernel with parameter a."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2 = x * x
    x3 = x2 * x
    inner = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    outer = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, inner, np.where(x < 2.0, outer, 0.0))


def resize_axis_weights(in_n: int, out_n: int, antialias: bool = True):
    """Source indices and normalized weights for one resampling axis.

    Returns (indices (out_n, P) clamped into [0, in_n), weights (out_n, P)
    summing to 1 per row).
    """
    scale = out_n / in_n
    if antialias and scale < 1.0:
        kscale = scale
        width = KERNEL_SUPPORT / scale
    else:
        kscale = 1.0
        width = KERNEL_SUPPORT
    u = (np.arange(out_n, dtype=np.float64) + 0.5) / scale - 0.5
    p = int(np.ceil(width)) + 2
    left = np.floor(u - width / 2.0).astype(np.int64) + 1
    indices = left[:, None] + np.arange(p)[None, :]
    weights = kscale * cubic_kernel(kscale * (u[:, None] - indices))
    weights = weights / weights.sum(axis=1, keepdims=True)
    indices = np.clip(indices, 0, in_n - 1)
    return indices, weights


def bicubic_resize(
    image: np.ndarray, out_h: int, out_w: int, antialias: bool = True
) -> np.ndarray:
    """Separable cubic resampling of an (H, W, C) or (H, W) image.

    With ``antialias`` the kernel is widened on downscaling axes; exact
    identity whenever an axis keeps its size. Output is clamped to [0, 1].
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be >= 1")
    image = np.asarray(image, dtype=np.float64)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[..., None]

    out = image
    if out.shape[0] != out_h:
        idx, wts = resize_axis_weights(out.shape[0], out_h, antialias)
        out = np.einsum("opwc,op->owc", out[idx], wts)
    if out.shape[1] != out_w:
        idx, wts = resize_axis_weights(out.shape[1], out_w, antialias)
        out = np.einsum("hopc,op->hoc", out[:, idx], wts)
    out = np.ascontiguousarray(np.clip(out, 0.0, 1.0))
    return out[..., 0] if squeeze else out


def load_image(path) -> np.ndarray:
    """Decode a PNG (or other Pillow-readable) file to (H, W, 3) in [0, 1].

    8-bit values are divided by 255, 16-bit grayscale by 65535; single
    channel images are replicated to three channels, alpha is dropped.
    """
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("RGB", "RGBA"):
            arr = np.asarray(im, dtype=np.float64)[..., :3] / 255.0
        elif mode == "L":
            arr = np.asarray(im, dtype=np.float64) / 255.0
            arr = np.repeat(arr[..., None], 3, axis=-1)
        elif mode in ("I;16", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
            arr = np.repeat(arr[..., None], 3, axis=-1)
        else:
            raise ValueError(f"unsupported image mode {mode!r} in {path}")
    return np.clip(arr, 0.0, 1.0)


def save_image(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) [0, 1] image as 8-bit PNG, rounding half to even."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    quantized = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


@dataclass(frozen=True)
class ImageRecord:
    """One dataset entry: stable id, pixel dimensions, and file path."""

    id: str
    height: int
    width: int
    path: Path


@dataclass
class Dataset:
    """A directory of 3-channel images forming one split."""

    root: Path
    split: str
    records: list[ImageRecord] = field(default_factory=list)

    @classmethod
    def scan(cls, root, split: str) -> "Dataset":
        """Collect images under root/split, optionally via a manifest.

        If root/split/manifest.txt exists, it lists one relative path per
        line; otherwise every *.png under the split directory is taken in
        sorted order. Each file must decode to a supported 3-channel form.
        """
        root = Path(root)
        split_dir = root / split
        if not split_dir.is_dir():
            raise ValueError(f"split directory not found: {split_dir}")
        manifest = split_dir / "manifest.txt"
        if manifest.is_file():
            names = [
                line.strip()
                for line in manifest.read_text().splitlines()
                if line.strip()
            ]
            paths = [split_dir / name for name in names]
        else:
            paths = sorted(split_dir.glob("*.png"))
        if not paths:
            raise ValueError(f"no images found in {split_dir}")
        records = []
        for p in paths:
            if not p.is_file():
                raise ValueError(f"missing image file: {p}")
            img = load_image(p)
            records.append(
                ImageRecord(id=p.stem, height=img.shape[0], width=img.shape[1], path=p)
            )
        return cls(root=root, split=split, records=records)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class SampleSpec:
    """Patch, scale, and pixel sampling parameters for training."""

    lr_patch: int = 48
    s_max: float = 4.0
    pixels_per_patch: int = 48 * 48
    seed: int = 0

    def __post_init__(self):
        if self.lr_patch < 1 or self.pixels_per_patch < 1:
            raise ValueError("lr_patch and pixels_per_patch must be >= 1")
        if self.s_max < 1.0:
            raise ValueError("s_max must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def validate(self, dataset: Dataset) -> None:
        """Require every training image to admit the largest possible crop."""
        need = int(np.floor(self.lr_patch * self.s_max))
        smallest = min(min(r.height, r.width) for r in dataset.records)
        if need > smallest:
            raise ValueError(
                f"lr_patch*s_max={need} exceeds smallest image dimension {smallest}"
            )
        if self.pixels_per_patch > self.lr_patch * self.lr_patch:
            raise ValueError("pixels_per_patch exceeds the LR pixel count")


def sample_stream(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for one (epoch, item) pair."""
    return np.random.Generator(
        np.random.Philox(seed=np.random.SeedSequence(entropy=(seed, epoch, index)))
    )


@dataclass
class TrainItem:
    """One training example: an LR patch plus its sampled HR queries."""

    lr: np.ndarray  # (p, p, 3)
    queries: QueryBatch  # centers in the crop frame, radii (1/s', 1/s')
    scale: float  # realized s' = floor(p*s)/p
    rows: np.ndarray = None  # (k,) sampled HR pixel rows within the crop
    cols: np.ndarray = None  # (k,) sampled HR pixel cols


def sample_item(
    dataset: Dataset,
    spec: SampleSpec,
    rng: np.random.Generator,
    image_cache: dict | None = None,
) -> TrainItem:
    """Draw one (LR patch, query pixels) pair from a random image.

    Images too small for the drawn crop are skipped with a log line and the
    draw is repeated; a valid spec never triggers this path.
    """
    for _ in range(_SKIP_RESAMPLE_LIMIT):
        record = dataset.records[int(rng.integers(len(dataset.records)))]
        s = float(rng.uniform(1.0, spec.s_max))
        hr_side = int(np.floor(spec.lr_patch * s))
        if hr_side > record.height or hr_side > record.width:
            logger.warning(
                "image %s (%dx%d) too small for crop %d, resampling",
                record.id,
                record.height,
                record.width,
                hr_side,
            )
            continue
        if image_cache is not None and record.id in image_cache:
            img = image_cache[record.id]
        else:
            img = load_image(record.path)
            if image_cache is not None:
                image_cache[record.id] = img
        top = int(rng.integers(record.height - hr_side + 1))
        left = int(rng.integers(record.width - hr_side + 1))
        hr_patch = img[top : top + hr_side, left : left + hr_side]

        realized = hr_side / spec.lr_patch
        lr = bicubic_resize(hr_patch, spec.lr_patch, spec.lr_patch)

        flat = rng.choice(hr_side * hr_side, size=spec.pixels_per_patch, replace=False)
        rows, cols = np.divmod(flat, hr_side)
        centers_1d = axis_centers(hr_side)
        centers = np.stack([centers_1d[cols], centers_1d[rows]], axis=-1)
        radii = np.full((spec.pixels_per_patch, 2), 1.0 / realized)
        targets = hr_patch[rows, cols]
        queries = QueryBatch(centers=centers, radii=radii, targets=targets)
        return TrainItem(lr=lr, queries=queries, scale=realized, rows=rows, cols=cols)
    raise RuntimeError("exceeded resample limit; dataset images too small for spec")


def sample_batch(
    dataset: Dataset,
    spec: SampleSpec,
    epoch: int,
    indices,
    image_cache: dict | None = None,
) -> list[TrainItem]:
    """Deterministic batch: item k uses the (seed, epoch, indices[k]) stream."""
    spec.validate(dataset)
    return [
        sample_item(dataset, spec, sample_stream(spec.seed, epoch, int(ix)), image_cache)
        for ix in indices
    ]


def make_toy_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """Synthesize one structured test image: gradients, stripes, shapes.

    The palette mixes a smooth low-frequency field with band-limited
    oriented stripes and sharp-edged rectangles and disks, giving learnable
    high-frequency detail that plain cubic upscaling blurs.
    """
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, size), np.linspace(0.0, 1.0, size), indexing="ij"
    )
    img = np.empty((size, size, 3))
    for c in range(3):
        ax, ay, ph = rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(0, 2 * np.pi)
        img[..., c] = 0.5 + 0.2 * np.sin(2 * np.pi * (ax * xx + ay * yy) + ph)

    for _ in range(3):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(6.0, 14.0)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.10, 0.20)
        wave = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        color = rng.uniform(0.5, 1.0, size=3)
        img += amp * wave[..., None] * color[None, None, :]

    for _ in range(4):
        color = rng.uniform(0.0, 1.0, size=3)
        if rng.uniform() < 0.5:
            h = int(rng.integers(size // 8, size // 3))
            w = int(rng.integers(size // 8, size // 3))
            top = int(rng.integers(0, size - h))
            left = int(rng.integers(0, size - w))
            img[top : top + h, left : left + w] = (
                0.35 * img[top : top + h, left : left + w] + 0.65 * color
            )
        else:
            cy, cx = rng.uniform(0.15, 0.85, size=2) * size
            r = rng.uniform(size / 12, size / 5)
            mask = (yy * size - cy) ** 2 + (xx * size - cx) ** 2 <= r * r
            img[mask] = 0.35 * img[mask] + 0.65 * color
    return np.clip(img, 0.0, 1.0)


def write_toy_dataset(
    root, n_train: int = 8, n_val: int = 3, size: int = 128, seed: int = 0
) -> None:
    """Materialize a small synthetic dataset under root/{train,val}."""
    root = Path(root)
    for split, count, offset in (("train", n_train, 0), ("val", n_val, 10_000)):
        out_dir = root / split
        out_dir.mkdir(parents=True, exist_ok=True)
        for k in range(count):
            rng = np.random.Generator(
                np.random.Philox(seed=np.random.SeedSequence(entropy=(seed, offset + k)))
            )
            save_image(out_dir / f"{split}_{k:03d}.png", make_toy_image(size, rng))

"""Closed-form positional encodings over points and pixel regions.

A query pixel is an axis-aligned rectangle given by its center and per-axis
radius (half edge length). Four encodings of that pixel are supported:

  none      raw center coordinates                          -> 2 values
  cell      raw center + full edge lengths (2*r)            -> 4 values
  plain_pe  raw center + sin/cos(2^k * c) for k = 0..L-1    -> 4L + 2 values
  ipe       raw center + sin/cos(2^k * c) * sinc(2^k * r)   -> 4L + 2 values

``ipe`` is the exact mean of ``plain_pe`` over the pixel rectangle: the 2D
integral of sin(w*x) over [c-r, c+r] separates per axis and evaluates to
sin(w*c) * sin(w*r) / (w*r), i.e. the center encoding attenuated by
sinc(w*r). As the radius shrinks the sinc factor tends to 1 and ipe
degenerates to plain_pe; as it grows, high octaves are damped toward 0.

Frequencies are w = 2^k with no pi factor. The output layout is axis-major,
octave-minor, (sin, cos) pairs, with the raw coordinates prepended when
``include_raw`` is set (the default). This layout is frozen: trained
checkpoints depend on it.

Everything here is a pure function of its arguments; concurrent use is
unrestricted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

VARIANTS = ("none", "cell", "plain_pe", "ipe")

# |t| below this switches sinc to its quadratic Taylor branch 1 - t^2/6.
# The truncation error there is < 1e-17, below double rounding noise.
# Module-level (not inlined) so the self-check can fault-inject it.
SINC_SWITCH = 1e-4


@dataclass(frozen=True)
class EncodingConfig:
    """Which encoding to apply to query pixels, and at what bandwidth.

    ``bandwidth_L`` is the number of octaves and only matters for the
    sinusoid variants. ``include_raw`` prepends the unencoded coordinates
    so the decoder always sees the raw relative position too; disabling it
    feeds the sinusoid block alone.
    """

    variant: str = "ipe"
    bandwidth_L: int = 10
    include_raw: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown encoding variant {self.variant!r}")
        if self.variant in ("plain_pe", "ipe") and self.bandwidth_L < 1:
            raise ValueError("bandwidth_L must be >= 1 for sinusoid variants")

    def dim(self) -> int:
        """Output length for 2D coordinates."""
        if self.variant == "none":
            return 2
        if self.variant == "cell":
            return 4
        raw = 2 if self.include_raw else 0
        return 4 * self.bandwidth_L + raw


@dataclass(frozen=True)
class PixelRegion:
    """A query pixel: center (c_x, c_y) and per-axis radius (r_W, r_H).

    The region is the axis-aligned rectangle
    [c_x - r_W, c_x + r_W] x [c_y - r_H, c_y + r_H]. Radii may differ per
    axis (anisotropic scales).
    """

    center: tuple[float, float]
    radius: tuple[float, float]

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (*self.center, *self.radius)):
            raise ValueError("PixelRegion requires finite center and radius")
        if self.radius[0] <= 0 or self.radius[1] <= 0:
            raise ValueError("PixelRegion radius components must be positive")


@dataclass(frozen=True)
class EncodingVector:
    """An encoding result together with the config that produced it."""

    values: np.ndarray
    config: EncodingConfig

    def __post_init__(self):
        if len(self.values) != self.config.dim():
            raise ValueError(
                f"encoding length {len(self.values)} does not match "
                f"declared dimensionality {self.config.dim()}"
            )


def sinc_stable(t: float) -> float:
    """sin(t)/t with the removable singularity handled.

    Below ``SINC_SWITCH`` the Taylor branch 1 - t^2/6 is used; the two
    branches agree to well under double rounding error at the switch point.
    """
    if not math.isfinite(t):
        raise ValueError("sinc_stable requires finite input")
    if abs(t) < SINC_SWITCH:
        return 1.0 - t * t / 6.0
    return math.sin(t) / t


def sinc_array(t: np.ndarray) -> np.ndarray:
    """Vectorized ``sinc_stable``."""
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ValueError("sinc_array requires finite input")
    small = np.abs(t) < SINC_SWITCH
    safe = np.where(small, 1.0, t)
    return np.where(small, 1.0 - t * t / 6.0, np.sin(safe) / safe)


def _frequencies(L: int) -> np.ndarray:
    # w = 2^k, k = 0..L-1; no pi factor.
    return np.exp2(np.arange(L, dtype=np.float64))


def _sinusoid_block(coords: np.ndarray, L: int, damping: np.ndarray | None) -> np.ndarray:
    """(sin, cos) pairs per axis and octave, optionally damped per (axis, octave).

    coords: (..., 2); damping: (..., 2, L) or None. Returns (..., 4L) in the
    frozen axis-major, octave-minor layout.
    """
    w = _frequencies(L)
    phase = coords[..., :, None] * w  # (..., 2, L)
    pair = np.stack([np.sin(phase), np.cos(phase)], axis=-1)  # (..., 2, L, 2)
    if damping is not None:
        pair = pair * damping[..., None]
    return pair.reshape(*coords.shape[:-1], 4 * L)


def encode_queries(
    centers: np.ndarray, radii: np.ndarray, config: EncodingConfig
) -> np.ndarray:
    """Encode a batch of query pixels. centers, radii: (..., 2) -> (..., dim).

    All variants are drop-in interchangeable: only the output width changes.
    Computed in float64; deterministic.
    """
    centers = np.asarray(centers, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    if not np.all(np.isfinite(centers)):
        raise ValueError("query centers must be finite")
    if config.variant == "none":
        return centers.copy()
    if config.variant == "cell":
        if np.any(radii <= 0):
            raise ValueError("cell encoding requires positive radii")
        return np.concatenate([centers, 2.0 * radii], axis=-1)
    L = config.bandwidth_L
    if config.variant == "plain_pe":
        block = _sinusoid_block(centers, L, None)
    else:  # ipe
        if np.any(radii <= 0):
            raise ValueError("ipe requires positive radii")
        damping = sinc_array(radii[..., :, None] * _frequencies(L))
        block = _sinusoid_block(centers, L, damping)
    if config.include_raw:
        return np.concatenate([centers, block], axis=-1)
    return block


def plain_pe(point, L: int) -> EncodingVector:
    """Positional encoding of a single 2D point at octave frequencies 2^k."""
    if L < 1:
        raise ValueError("plain_pe requires L >= 1")
    config = EncodingConfig(variant="plain_pe", bandwidth_L=L)
    values = encode_queries(np.asarray(point, dtype=np.float64), np.zeros(2), config)
    return EncodingVector(values=values, config=config)


def ipe(region: PixelRegion, L: int) -> EncodingVector:
    """Integrated positional encoding: the mean of plain_pe over the region.

    Closed form: per axis and frequency w = 2^k, the pair
    (sin(w*c) * sinc(w*r), cos(w*c) * sinc(w*r)).
    """
    if L < 1:
        raise ValueError("ipe requires L >= 1")
    config = EncodingConfig(variant="ipe", bandwidth_L=L)
    values = encode_queries(
        np.asarray(region.center, dtype=np.float64),
        np.asarray(region.radius, dtype=np.float64),
        config,
    )
    return EncodingVector(values=values, config=config)


def cell_code(radius) -> np.ndarray:
    """Full pixel edge lengths (2*r_W, 2*r_H), the size part of cell decoding.

    The ``cell`` variant concatenates this after the raw coordinates.
    """
    radius = np.asarray(radius, dtype=np.float64)
    if np.any(radius <= 0):
        raise ValueError("cell_code requires positive radius")
    return 2.0 * radius

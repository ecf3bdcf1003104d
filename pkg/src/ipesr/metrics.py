"""PSNR and SSIM under the super-resolution community's conventions.

Channel handling: either raw RGB or the studio-range BT.601 luma
(65.481 R + 128.553 G + 24.966 B + 16)/255, the de-facto benchmark choice.
Borders may be shaved before comparison; the customary defaults are zero
shave for RGB evaluation and round(scale) pixels for luma evaluation.
SSIM is the single-scale index with an 11x11 Gaussian window (sigma 1.5),
k1 = 0.01, k2 = 0.03, averaged over valid window positions only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_LUMA_WEIGHTS = np.array([65.481, 128.553, 24.966])
_LUMA_OFFSET = 16.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class EvalProtocol:
    """Channel mode, border shave, and data peak for one evaluation."""

    channel_mode: str = "rgb"
    shave: int = 0
    data_peak: float = 1.0

    def __post_init__(self):
        if self.channel_mode not in ("rgb", "y"):
            raise ValueError("channel_mode must be 'rgb' or 'y'")
        if self.shave < 0:
            raise ValueError("shave must be non-negative")
        if self.data_peak <= 0:
            raise ValueError("data_peak must be positive")

    @classmethod
    def for_scale(cls, channel_mode: str, scale: float) -> "EvalProtocol":
        """Benchmark defaults: shave round(s) on luma, nothing on RGB."""
        shave = int(round(scale)) if channel_mode == "y" else 0
        return cls(channel_mode=channel_mode, shave=shave)


def to_luma(image: np.ndarray) -> np.ndarray:
    """BT.601 studio-range luma of an (H, W, 3) [0, 1] image, in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    return (image @ _LUMA_WEIGHTS + _LUMA_OFFSET) / 255.0


def _prepare(a: np.ndarray, b: np.ndarray, protocol: EvalProtocol):
    # force one memory layout so scores depend on values, not strides
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if protocol.channel_mode == "y":
        a, b = to_luma(a), to_luma(b)
    s = protocol.shave
    if 2 * s >= min(a.shape[0], a.shape[1]):
        raise ValueError("shave too large for the image dimensions")
    if s:
        a = a[s:-s, s:-s]
        b = b[s:-s, s:-s]
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, protocol: EvalProtocol | None = None) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give +infinity."""
    protocol = protocol if protocol is not None else EvalProtocol()
    a, b = _prepare(a, b, protocol)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(protocol.data_peak**2 / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    # Valid-mode Gaussian filtering via explicit sliding windows.
    views = np.lib.stride_tricks.sliding_window_view(x, window.shape)
    return np.einsum("hwij,ij->hw", views, window)


def _ssim_single(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    window = _gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _windowed_mean(a, window)
    mu_b = _windowed_mean(b, window)
    var_a = _windowed_mean(a * a, window) - mu_a * mu_a
    var_b = _windowed_mean(b * b, window) - mu_b * mu_b
    cov = _windowed_mean(a * b, window) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, protocol: EvalProtocol | None = None) -> float:
    """Single-scale structural similarity, averaged over channels."""
    protocol = protocol if protocol is not None else EvalProtocol()
    a, b = _prepare(a, b, protocol)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError("image smaller than the SSIM window after shaving")
    if a.ndim == 2:
        return _ssim_single(a, b, protocol.data_peak)
    return float(
        np.mean(
            [
                _ssim_single(a[..., c], b[..., c], protocol.data_peak)
                for c in range(a.shape[2])
            ]
        )
    )

"""Coordinate conventions, query grids, and local-ensemble stencils.

Every image axis with n cells maps to [-1, 1]: pixel i has center
-1 + (2i+1)/n and edge 2/n. Coordinate 2-vectors are (x, y) with x along
width and y along height; index pairs are (row, col).

Query radii are carried in the decoder frame, where one latent cell of the
feature grid spans 2 units: an output pixel at scale s per axis has radius
1/s there. Relative coordinates handed to the decoder are scaled by half
the feature resolution per axis, so ensemble members see offsets in
[-1, 1].

Pure functions over immutable frames; concurrent use is unrestricted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Queries within this distance (in latent-index units) of an exact latent
# row/column are snapped onto it, absorbing float noise from the center
# formula; ties then resolve toward the negative index with zero weight on
# the far side.
_GRID_SNAP = 1e-9


@dataclass(frozen=True)
class CoordFrame:
    """A pixel grid of height x width cells over [-1, 1]^2."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("CoordFrame dimensions must be >= 1")


def axis_centers(n: int) -> np.ndarray:
    """Centers -1 + (2i+1)/n for i = 0..n-1; all interior to (-1, 1)."""
    i = np.arange(n, dtype=np.float64)
    return -1.0 + (2.0 * i + 1.0) / n


def pixel_center(index: tuple[int, int], frame: CoordFrame) -> np.ndarray:
    """Center (x, y) of the pixel at (row, col)."""
    i, j = index
    if not (0 <= i < frame.height and 0 <= j < frame.width):
        raise ValueError(f"index {index} outside frame {frame}")
    return np.array(
        [-1.0 + (2.0 * j + 1.0) / frame.width, -1.0 + (2.0 * i + 1.0) / frame.height]
    )


def nearest_index(point, frame: CoordFrame) -> tuple[int, int]:
    """(row, col) of the latent whose center is nearest to a global point."""
    x, y = float(point[0]), float(point[1])
    j = int(np.clip(np.round((x + 1.0) * frame.width / 2.0 - 0.5), 0, frame.width - 1))
    i = int(np.clip(np.round((y + 1.0) * frame.height / 2.0 - 0.5), 0, frame.height - 1))
    return i, j


@dataclass
class QueryBatch:
    """Parallel arrays of query centers, radii, and optional target colors.

    centers: (N, 2) global [-1, 1]^2 coordinates, (x, y).
    radii:   (N, 2) decoder-frame half edges, (1/s_x, 1/s_y).
    targets: optional (N, 3) RGB.
    """

    centers: np.ndarray
    radii: np.ndarray
    targets: np.ndarray | None = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1, 2)
        if len(self.radii) != len(self.centers):
            raise ValueError("centers and radii length mismatch")
        if np.any(self.radii <= 0):
            raise ValueError("query radii must be positive")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1, 3)
            if len(self.targets) != len(self.centers):
                raise ValueError("targets length mismatch")

    def __len__(self) -> int:
        return len(self.centers)


def render_grid(lr_frame: CoordFrame, out_frame: CoordFrame) -> QueryBatch:
    """One query per output pixel, row-major, in the shared [-1, 1]^2 frame.

    The per-query radius is (1/s_x, 1/s_y) with s_axis = out_n / lr_n, i.e.
    the output pixel half-edge expressed in the decoder frame.
    """
    xs = axis_centers(out_frame.width)
    ys = axis_centers(out_frame.height)
    gx, gy = np.meshgrid(xs, ys)  # row-major: y varies over rows
    centers = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    radius = np.array(
        [lr_frame.width / out_frame.width, lr_frame.height / out_frame.height]
    )
    radii = np.broadcast_to(radius, centers.shape).copy()
    return QueryBatch(centers=centers, radii=radii)


@dataclass
class EnsembleStencil:
    """The four latents surrounding a query, with blend weights.

    Members are ordered row-major over the enclosing 2x2 square:
    (top-left, top-right, bottom-left, bottom-right). Weights are the
    bilinear area fractions (the sub-rectangle diagonally opposite each
    member, over the square), computed from unclamped geometry so they
    always sum to 1; indices and the relative coordinates use the clamped
    (existing) latents.
    """

    latent_indices: np.ndarray  # (4, 2) int, (row, col)
    weights: np.ndarray  # (4,)
    relative_coords: np.ndarray  # (4, 2) decoder frame, (x, y)
    radii: np.ndarray  # (4, 2) decoder frame


def _axis_stencil(coord: np.ndarray, n: int):
    """Per-axis split of query coordinates against an n-cell latent axis.

    Returns (lo index, hi index, fraction toward hi), indices clamped to the
    grid, fraction from the unclamped geometry.
    """
    u = (coord + 1.0) * n / 2.0 - 0.5
    u_near = np.round(u)
    u = np.where(np.abs(u - u_near) < _GRID_SNAP, u_near, u)
    lo = np.floor(u)
    frac = u - lo
    lo_c = np.clip(lo, 0, n - 1).astype(np.int64)
    hi_c = np.clip(lo + 1, 0, n - 1).astype(np.int64)
    return lo_c, hi_c, frac


def ensemble_arrays(centers: np.ndarray, radii: np.ndarray, feat_frame: CoordFrame):
    """Vectorized stencils for (N, 2) queries.

    Returns (indices (N, 4, 2) int, weights (N, 4), rel_coords (N, 4, 2),
    radii (N, 4, 2)) with members ordered as in ``EnsembleStencil``.
    """
    centers = np.asarray(centers, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    h, w = feat_frame.height, feat_frame.width
    jlo, jhi, fx = _axis_stencil(centers[..., 0], w)
    ilo, ihi, fy = _axis_stencil(centers[..., 1], h)

    cx = axis_centers(w)
    cy = axis_centers(h)
    n = centers.shape[0]
    idx = np.empty((n, 4, 2), dtype=np.int64)
    wts = np.empty((n, 4))
    rel = np.empty((n, 4, 2))
    for t, (di, dj) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        ii = ihi if di else ilo
        jj = jhi if dj else jlo
        idx[:, t, 0] = ii
        idx[:, t, 1] = jj
        wts[:, t] = (fy if di else 1.0 - fy) * (fx if dj else 1.0 - fx)
        rel[:, t, 0] = (centers[:, 0] - cx[jj]) * (w / 2.0)
        rel[:, t, 1] = (centers[:, 1] - cy[ii]) * (h / 2.0)
    member_radii = np.broadcast_to(radii[:, None, :], (n, 4, 2)).copy()
    return idx, wts, rel, member_radii


def ensemble_stencil(center, radius, feat_frame: CoordFrame) -> EnsembleStencil:
    """Stencil for a single query; see ``ensemble_arrays`` for the batch form."""
    center = np.asarray(center, dtype=np.float64).reshape(1, 2)
    radius = np.asarray(radius, dtype=np.float64).reshape(1, 2)
    idx, wts, rel, rad = ensemble_arrays(center, radius, feat_frame)
    return EnsembleStencil(
        latent_indices=idx[0], weights=wts[0], relative_coords=rel[0], radii=rad[0]
    )

"""Bird's-eye-view pillar grids, feature encoding and the dynamic-radar
Gaussian heatmap.

A pillar is a vertical column over one cell of a 2D grid.  Point features
are lifted through a shared linear layer + ReLU and max-pooled per cell,
giving a dense H x W x C map whose unoccupied cells are exactly zero.  The
heatmap weights each cell by exp(-D^2 / sigma^2) where D is the metric
distance from the cell center to the nearest cell containing a dynamic
radar point, computed with an exact two-pass distance transform.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ad
from .ad import Tensor
from .errors import ConfigInvalid, ShapeMismatch
from .geom import PointCloud

# a cell is dynamic when it holds a radar point moving faster than this
DYNAMIC_CELL_ARV_MIN = 0.1  # m/s

# per-point feature layout fed to the shared pillar encoder:
#   [dx, dy, z, arv, rcs, intensity]; slots of the other modality stay zero
POINT_FEATURE_DIM = 6

# fixed per-channel scaling so no raw unit dominates the shared encoder
# (dx/dy are fractions of a cell, z in meters, arv in m/s, rcs in dBsm)
FEATURE_SCALES = np.array([10.0, 10.0, 0.5, 0.2, 0.05, 1.0])


@dataclass(frozen=True)
class GridSpec:
    """origin is the min-corner (x0, y0); cells are half-open squares."""

    origin: tuple
    resolution: float
    width: int  # cells along x
    height: int  # cells along y

    def validate(self) -> None:
        if self.resolution <= 0:
            raise ConfigInvalid("grid resolution must be positive")
        if self.width % 4 or self.height % 4:
            raise ConfigInvalid("grid dims must be divisible by 4 for the backbone")
        if self.width * self.height > 1 << 22:
            raise ConfigInvalid("grid larger than the configured budget")

    @property
    def num_cells(self) -> int:
        return self.width * self.height

    def cell_centers(self) -> np.ndarray:
        """(H, W, 2) metric centers; rows index y, columns index x."""
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        return np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1)


@dataclass
class PillarAssignment:
    """Per-point cell coordinates from pillarize; out-of-grid points are
    flagged rather than dropped so row indices stay aligned with the cloud."""

    ix: np.ndarray  # (N,) int64 cell column
    iy: np.ndarray  # (N,) int64 cell row
    in_grid: np.ndarray  # (N,) bool
    flat: np.ndarray  # (N,) iy * width + ix, -1 when out of grid


@dataclass
class SparseFeatureMap2D:
    grid: GridSpec
    features: Tensor  # (H, W, C)
    occupancy: np.ndarray  # (H, W) bool


@dataclass
class GaussianHeatmap:
    grid: GridSpec
    values: np.ndarray  # (H, W) in (0, 1]
    dist_sq: np.ndarray  # (H, W) meters^2 to nearest dynamic cell
    sigma_sq_inv: float


def pillarize(cloud: PointCloud, grid: GridSpec) -> PillarAssignment:
    """Half-open cell assignment: cell = floor((p - origin) / resolution)."""
    grid.validate()
    p = cloud.positions
    ix = np.floor((p[:, 0] - grid.origin[0]) / grid.resolution).astype(np.int64)
    iy = np.floor((p[:, 1] - grid.origin[1]) / grid.resolution).astype(np.int64)
    in_grid = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    flat = np.where(in_grid, iy * grid.width + ix, -1)
    return PillarAssignment(ix=ix, iy=iy, in_grid=in_grid, flat=flat)


def point_features(cloud: PointCloud, assignment: PillarAssignment,
                   grid: GridSpec, scaled: bool = True) -> np.ndarray:
    """(N, 6) encoder inputs for in-grid points (rows for out-of-grid points
    are present but zero).  scaled applies FEATURE_SCALES."""
    n = len(cloud)
    feats = np.zeros((n, POINT_FEATURE_DIM))
    m = assignment.in_grid
    cx = grid.origin[0] + (assignment.ix[m] + 0.5) * grid.resolution
    cy = grid.origin[1] + (assignment.iy[m] + 0.5) * grid.resolution
    feats[m, 0] = cloud.positions[m, 0] - cx
    feats[m, 1] = cloud.positions[m, 1] - cy
    feats[m, 2] = cloud.positions[m, 2]
    if cloud.modality == "radar":
        feats[m, 3] = cloud.arv[m]
        if cloud.rcs is not None:
            feats[m, 4] = cloud.rcs[m]
    else:
        if cloud.intensity is not None:
            feats[m, 5] = cloud.intensity[m]
    if scaled:
        feats *= FEATURE_SCALES
    return feats


def encode_pillars(cloud: PointCloud, assignment: PillarAssignment,
                   grid: GridSpec, weight: Tensor, bias: Tensor) -> SparseFeatureMap2D:
    """Shared linear + ReLU per point, max-pooled per cell.

    weight: (6, C), bias: (C,).  Both modalities go through the same layer;
    the disjoint feature slots keep their channels from clashing.
    """
    if weight.data.shape[0] != POINT_FEATURE_DIM:
        raise ShapeMismatch(f"encoder weight must have {POINT_FEATURE_DIM} input rows")
    c = weight.data.shape[1]
    m = assignment.in_grid
    occupancy = np.zeros((grid.height, grid.width), dtype=bool)
    occupancy.reshape(-1)[assignment.flat[m]] = True

    if not m.any():
        return SparseFeatureMap2D(grid, Tensor(np.zeros((grid.height, grid.width, c))),
                                  occupancy)

    feats = Tensor(point_features(cloud, assignment, grid)[m])
    lifted = ad.relu(ad.matmul(feats, weight) + bias)
    pooled = ad.segment_max(lifted, assignment.flat[m], grid.num_cells)
    features = ad.reshape(pooled, (grid.height, grid.width, c))
    return SparseFeatureMap2D(grid, features, occupancy)


def dynamic_radar_map(radar: PointCloud, grid: GridSpec) -> np.ndarray:
    """(H, W) bool: cell holds at least one radar point with |arv| above
    DYNAMIC_CELL_ARV_MIN."""
    if radar.modality != "radar":
        raise ShapeMismatch("dynamic_radar_map expects a radar cloud")
    a = pillarize(radar, grid)
    fast = a.in_grid & (np.abs(radar.arv) > DYNAMIC_CELL_ARV_MIN)
    out = np.zeros((grid.height, grid.width), dtype=bool)
    out.reshape(-1)[a.flat[fast]] = True
    return out


def _edt_1d_sq(f: np.ndarray) -> np.ndarray:
    """Exact 1D squared distance transform (lower envelope of parabolas).

    Cells with f = +inf contribute no parabola; an all-inf input stays inf.
    """
    n = len(f)
    sites = np.nonzero(np.isfinite(f))[0]
    if len(sites) == 0:
        return np.full(n, np.inf)
    v = np.zeros(len(sites), dtype=np.int64)  # parabola sites in the envelope
    z = np.empty(len(sites) + 1)  # envelope break points
    v[0] = sites[0]
    z[0], z[1] = -np.inf, np.inf
    k = 0
    for q in sites[1:]:
        while True:
            r = v[k]
            s = ((f[q] + q * q) - (f[r] + r * r)) / (2.0 * q - 2.0 * r)
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k], z[k + 1] = s, np.inf
    d = np.empty(n)
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = float((q - v[k]) * (q - v[k])) + f[v[k]]
    return d


def distance_transform_sq(mask: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance (in cell units) to the nearest True
    cell, via the dimension-decomposed two-pass method.  All-false masks give
    +inf everywhere."""
    h, w = mask.shape
    f = np.where(mask, 0.0, np.inf)
    tmp = np.empty_like(f)
    for j in range(w):
        tmp[:, j] = _edt_1d_sq(f[:, j])
    out = np.empty_like(f)
    for i in range(h):
        out[i, :] = _edt_1d_sq(tmp[i, :])
    return out


def gaussian_heatmap(dynamic: np.ndarray, grid: GridSpec,
                     sigma_sq_inv: float = 10.0) -> GaussianHeatmap:
    """G = exp(-D^2 / sigma^2) with D the metric cell-center distance to the
    nearest dynamic cell.

    With no dynamic cell anywhere, G is 1 everywhere: a zero map would
    flatten every attention logit, while unity degrades gracefully to plain
    cross-attention.
    """
    if dynamic.shape != (grid.height, grid.width):
        raise ShapeMismatch("dynamic map does not match the grid")
    if not dynamic.any():
        zeros = np.zeros((grid.height, grid.width))
        return GaussianHeatmap(grid, np.ones_like(zeros), zeros, sigma_sq_inv)
    d_sq = distance_transform_sq(dynamic) * (grid.resolution * grid.resolution)
    values = np.exp(-d_sq * sigma_sq_inv)
    return GaussianHeatmap(grid, values, d_sq, sigma_sq_inv)

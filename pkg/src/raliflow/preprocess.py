"""Frame preprocessing: ground removal, radar-to-LiDAR alignment and
cross-modal hybrid radar denoising.

Ground removal follows the polar-grid line-fitting scheme: the scan is
partitioned into angular sectors and radial bins, the lowest point of each
bin becomes a prototype, and a piecewise line in (range, z) is grown per
sector by incremental least squares under a slope cap.  Points close to
their sector's line are ground.

Radar denoising is two-staged.  The hard stage drops points whose |ARV|
exceeds mu = mean(|ARV| of dynamic points) + theta_thre.  The soft stage
drops radar points with no LiDAR neighbor in the surrounding 3x3 cells of a
coarse BEV occupancy grid.
"""

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .errors import EmptyCloud, FrameMismatch
from .geom import SE3, PointCloud


@dataclass(frozen=True)
class GroundParams:
    num_segments: int = 32  # angular sectors
    num_bins: int = 64  # radial bins per sector
    max_slope: float = 0.15  # rad, cap on fitted line slope
    ground_z_tolerance: float = 0.25  # m, distance to the line to count as ground
    seed_z_max: float = 0.3  # m above the ground estimate for starting a line

    def validate(self):
        if min(self.num_segments, self.num_bins) <= 0:
            raise ValueError("sector/bin counts must be positive")
        if not (0 < self.max_slope < np.pi / 2):
            raise ValueError("max_slope out of range")
        if min(self.ground_z_tolerance, self.seed_z_max) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class DenoiseParams:
    dynamic_arv_min: float = 0.5  # m/s, |arv| above this marks a dynamic point
    theta_thre: float = 10.0  # m/s, hard-threshold margin
    bev_grid: float = 0.8  # m, occupancy cell size
    # neighborhood is the fixed 3x3 cell window

    def validate(self):
        if min(self.dynamic_arv_min, self.theta_thre, self.bev_grid) <= 0:
            raise ValueError("denoise parameters must be positive")


def _fit_line(rs: np.ndarray, zs: np.ndarray) -> Tuple[float, float]:
    """Least-squares z = m*r + b; a single point gets a flat line through it."""
    if len(rs) == 1:
        return 0.0, float(zs[0])
    r_mean, z_mean = rs.mean(), zs.mean()
    denom = np.sum((rs - r_mean) ** 2)
    if denom == 0.0:
        return 0.0, float(z_mean)
    m = float(np.sum((rs - r_mean) * (zs - z_mean)) / denom)
    return m, float(z_mean - m * r_mean)


def remove_ground(cloud: PointCloud, params: GroundParams = GroundParams()) -> np.ndarray:
    """Keep mask over the (combined) cloud: False marks ground points."""
    params.validate()
    if len(cloud) == 0:
        raise EmptyCloud("ground removal on an empty cloud")
    p = cloud.positions
    r = np.hypot(p[:, 0], p[:, 1])
    theta = np.arctan2(p[:, 1], p[:, 0])  # [-pi, pi]
    sector = np.minimum(((theta + np.pi) / (2 * np.pi) * params.num_segments).astype(np.int64),
                        params.num_segments - 1)
    r_max = float(r.max()) + 1e-9
    rbin = np.minimum((r / r_max * params.num_bins).astype(np.int64), params.num_bins - 1)

    # prototypes: lowest point per (sector, bin)
    flat = sector * params.num_bins + rbin
    order = np.lexsort((p[:, 2], flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    proto_idx = order[first]  # lowest-z point of each occupied bin
    proto_sector = sector[proto_idx]
    proto_r = r[proto_idx]
    proto_z = p[proto_idx, 2]
    ground_z_est = float(np.percentile(proto_z, 5.0))

    ground = np.zeros(len(cloud), dtype=bool)
    for s in range(params.num_segments):
        sel = proto_sector == s
        if not np.any(sel):
            continue
        rs_all = proto_r[sel]
        zs_all = proto_z[sel]
        o = np.argsort(rs_all, kind="stable")
        rs_all, zs_all = rs_all[o], zs_all[o]

        # grow line segments outward; each segment is (m, b, r_lo, r_hi)
        segments = []
        cur_r, cur_z = [], []
        for rr, zz in zip(rs_all, zs_all):
            if not cur_r:
                if zz <= ground_z_est + params.seed_z_max:
                    cur_r, cur_z = [rr], [zz]
                continue
            m, b = _fit_line(np.array(cur_r + [rr]), np.array(cur_z + [zz]))
            resid = np.abs(np.array(cur_z + [zz]) - (m * np.array(cur_r + [rr]) + b))
            if abs(m) <= params.max_slope and resid.max() <= params.ground_z_tolerance:
                cur_r.append(rr)
                cur_z.append(zz)
            else:
                segments.append(_fit_line(np.array(cur_r), np.array(cur_z))
                                + (cur_r[0], cur_r[-1]))
                cur_r, cur_z = ([rr], [zz]) if zz <= ground_z_est + params.seed_z_max else ([], [])
        if cur_r:
            segments.append(_fit_line(np.array(cur_r), np.array(cur_z)) + (cur_r[0], cur_r[-1]))
        if not segments:
            continue

        # classify the sector's points against the nearest segment (by range)
        pts = np.nonzero(sector == s)[0]
        pr, pz = r[pts], p[pts, 2]
        best_dist = np.full(len(pts), np.inf)
        best_dz = np.full(len(pts), np.inf)
        for m, b, r_lo, r_hi in segments:
            gap = np.maximum(np.maximum(r_lo - pr, pr - r_hi), 0.0)
            dz = np.abs(pz - (m * pr + b))
            closer = gap < best_dist
            best_dz = np.where(closer, dz, best_dz)
            best_dist = np.where(closer, gap, best_dist)
        ground[pts] = best_dz <= params.ground_z_tolerance
    return ~ground


def project_radar_to_lidar(radar: PointCloud, extrinsic: SE3) -> PointCloud:
    """Positions move through the extrinsic; ARV values are carried unchanged
    (the radial direction re-interpretation is a documented approximation)."""
    out = radar.select(slice(None))
    out.positions = extrinsic.apply(radar.positions)
    return out


def hard_threshold_mu(arv: np.ndarray, params: DenoiseParams = DenoiseParams()):
    """mu = mean(|arv| of dynamic points) + theta_thre, or None when the
    frame has no dynamic points (the threshold has no operand then)."""
    abs_arv = np.abs(np.asarray(arv, dtype=np.float64))
    dynamic = abs_arv > params.dynamic_arv_min
    if not dynamic.any():
        return None
    return float(abs_arv[dynamic].mean()) + params.theta_thre


def denoise_radar(radar: PointCloud, lidar: PointCloud,
                  params: DenoiseParams = DenoiseParams()) -> np.ndarray:
    """Keep mask over the radar cloud (hard ARV stage AND soft LiDAR stage).

    Both clouds must live in the same (LiDAR) frame with ground removed.
    """
    params.validate()
    if radar.frame_id != lidar.frame_id:
        raise FrameMismatch(f"radar frame {radar.frame_id!r} != lidar frame {lidar.frame_id!r}")
    n = len(radar)
    if n == 0:
        return np.zeros(0, dtype=bool)
    abs_arv = np.abs(radar.arv)

    # stage 1: hard ARV threshold; a no-op when the frame has no dynamic points
    mu = hard_threshold_mu(radar.arv, params)
    keep_hard = np.ones(n, dtype=bool) if mu is None else abs_arv <= mu

    # stage 2: require a LiDAR point somewhere in the 3x3 cell neighborhood
    if len(lidar) == 0:
        keep_soft = np.zeros(n, dtype=bool)
    else:
        g = params.bev_grid
        min_xy = np.minimum(radar.positions[:, :2].min(axis=0),
                            lidar.positions[:, :2].min(axis=0))
        r_ij = np.floor((radar.positions[:, :2] - min_xy) / g).astype(np.int64)
        l_ij = np.floor((lidar.positions[:, :2] - min_xy) / g).astype(np.int64)
        occupied = set(map(tuple, l_ij))
        keep_soft = np.zeros(n, dtype=bool)
        for i, (ci, cj) in enumerate(r_ij):
            keep_soft[i] = any((ci + di, cj + dj) in occupied
                               for di in (-1, 0, 1) for dj in (-1, 0, 1))
    return keep_hard & keep_soft

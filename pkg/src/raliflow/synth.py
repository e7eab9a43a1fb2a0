"""Deterministic synthetic scenes with exact ground truth, plus the
brute-force oracles used by property and equivalence tests.

A scene is a square patch of world with the sensor at the origin: a ground
plane, a few vertical wall segments (so background structure survives ground
removal), and tracked boxes moving rigidly at constant velocity and yaw
rate.  LiDAR samples surfaces densely; radar samples objects sparsely with
position jitter, a configurable fraction of points pushed outside their box
(the recovery cases), plus wall clutter and a couple of extreme-ARV
outliers.  Every quantity is a pure function of the config, including the
seed, via the counter-based generator in rng.py.

The world frame coincides with the source sensor frame; the target frame is
the ego pose after dt.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import ConfigInvalid
from .geom import SE3, EgoMotion, PointCloud, TrackedBox, box_contains
from .labels import DEFAULT_CLASS_DIST
from .rng import Splitmix64

CLASS_DIMS = {
    "car": (3.8, 1.7, 1.5),
    "cyclist": (1.7, 0.6, 1.6),
    "pedestrian": (0.55, 0.55, 1.7),
}


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    extent: float = 12.8  # square scene side, sensor-centered
    n_boxes: int = 3
    box_speed_max: float = 6.0  # m/s
    min_radial_speed: float = 1.2  # movers keep at least this radial component
    static_box_fraction: float = 0.25  # boxes after the first may be parked
    yaw_rate_max: float = 0.15  # rad/s for movers
    lidar_density: float = 40.0  # pts/m^2 on walls and box faces
    ground_density: float = 6.0  # pts/m^2 on the ground plane
    radar_points_min: int = 5
    radar_points_max: int = 15
    radar_clutter: int = 12  # static clutter points on walls
    radar_jitter: float = 0.15  # sigma, m
    outbox_offset_max: float = 0.4  # m, extra push outside the box
    outbox_fraction: float = 0.3
    arv_noise: float = 0.2  # sigma, m/s
    n_outliers: int = 2  # injected with |arv| in outlier_arv range
    outlier_arv: Tuple[float, float] = (28.0, 34.0)
    ego_speed_max: float = 3.0  # m/s
    ego_yaw_rate_max: float = 0.05  # rad/s
    dt: float = 0.1
    sensor_height: float = 1.8  # ground plane sits at z = -sensor_height
    wall_height: float = 1.4

    def validate(self):
        numeric = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                   if f.name not in ("seed", "outlier_arv")}
        bad = [k for k, v in numeric.items() if v < 0]
        if bad:
            raise ConfigInvalid(f"negative scene parameters: {bad}")
        if self.extent <= 0 or self.dt <= 0:
            raise ConfigInvalid("extent and dt must be positive")
        if self.radar_points_min > self.radar_points_max:
            raise ConfigInvalid("radar_points_min > radar_points_max")


@dataclass
class FramePair:
    """Raw sensor data for one sample plus full generator truth."""

    radar_src: PointCloud
    lidar_src: PointCloud
    radar_tgt: PointCloud
    lidar_tgt: PointCloud
    boxes_src: List[TrackedBox]
    boxes_tgt: List[TrackedBox]  # in the target sensor frame
    ego: EgoMotion
    # per source point truth
    radar_gt_flows: np.ndarray  # (N,3) world displacement over dt
    lidar_gt_flows: np.ndarray
    radar_true_dynamic: np.ndarray  # (N,) bool, true speed >= 0.5 m/s
    lidar_true_dynamic: np.ndarray
    radar_outlier: np.ndarray  # (N,) bool, injected ARV outliers
    radar_instance_truth: np.ndarray  # (N,) int, -1 for background
    lidar_instance_truth: np.ndarray
    radar_inbox_truth: np.ndarray  # (N,) bool, inside own box at t0


@dataclass
class _Body:
    """A tracked box with its rigid motion."""

    box: TrackedBox
    velocity: np.ndarray  # (3,) m/s world
    yaw_rate: float

    def pose_at(self, t: float) -> SE3:
        return SE3.from_yaw_translation(self.box.yaw + self.yaw_rate * t,
                                        self.box.center + self.velocity * t)

    def box_at(self, t: float) -> TrackedBox:
        yaw = self.box.yaw + self.yaw_rate * t
        yaw = float(np.arctan2(np.sin(yaw), np.cos(yaw)))
        if yaw <= -np.pi:
            yaw += 2.0 * np.pi
        return TrackedBox(self.box.track_id, self.box.class_label,
                          self.box.center + self.velocity * t, self.box.dims, yaw)

    def point_velocity(self, p: np.ndarray) -> np.ndarray:
        """v_center + omega x r for (N,3) points riding on the body."""
        r = np.atleast_2d(p) - self.box.center
        out = np.tile(self.velocity, (len(r), 1))
        out[:, 0] -= self.yaw_rate * r[:, 1]
        out[:, 1] += self.yaw_rate * r[:, 0]
        return out


def _body_displacement(body: _Body, p: np.ndarray, dt: float) -> np.ndarray:
    """Exact world displacement over one frame: T(dt) T(0)^-1 p - p."""
    t0 = body.pose_at(0.0)
    t1 = body.pose_at(dt)
    return t1.apply(t0.inverse().apply(np.atleast_2d(p))) - np.atleast_2d(p)


def _sample_box_faces(rng: Splitmix64, dims, n: int,
                      z_band: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """Points on the four vertical faces, box-local coordinates.

    z_band restricts the height fraction (radar returns cluster mid-body).
    """
    l, w, h = dims
    lo, hi = z_band if z_band is not None else (0.0, 1.0)
    areas = np.array([l, l, w, w], dtype=np.float64)
    face = np.searchsorted(np.cumsum(areas / areas.sum()), rng.uniform(n), side="right")
    face = np.minimum(face, 3)
    u = rng.uniform(n, -0.5, 0.5)
    z = rng.uniform(n, lo - 0.5, hi - 0.5) * h
    pts = np.empty((n, 3))
    on_long = face < 2
    pts[:, 0] = np.where(on_long, u * l, np.where(face == 2, -l / 2, l / 2))
    pts[:, 1] = np.where(on_long, np.where(face == 0, -w / 2, w / 2), u * w)
    pts[:, 2] = z
    return pts


def _walls(config: SceneConfig) -> List[Tuple[np.ndarray, np.ndarray, float]]:
    """Wall segments as (endpoint a, endpoint b, height); tangent to a ring
    inside the extent so every sample stays on the grid."""
    radius = config.extent / 2 - 0.55
    length = min(4.0, config.extent / 3)
    walls = []
    for ang in (0.5, 2.6, 4.4):  # radians; avoids sector boundaries at 0/pi
        c = np.array([radius * np.cos(ang), radius * np.sin(ang), 0.0])
        tangent = np.array([-np.sin(ang), np.cos(ang), 0.0])
        walls.append((c - tangent * length / 2, c + tangent * length / 2,
                      config.wall_height))
    return walls


def _sample_walls(rng: Splitmix64, config: SceneConfig, density: float) -> np.ndarray:
    pts = []
    z0 = -config.sensor_height
    for a, b, h in _walls(config):
        area = np.linalg.norm(b - a) * h
        n = max(1, int(round(area * density)))
        u = rng.uniform(n)
        z = rng.uniform(n, 0.0, h)
        seg = a[None, :] + u[:, None] * (b - a)[None, :]
        seg[:, 2] = z0 + z
        pts.append(seg)
    return np.vstack(pts)


def _sample_ground(rng: Splitmix64, config: SceneConfig) -> np.ndarray:
    half = config.extent / 2 - 0.05
    n = max(1, int(round(config.extent * config.extent * config.ground_density)))
    return np.column_stack([rng.uniform(n, -half, half), rng.uniform(n, -half, half),
                            np.full(n, -config.sensor_height)])


def _make_bodies(rng: Splitmix64, config: SceneConfig) -> List[_Body]:
    classes = sorted(CLASS_DIMS)
    bodies = []
    base = rng.uniform(1)[0] * 2 * np.pi
    for i in range(config.n_boxes):
        cls = classes[int(rng.integers(1, 0, len(classes))[0])]
        dims = np.array(CLASS_DIMS[cls]) * (1.0 + rng.uniform(3, -0.05, 0.05))
        ang = base + i * 2 * np.pi / max(config.n_boxes, 1) + rng.uniform(1, -0.3, 0.3)[0]
        radius = rng.uniform(1, 3.2, 4.6)[0]
        center = np.array([radius * np.cos(ang), radius * np.sin(ang),
                           -config.sensor_height + dims[2] / 2])
        yaw = rng.uniform(1, -np.pi, np.pi)[0]
        static = i > 0 and rng.uniform(1)[0] < config.static_box_fraction
        if static:
            velocity, yaw_rate = np.zeros(3), 0.0
        else:
            speed = rng.uniform(1, max(config.min_radial_speed, 0.5),
                                max(config.box_speed_max, config.min_radial_speed))[0]
            heading = rng.uniform(1, 0, 2 * np.pi)[0]
            v = speed * np.array([np.cos(heading), np.sin(heading), 0.0])
            # guarantee a usable radial component at the box center
            rhat = center / np.linalg.norm(center)
            radial = float(v @ rhat)
            want = max(config.min_radial_speed, abs(radial))
            if abs(radial) < want:
                sign = 1.0 if radial >= 0 else -1.0
                tang = v - radial * rhat
                tang_speed = np.linalg.norm(tang)
                scale = (np.sqrt(max(speed * speed - want * want, 0.0)) / tang_speed
                         if tang_speed > 0 else 0.0)
                v = sign * want * rhat + tang * scale
            velocity = v
            yaw_rate = rng.uniform(1, -config.yaw_rate_max, config.yaw_rate_max)[0]
        box = TrackedBox(track_id=i + 1, class_label=cls, center=center,
                         dims=dims, yaw=yaw)
        bodies.append(_Body(box, velocity, yaw_rate))
    return bodies


def _clamp_to_threshold(p: np.ndarray, center: np.ndarray, threshold: float) -> np.ndarray:
    """Pull a point radially toward the box center until it sits within the
    class distance threshold (minus a small margin)."""
    limit = threshold - 0.05
    d = np.linalg.norm(p - center)
    if d > limit:
        return center + (p - center) * (limit / d)
    return p


def generate_scene(config: SceneConfig) -> FramePair:
    config.validate()
    rng = Splitmix64(config.seed)
    r_geom = rng.derive(1)
    r_lidar0 = rng.derive(2)
    r_lidar1 = rng.derive(3)
    r_radar = rng.derive(4)
    r_noise = rng.derive(5)
    r_ego = rng.derive(6)

    bodies = _make_bodies(r_geom, config)
    dt = config.dt

    # ego: planar constant velocity + yaw rate; world frame = source frame
    ego_speed = r_ego.uniform(1, 0, config.ego_speed_max)[0]
    ego_heading = r_ego.uniform(1, 0, 2 * np.pi)[0]
    ego_yaw_rate = r_ego.uniform(1, -config.ego_yaw_rate_max, config.ego_yaw_rate_max)[0]
    ego_v = ego_speed * np.array([np.cos(ego_heading), np.sin(ego_heading), 0.0])
    e2 = SE3.from_yaw_translation(ego_yaw_rate * dt, ego_v * dt)  # pose at t1
    ego = EgoMotion(t_src_to_tgt=e2.inverse(), dt=dt)

    # ---- LiDAR, per frame ----
    def lidar_world(r: Splitmix64, t: float):
        pts = [_sample_ground(r, config), _sample_walls(r, config, config.lidar_density)]
        inst = [np.full(len(pts[0]), -1), np.full(len(pts[1]), -1)]
        dyn = [np.zeros(len(pts[0]), dtype=bool), np.zeros(len(pts[1]), dtype=bool)]
        for bi, body in enumerate(bodies):
            l, w, h = body.box.dims
            area = 2.0 * (l + w) * h
            n = max(4, int(round(area * config.lidar_density)))
            local = _sample_box_faces(r, body.box.dims, n)
            world = body.pose_at(t).apply(local)
            pts.append(world)
            inst.append(np.full(n, bi))
            dyn.append(np.linalg.norm(body.point_velocity(world), axis=1) >= 0.5)
        return np.vstack(pts), np.concatenate(inst), np.concatenate(dyn)

    l0, l0_inst, l0_dyn = lidar_world(r_lidar0, 0.0)
    l1, _, _ = lidar_world(r_lidar1, dt)

    # ---- radar, per frame ----
    def radar_world(r: Splitmix64, t: float):
        pts, inst, outlier = [], [], []
        for bi, body in enumerate(bodies):
            k = int(r.integers(1, config.radar_points_min, config.radar_points_max + 1)[0])
            local = _sample_box_faces(r, body.box.dims, k, z_band=(0.35, 0.85))
            pose = body.pose_at(t)
            world = pose.apply(local)
            jitter = r.normal(3 * k, config.radar_jitter).reshape(k, 3)
            jitter[:, 2] *= 0.3  # radar elevation error is small
            world = world + jitter
            push = r.uniform(k) < config.outbox_fraction
            offs = r.uniform(k, 0.05, config.outbox_offset_max)
            center_t = pose.translation
            thr = DEFAULT_CLASS_DIST.get(body.box.class_label, DEFAULT_CLASS_DIST["other"])
            for i in range(k):
                if push[i]:
                    away = world[i] - center_t
                    away[2] = 0.0
                    nrm = np.linalg.norm(away)
                    if nrm > 1e-9:
                        world[i] = world[i] + away / nrm * offs[i]
                world[i] = _clamp_to_threshold(world[i], center_t, thr)
            pts.append(world)
            inst.append(np.full(k, bi))
            outlier.append(np.zeros(k, dtype=bool))
        # wall clutter
        if config.radar_clutter:
            clutter = _sample_walls(r, config, 1.0)
            sel = r.integers(config.radar_clutter, 0, len(clutter))
            pts.append(clutter[sel])
            inst.append(np.full(config.radar_clutter, -1))
            outlier.append(np.zeros(config.radar_clutter, dtype=bool))
        # extreme-ARV outliers, mid-air
        if config.n_outliers:
            half = config.extent / 2 - 0.3
            o = np.column_stack([r.uniform(config.n_outliers, -half, half),
                                 r.uniform(config.n_outliers, -half, half),
                                 r.uniform(config.n_outliers, -0.5, 0.5)])
            pts.append(o)
            inst.append(np.full(config.n_outliers, -1))
            outlier.append(np.ones(config.n_outliers, dtype=bool))
        return np.vstack(pts), np.concatenate(inst), np.concatenate(outlier)

    rad0, rad0_inst, rad0_out = radar_world(r_radar, 0.0)
    rad1, rad1_inst, rad1_out = radar_world(r_radar, dt)

    # ---- ARV model: true point velocity projected on the sensor LOS + noise ----
    def arv_for(points, inst, outlier, r, sensor_pos):
        n = len(points)
        arv = np.zeros(n)
        for bi, body in enumerate(bodies):
            mine = inst == bi
            if mine.any():
                v = body.point_velocity(points[mine])
                los = points[mine] - sensor_pos
                arv[mine] = np.sum(v * los, axis=1) / np.linalg.norm(los, axis=1)
        arv = arv + r.normal(n, config.arv_noise)
        if outlier.any():
            k = int(outlier.sum())
            signs = np.where(r.uniform(k) < 0.5, -1.0, 1.0)
            arv[outlier] = signs * r.uniform(k, *config.outlier_arv)
        return arv

    arv0 = arv_for(rad0, rad0_inst, rad0_out, r_noise, np.zeros(3))
    arv1 = arv_for(rad1, rad1_inst, rad1_out, r_noise, e2.translation)

    # ---- ground-truth flows and flags for the source frame ----
    def truth(points, inst):
        flows = np.zeros_like(points)
        dyn = np.zeros(len(points), dtype=bool)
        for bi, body in enumerate(bodies):
            mine = inst == bi
            if mine.any():
                flows[mine] = _body_displacement(body, points[mine], dt)
                dyn[mine] = np.linalg.norm(body.point_velocity(points[mine]), axis=1) >= 0.5
        return flows, dyn

    rad_flows, rad_dyn = truth(rad0, rad0_inst)
    lid_flows, _ = truth(l0, l0_inst)

    inbox = np.zeros(len(rad0), dtype=bool)
    for bi, body in enumerate(bodies):
        mine = rad0_inst == bi
        if mine.any():
            inbox[mine] = box_contains(body.box_at(0.0), rad0[mine])

    # ---- package clouds; target clouds move into the target sensor frame ----
    def cloud(points, modality, frame, r, arv=None):
        n = len(points)
        if modality == "radar":
            rcs = r.uniform(n, -20.0, 10.0)
            rrv = arv - (ego_v @ points.T) / np.linalg.norm(points, axis=1)
            return PointCloud(points, "radar", frame, arv=arv, rrv=rrv, rcs=rcs)
        return PointCloud(points, "lidar", frame, intensity=r.uniform(n))

    e2_inv = e2.inverse()
    fid0, fid1 = f"{config.seed}:0", f"{config.seed}:1"
    pair = FramePair(
        radar_src=cloud(rad0, "radar", fid0, r_noise, arv0),
        lidar_src=cloud(l0, "lidar", fid0, r_noise),
        radar_tgt=cloud(e2_inv.apply(rad1), "radar", fid1, r_noise, arv1),
        lidar_tgt=cloud(e2_inv.apply(l1), "lidar", fid1, r_noise),
        boxes_src=[b.box_at(0.0) for b in bodies],
        boxes_tgt=[_retarget_box(b.box_at(dt), e2_inv) for b in bodies],
        ego=ego,
        radar_gt_flows=rad_flows,
        lidar_gt_flows=lid_flows,
        radar_true_dynamic=rad_dyn,
        lidar_true_dynamic=l0_dyn,
        radar_outlier=rad0_out,
        radar_instance_truth=rad0_inst.astype(np.int64),
        lidar_instance_truth=l0_inst.astype(np.int64),
        radar_inbox_truth=inbox,
    )
    return pair


def _retarget_box(box_world: TrackedBox, to_target: SE3) -> TrackedBox:
    center = to_target.apply(box_world.center)
    dyaw = np.arctan2(to_target.rotation[1, 0], to_target.rotation[0, 0])
    yaw = box_world.yaw + dyaw
    yaw = float(np.arctan2(np.sin(yaw), np.cos(yaw)))
    if yaw <= -np.pi:
        yaw += 2.0 * np.pi
    return TrackedBox(box_world.track_id, box_world.class_label, center,
                      box_world.dims, yaw)


# ---------------------------------------------------------------------------
# brute-force oracles


def oracle_naive_attention(q_feat: np.ndarray, q_occ: np.ndarray,
                           k_feat: np.ndarray, k_occ: np.ndarray,
                           g: np.ndarray, wq: Optional[np.ndarray] = None,
                           wk: Optional[np.ndarray] = None,
                           relpos: Optional[np.ndarray] = None) -> np.ndarray:
    """Reference local cross-attention with explicit loops.

    For every occupied query cell, gather occupied key cells in the 3x3
    neighborhood, score (q . k)/sqrt(C) * G(key cell), softmax, and average
    the values (key features plus the relative-position vector).  No code is
    shared with the fast implementation.
    """
    h, w, c = q_feat.shape
    out = np.zeros((h, w, c))
    scale = 1.0 / np.sqrt(c)
    for i in range(h):
        for j in range(w):
            if not q_occ[i, j]:
                continue
            q = q_feat[i, j] if wq is None else q_feat[i, j] @ wq
            logits, values = [], []
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ki, kj = i + di, j + dj
                    if not (0 <= ki < h and 0 <= kj < w) or not k_occ[ki, kj]:
                        continue
                    kvec = k_feat[ki, kj] if wk is None else k_feat[ki, kj] @ wk
                    logits.append(float(q @ kvec) * scale * g[ki, kj])
                    val = k_feat[ki, kj].copy()
                    if relpos is not None:
                        val = val + relpos[(di + 1) * 3 + (dj + 1)]
                    values.append(val)
            if not logits:
                continue
            logits = np.array(logits)
            e = np.exp(logits - logits.max())
            weights = e / e.sum()
            out[i, j] = sum(wt * v for wt, v in zip(weights, values))
    return out


def oracle_label_flow(radar: PointCloud, boxes_src: List[TrackedBox],
                      boxes_tgt: List[TrackedBox], params, dt: float):
    """Reference radar labeling: exhaustive per-point loops over all boxes.

    Implements in-box rigid flow, out-of-box recovery, the confidence mask
    and motion classes with scalar arithmetic ordered exactly like the
    production path, so agreement can be asserted bit for bit.
    """
    import math

    from .geom import BS, FD, FS, NO_INSTANCE, FlowField

    tgt_by_id = {b.track_id: b for b in boxes_tgt}
    pairs = [(b, tgt_by_id[b.track_id]) for b in sorted(boxes_src, key=lambda b: b.track_id)
             if b.track_id in tgt_by_id]
    n = len(radar)
    flows = np.zeros((n, 3))
    inst = np.full(n, NO_INSTANCE, dtype=np.int32)

    def local_xy(box, px, py):
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        dx, dy = px - box.center[0], py - box.center[1]
        return c * dx + s * dy, -s * dx + c * dy

    def rigid_flow(bs, bt, px, py, pz):
        lx, ly = local_xy(bs, px, py)
        dz = pz - bs.center[2]
        ct, st = math.cos(bt.yaw), math.sin(bt.yaw)
        qx = ct * lx - st * ly + bt.center[0]
        qy = st * lx + ct * ly + bt.center[1]
        qz = dz + bt.center[2]
        return qx - px, qy - py, qz - pz

    for i in range(n):
        px, py, pz = radar.positions[i]
        best_d, best_j = math.inf, -1
        for j, (bs, _) in enumerate(pairs):
            lx, ly = local_xy(bs, px, py)
            dz = pz - bs.center[2]
            if (abs(lx) <= bs.dims[0] * 0.5 and abs(ly) <= bs.dims[1] * 0.5
                    and abs(dz) <= bs.dims[2] * 0.5):
                dx, dy = px - bs.center[0], py - bs.center[1]
                d = math.sqrt(dx * dx + dy * dy + dz * dz)
                if d < best_d:
                    best_d, best_j = d, j
        if best_j >= 0:
            bs, bt = pairs[best_j]
            flows[i] = rigid_flow(bs, bt, px, py, pz)
            inst[i] = best_j

    # recovery pass
    for i in range(n):
        if inst[i] != NO_INSTANCE or not pairs:
            continue
        if abs(radar.arv[i]) <= params.dynamic_arv_min:
            continue
        px, py, pz = radar.positions[i]
        best_d, best_j = math.inf, -1
        for j, (bs, _) in enumerate(pairs):
            dx, dy, dz = px - bs.center[0], py - bs.center[1], pz - bs.center[2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d < best_d:
                best_d, best_j = d, j
        bs, bt = pairs[best_j]
        if best_d > params.dist_threshold(bs.class_label):
            continue
        fx, fy, fz = rigid_flow(bs, bt, px, py, pz)
        norm = math.sqrt(px * px + py * py + pz * pz)
        radial = ((fx / dt) * px + (fy / dt) * py + (fz / dt) * pz) / norm
        if abs(radial - radar.arv[i]) < params.gamma_thre:
            flows[i] = (fx, fy, fz)
            inst[i] = best_j

    mask = np.zeros(n, dtype=np.uint8)
    classes = np.full(n, BS, dtype=np.int8)
    for i in range(n):
        px, py, pz = radar.positions[i]
        norm = math.sqrt(px * px + py * py + pz * pz)
        fx, fy, fz = flows[i]
        radial = ((fx / dt) * px + (fy / dt) * py + (fz / dt) * pz) / norm
        mask[i] = 1 if abs(radial - radar.arv[i]) < params.gamma_thre else 0
        speed = math.sqrt(fx * fx + fy * fy + fz * fz) / dt
        if inst[i] != NO_INSTANCE:
            classes[i] = FD if speed >= params.dynamic_speed_min else FS
    return FlowField(flows, mask, classes, inst)

"""Point clouds, rigid transforms, tracked boxes and flow fields.

Conventions used throughout the pipeline:
  - positions are (N, 3) float64 arrays in meters, sensor at the origin
  - flow vectors are displacements in meters over one frame interval dt;
    speeds are recovered as ||flow|| / dt
  - ARV is the absolute (ego-compensated) radial velocity in m/s, signed
    positive when the point recedes from the sensor
  - all functions are pure; inputs are never mutated

Element-wise coordinate arithmetic (rather than matrix products) is used in
the flow-label paths so that a straightforward per-point reimplementation
reproduces the same IEEE results bit for bit.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DegeneratePoint, LengthMismatch, TrackMismatch

# motion classes
FD = 0  # foreground dynamic
BS = 1  # background static
FS = 2  # foreground static
CLASS_NAMES = {FD: "FD", BS: "BS", FS: "FS"}

NO_INSTANCE = -1


def _as_points(p) -> np.ndarray:
    a = np.asarray(p, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != 3:
        raise LengthMismatch(f"expected (N,3) points, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class SE3:
    """Rigid transform: p -> R @ p + t."""

    rotation: np.ndarray  # (3,3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def validate(self, tol: float = 1e-9) -> None:
        r = self.rotation
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(self.translation)):
            raise ValueError("non-finite transform")
        if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
            raise ValueError("rotation not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > tol:
            raise ValueError("rotation determinant != 1")

    @staticmethod
    def identity() -> "SE3":
        return SE3(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw_translation(yaw: float, t) -> "SE3":
        c, s = np.cos(yaw), np.sin(yaw)
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return SE3(r, np.asarray(t, dtype=np.float64))

    @staticmethod
    def from_matrix(m) -> "SE3":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return SE3(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """R @ p + t for a single (3,) point or an (N,3) batch."""
        single = np.asarray(points).ndim == 1
        p = _as_points(points)
        r, t = self.rotation, self.translation
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        out = np.empty_like(p)
        out[:, 0] = r[0, 0] * x + r[0, 1] * y + r[0, 2] * z + t[0]
        out[:, 1] = r[1, 0] * x + r[1, 1] * y + r[1, 2] * z + t[1]
        out[:, 2] = r[2, 0] * x + r[2, 1] * y + r[2, 2] * z + t[2]
        return out[0] if single else out

    def inverse(self) -> "SE3":
        rt = self.rotation.T
        return SE3(rt, -(rt @ self.translation))

    def compose(self, other: "SE3") -> "SE3":
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        return SE3(self.rotation @ other.rotation,
                   self.rotation @ other.translation + self.translation)


@dataclass(frozen=True)
class TrackedBox:
    """7-DOF tracked bounding box: center, (length, width, height), yaw about z."""

    track_id: int
    class_label: str
    center: np.ndarray  # (3,)
    dims: np.ndarray  # (l, w, h)
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "dims", np.asarray(self.dims, dtype=np.float64).reshape(3))

    def pose(self) -> SE3:
        """Box-local axes -> sensor frame."""
        return SE3.from_yaw_translation(self.yaw, self.center)


@dataclass(frozen=True)
class EgoMotion:
    """t_src_to_tgt maps a static world point's source-frame coordinates to
    its target-frame coordinates; dt is the frame interval in seconds."""

    t_src_to_tgt: SE3
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass
class PointCloud:
    """Columnar point cloud; row order is stable and indexes align with flow fields.

    Radar clouds carry arv (required), rrv and rcs (optional); lidar clouds
    carry intensity (optional).
    """

    positions: np.ndarray  # (N,3)
    modality: str  # "radar" | "lidar"
    frame_id: str = "0"
    arv: Optional[np.ndarray] = None
    rrv: Optional[np.ndarray] = None
    rcs: Optional[np.ndarray] = None
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if self.modality not in ("radar", "lidar"):
            raise ValueError(f"unknown modality {self.modality!r}")
        n = len(self.positions)
        for name in ("arv", "rrv", "rcs", "intensity"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64).reshape(-1)
                if len(v) != n:
                    raise LengthMismatch(f"{name} length {len(v)} != {n} points")
                setattr(self, name, v)
        if self.modality == "radar" and self.arv is None:
            raise ValueError("radar cloud requires arv")

    def __len__(self) -> int:
        return len(self.positions)

    def select(self, mask_or_index) -> "PointCloud":
        """Row subset preserving order; channels follow along."""
        def pick(v):
            return None if v is None else v[mask_or_index]
        return PointCloud(self.positions[mask_or_index], self.modality, self.frame_id,
                          arv=pick(self.arv), rrv=pick(self.rrv), rcs=pick(self.rcs),
                          intensity=pick(self.intensity))


@dataclass
class FlowField:
    """Per-point flow annotations aligned by index with the owning cloud.

    gt_flows are displacements in meters over dt (source-frame axes, ego
    compensated).  flows holds predictions when present.  mask is the
    per-point confidence indicator; motion_class is one of FD/BS/FS;
    instance_id is NO_INSTANCE for background points.
    """

    gt_flows: np.ndarray  # (N,3)
    mask: np.ndarray  # (N,) uint8 in {0,1}
    motion_class: np.ndarray  # (N,) int8
    instance_id: np.ndarray  # (N,) int32, NO_INSTANCE for none
    flows: Optional[np.ndarray] = None  # (N,3) predictions

    def __post_init__(self):
        self.gt_flows = np.asarray(self.gt_flows, dtype=np.float64).reshape(-1, 3)
        n = len(self.gt_flows)
        self.mask = np.asarray(self.mask, dtype=np.uint8).reshape(n)
        self.motion_class = np.asarray(self.motion_class, dtype=np.int8).reshape(n)
        self.instance_id = np.asarray(self.instance_id, dtype=np.int32).reshape(n)
        if self.flows is not None:
            self.flows = np.asarray(self.flows, dtype=np.float64).reshape(n, 3)

    def __len__(self) -> int:
        return len(self.gt_flows)

    @staticmethod
    def all_static(n: int) -> "FlowField":
        return FlowField(np.zeros((n, 3)), np.ones(n, dtype=np.uint8),
                         np.full(n, BS, dtype=np.int8),
                         np.full(n, NO_INSTANCE, dtype=np.int32))


# ---------------------------------------------------------------------------
# operations


def radial_project(points, vectors) -> np.ndarray:
    """Component of each vector along the sensor line of sight, v . (p/||p||).

    Accepts single (3,) inputs or (N,3) batches.  Raises DegeneratePoint for
    points within 1e-6 of the sensor.
    """
    single = np.asarray(points).ndim == 1
    p = _as_points(points)
    v = _as_points(vectors)
    if len(p) != len(v):
        raise LengthMismatch("points and vectors differ in length")
    px, py, pz = p[:, 0], p[:, 1], p[:, 2]
    norm = np.sqrt(px * px + py * py + pz * pz)
    if np.any(norm <= 1e-6):
        raise DegeneratePoint("point at (or within 1e-6 of) the sensor origin")
    out = (v[:, 0] * px + v[:, 1] * py + v[:, 2] * pz) / norm
    return float(out[0]) if single else out


def box_contains(box: TrackedBox, points) -> np.ndarray:
    """Closed-interval membership test in box-local axes (face points are inside)."""
    single = np.asarray(points).ndim == 1
    p = _as_points(points)
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    dx = p[:, 0] - box.center[0]
    dy = p[:, 1] - box.center[1]
    dz = p[:, 2] - box.center[2]
    lx = c * dx + s * dy  # R(-yaw) applied to the offset
    ly = -s * dx + c * dy
    hl, hw, hh = box.dims[0] * 0.5, box.dims[1] * 0.5, box.dims[2] * 0.5
    inside = (np.abs(lx) <= hl) & (np.abs(ly) <= hw) & (np.abs(dz) <= hh)
    return bool(inside[0]) if single else inside


def rigid_box_flow(box_src: TrackedBox, box_tgt: TrackedBox, points) -> np.ndarray:
    """Displacement labels for points riding on a tracked box.

    Returns T_tgt o T_src^-1 (p) - p, where T_box maps box-local coordinates
    to the sensor frame.  Both boxes must carry the same track_id.
    """
    if box_src.track_id != box_tgt.track_id:
        raise TrackMismatch(f"track ids differ: {box_src.track_id} vs {box_tgt.track_id}")
    single = np.asarray(points).ndim == 1
    p = _as_points(points)
    # into source-box local axes
    cs, ss = np.cos(box_src.yaw), np.sin(box_src.yaw)
    dx = p[:, 0] - box_src.center[0]
    dy = p[:, 1] - box_src.center[1]
    dz = p[:, 2] - box_src.center[2]
    lx = cs * dx + ss * dy
    ly = -ss * dx + cs * dy
    # out through the target-box pose
    ct, st = np.cos(box_tgt.yaw), np.sin(box_tgt.yaw)
    qx = ct * lx - st * ly + box_tgt.center[0]
    qy = st * lx + ct * ly + box_tgt.center[1]
    qz = dz + box_tgt.center[2]
    out = np.empty_like(p)
    out[:, 0] = qx - p[:, 0]
    out[:, 1] = qy - p[:, 1]
    out[:, 2] = qz - p[:, 2]
    return out[0] if single else out


def ego_compensate(cloud_tgt: PointCloud, ego: EgoMotion) -> PointCloud:
    """Bring a target-frame cloud into the source frame.

    After compensation a static world point coincides across the two frames,
    so its ground-truth flow is exactly zero and the network can predict the
    absolute motion directly.
    """
    inv = ego.t_src_to_tgt.inverse()
    out = replace(cloud_tgt)
    out.positions = inv.apply(cloud_tgt.positions)
    return out


def compensate_box(box: TrackedBox, ego: EgoMotion) -> TrackedBox:
    """Re-express a target-frame box in the source frame (planar ego motion)."""
    inv = ego.t_src_to_tgt.inverse()
    center = inv.apply(box.center)
    # yaw offset of the inverse transform about z
    dyaw = np.arctan2(inv.rotation[1, 0], inv.rotation[0, 0])
    yaw = box.yaw + dyaw
    yaw = float(np.arctan2(np.sin(yaw), np.cos(yaw)))
    if yaw <= -np.pi:  # wrap to (-pi, pi]
        yaw += 2.0 * np.pi
    return TrackedBox(box.track_id, box.class_label, center, box.dims, yaw)

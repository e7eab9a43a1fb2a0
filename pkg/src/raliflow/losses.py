"""Training losses and EPE metrics.

The flow losses bucket points into three speed ranges (fast / slow /
in-between) and sum the per-bucket mean L2 errors, so sparse dynamic points
are not drowned out by the static majority.  The radar variant restricts
itself to confidence-mask-1 points: mask-0 points contribute nothing to the
value or the gradients.  The instance consistency loss pulls every dynamic
point of an instance toward the member with the largest predicted flow
(treated as a constant target, otherwise shrinking that flow would minimize
the loss).
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import ad
from .ad import Tensor, gather_rows, l2_norm_rows, reduce_mean
from .errors import LengthMismatch
from .geom import BS, FD, FS, NO_INSTANCE, FlowField

SPEED_FAST = 1.0  # m/s, bucket 1 above this
SPEED_SLOW = 0.4  # m/s, bucket 2 below this
DYNAMIC_SPEED = 0.5  # m/s, membership gate for the instance loss


@dataclass
class SpeedBuckets:
    s1: np.ndarray  # speed > 1.0 m/s
    s2: np.ndarray  # speed < 0.4 m/s
    s3: np.ndarray  # the rest

    def all(self) -> List[np.ndarray]:
        return [self.s1, self.s2, self.s3]


def speed_buckets(flows: np.ndarray, dt: float,
                  subset: Optional[np.ndarray] = None) -> SpeedBuckets:
    """Partition point indices by speed = ||flow|| / dt.

    subset restricts the candidate indices (e.g. in-grid or masked points);
    returned index arrays refer to rows of `flows`.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    idx = np.arange(len(flows)) if subset is None else np.asarray(subset, dtype=np.int64)
    speed = np.linalg.norm(flows[idx], axis=1) / dt
    return SpeedBuckets(s1=idx[speed > SPEED_FAST],
                        s2=idx[speed < SPEED_SLOW],
                        s3=idx[(speed >= SPEED_SLOW) & (speed <= SPEED_FAST)])


def bucketed_flow_loss(pred: Tensor, gt: np.ndarray, buckets: SpeedBuckets) -> Tensor:
    """Sum over buckets of the mean L2 flow error inside the bucket; empty
    buckets contribute zero (their 1/|S| weight is undefined)."""
    if pred.data.shape != gt.shape:
        raise LengthMismatch(f"pred {pred.data.shape} vs gt {gt.shape}")
    total = Tensor(0.0)
    for idx in buckets.all():
        if len(idx) == 0:
            continue
        diff = ad.sub(gather_rows(pred, idx), Tensor(gt[idx]))
        total = ad.add(total, reduce_mean(l2_norm_rows(diff)))
    return total


def lidar_flow_loss(pred: Tensor, gt: np.ndarray, in_grid: np.ndarray,
                    dt: float, bucket_source: str = "pred") -> Tensor:
    subset = np.nonzero(in_grid)[0]
    basis = pred.data if bucket_source == "pred" else gt
    return bucketed_flow_loss(pred, gt, speed_buckets(basis, dt, subset))


def masked_radar_flow_loss(pred: Tensor, gt: np.ndarray, mask: np.ndarray,
                           in_grid: np.ndarray, dt: float,
                           bucket_source: str = "pred") -> Tensor:
    """Flow loss over {mask == 1} points only; zero when nothing is masked in."""
    subset = np.nonzero(in_grid & (mask == 1))[0]
    if len(subset) == 0:
        return Tensor(0.0)
    basis = pred.data if bucket_source == "pred" else gt
    return bucketed_flow_loss(pred, gt, speed_buckets(basis, dt, subset))


def instance_consistency_loss(pred_radar: Tensor, pred_lidar: Tensor,
                              radar_labels: FlowField, lidar_labels: FlowField,
                              num_instances: int, dt: float) -> Tensor:
    """Per instance: mean distance of the dynamic members' predictions to the
    member with the largest predicted norm (gradient-stopped target).

    Dynamic membership uses ground-truth speed >= 0.5 m/s over the merged
    radar+lidar point set (radar rows first); instances with at most one
    dynamic point contribute zero.
    """
    total = Tensor(0.0)
    r_speed = np.linalg.norm(radar_labels.gt_flows, axis=1) / dt
    l_speed = np.linalg.norm(lidar_labels.gt_flows, axis=1) / dt
    for h in range(num_instances):
        r_idx = np.nonzero((radar_labels.instance_id == h) & (r_speed >= DYNAMIC_SPEED))[0]
        l_idx = np.nonzero((lidar_labels.instance_id == h) & (l_speed >= DYNAMIC_SPEED))[0]
        if len(r_idx) + len(l_idx) <= 1:
            continue
        parts = []
        if len(r_idx):
            parts.append(gather_rows(pred_radar, r_idx))
        if len(l_idx):
            parts.append(gather_rows(pred_lidar, l_idx))
        merged = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
        norms = np.linalg.norm(merged.data, axis=1)
        kappa = int(np.argmax(norms))  # first max: lowest merged index on ties
        target = Tensor(merged.data[kappa].copy())  # constant, not a graph node
        total = ad.add(total, reduce_mean(l2_norm_rows(ad.sub(merged, target))))
    return total


def total_loss(l_li: Tensor, l_ra: Tensor, l_ins: Tensor) -> Tensor:
    return ad.add(ad.add(l_li, l_ra), l_ins)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    epe_3d: float
    epe_3way: float
    epe_fd: Optional[float]
    epe_bs: Optional[float]
    epe_fs: Optional[float]
    counts: Dict[str, int]
    empty_classes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"epe_3d": self.epe_3d, "epe_3way": self.epe_3way,
                "epe_fd": self.epe_fd, "epe_bs": self.epe_bs, "epe_fs": self.epe_fs,
                "counts": dict(self.counts), "empty_classes": list(self.empty_classes)}


def epe_3d(pred: np.ndarray, gt: np.ndarray) -> float:
    if pred.shape != gt.shape:
        raise LengthMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    if len(pred) == 0:
        return float("nan")
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)))


def epe_3way(pred: np.ndarray, gt: np.ndarray, classes: np.ndarray) -> MetricsReport:
    """Unweighted average of the per-class (FD/BS/FS) mean EPEs; empty classes
    are excluded from the average and flagged in the report."""
    if not (len(pred) == len(gt) == len(classes)):
        raise LengthMismatch("pred/gt/classes lengths differ")
    err = np.linalg.norm(pred - gt, axis=1) if len(pred) else np.zeros(0)
    per_class = {}
    counts = {}
    for code, name in ((FD, "fd"), (BS, "bs"), (FS, "fs")):
        sel = classes == code
        counts[name] = int(sel.sum())
        per_class[name] = float(err[sel].mean()) if sel.any() else None
    present = [v for v in per_class.values() if v is not None]
    empty = [k for k, v in per_class.items() if v is None]
    away = float(np.mean(present)) if present else float("nan")
    return MetricsReport(epe_3d=epe_3d(pred, gt) if len(pred) else float("nan"),
                         epe_3way=away, epe_fd=per_class["fd"], epe_bs=per_class["bs"],
                         epe_fs=per_class["fs"], counts=counts, empty_classes=empty)

"""Scene-flow label generation.

In-box points take the rigid flow of their tracking box pair; everything
else starts static.  Radar points that look dynamic (|ARV| above the gate)
but fell outside every box are recovered through a two-pronged check:
proximity to the nearest box center under a class-specific threshold, then
agreement between the measured ARV and the radial projection of the
candidate rigid flow.  A per-point confidence mask and FD/BS/FS motion
classes complete the annotation.

All clouds and boxes must already be ego-compensated into the source frame.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .errors import DuplicateTrackId
from .geom import (BS, FD, FS, NO_INSTANCE, FlowField, PointCloud, TrackedBox,
                   box_contains, radial_project, rigid_box_flow)

DEFAULT_CLASS_DIST = {"car": 3.0, "pedestrian": 1.0, "cyclist": 1.5, "other": 2.0}


@dataclass(frozen=True)
class LabelParams:
    gamma_thre: float = 1.0  # m/s, ARV vs radial-flow agreement (strict <)
    dynamic_arv_min: float = 0.5  # m/s, |arv| gate for recovery candidates
    dynamic_speed_min: float = 0.5  # m/s, FD vs FS split
    class_dist_thresholds: Dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_CLASS_DIST))

    def validate(self):
        if min(self.gamma_thre, self.dynamic_arv_min, self.dynamic_speed_min) <= 0:
            raise ValueError("label thresholds must be positive")
        if any(v <= 0 for v in self.class_dist_thresholds.values()):
            raise ValueError("class distance thresholds must be positive")

    def dist_threshold(self, class_label: str) -> float:
        return self.class_dist_thresholds.get(
            class_label, self.class_dist_thresholds.get("other", DEFAULT_CLASS_DIST["other"]))


@dataclass
class LabeledFrame:
    radar: PointCloud
    radar_labels: FlowField
    lidar: PointCloud
    lidar_labels: FlowField
    instances: List[Tuple[int, TrackedBox, TrackedBox]]  # (index, src box, tgt box)


def match_box_pairs(boxes_src: List[TrackedBox],
                    boxes_tgt: List[TrackedBox]) -> List[Tuple[TrackedBox, TrackedBox]]:
    """Pair boxes across frames by track_id, ordered by track_id.

    Source boxes whose track vanished in the target frame carry no motion
    information and are ignored; their points stay static.
    """
    for boxes in (boxes_src, boxes_tgt):
        ids = [b.track_id for b in boxes]
        if len(ids) != len(set(ids)):
            raise DuplicateTrackId(f"duplicate track ids within a frame: {sorted(ids)}")
    tgt_by_id = {b.track_id: b for b in boxes_tgt}
    return [(b, tgt_by_id[b.track_id]) for b in sorted(boxes_src, key=lambda b: b.track_id)
            if b.track_id in tgt_by_id]


def generate_inbox_labels(cloud: PointCloud, boxes_src: List[TrackedBox],
                          boxes_tgt: List[TrackedBox]) -> FlowField:
    """Rigid flow for in-box points; everything else zero-flow provisional BS.

    A point inside several boxes follows the box with the nearest center
    (ties to the lower track_id).  Instance indices follow the track_id
    ordering of the matched pairs.
    """
    pairs = match_box_pairs(boxes_src, boxes_tgt)
    n = len(cloud)
    labels = FlowField.all_static(n)
    if not pairs or n == 0:
        return labels
    p = cloud.positions
    best_dist = np.full(n, np.inf)
    best_inst = np.full(n, NO_INSTANCE, dtype=np.int32)
    for inst, (bs, _) in enumerate(pairs):
        inside = box_contains(bs, p)
        dx = p[:, 0] - bs.center[0]
        dy = p[:, 1] - bs.center[1]
        dz = p[:, 2] - bs.center[2]
        d = np.sqrt(dx * dx + dy * dy + dz * dz)
        take = inside & (d < best_dist)
        best_dist[take] = d[take]
        best_inst[take] = inst
    for inst, (bs, bt) in enumerate(pairs):
        sel = best_inst == inst
        if sel.any():
            labels.gt_flows[sel] = rigid_box_flow(bs, bt, p[sel])
            labels.instance_id[sel] = inst
    return labels


def recover_outbox_radar(radar: PointCloud, labels: FlowField,
                         boxes_src: List[TrackedBox], boxes_tgt: List[TrackedBox],
                         params: LabelParams, dt: float) -> FlowField:
    """Second prong: re-examine static-labeled radar points with dynamic ARV.

    Each candidate is tested against its nearest box center only; it is
    recovered when the distance passes the class threshold and the candidate
    rigid flow's radial speed agrees with the ARV within gamma_thre.
    """
    params.validate()
    pairs = match_box_pairs(boxes_src, boxes_tgt)
    out = FlowField(labels.gt_flows.copy(), labels.mask.copy(),
                    labels.motion_class.copy(), labels.instance_id.copy())
    if not pairs:
        return out
    cand = (out.instance_id == NO_INSTANCE) & (np.abs(radar.arv) > params.dynamic_arv_min)
    idx = np.nonzero(cand)[0]
    if len(idx) == 0:
        return out
    p = radar.positions[idx]
    dists = np.empty((len(idx), len(pairs)))
    for j, (bs, _) in enumerate(pairs):
        dx = p[:, 0] - bs.center[0]
        dy = p[:, 1] - bs.center[1]
        dz = p[:, 2] - bs.center[2]
        dists[:, j] = np.sqrt(dx * dx + dy * dy + dz * dz)
    nearest = np.argmin(dists, axis=1)  # first minimum = lowest track_id
    d_min = dists[np.arange(len(idx)), nearest]
    for j, (bs, bt) in enumerate(pairs):
        sel = nearest == j
        if not sel.any():
            continue
        ok_dist = d_min[sel] <= params.dist_threshold(bs.class_label)
        sub = idx[sel]
        v_cand = rigid_box_flow(bs, bt, radar.positions[sub])
        radial = radial_project(radar.positions[sub], v_cand / dt)
        ok_arv = np.abs(radial - radar.arv[sub]) < params.gamma_thre
        accept = sub[ok_dist & ok_arv]
        out.gt_flows[accept] = v_cand[ok_dist & ok_arv]
        out.instance_id[accept] = j
    return out


def confidence_mask(radar: PointCloud, labels: FlowField, gamma_thre: float,
                    dt: float) -> np.ndarray:
    """m_i = 1 iff |radial(gt flow / dt) - arv_i| < gamma_thre."""
    if len(radar) == 0:
        return np.zeros(0, dtype=np.uint8)
    radial = radial_project(radar.positions, labels.gt_flows / dt)
    return (np.abs(radial - radar.arv) < gamma_thre).astype(np.uint8)


def classify_points(labels: FlowField, dt: float, dynamic_speed_min: float = 0.5) -> np.ndarray:
    """FD / FS for instance-carrying points split at dynamic_speed_min; BS
    otherwise (background-dynamic cannot occur by construction)."""
    f = labels.gt_flows
    speed = np.sqrt(f[:, 0] * f[:, 0] + f[:, 1] * f[:, 1] + f[:, 2] * f[:, 2]) / dt
    fg = labels.instance_id != NO_INSTANCE
    out = np.full(len(labels), BS, dtype=np.int8)
    out[fg & (speed >= dynamic_speed_min)] = FD
    out[fg & (speed < dynamic_speed_min)] = FS
    return out


def label_frame(radar: PointCloud, lidar: PointCloud,
                boxes_src: List[TrackedBox], boxes_tgt: List[TrackedBox],
                params: LabelParams, dt: float) -> LabeledFrame:
    """Full labeling pass over one ego-compensated frame pair."""
    pairs = match_box_pairs(boxes_src, boxes_tgt)

    radar_labels = generate_inbox_labels(radar, boxes_src, boxes_tgt)
    radar_labels = recover_outbox_radar(radar, radar_labels, boxes_src, boxes_tgt,
                                        params, dt)
    radar_labels.mask = confidence_mask(radar, radar_labels, params.gamma_thre, dt)
    radar_labels.motion_class = classify_points(radar_labels, dt, params.dynamic_speed_min)

    lidar_labels = generate_inbox_labels(lidar, boxes_src, boxes_tgt)
    lidar_labels.motion_class = classify_points(lidar_labels, dt, params.dynamic_speed_min)

    instances = [(i, bs, bt) for i, (bs, bt) in enumerate(pairs)]
    return LabeledFrame(radar, radar_labels, lidar, lidar_labels, instances)

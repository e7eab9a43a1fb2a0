"""End-to-end frame-pair processing: raw sensor data -> network-ready sample.

Order of operations per frame: radar projected into the LiDAR frame, ground
removed from the combined scan, radar denoised against LiDAR context.  The
target frame (clouds and boxes) is then ego-compensated into the source
frame, labels are generated for the source clouds, and everything is
pillarized onto one grid.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .geom import SE3, EgoMotion, PointCloud, TrackedBox, compensate_box, ego_compensate
from .labels import LabeledFrame, LabelParams, label_frame
from .preprocess import DenoiseParams, GroundParams, denoise_radar, project_radar_to_lidar, remove_ground


@dataclass
class RawSample:
    """One frame pair as produced by a sensor rig (or the generator)."""

    sample_id: str
    radar_src: PointCloud
    lidar_src: PointCloud
    radar_tgt: PointCloud
    lidar_tgt: PointCloud
    boxes_src: List[TrackedBox]
    boxes_tgt: List[TrackedBox]  # target sensor frame
    ego: EgoMotion
    extrinsic: SE3 = None  # radar -> lidar; identity when None

    def __post_init__(self):
        if self.extrinsic is None:
            self.extrinsic = SE3.identity()


@dataclass
class ProcessedSample:
    """Ground-removed, denoised, ego-compensated frame pair (all in the
    source LiDAR frame) plus the keep masks over the raw rows."""

    sample_id: str
    radar_src: PointCloud
    lidar_src: PointCloud
    radar_tgt: PointCloud
    lidar_tgt: PointCloud
    boxes_src: List[TrackedBox]
    boxes_tgt: List[TrackedBox]  # compensated into the source frame
    ego: EgoMotion
    keep_radar_src: np.ndarray
    keep_lidar_src: np.ndarray
    keep_radar_tgt: np.ndarray
    keep_lidar_tgt: np.ndarray


def _process_frame(radar: PointCloud, lidar: PointCloud, extrinsic: SE3,
                   ground: GroundParams, denoise: DenoiseParams):
    radar = project_radar_to_lidar(radar, extrinsic)
    combined = PointCloud(np.vstack([radar.positions, lidar.positions]),
                          "lidar", radar.frame_id)
    keep = remove_ground(combined, ground)
    keep_r, keep_l = keep[:len(radar)], keep[len(radar):]
    radar_g = radar.select(keep_r)
    lidar_g = lidar.select(keep_l)
    dn = denoise_radar(radar_g, lidar_g, denoise)
    keep_radar = keep_r.copy()
    keep_radar[np.nonzero(keep_r)[0][~dn]] = False
    return radar_g.select(dn), lidar_g, keep_radar, keep_l


def preprocess_sample(raw: RawSample, ground: GroundParams = GroundParams(),
                      denoise: DenoiseParams = DenoiseParams()) -> ProcessedSample:
    r_src, l_src, kr_src, kl_src = _process_frame(raw.radar_src, raw.lidar_src,
                                                  raw.extrinsic, ground, denoise)
    r_tgt, l_tgt, kr_tgt, kl_tgt = _process_frame(raw.radar_tgt, raw.lidar_tgt,
                                                  raw.extrinsic, ground, denoise)
    r_tgt = ego_compensate(r_tgt, raw.ego)
    l_tgt = ego_compensate(l_tgt, raw.ego)
    boxes_tgt = [compensate_box(b, raw.ego) for b in raw.boxes_tgt]
    return ProcessedSample(sample_id=raw.sample_id, radar_src=r_src, lidar_src=l_src,
                           radar_tgt=r_tgt, lidar_tgt=l_tgt, boxes_src=list(raw.boxes_src),
                           boxes_tgt=boxes_tgt, ego=raw.ego,
                           keep_radar_src=kr_src, keep_lidar_src=kl_src,
                           keep_radar_tgt=kr_tgt, keep_lidar_tgt=kl_tgt)


def label_sample(proc: ProcessedSample, params: LabelParams = LabelParams()) -> LabeledFrame:
    return label_frame(proc.radar_src, proc.lidar_src, proc.boxes_src,
                       proc.boxes_tgt, params, proc.ego.dt)

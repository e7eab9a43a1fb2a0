"""Training and evaluation loops over prepared samples.

Training is plain single-threaded SGD with Adam and gradient accumulation
over small batches.  Per-epoch sample order comes from a permutation derived
from (shuffle seed, epoch index) alone, and Adam state rides in checkpoints,
so a run resumed from epoch k reproduces an uninterrupted run bit for bit.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from .ad import adam_step, zero_grads
from .bev import GridSpec
from .dataio import Dataset
from .geom import FlowField
from .labels import LabeledFrame, match_box_pairs
from .losses import (epe_3way, instance_consistency_loss, lidar_flow_loss,
                     masked_radar_flow_loss, total_loss)
from .model import DBCFNet, ModelConfig, ModelSample, prepare_sample
from .rng import Splitmix64


@dataclass
class EpochStats:
    epoch: int
    l_li: float
    l_ra: float
    l_ins: float
    l_total: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "l_li": self.l_li, "l_ra": self.l_ra,
                "l_ins": self.l_ins, "l_total": self.l_total}


def load_model_samples(ds: Dataset, grid: GridSpec, config: ModelConfig,
                       sample_ids: Optional[List[str]] = None,
                       workers: int = 1) -> List[ModelSample]:
    """Materialize network-ready samples from a processed+labeled dataset."""
    ids = ds.sample_ids() if sample_ids is None else list(sample_ids)

    def build(sid: str) -> ModelSample:
        proc = ds.load_raw(sid)
        radar_labels, lidar_labels = ds.load_labels(sid)
        pairs = match_box_pairs(proc.boxes_src, proc.boxes_tgt)
        labeled = LabeledFrame(proc.radar_src, radar_labels, proc.lidar_src,
                               lidar_labels, [(i, a, b) for i, (a, b) in enumerate(pairs)])
        return prepare_sample(proc.radar_src, proc.lidar_src, proc.radar_tgt,
                              proc.lidar_tgt, grid, config, labeled)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build, ids))
    return [build(sid) for sid in ids]


def forward_losses(net: DBCFNet, sample: ModelSample, dt: float,
                   bucket_source: str = "pred"):
    res = net.forward(sample)
    l_li = lidar_flow_loss(res.flow_lidar, sample.lidar_labels.gt_flows,
                           res.in_grid_lidar, dt, bucket_source)
    l_ra = masked_radar_flow_loss(res.flow_radar, sample.radar_labels.gt_flows,
                                  sample.radar_labels.mask, res.in_grid_radar,
                                  dt, bucket_source)
    l_ins = instance_consistency_loss(res.flow_radar, res.flow_lidar,
                                      sample.radar_labels, sample.lidar_labels,
                                      len(sample.instances or []), dt)
    return l_li, l_ra, l_ins, res


def train_loop(samples: List[ModelSample], net: DBCFNet, dt: float,
               epochs: int, lr: float, batch_size: int = 1, shuffle_seed: int = 1,
               bucket_source: str = "pred", start_epoch: int = 0,
               on_epoch: Optional[Callable[[EpochStats], None]] = None) -> List[EpochStats]:
    """Run epochs [start_epoch, epochs); returns per-epoch mean losses."""
    params = net.parameters()
    n = len(samples)
    history = []
    for epoch in range(start_epoch, epochs):
        perm = Splitmix64(shuffle_seed).derive(epoch).shuffle_index(n)
        sums = np.zeros(4)
        zero_grads(params)
        pos = 0
        while pos < n:
            group = perm[pos:pos + batch_size]
            scale = 1.0 / len(group)
            for si in group:
                l_li, l_ra, l_ins, _ = forward_losses(net, samples[si], dt, bucket_source)
                loss = total_loss(l_li, l_ra, l_ins)
                (loss * scale).backward()
                sums += (l_li.item(), l_ra.item(), l_ins.item(), loss.item())
            adam_step(params, lr)
            zero_grads(params)
            pos += len(group)
        stats = EpochStats(epoch, *(sums / n))
        history.append(stats)
        if on_epoch:
            on_epoch(stats)
    return history


def predict(net: Optional[DBCFNet], sample: ModelSample):
    """Per-point flows as arrays; None net means the zero-flow baseline."""
    if net is None:
        return (np.zeros_like(sample.radar_labels.gt_flows),
                np.zeros_like(sample.lidar_labels.gt_flows))
    res = net.forward(sample)
    return res.flow_radar.data, res.flow_lidar.data


def evaluate(samples: List[ModelSample], net: Optional[DBCFNet],
             workers: int = 1) -> Dict[str, dict]:
    """Pooled EPE metrics over all samples, per modality."""
    def run(sample):
        return predict(net, sample)

    if workers > 1 and net is None:
        preds = [run(s) for s in samples]  # zero-flow is trivial anyway
    elif workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            preds = list(pool.map(run, samples))
    else:
        preds = [run(s) for s in samples]

    out = {}
    for mod, idx in (("radar", 0), ("lidar", 1)):
        pred = np.vstack([p[idx] for p in preds])
        labels: List[FlowField] = [getattr(s, f"{mod}_labels") for s in samples]
        gt = np.vstack([l.gt_flows for l in labels])
        classes = np.concatenate([l.motion_class for l in labels])
        out[mod] = epe_3way(pred, gt, classes).to_dict()
    return out

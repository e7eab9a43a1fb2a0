"""The fusion network: dynamic-aware bidirectional local cross-attention over
pillar feature maps, a small U-Net backbone, and per-modality GRU flow heads.

Attention is local: each occupied query cell attends to occupied key cells
of the other modality inside its 3x3 neighborhood.  Logits are scaled dot
products multiplied by the Gaussian heatmap value at the key cell; values
are the raw key features plus a learned relative-position vector per
neighbor offset.  Queries with no occupied neighbor output exactly zero, so
the residual connection leaves their features untouched.

Flow heads run a GRU for a fixed number of iterations per point, emitting
additive flow updates from a zero-initialized linear layer; the untrained
network therefore predicts exactly zero flow everywhere.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import ad
from .ad import Parameter, Tensor, conv2d, gather_rows, gru_cell, reshape, upsample2x_nearest
from .bev import (GridSpec, PillarAssignment, SparseFeatureMap2D, dynamic_radar_map,
                  encode_pillars, gaussian_heatmap, pillarize, point_features)
from .errors import ConfigInvalid, GridMismatch, ShapeMismatch
from .geom import FlowField, PointCloud
from .labels import LabeledFrame
from .rng import Splitmix64

FUSION_MODES = ("dbcf", "dbcf-nog", "concat")

# 3x3 neighbor offsets, row-major; relpos row = (di+1)*3 + (dj+1)
OFFSETS = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)]


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 32  # pillar feature width C
    embed_width: int = 64  # flow embedding width
    gru_hidden: int = 64
    gru_iterations: int = 4
    unet_widths: Tuple[int, int] = (24, 48)  # encoder widths, depth fixed at 2
    unet_bottleneck: int = 48
    fusion: str = "dbcf"  # dbcf | dbcf-nog | concat
    sigma_sq_inv: float = 10.0  # heatmap bandwidth, 1/sigma^2
    param_seed: int = 7

    def validate(self):
        if self.fusion not in FUSION_MODES:
            raise ConfigInvalid(f"fusion must be one of {FUSION_MODES}")
        if min(self.channels, self.embed_width, self.gru_hidden) <= 0:
            raise ConfigInvalid("model widths must be positive")
        if self.gru_iterations < 1:
            raise ConfigInvalid("gru_iterations must be >= 1")
        if self.sigma_sq_inv <= 0:
            raise ConfigInvalid("sigma_sq_inv must be positive")


def build_attention_pairs(q_occ: np.ndarray, k_occ: np.ndarray):
    """(query flat cell, key flat cell, offset row) triples for all occupied
    query cells with occupied key cells in their 3x3 neighborhood."""
    h, w = q_occ.shape
    qs, ks, offs = [], [], []
    for oi, (di, dj) in enumerate(OFFSETS):
        i0, i1 = max(0, -di), h - max(0, di)
        j0, j1 = max(0, -dj), w - max(0, dj)
        both = q_occ[i0:i1, j0:j1] & k_occ[i0 + di:i1 + di, j0 + dj:j1 + dj]
        if not both.any():
            continue
        r, c = np.nonzero(both)
        qs.append((i0 + r) * w + (j0 + c))
        ks.append((i0 + r + di) * w + (j0 + c + dj))
        offs.append(np.full(len(r), oi, dtype=np.int64))
    if not qs:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    return np.concatenate(qs), np.concatenate(ks), np.concatenate(offs)


def local_cross_attention(query_map: SparseFeatureMap2D, key_map: SparseFeatureMap2D,
                          g_values: np.ndarray, wq: Optional[Tensor], wk: Optional[Tensor],
                          relpos: Tensor, pairs=None) -> Tensor:
    """Per query cell: softmax((Wq q . Wk k)/sqrt(C) * G(key)) over the
    available keys, applied to values (raw key feature + relpos[offset])."""
    if query_map.grid != key_map.grid:
        raise GridMismatch("query and key maps use different grids")
    h, w, c = query_map.features.data.shape
    if g_values.shape != (h, w):
        raise ShapeMismatch("heatmap does not match the feature grid")
    if pairs is None:
        pairs = build_attention_pairs(query_map.occupancy, key_map.occupancy)
    q_idx, k_idx, off = pairs
    if len(q_idx) == 0:
        return Tensor(np.zeros((h, w, c)))

    qf = reshape(query_map.features, (h * w, c))
    kf = reshape(key_map.features, (h * w, c))
    q_proj = ad.matmul(qf, wq) if wq is not None else qf
    k_proj = ad.matmul(kf, wk) if wk is not None else kf
    qv = gather_rows(q_proj, q_idx)
    kv = gather_rows(k_proj, k_idx)
    logits = ad.reduce_sum(ad.mul(qv, kv), axis=1) * Tensor(1.0 / np.sqrt(c))
    logits = ad.mul(logits, Tensor(g_values.reshape(-1)[k_idx]))
    weights = ad.segment_softmax(logits, q_idx, h * w)
    values = gather_rows(kf, k_idx) + gather_rows(relpos, off)
    contrib = ad.mul(reshape(weights, (len(q_idx), 1)), values)
    out = ad.scatter_add_rows(contrib, q_idx, h * w)
    return reshape(out, (h, w, c))


@dataclass
class ModelSample:
    """A frame pair prepared for the network: processed clouds on one grid,
    pillar assignments, heatmaps, precomputed attention index pairs, labels."""

    grid: GridSpec
    radar_src: PointCloud
    lidar_src: PointCloud
    radar_tgt: PointCloud
    lidar_tgt: PointCloud
    asg: Dict[str, PillarAssignment]  # keys: pr, pl, qr, ql
    g_src: np.ndarray
    g_tgt: np.ndarray
    pairs: Dict[str, tuple]  # attention pairs per (frame, direction)
    radar_labels: Optional[FlowField] = None
    lidar_labels: Optional[FlowField] = None
    instances: Optional[List] = None


def prepare_sample(radar_src: PointCloud, lidar_src: PointCloud,
                   radar_tgt: PointCloud, lidar_tgt: PointCloud,
                   grid: GridSpec, config: ModelConfig,
                   labeled: Optional[LabeledFrame] = None) -> ModelSample:
    """Precompute everything static about a frame pair (assignments,
    heatmaps, attention index pairs).  Target clouds must already be
    ego-compensated into the source frame."""
    grid.validate()
    asg = {
        "pr": pillarize(radar_src, grid),
        "pl": pillarize(lidar_src, grid),
        "qr": pillarize(radar_tgt, grid),
        "ql": pillarize(lidar_tgt, grid),
    }
    g_src = gaussian_heatmap(dynamic_radar_map(radar_src, grid), grid,
                             config.sigma_sq_inv).values
    g_tgt = gaussian_heatmap(dynamic_radar_map(radar_tgt, grid), grid,
                             config.sigma_sq_inv).values

    def occ(a: PillarAssignment) -> np.ndarray:
        m = np.zeros((grid.height, grid.width), dtype=bool)
        m.reshape(-1)[a.flat[a.in_grid]] = True
        return m

    occ_pr, occ_pl, occ_qr, occ_ql = occ(asg["pr"]), occ(asg["pl"]), occ(asg["qr"]), occ(asg["ql"])
    pairs = {
        # lidar -> radar: radar cells query their lidar neighborhood
        "src_l2r": build_attention_pairs(occ_pr, occ_pl),
        "src_r2l": build_attention_pairs(occ_pl, occ_pr),
        "tgt_l2r": build_attention_pairs(occ_qr, occ_ql),
        "tgt_r2l": build_attention_pairs(occ_ql, occ_qr),
    }
    return ModelSample(grid=grid, radar_src=radar_src, lidar_src=lidar_src,
                       radar_tgt=radar_tgt, lidar_tgt=lidar_tgt, asg=asg,
                       g_src=g_src, g_tgt=g_tgt, pairs=pairs,
                       radar_labels=labeled.radar_labels if labeled else None,
                       lidar_labels=labeled.lidar_labels if labeled else None,
                       instances=labeled.instances if labeled else None)


@dataclass
class ForwardResult:
    flow_radar: Tensor  # (N_r, 3), zero rows for out-of-grid points
    flow_lidar: Tensor
    in_grid_radar: np.ndarray
    in_grid_lidar: np.ndarray


class DBCFNet:
    """Parameter container plus the full forward pass."""

    def __init__(self, config: ModelConfig = ModelConfig()):
        config.validate()
        self.config = config
        self._params: List[Parameter] = []
        rng = Splitmix64(config.param_seed)
        c = config.channels
        x0_dim = config.embed_width + 2 * c + 3

        def make(name, shape, fan_in, zero=False):
            data = np.zeros(shape) if zero else ad.uniform_init(rng, shape, fan_in)
            p = Parameter(name, data)
            self._params.append(p)
            return p

        from .bev import POINT_FEATURE_DIM
        make("pillar.weight", (POINT_FEATURE_DIM, c), POINT_FEATURE_DIM)
        make("pillar.bias", (c,), POINT_FEATURE_DIM)
        for d in ("l2r", "r2l"):
            make(f"attn.{d}.wq", (c, c), c)
            make(f"attn.{d}.wk", (c, c), c)
            make(f"attn.{d}.relpos", (9, c), c)
        w0, w1 = config.unet_widths
        b = config.unet_bottleneck
        cin = 4 * c
        make("unet.enc0.conv", (3, 3, cin, w0), 9 * cin)
        make("unet.enc0.bias", (w0,), 9 * cin)
        make("unet.enc0.down", (2, 2, w0, w0), 4 * w0)
        make("unet.enc0.down_bias", (w0,), 4 * w0)
        make("unet.enc1.conv", (3, 3, w0, w1), 9 * w0)
        make("unet.enc1.bias", (w1,), 9 * w0)
        make("unet.enc1.down", (2, 2, w1, w1), 4 * w1)
        make("unet.enc1.down_bias", (w1,), 4 * w1)
        make("unet.mid.conv", (3, 3, w1, b), 9 * w1)
        make("unet.mid.bias", (b,), 9 * w1)
        make("unet.dec1.conv", (3, 3, b + w1, w1), 9 * (b + w1))
        make("unet.dec1.bias", (w1,), 9 * (b + w1))
        make("unet.dec0.conv", (3, 3, w1 + w0, w0), 9 * (w1 + w0))
        make("unet.dec0.bias", (w0,), 9 * (w1 + w0))
        make("unet.final.conv", (1, 1, w0, config.embed_width), w0)
        make("unet.final.bias", (config.embed_width,), w0)
        hid = config.gru_hidden
        for mod in ("radar", "lidar"):
            make(f"head.{mod}.W_init", (x0_dim, hid), x0_dim)
            make(f"head.{mod}.b_init", (hid,), x0_dim)
            gin = x0_dim + 3 + hid
            for gate in ("z", "r", "h"):
                make(f"head.{mod}.W_{gate}", (gin, hid), gin)
                make(f"head.{mod}.b_{gate}", (hid,), gin)
            make(f"head.{mod}.W_delta", (hid, 3), hid, zero=True)
            make(f"head.{mod}.b_delta", (3,), hid, zero=True)
        self._by_name = {p.name: p for p in self._params}

    def parameters(self) -> List[Parameter]:
        return list(self._params)

    def __getitem__(self, name: str) -> Tensor:
        return self._by_name[name].tensor

    # -- forward pieces ------------------------------------------------------

    def encode(self, cloud: PointCloud, asg: PillarAssignment,
               grid: GridSpec) -> SparseFeatureMap2D:
        return encode_pillars(cloud, asg, grid, self["pillar.weight"], self["pillar.bias"])

    def fuse(self, phi_r: SparseFeatureMap2D, phi_l: SparseFeatureMap2D,
             g_values: np.ndarray, pair_l2r=None, pair_r2l=None):
        """Bidirectional attention with residual; returns (psi_r, psi_l)."""
        mode = self.config.fusion
        if mode == "concat":
            return phi_r, phi_l
        g = np.ones_like(g_values) if mode == "dbcf-nog" else g_values
        att_r = local_cross_attention(phi_r, phi_l, g, self["attn.l2r.wq"],
                                      self["attn.l2r.wk"], self["attn.l2r.relpos"],
                                      pairs=pair_l2r)
        att_l = local_cross_attention(phi_l, phi_r, g, self["attn.r2l.wq"],
                                      self["attn.r2l.wk"], self["attn.r2l.relpos"],
                                      pairs=pair_r2l)
        psi_r = SparseFeatureMap2D(phi_r.grid, ad.add(att_r, phi_r.features), phi_r.occupancy)
        psi_l = SparseFeatureMap2D(phi_l.grid, ad.add(att_l, phi_l.features), phi_l.occupancy)
        return psi_r, psi_l

    def unet(self, x: Tensor) -> Tensor:
        c0 = ad.relu(conv2d(x, self["unet.enc0.conv"], self["unet.enc0.bias"]))
        d0 = conv2d(c0, self["unet.enc0.down"], self["unet.enc0.down_bias"], stride=2)
        c1 = ad.relu(conv2d(d0, self["unet.enc1.conv"], self["unet.enc1.bias"]))
        d1 = conv2d(c1, self["unet.enc1.down"], self["unet.enc1.down_bias"], stride=2)
        m = ad.relu(conv2d(d1, self["unet.mid.conv"], self["unet.mid.bias"]))
        u1 = ad.relu(conv2d(ad.concat([upsample2x_nearest(m), c1], axis=2),
                            self["unet.dec1.conv"], self["unet.dec1.bias"]))
        u0 = ad.relu(conv2d(ad.concat([upsample2x_nearest(u1), c0], axis=2),
                            self["unet.dec0.conv"], self["unet.dec0.bias"]))
        return conv2d(u0, self["unet.final.conv"], self["unet.final.bias"])

    def flow_head(self, modality: str, embedding: Tensor, cloud: PointCloud,
                  asg: PillarAssignment, psi_src: SparseFeatureMap2D,
                  psi_tgt: SparseFeatureMap2D, grid: GridSpec) -> Tensor:
        """Per-point iterative flow; out-of-grid points get exactly zero."""
        n = len(cloud)
        in_grid = asg.in_grid
        if not in_grid.any():
            return Tensor(np.zeros((n, 3)))
        idx = asg.flat[in_grid]
        h, w, _ = embedding.data.shape
        emb = gather_rows(reshape(embedding, (h * w, embedding.data.shape[2])), idx)
        fsrc = gather_rows(reshape(psi_src.features, (h * w, psi_src.features.data.shape[2])), idx)
        ftgt = gather_rows(reshape(psi_tgt.features, (h * w, psi_tgt.features.data.shape[2])), idx)
        offs = Tensor(point_features(cloud, asg, grid)[in_grid][:, :3])
        x0 = ad.concat([emb, fsrc, ftgt, offs], axis=1)
        hstate = ad.tanh(ad.matmul(x0, self[f"head.{modality}.W_init"])
                         + self[f"head.{modality}.b_init"])
        gru_params = {k: self[f"head.{modality}.{k}"]
                      for k in ("W_z", "W_r", "W_h", "b_z", "b_r", "b_h")}
        v = Tensor(np.zeros((int(in_grid.sum()), 3)))
        for _ in range(self.config.gru_iterations):
            hstate = gru_cell(hstate, ad.concat([x0, v], axis=1), gru_params)
            v = v + (ad.matmul(hstate, self[f"head.{modality}.W_delta"])
                     + self[f"head.{modality}.b_delta"])
        return ad.scatter_add_rows(v, np.nonzero(in_grid)[0], n)

    def forward(self, sample: ModelSample) -> ForwardResult:
        grid = sample.grid
        phi_pr = self.encode(sample.radar_src, sample.asg["pr"], grid)
        phi_pl = self.encode(sample.lidar_src, sample.asg["pl"], grid)
        phi_qr = self.encode(sample.radar_tgt, sample.asg["qr"], grid)
        phi_ql = self.encode(sample.lidar_tgt, sample.asg["ql"], grid)
        psi_pr, psi_pl = self.fuse(phi_pr, phi_pl, sample.g_src,
                                   sample.pairs.get("src_l2r"), sample.pairs.get("src_r2l"))
        psi_qr, psi_ql = self.fuse(phi_qr, phi_ql, sample.g_tgt,
                                   sample.pairs.get("tgt_l2r"), sample.pairs.get("tgt_r2l"))
        stacked = ad.concat([psi_pr.features, psi_pl.features,
                             psi_qr.features, psi_ql.features], axis=2)
        embedding = self.unet(stacked)
        flow_r = self.flow_head("radar", embedding, sample.radar_src,
                                sample.asg["pr"], psi_pr, psi_qr, grid)
        flow_l = self.flow_head("lidar", embedding, sample.lidar_src,
                                sample.asg["pl"], psi_pl, psi_ql, grid)
        return ForwardResult(flow_radar=flow_r, flow_lidar=flow_l,
                             in_grid_radar=sample.asg["pr"].in_grid,
                             in_grid_lidar=sample.asg["pl"].in_grid)

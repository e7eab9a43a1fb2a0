"""Dataset directory layout and (de)serialization.

A dataset is a directory with a manifest plus one subdirectory per sample:

    manifest.json           {"format": "raliflow-dataset-v1", "stage": ...,
                             "dt": 0.1, "samples": [{"id": "000", ...paths}]}
    000/radar_src.csv       x,y,z,arv,rrv,rcs
    000/lidar_src.csv       x,y,z,intensity
    000/radar_tgt.csv, 000/lidar_tgt.csv
    000/boxes_src.json      [{track_id, class, cx, cy, cz, l, w, h, yaw}]
    000/boxes_tgt.json
    000/ego.json            {"t_src_to_tgt": 4x4 row-major, "dt": 0.1}
    000/extrinsic.json      4x4 row-major radar->lidar (optional, identity)

`preprocess` writes a new dataset in the same layout (stage "processed",
target frames ego-compensated into the source frame) plus keep-mask CSVs
aligned with the raw rows.  `labelgen` adds labels_radar.csv /
labels_lidar.csv (fx,fy,fz,mask,class,instance_id) aligned row-by-row with
the processed point CSVs.

Floats are serialized with 17 significant digits, so write -> read is exact.
"""

import json
import os
from typing import Dict, List, Optional

import numpy as np

from .geom import SE3, CLASS_NAMES, EgoMotion, FlowField, PointCloud, TrackedBox
from .pipeline import ProcessedSample, RawSample

FORMAT = "raliflow-dataset-v1"
_CLASS_CODES = {v: k for k, v in CLASS_NAMES.items()}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: str, header: List[str], columns: List[np.ndarray]) -> None:
    n = len(columns[0]) if columns else 0
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for i in range(n):
            f.write(",".join(_fmt(col[i]) for col in columns) + "\n")


def read_csv(path: str, num_cols: int) -> np.ndarray:
    with open(path) as f:
        lines = f.read().splitlines()
    if len(lines) <= 1:
        return np.zeros((0, num_cols))
    return np.array([[float(v) for v in line.split(",")] for line in lines[1:]])


def write_cloud(path: str, cloud: PointCloud) -> None:
    p = cloud.positions
    n = len(cloud)
    zeros = np.zeros(n)
    if cloud.modality == "radar":
        cols = [p[:, 0], p[:, 1], p[:, 2], cloud.arv,
                cloud.rrv if cloud.rrv is not None else zeros,
                cloud.rcs if cloud.rcs is not None else zeros]
        write_csv(path, ["x", "y", "z", "arv", "rrv", "rcs"], cols)
    else:
        cols = [p[:, 0], p[:, 1], p[:, 2],
                cloud.intensity if cloud.intensity is not None else zeros]
        write_csv(path, ["x", "y", "z", "intensity"], cols)


def read_cloud(path: str, modality: str, frame_id: str) -> PointCloud:
    if modality == "radar":
        a = read_csv(path, 6)
        return PointCloud(a[:, :3], "radar", frame_id, arv=a[:, 3], rrv=a[:, 4], rcs=a[:, 5])
    a = read_csv(path, 4)
    return PointCloud(a[:, :3], "lidar", frame_id, intensity=a[:, 3])


def write_boxes(path: str, boxes: List[TrackedBox]) -> None:
    out = [{"track_id": int(b.track_id), "class": b.class_label,
            "cx": float(b.center[0]), "cy": float(b.center[1]), "cz": float(b.center[2]),
            "l": float(b.dims[0]), "w": float(b.dims[1]), "h": float(b.dims[2]),
            "yaw": float(b.yaw)} for b in boxes]
    with open(path, "w") as f:
        json.dump(out, f, indent=1)


def read_boxes(path: str) -> List[TrackedBox]:
    with open(path) as f:
        raw = json.load(f)
    return [TrackedBox(int(b["track_id"]), b["class"],
                       np.array([b["cx"], b["cy"], b["cz"]]),
                       np.array([b["l"], b["w"], b["h"]]), float(b["yaw"]))
            for b in raw]


def write_ego(path: str, ego: EgoMotion) -> None:
    with open(path, "w") as f:
        json.dump({"t_src_to_tgt": ego.t_src_to_tgt.matrix().tolist(),
                   "dt": ego.dt}, f, indent=1)


def read_ego(path: str) -> EgoMotion:
    with open(path) as f:
        raw = json.load(f)
    return EgoMotion(SE3.from_matrix(np.array(raw["t_src_to_tgt"])), float(raw["dt"]))


def write_matrix(path: str, m: SE3) -> None:
    with open(path, "w") as f:
        json.dump(m.matrix().tolist(), f)


def read_matrix(path: str) -> SE3:
    with open(path) as f:
        return SE3.from_matrix(np.array(json.load(f)))


def write_labels(path: str, labels: FlowField) -> None:
    classes = np.array([CLASS_NAMES[int(c)] for c in labels.motion_class])
    with open(path, "w") as f:
        f.write("fx,fy,fz,mask,class,instance_id\n")
        for i in range(len(labels)):
            f.write(f"{_fmt(labels.gt_flows[i,0])},{_fmt(labels.gt_flows[i,1])},"
                    f"{_fmt(labels.gt_flows[i,2])},{int(labels.mask[i])},"
                    f"{classes[i]},{int(labels.instance_id[i])}\n")


def read_labels(path: str) -> FlowField:
    with open(path) as f:
        lines = f.read().splitlines()
    n = len(lines) - 1
    flows = np.zeros((n, 3))
    mask = np.zeros(n, dtype=np.uint8)
    classes = np.zeros(n, dtype=np.int8)
    inst = np.zeros(n, dtype=np.int32)
    for i, line in enumerate(lines[1:]):
        fx, fy, fz, m, c, iid = line.split(",")
        flows[i] = (float(fx), float(fy), float(fz))
        mask[i] = int(m)
        classes[i] = _CLASS_CODES[c]
        inst[i] = int(iid)
    return FlowField(flows, mask, classes, inst)


def write_mask_csv(path: str, mask: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write("keep\n")
        for v in mask:
            f.write(f"{int(v)}\n")


def read_mask_csv(path: str) -> np.ndarray:
    with open(path) as f:
        lines = f.read().splitlines()
    return np.array([int(v) for v in lines[1:]], dtype=bool)


# ---------------------------------------------------------------------------
# dataset-level operations


class Dataset:
    """Thin handle over a dataset directory."""

    def __init__(self, root: str):
        self.root = root
        manifest_path = os.path.join(root, "manifest.json")
        if not os.path.isfile(manifest_path):
            raise FileNotFoundError(f"no manifest.json under {root}")
        with open(manifest_path) as f:
            self.manifest = json.load(f)
        if self.manifest.get("format") != FORMAT:
            raise ValueError(f"{root}: unknown dataset format {self.manifest.get('format')!r}")

    @property
    def dt(self) -> float:
        return float(self.manifest["dt"])

    @property
    def stage(self) -> str:
        return self.manifest.get("stage", "raw")

    def sample_ids(self) -> List[str]:
        return [s["id"] for s in self.manifest["samples"]]

    def _entry(self, sample_id: str) -> dict:
        for s in self.manifest["samples"]:
            if s["id"] == sample_id:
                return s
        raise KeyError(f"sample {sample_id!r} not in manifest")

    def path(self, rel: str) -> str:
        return os.path.join(self.root, rel)

    def load_raw(self, sample_id: str) -> RawSample:
        e = self._entry(sample_id)
        ego = read_ego(self.path(e["ego"]))
        extr = read_matrix(self.path(e["extrinsic"])) if "extrinsic" in e else SE3.identity()
        fid0, fid1 = f"{sample_id}:0", f"{sample_id}:1"
        return RawSample(
            sample_id=sample_id,
            radar_src=read_cloud(self.path(e["radar_src"]), "radar", fid0),
            lidar_src=read_cloud(self.path(e["lidar_src"]), "lidar", fid0),
            radar_tgt=read_cloud(self.path(e["radar_tgt"]), "radar", fid1),
            lidar_tgt=read_cloud(self.path(e["lidar_tgt"]), "lidar", fid1),
            boxes_src=read_boxes(self.path(e["boxes_src"])),
            boxes_tgt=read_boxes(self.path(e["boxes_tgt"])),
            ego=ego, extrinsic=extr)

    def load_labels(self, sample_id: str):
        e = self._entry(sample_id)
        if "labels_radar" not in e:
            raise KeyError(f"sample {sample_id!r} has no labels (run labelgen)")
        return (read_labels(self.path(e["labels_radar"])),
                read_labels(self.path(e["labels_lidar"])))


def _sample_entry(sample_id: str, with_extrinsic: bool) -> dict:
    e = {"id": sample_id}
    for k in ("radar_src", "lidar_src", "radar_tgt", "lidar_tgt"):
        e[k] = f"{sample_id}/{k}.csv"
    e["boxes_src"] = f"{sample_id}/boxes_src.json"
    e["boxes_tgt"] = f"{sample_id}/boxes_tgt.json"
    e["ego"] = f"{sample_id}/ego.json"
    if with_extrinsic:
        e["extrinsic"] = f"{sample_id}/extrinsic.json"
    return e


def write_manifest(root: str, dt: float, stage: str, entries: List[dict]) -> None:
    with open(os.path.join(root, "manifest.json"), "w") as f:
        json.dump({"format": FORMAT, "stage": stage, "dt": dt, "samples": entries},
                  f, indent=1)


def write_raw_sample(root: str, raw: RawSample) -> dict:
    d = os.path.join(root, raw.sample_id)
    os.makedirs(d, exist_ok=True)
    entry = _sample_entry(raw.sample_id, with_extrinsic=True)
    write_cloud(os.path.join(root, entry["radar_src"]), raw.radar_src)
    write_cloud(os.path.join(root, entry["lidar_src"]), raw.lidar_src)
    write_cloud(os.path.join(root, entry["radar_tgt"]), raw.radar_tgt)
    write_cloud(os.path.join(root, entry["lidar_tgt"]), raw.lidar_tgt)
    write_boxes(os.path.join(root, entry["boxes_src"]), raw.boxes_src)
    write_boxes(os.path.join(root, entry["boxes_tgt"]), raw.boxes_tgt)
    write_ego(os.path.join(root, entry["ego"]), raw.ego)
    write_matrix(os.path.join(root, entry["extrinsic"]), raw.extrinsic)
    return entry


def write_processed_sample(root: str, proc: ProcessedSample) -> dict:
    """Processed clouds use the raw layout (extrinsic already applied, target
    frames compensated); keep masks document what preprocessing dropped."""
    d = os.path.join(root, proc.sample_id)
    os.makedirs(d, exist_ok=True)
    entry = _sample_entry(proc.sample_id, with_extrinsic=False)
    write_cloud(os.path.join(root, entry["radar_src"]), proc.radar_src)
    write_cloud(os.path.join(root, entry["lidar_src"]), proc.lidar_src)
    write_cloud(os.path.join(root, entry["radar_tgt"]), proc.radar_tgt)
    write_cloud(os.path.join(root, entry["lidar_tgt"]), proc.lidar_tgt)
    write_boxes(os.path.join(root, entry["boxes_src"]), proc.boxes_src)
    write_boxes(os.path.join(root, entry["boxes_tgt"]), proc.boxes_tgt)
    write_ego(os.path.join(root, entry["ego"]), proc.ego)
    for name, mask in (("keep_radar_src", proc.keep_radar_src),
                       ("keep_lidar_src", proc.keep_lidar_src),
                       ("keep_radar_tgt", proc.keep_radar_tgt),
                       ("keep_lidar_tgt", proc.keep_lidar_tgt)):
        rel = f"{proc.sample_id}/{name}.csv"
        write_mask_csv(os.path.join(root, rel), mask)
        entry[name] = rel
    return entry


def attach_labels(dataset: Dataset, sample_id: str, radar_labels: FlowField,
                  lidar_labels: FlowField) -> None:
    e = dataset._entry(sample_id)
    e["labels_radar"] = f"{sample_id}/labels_radar.csv"
    e["labels_lidar"] = f"{sample_id}/labels_lidar.csv"
    write_labels(dataset.path(e["labels_radar"]), radar_labels)
    write_labels(dataset.path(e["labels_lidar"]), lidar_labels)


def save_manifest(dataset: Dataset) -> None:
    with open(os.path.join(dataset.root, "manifest.json"), "w") as f:
        json.dump(dataset.manifest, f, indent=1)

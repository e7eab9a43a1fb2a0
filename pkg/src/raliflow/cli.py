"""Command-line pipeline driver.

    raliflow synth      --config c.json --out data/raw
    raliflow preprocess --config c.json --in data/raw --out data/proc
    raliflow labelgen   --config c.json --data data/proc
    raliflow train      --config c.json --data data/proc --out ckpt.rlfw
    raliflow eval       --config c.json --data data/proc --ckpt ckpt.rlfw --out m.json
    raliflow infer      --config c.json --data data/proc --ckpt ckpt.rlfw --out flows/
    raliflow inspect-heatmap --config c.json --data data/proc --sample 000 --out g.csv
    raliflow ablate     --config c.json --data data/proc --out ablation.json

Every command is deterministic given its config (seeds included); reruns
produce byte-identical outputs.  Errors exit nonzero with a JSON object on
stderr.  RALIFLOW_THREADS caps frame-level parallelism in preprocess,
labelgen and eval; --seed overrides the config seed.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .ad import checkpoint
from .bev import dynamic_radar_map, gaussian_heatmap
from .config import PipelineConfig
from .dataio import (Dataset, attach_labels, save_manifest, write_manifest,
                     write_raw_sample, write_processed_sample, write_csv)
from .errors import RaliflowError
from .model import DBCFNet
from .pipeline import RawSample, label_sample, preprocess_sample
from .rng import Splitmix64
from .synth import generate_scene
from .train import evaluate, load_model_samples, train_loop
from .labels import match_box_pairs


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("RALIFLOW_THREADS", "1")))
    except ValueError:
        return 1


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def _parallel_map(fn, items, workers):
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    base = Splitmix64(cfg.seed)
    entries = []
    for i in range(cfg.n_scenes):
        scene_cfg = dataclasses.replace(cfg.scene, seed=int(base.derive(i).seed))
        pair = generate_scene(scene_cfg)
        raw = RawSample(f"{i:03d}", pair.radar_src, pair.lidar_src, pair.radar_tgt,
                        pair.lidar_tgt, pair.boxes_src, pair.boxes_tgt, pair.ego)
        entries.append(write_raw_sample(args.out, raw))
    write_manifest(args.out, cfg.scene.dt, "raw", entries)
    print(f"wrote {len(entries)} frame pairs to {args.out}")


def cmd_preprocess(args):
    cfg = _load_config(args)
    ds = Dataset(getattr(args, "in"))
    os.makedirs(args.out, exist_ok=True)

    def run(sid):
        raw = ds.load_raw(sid)
        return write_processed_sample(args.out, preprocess_sample(raw, cfg.ground, cfg.denoise))

    entries = _parallel_map(run, ds.sample_ids(), _threads())
    write_manifest(args.out, ds.dt, "processed", entries)
    print(f"processed {len(entries)} frame pairs into {args.out}")


def cmd_labelgen(args):
    cfg = _load_config(args)
    ds = Dataset(args.data)
    if ds.stage != "processed":
        raise RaliflowError("labelgen expects a processed dataset (run preprocess)")

    def run(sid):
        proc = ds.load_raw(sid)
        lf = label_sample(proc, cfg.labels)
        return sid, lf

    results = _parallel_map(run, ds.sample_ids(), _threads())
    for sid, lf in results:
        attach_labels(ds, sid, lf.radar_labels, lf.lidar_labels)
    save_manifest(ds)
    print(f"labeled {len(results)} frame pairs in {args.data}")


def _train_ids(cfg, ds):
    ids = ds.sample_ids()
    if cfg.training.holdout:
        return ids[:-cfg.training.holdout], ids[-cfg.training.holdout:]
    return ids, []


def cmd_train(args):
    cfg = _load_config(args)
    ds = Dataset(args.data)
    train_ids, _ = _train_ids(cfg, ds)
    samples = load_model_samples(ds, cfg.grid, cfg.model, train_ids)
    net = DBCFNet(cfg.model)
    start_epoch = 0
    if args.resume:
        extra = checkpoint.load_params(args.resume, net.parameters())
        start_epoch = int(extra.get("meta.epochs_done", np.float64(0.0)))
    epochs = args.epochs if args.epochs is not None else cfg.training.epochs
    log_file = open(args.log, "w") if args.log else None

    def on_epoch(stats):
        line = json.dumps(stats.to_dict())
        print(line)
        if log_file:
            log_file.write(line + "\n")
            log_file.flush()

    train_loop(samples, net, ds.dt, epochs, cfg.training.lr, cfg.training.batch_size,
               cfg.training.seed, cfg.training.bucket_source, start_epoch, on_epoch)
    checkpoint.save_params(args.out, net.parameters(),
                           extra={"meta.epochs_done": np.float64(epochs)})
    if log_file:
        log_file.close()
    print(f"saved checkpoint to {args.out}")


def _eval_samples(cfg, ds, which):
    train_ids, hold_ids = _train_ids(cfg, ds)
    ids = {"all": ds.sample_ids(), "train": train_ids, "holdout": hold_ids}[which]
    if not ids:
        raise RaliflowError(f"no samples in split {which!r}")
    return load_model_samples(ds, cfg.grid, cfg.model, ids, workers=_threads())


def cmd_eval(args):
    cfg = _load_config(args)
    ds = Dataset(args.data)
    samples = _eval_samples(cfg, ds, args.split)
    if args.zero_flow:
        net = None
    else:
        if not args.ckpt:
            raise RaliflowError("eval needs --ckpt (or --zero-flow)")
        net = DBCFNet(cfg.model)
        checkpoint.load_params(args.ckpt, net.parameters())
    metrics = evaluate(samples, net, workers=_threads())
    payload = json.dumps(metrics, indent=1)
    if args.out:
        with open(args.out, "w") as f:
            f.write(payload + "\n")
    print(payload)


def cmd_infer(args):
    cfg = _load_config(args)
    ds = Dataset(args.data)
    net = DBCFNet(cfg.model)
    checkpoint.load_params(args.ckpt, net.parameters())
    samples = load_model_samples(ds, cfg.grid, cfg.model)
    os.makedirs(args.out, exist_ok=True)
    for sid, sample in zip(ds.sample_ids(), samples):
        res = net.forward(sample)
        for mod, flows in (("radar", res.flow_radar.data), ("lidar", res.flow_lidar.data)):
            path = os.path.join(args.out, f"{sid}_{mod}_flow.csv")
            write_csv(path, ["fx", "fy", "fz"], [flows[:, 0], flows[:, 1], flows[:, 2]])
    print(f"wrote flow CSVs for {len(samples)} frame pairs to {args.out}")


def cmd_inspect_heatmap(args):
    cfg = _load_config(args)
    ds = Dataset(args.data)
    proc = ds.load_raw(args.sample)
    cloud = proc.radar_src if args.frame == "src" else proc.radar_tgt
    hm = gaussian_heatmap(dynamic_radar_map(cloud, cfg.grid), cfg.grid,
                          cfg.model.sigma_sq_inv)
    with open(args.out, "w") as f:
        for row in hm.values:
            f.write(",".join(format(v, ".17g") for v in row) + "\n")
    print(f"wrote {cfg.grid.height}x{cfg.grid.width} heatmap to {args.out}")


def cmd_ablate(args):
    """Train and evaluate the three fusion variants; one combined report."""
    cfg = _load_config(args)
    ds = Dataset(args.data)
    train_ids, hold_ids = _train_ids(cfg, ds)
    eval_ids = hold_ids if hold_ids else train_ids
    report = {}
    for mode in ("concat", "dbcf-nog", "dbcf"):
        mcfg = dataclasses.replace(cfg.model, fusion=mode)
        samples = load_model_samples(ds, cfg.grid, mcfg, train_ids)
        net = DBCFNet(mcfg)
        train_loop(samples, net, ds.dt, cfg.training.epochs, cfg.training.lr,
                   cfg.training.batch_size, cfg.training.seed, cfg.training.bucket_source)
        eval_samples = load_model_samples(ds, cfg.grid, mcfg, eval_ids)
        report[mode] = evaluate(eval_samples, net)
    order = sorted(report, key=lambda m: report[m]["lidar"]["epe_3way"])
    payload = json.dumps({"metrics": report, "lidar_3way_order": order}, indent=1)
    with open(args.out, "w") as f:
        f.write(payload + "\n")
    print(payload)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="raliflow",
                                description="radar-LiDAR scene flow pipeline")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective config as JSON and exit")
    p.add_argument("--config", help="pipeline config JSON (defaults when omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("synth", help="generate a synthetic raw dataset")
    s.add_argument("--out", required=True)

    s = sub.add_parser("preprocess", help="ground removal, projection, denoising")
    s.add_argument("--in", dest="in", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("labelgen", help="generate flow labels in place")
    s.add_argument("--data", required=True)

    s = sub.add_parser("train", help="train the fusion network")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--epochs", type=int, help="override config epochs")
    s.add_argument("--log", help="write per-epoch JSON lines here too")

    s = sub.add_parser("eval", help="EPE metrics report")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt")
    s.add_argument("--zero-flow", action="store_true", help="zero-flow baseline")
    s.add_argument("--split", choices=("all", "train", "holdout"), default="all")
    s.add_argument("--out")

    s = sub.add_parser("infer", help="write per-point flow CSVs")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("inspect-heatmap", help="export a Gaussian heatmap as CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--sample", required=True)
    s.add_argument("--frame", choices=("src", "tgt"), default="src")
    s.add_argument("--out", required=True)

    s = sub.add_parser("ablate", help="train+eval the three fusion variants")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    return p


_COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "labelgen": cmd_labelgen,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "inspect-heatmap": cmd_inspect_heatmap,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.print_config:
            print(_load_config(args).to_json())
            return 0
        if not args.command:
            parser.print_help()
            return 2
        _COMMANDS[args.command](args)
        return 0
    except (RaliflowError, OSError, KeyError, ValueError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr, default=str)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())

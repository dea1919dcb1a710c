"""Command-line pipeline: simulate, train, track, eval, gap, plot."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from . import io as gio
from .config import (
    ConfigFileError,
    apply_overrides,
    build_eval,
    build_extract,
    build_graph,
    build_model_cfg,
    build_scene,
    build_train,
    load_config,
)

log = logging.getLogger("graphmot")


def write_manifest(outdir: Path, command: str, config: dict, seed, inputs: dict,
                   outputs: list[str], t_start: float) -> None:
    gio.dump_json(outdir / "manifest.json", {
        "command": command,
        "version": __version__,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "timings": {"wall_s": round(time.time() - t_start, 3)},
    })


def _load_scene_dir(data_dir: Path):
    """Load a simulated-scene directory: detections, meta, calibration, mesh."""
    from .geometry import TriMesh, load_calibration

    meta = json.loads((data_dir / "scene.json").read_text())
    dets = gio.read_detections(data_dir / "detections.csv")
    cameras = load_calibration(data_dir / "calibration.json")
    mesh_path = data_dir / "walls.obj"
    mesh = TriMesh.from_obj(mesh_path) if mesh_path.exists() else None
    frames = gio.group_by_frame(dets, first=0, last=meta["n_frames"] - 1)
    return meta, dets, frames, cameras, mesh


def cmd_simulate(args) -> int:
    from .simulate import simulate

    t0 = time.time()
    cfg = apply_overrides(load_config(args.config), args.set or [])
    scene = build_scene(cfg)
    out = simulate(scene, args.seed)
    outdir = Path(args.out)
    out.write(outdir)
    write_manifest(outdir, "simulate", {"scene": asdict(scene)}, args.seed,
                   {"config": str(args.config)} if args.config else {},
                   [p.name for p in outdir.iterdir()], t0)
    log.info("wrote %d detections over %d frames to %s",
             len(out.detections), scene.n_frames, outdir)
    return 0


def cmd_train(args) -> int:
    import csv

    from .model import UMPN, build_parameter_store, save_checkpoint
    from .pipeline import evaluate_model
    from .simulate import SimOutput  # noqa: F401  (type only)
    from .train import Trainer

    t0 = time.time()
    cfg = apply_overrides(load_config(args.config), args.set or [])
    data_dir = Path(args.data)
    meta, _, frames, cameras, mesh = _load_scene_dir(data_dir)
    graph_cfg = build_graph(cfg, meta)
    model_cfg = build_model_cfg(cfg, meta)
    train_cfg = build_train(cfg)

    store = build_parameter_store(model_cfg, use_camera_vertices=graph_cfg.use_camera_vertices,
                                  seed=train_cfg.seed)
    umpn = UMPN(store, model_cfg, cameras=cameras, mesh=mesh)
    trainer = Trainer(umpn, graph_cfg, train_cfg)

    val = None
    if args.val_data:
        from .extract import ExtractConfig
        from .metrics import EvalConfig

        val_meta, _, val_frames, val_cameras, val_mesh = _load_scene_dir(Path(args.val_data))
        val_gt = gio.read_points_3d(Path(args.val_data) / "gt3d.csv", id_col="gt_id")
        val = (val_frames, val_cameras, val_mesh, val_gt,
               build_extract(cfg), build_eval(cfg))

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    log_rows = []

    def hook(epoch: int, row: dict) -> None:
        if val is not None:
            val_frames, val_cameras, val_mesh, val_gt, extract_cfg, eval_cfg = val
            val_model = UMPN(umpn.store, model_cfg, cameras=val_cameras, mesh=val_mesh)
            from .pipeline import track_frames, evaluate_tracking

            result = track_frames(val_frames, val_model, graph_cfg, extract_cfg,
                                  camera_indices=tuple(range(model_cfg.n_cameras)))
            report = evaluate_tracking(result, val_gt, eval_cfg)
            row["val_mota"] = report.mota
            row["val_idf1"] = report.idf1
        log_rows.append(row)
        save_checkpoint(outdir / f"epoch_{epoch:03d}.ckpt", umpn.store, model_cfg,
                        graph_cfg, trainer.optimizer, extra={"epoch": epoch})
        log.info("epoch %d: %s", epoch, row)

    trainer.fit(frames, epoch_hook=hook)
    save_checkpoint(outdir / "final.ckpt", umpn.store, model_cfg, graph_cfg,
                    trainer.optimizer, extra={"epochs": train_cfg.epochs})

    with open(outdir / "metrics.csv", "w", newline="") as fh:
        fields = ["epoch", "loss_view", "loss_temporal", "loss_vertex", "grad_norm",
                  "val_mota", "val_idf1"]
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in log_rows:
            writer.writerow({k: row.get(k, "") for k in fields})

    write_manifest(outdir, "train",
                   {"graph": asdict(graph_cfg), "model": asdict(model_cfg),
                    "train": asdict(train_cfg)},
                   train_cfg.seed,
                   {"data": str(data_dir), "val_data": args.val_data or ""},
                   [p.name for p in outdir.iterdir()], t0)
    return 0


def cmd_track(args) -> int:
    from .model import UMPN, load_checkpoint
    from .pipeline import OracleScorer, track_frames, track_single_view

    t0 = time.time()
    cfg = apply_overrides(load_config(args.config), args.set or [])
    data_dir = Path(args.data)
    meta, dets, frames, cameras, mesh = _load_scene_dir(data_dir)
    extract_cfg = build_extract(cfg)

    if args.ckpt == "oracle":
        graph_cfg = build_graph(cfg, meta)

        def scorer_factory(cam=None):
            return OracleScorer()

        scorer = OracleScorer()
    else:
        store, model_cfg, graph_cfg, _ = load_checkpoint(args.ckpt)
        # inference-time graph overrides (e.g. a longer temporal gap)
        if cfg.get("graph"):
            from dataclasses import replace

            graph_cfg = replace(graph_cfg, **cfg["graph"])
        scorer = UMPN(store, model_cfg, cameras=cameras, mesh=mesh)

        def scorer_factory(cam):
            return UMPN(store, model_cfg, cameras=cameras, mesh=mesh)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    camera_indices = tuple(range(meta["n_cameras"]))

    if args.mode == "multi":
        results = {None: track_frames(frames, scorer, graph_cfg, extract_cfg,
                                      camera_indices=camera_indices)}
    else:
        results = track_single_view(frames, scorer_factory, graph_cfg, extract_cfg,
                                    n_cameras=meta["n_cameras"])

    all_labels: dict[int, int] = {}
    all_edge_probs = {}
    all_vertex_probs = {}
    offset = 0
    det_map = {d.id: d for d in dets}
    for key in sorted(results, key=lambda k: -1 if k is None else k):
        res = results[key]
        for det_id, label in res.labels.items():
            all_labels[det_id] = label + offset
        if res.labels:
            offset = max(all_labels.values()) + 1
        all_edge_probs.update(res.edge_probs)
        all_vertex_probs.update(res.vertex_probs)

    from .extract import trajectory_boxes_2d, trajectory_points_3d

    gio.write_trajectories_3d(outdir / "traj3d.csv",
                              trajectory_points_3d(all_labels, det_map))
    for cam in camera_indices:
        gio.write_trajectories_mot(outdir / f"mot_cam{cam}.csv",
                                   trajectory_boxes_2d(all_labels, det_map, cam))
    gio.write_assignments(outdir / "assignments.csv", all_labels, det_map)
    gio.write_scores(outdir / "scores.csv", all_edge_probs, all_vertex_probs)

    write_manifest(outdir, "track", {"extract": asdict(extract_cfg),
                                     "graph": asdict(graph_cfg), "mode": args.mode},
                   None, {"data": str(data_dir), "ckpt": args.ckpt},
                   [p.name for p in outdir.iterdir()], t0)
    log.info("tracked %d detections into %d trajectories",
             len(all_labels), len(set(all_labels.values())))
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate, pooled_report

    t0 = time.time()
    cfg = apply_overrides(load_config(args.config), args.set or [])
    eval_cfg = build_eval({"eval": {**cfg.get("eval", {}), "mode": args.mode}})
    gt_dir, pred_dir = Path(args.gt), Path(args.pred)

    if args.mode == "3d":
        gt = gio.read_points_3d(gt_dir / "gt3d.csv", id_col="gt_id")
        pred = gio.read_points_3d(pred_dir / "traj3d.csv", id_col="traj_id")
        report = evaluate(gt, pred, eval_cfg)
    else:
        gt_boxes = gio.read_gt_boxes(gt_dir / "gt2d.csv")
        reports = []
        for cam in sorted(gt_boxes):
            pred_path = pred_dir / f"mot_cam{cam}.csv"
            pred_cam = gio.read_boxes_2d(pred_path) if pred_path.exists() else {}
            reports.append(evaluate(gt_boxes[cam], pred_cam, eval_cfg))
        report = pooled_report(reports)

    payload = report.to_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        gio.dump_json(out, payload)
    return 0


def cmd_gap(args) -> int:
    from .extract import ExtractConfig, gap_report

    cfg = apply_overrides(load_config(args.config), args.set or [])
    extract_cfg = build_extract(cfg)
    edge_probs, _ = gio.read_scores(args.scored)
    labels = gio.read_assignments(args.traj)
    report = gap_report(labels, edge_probs, extract_cfg)
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        gio.dump_json(Path(args.out), report)
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t0 = time.time()
    pred_dir, scene_dir = Path(args.pred), Path(args.scene)
    meta = json.loads((scene_dir / "scene.json").read_text())
    pred = gio.read_points_3d(pred_dir / "traj3d.csv", id_col="traj_id")

    fig, ax = plt.subplots(figsize=(8, 8))
    by_traj: dict[int, list[tuple[float, float]]] = {}
    for frame in sorted(pred):
        for tid, (x, y, _) in pred[frame].items():
            by_traj.setdefault(tid, []).append((x, y))
    cmap = plt.colormaps["tab20"]
    for tid, pts in sorted(by_traj.items()):
        xs, ys = zip(*pts)
        ax.plot(xs, ys, "-", color=cmap(tid % 20), linewidth=1.0, alpha=0.9)
    for x1, y1, x2, y2 in meta["config"].get("walls", []):
        ax.plot([x1, x2], [y1, y2], "k-", linewidth=4)
    gx0, gx1, gy0, gy1 = meta["config"]["ground"]
    ax.plot([gx0, gx1, gx1, gx0, gx0], [gy0, gy0, gy1, gy1, gy0], "g--", alpha=0.4)
    ax.set_aspect("equal")
    ax.set_title(f"{len(by_traj)} trajectories (top-down)")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    fig.savefig(outdir / "trajectories_topdown.png", dpi=120, bbox_inches="tight")
    plt.close(fig)
    write_manifest(outdir, "plot", {}, None,
                   {"pred": str(pred_dir), "scene": str(scene_dir)},
                   ["trajectories_topdown.png"], t0)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphmot",
                                     description="multi-view tracking on dynamic detection graphs")
    parser.add_argument("--version", action="version", version=f"graphmot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")

    p = sub.add_parser("simulate", help="generate a synthetic scene")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="train a model on simulated detections")
    common(p)
    p.add_argument("--data", required=True, help="simulate output directory")
    p.add_argument("--val-data", default=None, help="held-out simulate directory")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("track", help="run online tracking")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="checkpoint path or 'oracle'")
    p.add_argument("--mode", choices=("single", "multi"), default="multi")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("eval", help="CLEAR MOT + IDF1 evaluation")
    common(p)
    p.add_argument("--gt", required=True, help="simulate output directory")
    p.add_argument("--pred", required=True, help="track output directory")
    p.add_argument("--mode", choices=("2d", "3d"), default="3d")
    p.add_argument("--out", default=None, help="write the report JSON here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gap", help="optimality gap of an extraction")
    common(p)
    p.add_argument("--scored", required=True, help="scores.csv from track")
    p.add_argument("--traj", required=True, help="assignments.csv from track")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gap)

    p = sub.add_parser("plot", help="top-down trajectory overlay")
    p.add_argument("--pred", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigFileError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

"""End-to-end runs: streaming tracking, evaluation, and training experiments."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import torch

from .extract import ExtractConfig, TrajectorySet, streaming_extract, trajectory_points_3d
from .geometry import CameraModel, TriMesh
from .graph import Detection, EdgeKey, EdgeKind, GraphConfig, STGraph
from .metrics import EvalConfig, EvalReport, evaluate
from .model import ModelConfig, ScoredGraph, UMPN, build_parameter_store
from .simulate import SceneConfig, SimOutput, simulate
from .train import TrainConfig, Trainer


class OracleScorer:
    """Injects ground-truth probabilities; the perfect-association reference."""

    def __init__(self, hi: float = 1.0 - 1e-6, lo: float = 1e-6):
        self.hi = hi
        self.lo = lo

    def new_state(self):
        return None

    def forward_step(self, g: STGraph, state, **_kw) -> ScoredGraph:
        labels = g.derive_labels()

        def probs(keys):
            return torch.tensor([self.hi if labels.edge_labels[k] else self.lo for k in keys],
                                dtype=torch.float64)

        tk = sorted(g.edges_of_kind(EdgeKind.TEMPORAL))
        vk = sorted(g.edges_of_kind(EdgeKind.VIEW))
        ids = sorted(g.vertices)
        vp = torch.tensor([self.hi if labels.vertex_labels[v] else self.lo for v in ids],
                          dtype=torch.float64)
        return ScoredGraph(tk, probs(tk), vk, probs(vk), ids, vp)


@dataclass
class TrackResult:
    labels: dict[int, int]
    detections: dict[int, Detection]
    edge_probs: dict[EdgeKey, float]  # final score of every classified edge
    vertex_probs: dict[int, float]
    trajectory_set: TrajectorySet

    def points_3d(self):
        return trajectory_points_3d(self.labels, self.detections)

    def points_by_frame(self) -> dict[int, dict[int, tuple[float, float, float]]]:
        out: dict[int, dict[int, tuple[float, float, float]]] = {}
        for frame, tid, x, y, z in self.points_3d():
            out.setdefault(frame, {})[tid] = (x, y, z)
        return out


def track_frames(frames: Sequence[tuple[int, list[Detection]]], scorer,
                 graph_cfg: GraphConfig, extract_cfg: ExtractConfig,
                 camera_indices: Sequence[int] = ()) -> TrackResult:
    """Online tracking: add, prune, score, extend trajectories at every step."""
    g = STGraph(graph_cfg, cameras=camera_indices, mode="infer")
    state = scorer.new_state()
    ts = TrajectorySet()
    edge_probs: dict[EdgeKey, float] = {}
    vertex_probs: dict[int, float] = {}
    detections: dict[int, Detection] = {}
    for frame, dets in frames:
        g.add_frame(frame, dets)
        while g.prune_oldest() != ([], []):
            pass
        for d in dets:
            detections[d.id] = d
        scored = scorer.forward_step(g, state)
        ep = scored.edge_prob_map()
        vp = scored.vertex_prob_map()
        edge_probs.update(ep)
        vertex_probs.update(vp)
        streaming_extract(ts, ep, vp, g, extract_cfg)
    return TrackResult(ts.labels(), detections, edge_probs, vertex_probs, ts)


def track_single_view(frames, scorer_factory, graph_cfg: GraphConfig,
                      extract_cfg: ExtractConfig, n_cameras: int) -> dict[int, TrackResult]:
    """Monocular mode: each camera tracked independently."""
    results = {}
    for cam in range(n_cameras):
        cam_frames = [(f, [d for d in dets if d.camera == cam]) for f, dets in frames]
        results[cam] = track_frames(cam_frames, scorer_factory(cam), graph_cfg,
                                    extract_cfg, camera_indices=(cam,))
    return results


def evaluate_tracking(result: TrackResult, gt3d, eval_cfg: EvalConfig) -> EvalReport:
    return evaluate(gt3d, result.points_by_frame(), eval_cfg)


# ------------------------------------------------------------- experiments


@dataclass
class ExperimentConfig:
    """One trained-and-evaluated run on simulated data."""

    scene: SceneConfig
    graph: GraphConfig = field(default_factory=GraphConfig)
    model: Optional[ModelConfig] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    train_seed: int = 0
    val_seed: int = 1
    val_duration: Optional[float] = 60.0

    def resolved_model(self) -> ModelConfig:
        if self.model is not None:
            return self.model
        return default_model_config(self.scene)


def default_model_config(scene: SceneConfig, s: int = 60, hidden: int = 64,
                         dtype: str = "float64") -> ModelConfig:
    return ModelConfig(
        s=s, hidden=hidden,
        attributes=("bbox", "world", "time", "view", "conf"),
        n_cameras=scene.n_cameras,
        image_width=scene.image_width,
        image_height=scene.image_height,
        scene_bounds=scene.bounds,
        dtype=dtype,
    )


def build_model(sim: SimOutput, model_cfg: ModelConfig, graph_cfg: GraphConfig,
                seed: int = 0) -> UMPN:
    store = build_parameter_store(model_cfg, use_camera_vertices=graph_cfg.use_camera_vertices,
                                  seed=seed)
    return UMPN(store, model_cfg, cameras=sim.cameras, mesh=sim.mesh)


def run_experiment(exp: ExperimentConfig, epochs: Optional[int] = None,
                   epoch_hook=None) -> tuple[UMPN, EvalReport, list[dict]]:
    """Simulate, train from scratch, evaluate on a held-out seed."""
    sim = simulate(exp.scene, exp.train_seed)
    val_scene = exp.scene if exp.val_duration is None else replace(exp.scene, duration=exp.val_duration)
    val = simulate(val_scene, exp.val_seed)
    model_cfg = exp.resolved_model()
    umpn = build_model(sim, model_cfg, exp.graph, seed=exp.train.seed)
    trainer = Trainer(umpn, exp.graph, exp.train)
    history = trainer.fit(sim.frames(), epochs=epochs, epoch_hook=epoch_hook)
    report = evaluate_model(umpn, val, exp.graph, exp.extract, exp.eval)
    return umpn, report, history


def evaluate_model(umpn: UMPN, sim: SimOutput, graph_cfg: GraphConfig,
                   extract_cfg: ExtractConfig, eval_cfg: EvalConfig) -> EvalReport:
    """Inference + extraction + 3D CLEAR/IDF1 on one simulated sequence."""
    eval_model = UMPN(umpn.store, umpn.cfg, cameras=sim.cameras, mesh=sim.mesh)
    result = track_frames(sim.frames(), eval_model, graph_cfg, extract_cfg,
                          camera_indices=tuple(range(sim.config.n_cameras)))
    return evaluate_tracking(result, sim.gt3d, eval_cfg)

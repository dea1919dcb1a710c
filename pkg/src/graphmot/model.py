"""Message-passing network over the detection graph.

Per forward step: residual edge updates per edge kind, shared messages with
mean aggregation per kind, residual vertex updates, then sigmoid heads for
temporal/view edges and detection vertices. Representations live in a
RepState that survives window shifts, so context accumulates over time.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .geometry import CameraModel, TriMesh, visibility
from .graph import Detection, EdgeKey, EdgeKind, GraphConfig, STGraph
from .nn import DTYPES, MlpBlock, ParameterStore, dropout_mask

ATTRIBUTES = ("bbox", "world", "time", "view", "conf")

CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    s: int = 60
    hidden: int = 64
    rounds: int = 1
    attributes: tuple[str, ...] = ("bbox", "world", "time", "view", "conf")
    n_cameras: int = 3
    image_width: int = 1280
    image_height: int = 720
    scene_bounds: tuple[tuple[float, float], ...] = ((-8.0, 8.0), (-8.0, 8.0), (0.0, 3.0))
    dtype: str = "float64"

    def __post_init__(self):
        unknown = set(self.attributes) - set(ATTRIBUTES)
        if unknown:
            raise ConfigError(f"unknown attributes {sorted(unknown)}")
        if not self.attributes:
            raise ConfigError("at least one detection attribute is required")
        if self.s % len(self.attributes) != 0:
            raise ConfigError(f"s={self.s} not divisible by {len(self.attributes)} attributes")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def attr_dim(self) -> int:
        return self.s // len(self.attributes)

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]

    def attribute_input_dim(self, attr: str) -> int:
        return {"bbox": 4, "world": 3, "time": 2, "view": self.n_cameras, "conf": 1}[attr]

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "attributes" in d:
            d["attributes"] = tuple(d["attributes"])
        if "scene_bounds" in d:
            d["scene_bounds"] = tuple(tuple(b) for b in d["scene_bounds"])
        return cls(**d)


CLASSIFIED_KINDS = (EdgeKind.TEMPORAL, EdgeKind.VIEW)
MESSAGE_KINDS = (EdgeKind.TEMPORAL, EdgeKind.VIEW, EdgeKind.CONTEXTUAL)


def build_parameter_store(cfg: ModelConfig, use_camera_vertices: bool = False,
                          seed: int = 0) -> ParameterStore:
    gen = torch.Generator().manual_seed(seed)
    dtype = cfg.torch_dtype
    s, h = cfg.s, cfg.hidden

    def block(in_dim, out_dim):
        return MlpBlock(in_dim, h, out_dim, dtype=dtype, generator=gen)

    blocks: dict[str, MlpBlock] = {}
    for attr in cfg.attributes:
        blocks[f"enc_{attr}"] = block(cfg.attribute_input_dim(attr), cfg.attr_dim)
    for kind in MESSAGE_KINDS:
        blocks[f"edge_update_{kind.value}"] = block(3 * s, s)
        blocks[f"message_{kind.value}"] = block(3 * s, s)
    for kind in CLASSIFIED_KINDS:
        blocks[f"cls_edge_{kind.value}"] = block(3 * s, 1)
    blocks["cls_vertex"] = block(s, 1)
    if use_camera_vertices:
        if cfg.s % 3 != 0:
            raise ConfigError("camera vertices need s divisible by 3")
        third = cfg.s // 3
        blocks["enc_cam_pos"] = block(3, third)
        blocks["enc_cam_intr"] = block(9, third)
        blocks["enc_cam_extr"] = block(12, third)
        blocks["enc_camedge_dist"] = block(1, third)
        blocks["enc_camedge_src"] = block(1, third)
        blocks["enc_camedge_vis"] = block(1, third)
        blocks["edge_update_camera"] = block(3 * s, s)
        blocks["message_camera"] = block(3 * s, s)
    return ParameterStore(blocks)


@dataclass
class ScoredGraph:
    """Edge/vertex probabilities from one forward step.

    Probabilities are kept as tensors so the training loss can backpropagate;
    contextual and camera edges are never scored.
    """

    temporal_keys: list[EdgeKey]
    temporal_probs: torch.Tensor
    view_keys: list[EdgeKey]
    view_probs: torch.Tensor
    vertex_ids: list[int]
    vertex_probs: torch.Tensor

    @classmethod
    def empty(cls, dtype: torch.dtype = torch.float64) -> "ScoredGraph":
        z = torch.zeros(0, dtype=dtype)
        return cls([], z, [], z.clone(), [], z.clone())

    @property
    def n_scored_edges(self) -> int:
        return len(self.temporal_keys) + len(self.view_keys)

    def edge_prob_map(self) -> dict[EdgeKey, float]:
        tp = self.temporal_probs.detach()
        vp = self.view_probs.detach()
        out = {k: float(p) for k, p in zip(self.temporal_keys, tp)}
        out.update({k: float(p) for k, p in zip(self.view_keys, vp)})
        return out

    def vertex_prob_map(self) -> dict[int, float]:
        probs = self.vertex_probs.detach()
        return {v: float(p) for v, p in zip(self.vertex_ids, probs)}


class RepState:
    """Representation vectors persisted across window shifts."""

    def __init__(self):
        self.vertex: dict[int, torch.Tensor] = {}
        self.edge: dict[EdgeKey, torch.Tensor] = {}
        self.camera: dict[int, torch.Tensor] = {}

    def drop_missing(self, g: STGraph) -> None:
        for vid in [v for v in self.vertex if v not in g.vertices]:
            del self.vertex[vid]
        for key in [k for k in self.edge if k not in g.edges]:
            del self.edge[key]

    def detach_(self) -> None:
        """Cut gradient history while keeping the values (per-frame backward mode)."""
        for d in (self.vertex, self.edge, self.camera):
            for k in d:
                d[k] = d[k].detach()


class UMPN:
    """The scorer: owns no graph, reads/writes a RepState per sequence."""

    def __init__(self, store: ParameterStore, cfg: ModelConfig,
                 cameras: Sequence[CameraModel] = (), mesh: Optional[TriMesh] = None):
        self.store = store
        self.cfg = cfg
        self.cameras = list(cameras)
        self.mesh = mesh

    # ------------------------------------------------------------- features

    def _norm_world(self, world) -> list[float]:
        (x0, x1), (y0, y1), (z0, z1) = self.cfg.scene_bounds
        wx, wy, wz = world
        return [
            (wx - x0) / (x1 - x0),
            (wy - y0) / (y1 - y0),
            (wz - z0) / (z1 - z0) if z1 > z0 else 0.0,
        ]

    def _attr_features(self, det: Detection, attr: str, newest_frame: int, w: int) -> list[float]:
        if attr == "bbox":
            x1, y1, x2, y2 = det.bbox
            return [x1 / self.cfg.image_width, y1 / self.cfg.image_height,
                    x2 / self.cfg.image_width, y2 / self.cfg.image_height]
        if attr == "world":
            if not det.has_world:
                raise ConfigError(f"detection {det.id} has no world point but 'world' is a configured attribute")
            return self._norm_world(det.world)
        if attr == "time":
            return [(det.frame % w) / w, (newest_frame - det.frame) / w]
        if attr == "view":
            onehot = [0.0] * self.cfg.n_cameras
            if det.camera >= self.cfg.n_cameras:
                raise ConfigError(f"camera index {det.camera} >= n_cameras={self.cfg.n_cameras}")
            onehot[det.camera] = 1.0
            return onehot
        if attr == "conf":
            return [det.confidence]
        raise ConfigError(f"unknown attribute {attr}")

    # ------------------------------------------------------------ init paths

    def new_state(self) -> RepState:
        return RepState()

    def _mlp(self, name: str, x: torch.Tensor, training: bool, dropout: float,
             generator) -> torch.Tensor:
        mask = None
        if training and dropout > 0.0:
            mask = dropout_mask(x.shape[:-1] + (self.cfg.hidden,), dropout,
                                generator, self.cfg.torch_dtype)
        return self.store[name](x, mask)

    def _init_vertices(self, g: STGraph, state: RepState, new_ids: list[int],
                       training: bool, dropout: float, generator,
                       vertex_masks: Optional[dict[int, Sequence[int]]]) -> None:
        newest = max(g.window_frames)
        w = g.config.w
        dtype = self.cfg.torch_dtype
        feats = {
            attr: torch.tensor(
                [self._attr_features(g.vertices[v], attr, newest, w) for v in new_ids],
                dtype=dtype,
            )
            for attr in self.cfg.attributes
        }
        encoded = [self._mlp(f"enc_{attr}", feats[attr], training, dropout, generator)
                   for attr in self.cfg.attributes]
        if vertex_masks:
            for row, vid in enumerate(new_ids):
                for attr_idx in vertex_masks.get(vid, ()):
                    encoded[attr_idx] = encoded[attr_idx].clone()
                    encoded[attr_idx][row] = 0.0
        reps = torch.cat(encoded, dim=1)
        for row, vid in enumerate(new_ids):
            state.vertex[vid] = reps[row]

    def _init_camera_vertices(self, g: STGraph, state: RepState,
                              training: bool, dropout: float, generator) -> None:
        missing = [c for c in g.camera_vertices if c not in state.camera]
        if not missing:
            return
        dtype = self.cfg.torch_dtype
        scale = max(self.cfg.image_width, self.cfg.image_height)
        (x0, x1), (y0, y1), _ = self.cfg.scene_bounds
        extent = max(x1 - x0, y1 - y0)
        pos, intr, extr = [], [], []
        for c in missing:
            cam = self.cameras[c]
            pos.append(self._norm_world(cam.position))
            intr.append([v / scale for v in cam.K.ravel()])
            extr.append(list(np.concatenate([cam.R.ravel(), cam.t / extent])))
        parts = [
            self._mlp("enc_cam_pos", torch.tensor(pos, dtype=dtype), training, dropout, generator),
            self._mlp("enc_cam_intr", torch.tensor(intr, dtype=dtype), training, dropout, generator),
            self._mlp("enc_cam_extr", torch.tensor(extr, dtype=dtype), training, dropout, generator),
        ]
        reps = torch.cat(parts, dim=1)
        for row, c in enumerate(missing):
            state.camera[c] = reps[row]

    def camera_edge_features(self, cam_idx: int, det: Detection) -> tuple[float, float, float]:
        """Camera-detection edge attributes: (distance, source flag, visibility flag)."""
        cam = self.cameras[cam_idx]
        if det.has_world:
            d = float(np.linalg.norm(cam.position - np.array(det.world)))
            vis = visibility(cam, np.array(det.world), self.mesh)
        else:
            d, vis = 0.0, True
        return d, float(det.camera == cam_idx), float(vis)

    def _init_camera_edges(self, g: STGraph, state: RepState, keys: list[EdgeKey],
                           training: bool, dropout: float, generator) -> None:
        dtype = self.cfg.torch_dtype
        (x0, x1), (y0, y1), _ = self.cfg.scene_bounds
        diag = math.hypot(x1 - x0, y1 - y0)
        dist, src_flag, vis_flag = [], [], []
        for _, cam_idx, det_id in keys:
            d, b_src, b_vis = self.camera_edge_features(cam_idx, g.vertices[det_id])
            dist.append([d / diag])
            src_flag.append([b_src])
            vis_flag.append([b_vis])
        parts = [
            self._mlp("enc_camedge_dist", torch.tensor(dist, dtype=dtype), training, dropout, generator),
            self._mlp("enc_camedge_src", torch.tensor(src_flag, dtype=dtype), training, dropout, generator),
            self._mlp("enc_camedge_vis", torch.tensor(vis_flag, dtype=dtype), training, dropout, generator),
        ]
        reps = torch.cat(parts, dim=1)
        for row, key in enumerate(keys):
            state.edge[key] = reps[row]

    def _sync_state(self, g: STGraph, state: RepState, training: bool,
                    dropout: float, generator, vertex_masks) -> None:
        state.drop_missing(g)
        new_vertices = sorted(v for v in g.vertices if v not in state.vertex)
        if new_vertices:
            self._init_vertices(g, state, new_vertices, training, dropout, generator, vertex_masks)
        if g.camera_vertices:
            self._init_camera_vertices(g, state, training, dropout, generator)
        zero = None
        new_cam_edges = []
        for key in sorted(k for k in g.edges if k not in state.edge):
            if key[0] is EdgeKind.CAMERA:
                new_cam_edges.append(key)
            else:
                if zero is None:
                    zero = torch.zeros(self.cfg.s, dtype=self.cfg.torch_dtype)
                state.edge[key] = zero  # freshly created edges start at 0
        if new_cam_edges:
            self._init_camera_edges(g, state, new_cam_edges, training, dropout, generator)

    # ---------------------------------------------------------- forward pass

    def forward_step(self, g: STGraph, state: RepState, *, training: bool = False,
                     dropout: float = 0.0, generator: Optional[torch.Generator] = None,
                     vertex_masks: Optional[dict[int, Sequence[int]]] = None) -> ScoredGraph:
        """Run `rounds` edge+vertex updates then classify; persists updated reps."""
        self._sync_state(g, state, training, dropout, generator, vertex_masks)
        dtype = self.cfg.torch_dtype
        if not g.vertices:
            return ScoredGraph.empty(dtype)

        ids = sorted(g.vertices)
        row = {vid: i for i, vid in enumerate(ids)}
        V = torch.stack([state.vertex[v] for v in ids])
        n = len(ids)

        cam_ids = sorted(state.camera)
        crow = {c: i for i, c in enumerate(cam_ids)}
        VC = torch.stack([state.camera[c] for c in cam_ids]) if cam_ids else None

        edge_batches: dict[EdgeKind, tuple[list[EdgeKey], torch.Tensor, torch.Tensor, torch.Tensor]] = {}
        for kind in (*MESSAGE_KINDS, EdgeKind.CAMERA):
            keys = sorted(g.edges_of_kind(kind))
            if not keys:
                continue
            E = torch.stack([state.edge[k] for k in keys])
            if kind is EdgeKind.CAMERA:
                src = torch.tensor([crow[k[1]] for k in keys])
            else:
                src = torch.tensor([row[k[1]] for k in keys])
            dst = torch.tensor([row[k[2]] for k in keys])
            edge_batches[kind] = (keys, E, src, dst)

        def run(name, x):
            return self._mlp(name, x, training, dropout, generator)

        def mean_agg(total_rows, idx_list, msgs):
            total = msgs.new_zeros(total_rows, self.cfg.s)
            cnt = torch.zeros(total_rows, dtype=torch.long)
            for idx in idx_list:
                total = total.index_add(0, idx, msgs)
                cnt += torch.bincount(idx, minlength=total_rows)
            return total / cnt.clamp(min=1).to(dtype).unsqueeze(1)

        for _ in range(self.cfg.rounds):
            # edge updates (residual)
            for kind, (keys, E, src, dst) in edge_batches.items():
                ends_src = VC[src] if kind is EdgeKind.CAMERA else V[src]
                inp = torch.cat([E, ends_src, V[dst]], dim=1)
                E = E + run(f"edge_update_{kind.value}", inp)
                edge_batches[kind] = (keys, E, src, dst)
            # messages, shared by both endpoints, aggregated by mean per kind
            delta = V.new_zeros(n, self.cfg.s)
            for kind in MESSAGE_KINDS:
                if kind not in edge_batches:
                    continue
                keys, E, src, dst = edge_batches[kind]
                msgs = run(f"message_{kind.value}", torch.cat([E, V[src], V[dst]], dim=1))
                delta = delta + mean_agg(n, [src, dst], msgs)
            if EdgeKind.CAMERA in edge_batches:
                keys, E, src, dst = edge_batches[EdgeKind.CAMERA]
                msgs = run("message_camera", torch.cat([E, VC[src], V[dst]], dim=1))
                delta = delta + mean_agg(n, [dst], msgs)
                VC = VC + mean_agg(len(cam_ids), [src], msgs)
            V = V + delta

        scored = {}
        for kind in CLASSIFIED_KINDS:
            if kind in edge_batches:
                keys, E, src, dst = edge_batches[kind]
                logits = run(f"cls_edge_{kind.value}", torch.cat([E, V[src], V[dst]], dim=1))
                scored[kind] = (keys, torch.sigmoid(logits.squeeze(-1)))
            else:
                scored[kind] = ([], torch.zeros(0, dtype=dtype))
        vertex_probs = torch.sigmoid(run("cls_vertex", V).squeeze(-1))

        for vid, i in row.items():
            state.vertex[vid] = V[i]
        for c, i in crow.items():
            state.camera[c] = VC[i]
        for kind, (keys, E, _, _) in edge_batches.items():
            for i, key in enumerate(keys):
                state.edge[key] = E[i]

        return ScoredGraph(
            temporal_keys=scored[EdgeKind.TEMPORAL][0],
            temporal_probs=scored[EdgeKind.TEMPORAL][1],
            view_keys=scored[EdgeKind.VIEW][0],
            view_probs=scored[EdgeKind.VIEW][1],
            vertex_ids=ids,
            vertex_probs=vertex_probs,
        )


def save_checkpoint(path: str | Path, store: ParameterStore, model_cfg: ModelConfig,
                    graph_cfg: GraphConfig, optimizer=None, extra: Optional[dict] = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model_cfg),
        "graph_config": asdict(graph_cfg),
        "state_dict": store.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, ModelConfig, GraphConfig, dict]:
    payload = torch.load(path, weights_only=True)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')}")
    model_cfg = ModelConfig.from_dict(payload["model_config"])
    graph_cfg = GraphConfig(**payload["graph_config"])
    store = build_parameter_store(model_cfg, use_camera_vertices=graph_cfg.use_camera_vertices)
    store.load_state_dict(payload["state_dict"])  # strict: mismatched dims fail loudly
    return store, model_cfg, graph_cfg, payload

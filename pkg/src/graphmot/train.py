"""Dynamic training loop: chunked sequences, per-frame losses, delayed backward.

Each chunk starts from an empty graph. Every frame is added, regularized,
scored and its focal loss accumulated; one backward pass and one optimizer
step happen at the chunk's end, so gradients flow through representations
persisted across window shifts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .graph import Detection, GraphConfig, STGraph
from .model import UMPN, ScoredGraph
from .nn import backward, focal_loss, make_optimizer, optimizer_step


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    chunk_len: int = 40
    gamma: float = 2.0
    edge_prune_rate: float = 0.10
    vertex_mask_rate: float = 0.05
    dropout: float = 0.10
    lr: float = 1e-3
    lr_decay: float = 1.0
    epochs: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    delayed_backward: bool = True

    def __post_init__(self):
        for name in ("edge_prune_rate", "vertex_mask_rate", "dropout"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise TrainingError(f"{name}={v} outside [0, 1)")
        if self.chunk_len < 2:
            raise TrainingError("chunk_len must be >= 2")
        if self.epochs < 1 or self.lr <= 0:
            raise TrainingError("epochs must be >= 1 and lr positive")


@dataclass
class ChunkStats:
    frame_terms: list[tuple[float, float, float]] = field(default_factory=list)  # (view, temporal, vertex)
    total: float = 0.0
    grad_norm: float = 0.0

    @property
    def n_frames(self) -> int:
        return len(self.frame_terms)


def apply_regularization(g: STGraph, created_edges, new_vertex_ids, n_attrs: int,
                         rng: np.random.Generator, cfg: TrainConfig):
    """Drop freshly created edges and pick vertex-attribute masks (training only)."""
    dropped = [k for k in created_edges if rng.uniform() < cfg.edge_prune_rate]
    g.remove_edges(dropped)
    masks: dict[int, list[int]] = {}
    for vid in new_vertex_ids:
        hit = [a for a in range(n_attrs) if rng.uniform() < cfg.vertex_mask_rate]
        if hit:
            masks[vid] = hit
    return dropped, masks


class Trainer:
    def __init__(self, umpn: UMPN, graph_cfg: GraphConfig, cfg: TrainConfig):
        if cfg.chunk_len < graph_cfg.w:
            raise TrainingError("chunk_len must be >= the window length")
        self.umpn = umpn
        self.graph_cfg = graph_cfg
        self.cfg = cfg
        self.optimizer = make_optimizer(umpn.store, lr=cfg.lr,
                                        betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
        self.np_rng = np.random.default_rng(cfg.seed)
        self.torch_gen = torch.Generator().manual_seed(cfg.seed)

    @property
    def camera_indices(self) -> tuple[int, ...]:
        return tuple(range(self.umpn.cfg.n_cameras))

    def _loss_terms(self, scored: ScoredGraph, labels):
        dtype = self.umpn.cfg.torch_dtype
        zero = torch.zeros((), dtype=dtype)

        def term(keys, probs, label_map):
            if not keys:
                return zero
            y = torch.tensor([label_map[k] for k in keys], dtype=dtype)
            return focal_loss(y, probs, self.cfg.gamma).mean()

        lv = term(scored.view_keys, scored.view_probs, labels.edge_labels)
        lt = term(scored.temporal_keys, scored.temporal_probs, labels.edge_labels)
        if scored.vertex_ids:
            y = torch.tensor([labels.vertex_labels[v] for v in scored.vertex_ids], dtype=dtype)
            lx = focal_loss(y, scored.vertex_probs, self.cfg.gamma).mean()
        else:
            lx = zero
        return lv, lt, lx

    def train_chunk(self, chunk: Sequence[tuple[int, list[Detection]]]) -> ChunkStats:
        """Process one chunk; a zero-length chunk is a no-op with zero stats."""
        if not chunk:
            return ChunkStats()
        cfg = self.cfg
        g = STGraph(self.graph_cfg, cameras=self.camera_indices, mode="train")
        state = self.umpn.new_state()
        dtype = self.umpn.cfg.torch_dtype
        total = torch.zeros((), dtype=dtype)
        stats = ChunkStats()
        norms = []
        for frame, dets in chunk:
            created = g.add_frame(frame, dets)
            _, masks = apply_regularization(
                g, created, [d.id for d in dets], len(self.umpn.cfg.attributes),
                self.np_rng, cfg)
            while g.prune_oldest() != ([], []):
                pass
            scored = self.umpn.forward_step(
                g, state, training=True, dropout=cfg.dropout,
                generator=self.torch_gen, vertex_masks=masks)
            labels = g.derive_labels()
            lv, lt, lx = self._loss_terms(scored, labels)
            frame_loss = lv + lt + lx
            terms = (float(lv.detach()), float(lt.detach()), float(lx.detach()))
            if not torch.isfinite(frame_loss):
                raise TrainingError(
                    f"non-finite loss at frame {frame}: view={terms[0]}, "
                    f"temporal={terms[1]}, vertex={terms[2]}")
            stats.frame_terms.append(terms)
            if cfg.delayed_backward:
                total = total + frame_loss
            else:
                # standard per-frame backprop: update immediately and cut the
                # gradient history so no credit flows across frames
                if frame_loss.requires_grad:
                    backward(frame_loss)
                    norms.append(optimizer_step(self.umpn.store, self.optimizer, cfg.grad_clip))
                state.detach_()
                total = total + frame_loss.detach()
        if cfg.delayed_backward and total.requires_grad:
            backward(total)
            stats.grad_norm = optimizer_step(self.umpn.store, self.optimizer, cfg.grad_clip)
        elif norms:
            stats.grad_norm = float(np.mean(norms))
        stats.total = float(total.detach())
        return stats

    def fit(self, frames: Sequence[tuple[int, list[Detection]]],
            epochs: Optional[int] = None,
            epoch_hook: Optional[Callable[[int, dict], None]] = None) -> list[dict]:
        """Shuffled-chunk epochs over one sequence; returns per-epoch summaries."""
        cfg = self.cfg
        chunks = [frames[i:i + cfg.chunk_len] for i in range(0, len(frames), cfg.chunk_len)]
        history = []
        for epoch in range(epochs if epochs is not None else cfg.epochs):
            order = self.np_rng.permutation(len(chunks))
            epoch_stats = [self.train_chunk(chunks[i]) for i in order]
            terms = np.array([t for s in epoch_stats for t in s.frame_terms])
            row = {
                "epoch": epoch,
                "loss_view": float(terms[:, 0].mean()) if len(terms) else 0.0,
                "loss_temporal": float(terms[:, 1].mean()) if len(terms) else 0.0,
                "loss_vertex": float(terms[:, 2].mean()) if len(terms) else 0.0,
                "grad_norm": float(np.mean([s.grad_norm for s in epoch_stats])),
            }
            if epoch_hook is not None:
                epoch_hook(epoch, row)
            history.append(row)
            for group in self.optimizer.param_groups:
                group["lr"] *= cfg.lr_decay
        return history

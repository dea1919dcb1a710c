"""Deterministic neural core: two-layer MLP blocks, focal loss, optimizer step.

Gradients are accumulated by torch's reverse-mode autograd; the delayed
backward pass of the trainer is a single `backward()` over a loss summed
across frames.
"""

from __future__ import annotations

import math
from typing import Optional

import torch
from torch import nn

LN_EPS = 1e-5
FOCAL_EPS = 1e-7

DTYPES = {"float64": torch.float64, "float32": torch.float32}


class ShapeError(ValueError):
    pass


class OptimizerError(RuntimeError):
    pass


def layer_norm(x: torch.Tensor, gamma: Optional[torch.Tensor] = None,
               beta: Optional[torch.Tensor] = None, eps: float = LN_EPS) -> torch.Tensor:
    """Normalize the last dimension to zero mean / unit variance, then scale+shift."""
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    out = (x - mean) / torch.sqrt(var + eps)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def _init_uniform(shape, fan_in: int, dtype, generator) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
    t = torch.empty(shape, dtype=dtype)
    t.uniform_(-bound, bound, generator=generator)
    return t


class MlpBlock(nn.Module):
    """out = W2 @ relu(layer_norm(W1 @ x + b1)) + b2, dropout on the hidden units."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, *,
                 dtype: torch.dtype = torch.float64,
                 generator: Optional[torch.Generator] = None):
        super().__init__()
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.w1 = nn.Parameter(_init_uniform((hidden_dim, in_dim), in_dim, dtype, generator))
        self.b1 = nn.Parameter(_init_uniform((hidden_dim,), in_dim, dtype, generator))
        self.ln_gamma = nn.Parameter(torch.ones(hidden_dim, dtype=dtype))
        self.ln_beta = nn.Parameter(torch.zeros(hidden_dim, dtype=dtype))
        self.w2 = nn.Parameter(_init_uniform((out_dim, hidden_dim), hidden_dim, dtype, generator))
        self.b2 = nn.Parameter(_init_uniform((out_dim,), hidden_dim, dtype, generator))

    def forward(self, x: torch.Tensor, dropout_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"expected input dim {self.in_dim}, got {x.shape[-1]}")
        h = layer_norm(x @ self.w1.T + self.b1, self.ln_gamma, self.ln_beta)
        h = torch.relu(h)
        if dropout_mask is not None:
            h = h * dropout_mask
        return h @ self.w2.T + self.b2


def mlp_forward(block: MlpBlock, x: torch.Tensor,
                dropout_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    return block(x, dropout_mask)


def dropout_mask(shape, rate: float, generator: Optional[torch.Generator] = None,
                 dtype: torch.dtype = torch.float64, training: bool = True) -> torch.Tensor:
    """Inverted-dropout mask: 0 with probability `rate`, else 1/(1-rate).

    Inference mode returns all-ones so the path is bit-identical to no dropout.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return torch.ones(shape, dtype=dtype)
    keep = torch.rand(shape, generator=generator, dtype=dtype) >= rate
    return keep.to(dtype) / (1.0 - rate)


def focal_loss(y: torch.Tensor, p: torch.Tensor, gamma: float = 2.0,
               eps: float = FOCAL_EPS) -> torch.Tensor:
    """-y (1-p)^g log p - (1-y) p^g log(1-p), elementwise; p clamped to [eps, 1-eps]."""
    p = torch.clamp(p, eps, 1.0 - eps)
    return -y * (1.0 - p) ** gamma * torch.log(p) - (1.0 - y) * p ** gamma * torch.log1p(-p)


def backward(loss: torch.Tensor) -> None:
    """Backpropagate a scalar loss, adding into every parameter's accumulator.

    The recorded computation graph is released afterwards.
    """
    if loss.dim() != 0:
        raise ShapeError("backward requires a scalar loss")
    loss.backward()


class ParameterStore(nn.Module):
    """All learnable blocks by name, with torch-managed gradient accumulators."""

    def __init__(self, blocks: dict[str, MlpBlock]):
        super().__init__()
        self.blocks = nn.ModuleDict(blocks)

    def __getitem__(self, name: str) -> MlpBlock:
        return self.blocks[name]

    def __contains__(self, name: str) -> bool:
        return name in self.blocks

    def block_names(self) -> list[str]:
        return sorted(self.blocks.keys())

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.parameters():
            if p.grad is not None:
                total += float(p.grad.pow(2).sum())
        return math.sqrt(total)

    def has_nonfinite_grad(self) -> bool:
        return any(
            p.grad is not None and not torch.isfinite(p.grad).all()
            for p in self.parameters()
        )


def make_optimizer(store: ParameterStore, lr: float = 1e-3,
                   betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> torch.optim.Adam:
    return torch.optim.Adam(store.parameters(), lr=lr, betas=betas, eps=eps)


def optimizer_step(store: ParameterStore, optimizer: torch.optim.Optimizer,
                   grad_clip: Optional[float] = None) -> float:
    """Apply one update from the accumulated gradients, then zero them.

    Returns the pre-clip gradient norm. A non-finite gradient rejects the step.
    """
    if store.has_nonfinite_grad():
        optimizer.zero_grad(set_to_none=True)
        raise OptimizerError("non-finite gradient; step rejected")
    if grad_clip is not None:
        norm = float(torch.nn.utils.clip_grad_norm_(store.parameters(), grad_clip))
    else:
        norm = store.grad_norm()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
    return norm

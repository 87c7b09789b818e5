"""
Stateless numerical operations shared by the encoder and the G2P model.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional

import torch

from ..exceptions import DomainError


def softmax(logits, dim: int = -1) -> torch.Tensor:
    """
    Max-subtracted softmax.

    Raises:
        DomainError: If the reduced dimension is empty
    """
    logits = torch.as_tensor(logits)
    if not torch.is_floating_point(logits):
        logits = logits.to(torch.float64)
    if logits.numel() == 0 or logits.shape[dim] == 0:
        raise DomainError("softmax of an empty vector is undefined")
    shifted = logits - logits.amax(dim=dim, keepdim=True)
    exp = torch.exp(shifted)
    return exp / exp.sum(dim=dim, keepdim=True)


def causal_mask(n: int, device=None) -> torch.Tensor:
    """(n, n) boolean mask; True where query i may attend to key j (j <= i)."""
    return torch.ones(n, n, dtype=torch.bool, device=device).tril()


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                         mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    softmax(Q K^T / sqrt(d) + M) V where M is -inf wherever ``mask`` is False.

    Args:
        q: (..., Tq, d) queries
        k: (..., Tk, d) keys
        v: (..., Tk, dv) values
        mask: Optional boolean tensor broadcastable to (..., Tq, Tk); True = may attend

    Raises:
        DomainError: Inner dimensions disagree
    """
    if q.shape[-1] != k.shape[-1]:
        raise DomainError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DomainError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if mask is not None:
        if mask.dtype != torch.bool:
            raise DomainError("attention mask must be boolean")
        try:
            scores = scores.masked_fill(~mask, float("-inf"))
        except RuntimeError as e:
            raise DomainError(f"mask of shape {tuple(mask.shape)} does not fit scores {tuple(scores.shape)}") from e
    # rows with every key masked come out as NaN; they carry no information
    weights = torch.nan_to_num(softmax(scores, dim=-1), nan=0.0)
    return weights @ v


def grad_check(f: Callable[[], torch.Tensor], params: Iterable[torch.Tensor], epsilon: float = 1e-5,
               max_coords: int = 20, seed: int = 0, abs_floor: float = 1e-5) -> float:
    """
    Compare reverse-mode gradients with central finite differences.

    Args:
        f: Closure returning a scalar computed from ``params``
        params: Leaf tensors with requires_grad=True (use float64)
        epsilon: Finite-difference step
        max_coords: Coordinates sampled per parameter (all if the tensor is smaller)
        seed: Seed for the coordinate sample
        abs_floor: Lower bound of the relative-error denominator, so that
            near-zero gradients are compared in absolute terms

    Returns:
        max |analytic - numeric| / max(|analytic|, |numeric|, abs_floor)
    """
    params = list(params)
    loss = f()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        flat_grad = torch.zeros(p.numel(), dtype=p.dtype) if g is None else g.detach().reshape(-1)
        if p.numel() <= max_coords:
            coords = torch.arange(p.numel())
        else:
            coords = torch.randperm(p.numel(), generator=gen)[:max_coords]
        flat = p.data.view(-1)
        for i in coords.tolist():
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + epsilon
                f_plus = f().item()
                flat[i] = orig - epsilon
                f_minus = f().item()
                flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            analytic = flat_grad[i].item()
            denom = max(abs(analytic), abs(numeric), abs_floor)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst

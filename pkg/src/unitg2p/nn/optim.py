"""
Adam with linear warmup followed by linear decay (or a constant plateau).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import torch
from torch.optim import Adam
from torch.optim.lr_scheduler import LambdaLR

from ..config.settings import OptimizerConfig
from ..exceptions import DomainError

logger = logging.getLogger(__name__)


def lr_at(step: int, peak_lr: float, warmup_steps: int, total_steps: int, schedule: str = "linear") -> float:
    """
    Learning rate of the ``step``-th update (1-based).

    peak * t / warmup during warmup, then linear decay reaching 0 at
    total_steps (``linear``) or a flat peak (``constant``); 0 past the end.
    """
    if step <= 0:
        return 0.0
    if step > total_steps:
        return 0.0
    if warmup_steps > 0 and step <= warmup_steps:
        return peak_lr * step / warmup_steps
    if schedule == "constant":
        return peak_lr
    remaining = total_steps - warmup_steps
    if remaining <= 0:
        return 0.0
    return peak_lr * max(0.0, (total_steps - step) / remaining)


@dataclass
class OptimizerState:
    optimizer: Adam
    scheduler: LambdaLR
    params: List[torch.nn.Parameter]
    peak_lr: float
    warmup_steps: int
    total_steps: int
    clip_norm: Optional[float]
    schedule: str = "linear"
    step_count: int = 0

    @property
    def next_lr(self) -> float:
        return lr_at(self.step_count + 1, self.peak_lr, self.warmup_steps, self.total_steps, self.schedule)


def build_optimizer(params: Iterable[torch.nn.Parameter], cfg: OptimizerConfig, total_steps: int,
                    peak_lr: Optional[float] = None, warmup_fraction: Optional[float] = None) -> OptimizerState:
    """
    Create Adam plus its schedule.

    Args:
        params: Parameters to optimize
        cfg: Betas, epsilon, clipping and schedule shape
        total_steps: Number of updates the schedule spans
        peak_lr: Overrides cfg.peak_lr (the G2P uses its own rate)
        warmup_fraction: Overrides cfg.warmup_fraction
    """
    if total_steps < 1:
        raise DomainError("total_steps must be >= 1")
    params = [p for p in params if p.requires_grad]
    peak = cfg.peak_lr if peak_lr is None else peak_lr
    fraction = cfg.warmup_fraction if warmup_fraction is None else warmup_fraction
    warmup_steps = int(round(fraction * total_steps))
    optimizer = Adam(params, lr=peak, betas=tuple(cfg.betas), eps=cfg.epsilon)
    state = OptimizerState(optimizer=optimizer, scheduler=None, params=params, peak_lr=peak,
                           warmup_steps=warmup_steps, total_steps=total_steps,
                           clip_norm=cfg.clip_norm, schedule=cfg.schedule)
    # LambdaLR's epoch e drives update e + 1
    state.scheduler = LambdaLR(
        optimizer,
        lambda e: lr_at(e + 1, peak, warmup_steps, total_steps, cfg.schedule) / peak,
    )
    return state


def adam_step(params: Sequence[torch.nn.Parameter], grads: Optional[Sequence[Optional[torch.Tensor]]],
              state: OptimizerState) -> float:
    """
    One bias-corrected Adam update at the scheduled learning rate.

    Args:
        params: Parameters being updated (must be the ones ``state`` was built for)
        grads: Gradients to install before stepping; None uses the existing ``.grad``
        state: Optimizer state; its step_count advances by one

    Returns:
        The learning rate that was applied

    Raises:
        DomainError: If ``grads`` does not match ``params`` in length or shape
    """
    if grads is not None:
        if len(grads) != len(params):
            raise DomainError(f"{len(grads)} gradients for {len(params)} parameters")
        for p, g in zip(params, grads):
            if g is not None and g.shape != p.shape:
                raise DomainError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
            p.grad = None if g is None else g.detach().to(p.dtype).clone()
    if state.clip_norm is not None:
        torch.nn.utils.clip_grad_norm_(state.params, state.clip_norm)
    lr = state.optimizer.param_groups[0]["lr"]
    state.optimizer.step()
    state.scheduler.step()
    state.step_count += 1
    return lr

"""AdamW and global-norm gradient clipping on plain lists of tensors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch


@dataclass
class AdamState:
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)


def global_norm(grads) -> float:
    total = 0.0
    for g in grads:
        total += float(torch.sum(g.detach().double() ** 2))
    return math.sqrt(total)


def clip_gradients(grads, clip_norm: float):
    """Scale ``grads`` so their joint L2 norm is at most ``clip_norm``.

    Returns ``(clipped_grads, norm_before)``.  Raises ``FloatingPointError``
    when any gradient is non-finite so the caller can abort the step.
    """
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    grads = list(grads)
    for g in grads:
        if not torch.isfinite(g).all():
            raise FloatingPointError("non-finite gradient")
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        return [g * scale for g in grads], norm
    return grads, norm


@torch.no_grad()
def adamw_step(
    params,
    grads,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    betas=(0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """One in-place AdamW update with decoupled weight decay."""
    params, grads = list(params), list(grads)
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.exp_avg:
        state.exp_avg = [torch.zeros_like(p) for p in params]
        state.exp_avg_sq = [torch.zeros_like(p) for p in params]
    beta1, beta2 = betas
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} does not match parameter {tuple(p.shape)}")
        if not torch.isfinite(g).all():
            raise FloatingPointError("non-finite gradient passed to adamw_step")
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        if weight_decay:
            p.mul_(1.0 - lr * weight_decay)
        denom = (v / bc2).sqrt_().add_(eps)
        p.addcdiv_(m / bc1, denom, value=-lr)
    return state

"""Confidence-guided reconstruction weighting.

Predicted confidence maps are normalized jointly, softly thresholded per
image and used as fixed per-pixel weights during the first part of a
reconstruction fit.  A shared latent image stands in for the radiance
field: it is fitted to all harmonized views at once.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .optim import AdamState, adamw_step


def normalize_confidences(maps) -> list[np.ndarray]:
    """Joint min-max normalization of a set of confidence maps to ``[0, 1]``."""
    maps = [np.asarray(m, dtype=np.float64) for m in maps]
    if not maps:
        raise ValueError("need at least one confidence map")
    lo = min(float(m.min()) for m in maps)
    hi = max(float(m.max()) for m in maps)
    if hi == lo:
        return [np.ones_like(m) for m in maps]
    return [(m - lo) / (hi - lo) for m in maps]


def confidence_stats(cmap) -> tuple[float, float]:
    """Mean and biased variance of one normalized map."""
    c = np.asarray(cmap, dtype=np.float64)
    mu = float(c.mean())
    return mu, float(np.mean((c - mu) ** 2))


def soft_threshold(cmap, mu_c: float, sigma2_c: float) -> np.ndarray:
    """Weights of 1 at or above ``mu_c - sigma2_c``; the raw confidence below it."""
    c = np.asarray(cmap, dtype=np.float64)
    return np.where(c >= mu_c - sigma2_c, 1.0, c)


def reconstruction_weights(maps) -> list[np.ndarray]:
    """Normalize jointly, then soft-threshold each map with its own statistics."""
    out = []
    for c in normalize_confidences(maps):
        out.append(soft_threshold(c, *confidence_stats(c)))
    return out


def weighted_recon_loss(render, target, weights):
    """Mean over pixels of ``weight * sum_c |target - render|``; weights carry no gradient."""
    r = torch.as_tensor(render)
    t = torch.as_tensor(target, dtype=r.dtype)
    w = torch.as_tensor(weights, dtype=r.dtype).detach()
    if r.shape != t.shape:
        raise ValueError(f"render and target differ in shape: {tuple(r.shape)} vs {tuple(t.shape)}")
    if w.ndim == r.ndim - 1:
        w = w.unsqueeze(-1)
    if w.shape[:-1] != r.shape[:-1]:
        raise ValueError(f"weights shape {tuple(w.shape)} does not match image {tuple(r.shape)}")
    return (w[..., 0] * torch.abs(t - r).sum(-1)).mean()


def weighted_stage_steps(iters: int, weighted_fraction: float) -> int:
    """Number of leading iterations that use confidence weights."""
    if not 0.0 < weighted_fraction <= 1.0:
        raise ValueError("weighted_fraction must be in (0, 1]")
    return math.ceil(weighted_fraction * iters)


def toy_reconstruct(
    harmonized,
    confidences,
    iters: int = 400,
    weighted_fraction: float = 0.25,
    lr: float = 0.05,
    callback=None,
) -> np.ndarray:
    """Fit one latent image to aligned harmonized views with the two-stage schedule.

    The latent starts at the per-pixel median of the views.  Iterations
    ``k < ceil(weighted_fraction * iters)`` use the soft-thresholded
    confidence weights; the remainder use plain L1.  ``callback(k, latent)``
    is invoked after every update.
    """
    frames = [np.asarray(f, dtype=np.float64) for f in harmonized]
    if not frames:
        raise ValueError("need at least one harmonized frame")
    if len(confidences) != len(frames):
        raise ValueError("one confidence map per frame is required")
    weights = [torch.as_tensor(w.reshape(w.shape[:2])) for w in reconstruction_weights(confidences)]
    targets = [torch.as_tensor(f) for f in frames]
    ones = torch.ones_like(weights[0])

    latent = torch.as_tensor(np.median(np.stack(frames), axis=0)).clone().requires_grad_(True)
    state = AdamState()
    n_weighted = weighted_stage_steps(iters, weighted_fraction)
    for k in range(iters):
        use = weights if k < n_weighted else [ones] * len(frames)
        loss = sum(weighted_recon_loss(latent, t, w) for t, w in zip(targets, use))
        (g,) = torch.autograd.grad(loss, [latent])
        adamw_step([latent], [g], state, lr=lr)
        if callback is not None:
            callback(k, latent.detach().numpy())
    return latent.detach().numpy().copy()

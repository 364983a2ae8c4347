"""Losses, augmentation, the training loop and a finite-difference checker."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import gaussian_filter

from .bilateral_grid import tv_loss
from .isp_sim import TrainingPair, generate_training_pair, synth_scene
from .optim import AdamState, adamw_step, clip_gradients, global_norm
from .transformer import GridTransformer, ModelConfig

log = logging.getLogger(__name__)

LR_FLOOR = 1e-5


@dataclass
class TrainConfig:
    alpha: float = 0.1
    lambda_tv: float = 1e-3
    lr: float = 2e-4
    weight_decay: float = 1e-4
    iterations: int = 5000
    frames_per_batch: int = 10
    clip_norm: float = 1.0
    seed: int = 0
    severity: float = 0.7
    augment: bool = True
    flip_prob: float = 0.5
    scale_prob: float = 0.5
    blur_prob: float = 0.3
    log_every: int = 50

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.lambda_tv < 0:
            raise ValueError("lambda_tv must be non-negative")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.frames_per_batch < 2:
            raise ValueError("frames_per_batch must be >= 2")


# -- losses -----------------------------------------------------------------

def confidence_loss(corrected, target, conf, alpha: float) -> torch.Tensor:
    """Mean over pixels of ``conf * sum_c |target - corrected| - alpha * log(conf)``."""
    if conf.shape[-1] == 1:
        conf = conf[..., 0]
    if bool((conf <= 0).any()):
        raise ValueError("confidence must be strictly positive")
    l1 = torch.abs(target - corrected).sum(-1)
    return (conf * l1 - alpha * torch.log(conf)).mean()


@dataclass
class LossParts:
    total: torch.Tensor
    conf: torch.Tensor
    tv: torch.Tensor


def total_loss(corrected, targets, conf, grids, cgrids, alpha: float, lambda_tv: float) -> LossParts:
    """Average over source frames of the confidence loss plus weighted grid TV.

    All tensors carry a leading source-frame axis.
    """
    m = corrected.shape[0]
    conf_terms = torch.stack([confidence_loss(corrected[i], targets[i], conf[i], alpha) for i in range(m)])
    tv_terms = torch.stack([tv_loss(grids[i]) + tv_loss(cgrids[i]) for i in range(m)])
    conf_mean = conf_terms.mean()
    tv_mean = tv_terms.mean()
    return LossParts(conf_mean + lambda_tv * tv_mean, conf_mean, tv_mean)


# -- augmentation -------------------------------------------------------------

@dataclass(frozen=True)
class AugmentDraw:
    flip: bool = False
    scale: float = 1.0
    blur_sigma: float = 0.0

    @property
    def is_noop(self) -> bool:
        return not self.flip and self.scale == 1.0 and self.blur_sigma == 0.0


def draw_augmentation(seed: int, flip_prob=0.5, scale_prob=0.5, blur_prob=0.3) -> AugmentDraw:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    u = rng.random(6)
    return AugmentDraw(
        flip=bool(u[0] < flip_prob),
        scale=float(1.0 + 0.3 * u[2]) if u[1] < scale_prob else 1.0,
        blur_sigma=float(0.3 + 0.9 * u[4]) if u[3] < blur_prob else 0.0,
    )


def _scale_crop(img: np.ndarray, scale: float) -> np.ndarray:
    h, w = img.shape[:2]
    nh, nw = int(round(h * scale)), int(round(w * scale))
    if (nh, nw) == (h, w):
        return img
    t = torch.as_tensor(np.ascontiguousarray(img)).permute(2, 0, 1)[None]
    up = F.interpolate(t, size=(nh, nw), mode="bilinear", align_corners=False)[0].permute(1, 2, 0).numpy()
    top, left = (nh - h) // 2, (nw - w) // 2
    return up[top:top + h, left:left + w]


def apply_augmentation(img: np.ndarray, draw: AugmentDraw) -> np.ndarray:
    out = np.asarray(img, dtype=np.float64)
    if draw.flip:
        out = out[:, ::-1]
    if draw.scale != 1.0:
        out = _scale_crop(out, draw.scale)
    if draw.blur_sigma > 0:
        out = gaussian_filter(out, sigma=(draw.blur_sigma, draw.blur_sigma, 0), mode="reflect")
    return np.ascontiguousarray(np.clip(out, 0.0, 1.0))


def augment_sequence(pair: TrainingPair, seed: int, draw: Optional[AugmentDraw] = None, **probs) -> TrainingPair:
    """Apply one augmentation draw identically to every input and target frame."""
    draw = draw or draw_augmentation(seed, **probs)
    if draw.is_noop:
        return pair
    return TrainingPair(
        inputs=[apply_augmentation(im, draw) for im in pair.inputs],
        targets=[apply_augmentation(im, draw) for im in pair.targets],
        params=pair.params,
    )


# -- training loop ------------------------------------------------------------

def cosine_lr(step: int, total: int, lr: float) -> float:
    floor = min(LR_FLOOR, lr)
    if total <= 1:
        return lr
    return floor + (lr - floor) * 0.5 * (1.0 + math.cos(math.pi * step / (total - 1)))


def synthetic_scenes(n_scenes: int, frames: int, size=(64, 64), seed: int = 0) -> list[list[np.ndarray]]:
    return [synth_scene(seed * 100_003 + k, frames, *size) for k in range(n_scenes)]


def pair_to_tensors(pair: TrainingPair, dtype=torch.float32):
    inputs = torch.as_tensor(np.stack(pair.inputs)).to(dtype)
    targets = torch.as_tensor(np.stack(pair.targets)).to(dtype)
    return inputs, targets


def sample_batch(scenes, step: int, cfg: TrainConfig) -> tuple[TrainingPair, int]:
    """Draw the scene, frame subset and corruption for one optimizer step."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, step, 11]))
    k = int(rng.integers(len(scenes)))
    frames = scenes[k]
    n = min(cfg.frames_per_batch, len(frames))
    idx = rng.choice(len(frames), size=n, replace=False)
    pair_seed = int(rng.integers(2**31 - 1))
    pair = generate_training_pair([frames[i] for i in idx], pair_seed, cfg.severity)
    if cfg.augment:
        pair = augment_sequence(
            pair, pair_seed, flip_prob=cfg.flip_prob, scale_prob=cfg.scale_prob, blur_prob=cfg.blur_prob
        )
    return pair, pair_seed


def batch_loss(model: GridTransformer, inputs, targets, cfg: TrainConfig) -> LossParts:
    out, conf, grids, cgrids = model.harmonize(inputs)
    return total_loss(out, targets, conf, grids, cgrids, cfg.alpha, cfg.lambda_tv)


@dataclass
class TrainResult:
    model: GridTransformer
    history: list = field(default_factory=list)  # dict rows: step, loss, conf_loss, tv_loss, grad_norm


def train(
    scenes: Sequence[Sequence[np.ndarray]],
    cfg: TrainConfig,
    model_cfg: Optional[ModelConfig] = None,
    model: Optional[GridTransformer] = None,
    log_path=None,
    progress: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Optimize a grid transformer on freshly corrupted batches from ``scenes``.

    Every step draws a scene, ``frames_per_batch`` of its frames and a new
    corruption, optionally augments the sequence, and takes one clipped
    AdamW step on the total loss with a cosine-decayed learning rate.
    Raises ``FloatingPointError`` naming the batch seed if the loss or
    gradients become non-finite.
    """
    if not scenes:
        raise ValueError("need at least one training scene")
    model = model or GridTransformer(model_cfg or ModelConfig(), seed=cfg.seed)
    params = [p for p in model.parameters()]
    state = AdamState()
    history = []
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "conf_loss", "tv_loss", "grad_norm"])
    try:
        for step in range(cfg.iterations):
            pair, pair_seed = sample_batch(scenes, step, cfg)
            inputs, targets = pair_to_tensors(pair, params[0].dtype)
            parts = batch_loss(model, inputs, targets, cfg)
            if not torch.isfinite(parts.total):
                raise FloatingPointError(f"non-finite loss at step {step} (batch seed {pair_seed})")
            grads = torch.autograd.grad(parts.total, params)
            try:
                grads, norm = clip_gradients(grads, cfg.clip_norm)
            except FloatingPointError:
                raise FloatingPointError(f"non-finite gradient at step {step} (batch seed {pair_seed})") from None
            lr = cosine_lr(step, cfg.iterations, cfg.lr)
            adamw_step(params, grads, state, lr=lr, weight_decay=cfg.weight_decay)
            row = {
                "step": step,
                "loss": float(parts.total.detach()),
                "conf_loss": float(parts.conf.detach()),
                "tv_loss": float(parts.tv.detach()),
                "grad_norm": norm,
            }
            history.append(row)
            if step % cfg.log_every == 0 or step == cfg.iterations - 1:
                if writer is not None:
                    writer.writerow([row["step"], f"{row['loss']:.8g}", f"{row['conf_loss']:.8g}",
                                     f"{row['tv_loss']:.8g}", f"{row['grad_norm']:.8g}"])
                log.info("step %d loss %.5f grad %.3f lr %.2e", step, row["loss"], norm, lr)
                if progress is not None:
                    progress(row)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(model=model, history=history)


# -- gradient checking --------------------------------------------------------

def finite_diff_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    coords: Optional[Sequence[tuple[int, int]]] = None,
    n_coords: int = 10,
    step: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error between autograd and central differences.

    ``loss_fn`` re-evaluates the scalar loss from the current values of
    ``params``.  ``coords`` lists ``(param_index, flat_index)`` pairs; by
    default ``n_coords`` random coordinates are drawn from every parameter.
    The relative error uses ``max(|analytic|, |numeric|, 1e-8)`` as the
    denominator.
    """
    params = list(params)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    if coords is None:
        rng = np.random.default_rng(seed)
        coords = []
        for i, p in enumerate(params):
            picks = rng.choice(p.numel(), size=min(n_coords, p.numel()), replace=False)
            coords.extend((i, int(j)) for j in picks)
    worst = 0.0
    with torch.no_grad():
        for i, j in coords:
            flat = params[i].view(-1)
            orig = flat[j].item()
            flat[j] = orig + step
            up = float(loss_fn())
            flat[j] = orig - step
            down = float(loss_fn())
            flat[j] = orig
            numeric = (up - down) / (2 * step)
            analytic = float(grads[i].view(-1)[j])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def model_loss_closure(model: GridTransformer, inputs, targets, cfg: TrainConfig):
    return lambda: batch_loss(model, inputs, targets, cfg).total


__all__ = [
    "TrainConfig", "confidence_loss", "total_loss", "LossParts", "AugmentDraw", "draw_augmentation",
    "apply_augmentation", "augment_sequence", "cosine_lr", "synthetic_scenes", "sample_batch", "train",
    "TrainResult", "finite_diff_check", "model_loss_closure", "clip_gradients", "adamw_step", "AdamState",
    "global_norm",
]

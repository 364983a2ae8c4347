"""Built-in numerical checks behind ``mvharmonize selfcheck``."""

from __future__ import annotations

import math

import numpy as np
import torch

from .bilateral_grid import LUMA_709, slice_affine, slice_confidence, tv_loss
from .training import TrainConfig, confidence_loss, finite_diff_check, model_loss_closure
from .transformer import GridTransformer, ModelConfig
from .uncertainty import confidence_stats, soft_threshold


def _scalar_theta(grid, h, w, v, u, rgb):
    hs, ws, d, p = grid.shape
    luma = sum(c * k for c, k in zip(rgb, LUMA_709))
    coords = (
        min(max((v + 0.5) / h * hs - 0.5, 0.0), hs - 1),
        min(max((u + 0.5) / w * ws - 0.5, 0.0), ws - 1),
        min(max(luma * (d - 1), 0.0), d - 1),
    )
    sizes = (hs, ws, d)
    theta = np.zeros(p)
    for corner in range(8):
        idx, weight = [], 1.0
        for axis in range(3):
            lo = min(int(math.floor(coords[axis])), sizes[axis] - 1)
            f = coords[axis] - lo
            if corner >> axis & 1:
                idx.append(min(lo + 1, sizes[axis] - 1))
                weight *= f
            else:
                idx.append(lo)
                weight *= 1.0 - f
        theta += weight * grid[tuple(idx)]
    return theta


def slicing_oracle(cases: int = 1000, seed: int = 0) -> float:
    """Max abs difference between vectorized slicing and a per-pixel scalar loop."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < cases:
        hs, ws, d = rng.integers(1, 6), rng.integers(1, 6), rng.integers(2, 9)
        h, w = rng.integers(1, 12, size=2)
        grid = rng.normal(size=(hs, ws, d, 12))
        cgrid = rng.normal(size=(hs, ws, d, 1))
        img = rng.random((h, w, 3))
        out = slice_affine(torch.as_tensor(grid), torch.as_tensor(img)).numpy()
        conf = slice_confidence(torch.as_tensor(cgrid), torch.as_tensor(img)).numpy()
        for _ in range(min(10, cases - done)):
            v, u = int(rng.integers(h)), int(rng.integers(w))
            rgb = img[v, u]
            m = _scalar_theta(grid, h, w, v, u, rgb).reshape(3, 4)
            expected = m[:, :3] @ rgb + m[:, 3]
            worst = max(worst, float(np.abs(out[v, u] - expected).max()))
            c = math.exp(_scalar_theta(cgrid, h, w, v, u, rgb)[0])
            worst = max(worst, abs(float(conf[v, u, 0]) - c))
            done += 1
    return worst


def op_gradient_error(seed: int = 0) -> float:
    """Finite-difference check of slicing, TV and the confidence loss in float64."""
    rng = np.random.default_rng(seed)
    grid = torch.as_tensor(rng.normal(0, 0.3, size=(3, 4, 4, 12)) + np.eye(3, 4).ravel()).requires_grad_(True)
    cgrid = torch.as_tensor(rng.normal(0, 0.3, size=(3, 4, 4, 1))).requires_grad_(True)
    img = torch.as_tensor(rng.random((9, 11, 3)) * 0.9 + 0.05)
    tgt = torch.as_tensor(rng.random((9, 11, 3)))

    def slice_loss():
        return (slice_affine(grid, img) ** 2).sum() + slice_confidence(cgrid, img).sum()

    def tv():
        return tv_loss(grid) + tv_loss(cgrid)

    def conf():
        return confidence_loss(slice_affine(grid, img), tgt, slice_confidence(cgrid, img), 0.1)

    return max(finite_diff_check(fn, [grid, cgrid], n_coords=20, seed=seed) for fn in (slice_loss, tv, conf))


def model_gradient_error(seed: int = 0) -> float:
    """End-to-end finite-difference check of a tiny transformer in float64."""
    cfg = ModelConfig(image_size=(16, 16), patch_size=(8, 8), embed_dim=16, heads=2,
                      enc_blocks=1, dec_blocks=1, guidance_bins=4, mlp_ratio=2)
    model = GridTransformer(cfg, seed=seed).double()
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        model.head_fc2.weight.copy_(torch.randn(model.head_fc2.weight.shape, generator=gen, dtype=torch.float64) * 0.05)
        model.head_fc2.bias.copy_(torch.randn(model.head_fc2.bias.shape, generator=gen, dtype=torch.float64) * 0.05)
    rng = np.random.default_rng(seed)
    inputs = torch.as_tensor(rng.random((3, 16, 16, 3)) * 0.9 + 0.05)
    targets = torch.as_tensor(np.clip(inputs[1:].numpy() * 1.1 - 0.03, 0.0, 1.0))
    closure = model_loss_closure(model, inputs, targets, TrainConfig(lambda_tv=1e-2))
    return finite_diff_check(closure, list(model.parameters()), n_coords=10, seed=seed)


def soft_threshold_cases() -> bool:
    const = np.full((4, 4), 0.3)
    ok = bool(np.all(soft_threshold(const, *confidence_stats(const)) == 1.0))
    two = soft_threshold(np.array([0.2, 0.8]), 0.5, 0.09)
    return ok and two.tolist() == [0.2, 1.0]


def run_selfcheck(seed: int = 0, cases: int = 1000) -> list[tuple[str, bool, str]]:
    """Run every check; returns ``(name, passed, detail)`` rows."""
    rows = []
    err = slicing_oracle(cases, seed)
    rows.append(("slicing oracle", err < 1e-6, f"max abs err {err:.2e} over {cases} pixels"))
    err = op_gradient_error(seed)
    rows.append(("op gradients", err < 1e-4, f"max rel err {err:.2e}"))
    err = model_gradient_error(seed)
    rows.append(("model gradients", err < 1e-3, f"max rel err {err:.2e}"))
    ok = soft_threshold_cases()
    rows.append(("soft threshold", ok, "truth table"))
    return rows

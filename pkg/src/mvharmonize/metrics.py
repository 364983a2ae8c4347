"""PSNR, SSIM and affine colour-corrected variants of both."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import convolve2d

from ._validation import check_image, check_same_shape

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
CC_DAMPING = 1e-8


def psnr(a, b) -> float:
    x = np.clip(np.asarray(a, dtype=np.float64), 0.0, 1.0)
    y = np.clip(np.asarray(b, dtype=np.float64), 0.0, 1.0)
    check_same_shape(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(x: np.ndarray, y: np.ndarray, win: np.ndarray) -> float:
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    filt = lambda im: convolve2d(im, win, mode="valid")  # noqa: E731
    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x**2
    syy = filt(y * y) - mu_y**2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Single-scale SSIM (11x11 Gaussian, sigma 1.5, L = 1), averaged over channels."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    check_same_shape(x, y)
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image {x.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = _gaussian_window()
    return float(np.mean([_ssim_channel(x[..., c], y[..., c], win) for c in range(x.shape[-1])]))


def fit_color_correction(render, gt) -> np.ndarray:
    """Least-squares ``3 x 4`` affine map taking ``render`` colours to ``gt``."""
    r = np.asarray(render, dtype=np.float64).reshape(-1, 3)
    g = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if r.shape != g.shape:
        raise ValueError(f"render and gt differ in shape: {r.shape} vs {g.shape}")
    if r.shape[0] < 4:
        raise ValueError("colour correction needs at least 4 pixels")
    if np.all(r.max(axis=0) == r.min(axis=0)):
        m = np.zeros((3, 4))
        m[:, 3] = g.mean(axis=0)
        return m
    x = np.hstack([r, np.ones((r.shape[0], 1))])
    lhs = x.T @ x + CC_DAMPING * np.eye(4)
    return np.linalg.solve(lhs, x.T @ g).T


def apply_color_correction(image, m: np.ndarray) -> np.ndarray:
    im = np.asarray(image, dtype=np.float64)
    return im @ m[:, :3].T + m[:, 3]


@dataclass
class EvalReport:
    psnr: list
    ssim: list
    psnr_cc: list
    ssim_cc: list
    mean_psnr: float
    mean_ssim: float
    mean_psnr_cc: float
    mean_ssim_cc: float
    frames: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_sequence(renders, gts) -> EvalReport:
    if len(renders) != len(gts):
        raise ValueError(f"{len(renders)} renders but {len(gts)} ground-truth frames")
    if not renders:
        raise ValueError("nothing to evaluate")
    rows = {"psnr": [], "ssim": [], "psnr_cc": [], "ssim_cc": []}
    for r, g in zip(renders, gts):
        r = np.clip(check_image(r, "render", allow_unbounded=True), 0.0, 1.0)
        g = check_image(g, "gt")
        check_same_shape(r, g, ("render", "gt"))
        corrected = np.clip(apply_color_correction(r, fit_color_correction(r, g)), 0.0, 1.0)
        rows["psnr"].append(psnr(r, g))
        rows["ssim"].append(ssim(r, g))
        rows["psnr_cc"].append(psnr(corrected, g))
        rows["ssim_cc"].append(ssim(corrected, g))
    return EvalReport(
        **rows,
        **{f"mean_{k}": float(np.mean(v)) for k, v in rows.items()},
        frames=len(renders),
    )

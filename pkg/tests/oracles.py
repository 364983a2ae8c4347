"""Deliberately naive reference implementations used as test oracles.

Nothing here imports the package's numerical code; each function spells out
its computation with explicit loops so it can check the vectorized paths.
"""

from __future__ import annotations

import math

import numpy as np


def brute_force_theta(grid: np.ndarray, h: int, w: int, v: int, u: int, rgb) -> np.ndarray:
    """Interpolated parameter vector at pixel (row v, col u) by 8-vertex enumeration."""
    hs, ws, d, _ = grid.shape
    luma = 0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2]
    y = min(max((v + 0.5) / h * hs - 0.5, 0.0), hs - 1)
    x = min(max((u + 0.5) / w * ws - 0.5, 0.0), ws - 1)
    z = min(max(luma * (d - 1), 0.0), d - 1)
    corners = []
    for coord, size in ((y, hs), (x, ws), (z, d)):
        lo = min(int(math.floor(coord)), size - 1)
        hi = min(lo + 1, size - 1)
        f = coord - lo
        corners.append(((lo, 1.0 - f), (hi, f)))
    theta = np.zeros(grid.shape[-1])
    wsum = 0.0
    for iy, wy in corners[0]:
        for ix, wx in corners[1]:
            for iz, wz in corners[2]:
                weight = wy * wx * wz
                assert weight >= 0.0
                wsum += weight
                theta = theta + weight * grid[iy, ix, iz]
    assert abs(wsum - 1.0) < 1e-12
    return theta


def brute_force_affine_pixel(grid, h, w, v, u, rgb) -> np.ndarray:
    theta = brute_force_theta(grid, h, w, v, u, rgb)
    out = np.zeros(3)
    for row in range(3):
        acc = theta[row * 4 + 3]
        for col in range(3):
            acc += theta[row * 4 + col] * rgb[col]
        out[row] = acc
    return out


def brute_force_confidence_pixel(cgrid, h, w, v, u, rgb) -> float:
    return math.exp(brute_force_theta(cgrid, h, w, v, u, rgb)[0])


def naive_tv(grid: np.ndarray) -> float:
    """Per-axis mean of squared neighbour differences, summed over axes."""
    hs, ws, d, _ = grid.shape
    total = 0.0
    for axis, n in enumerate((hs, ws, d)):
        acc, count = 0.0, 0
        for i in range(hs):
            for j in range(ws):
                for k in range(d):
                    idx = [i, j, k]
                    if idx[axis] + 1 >= n:
                        continue
                    nxt = list(idx)
                    nxt[axis] += 1
                    diff = grid[tuple(nxt)] - grid[tuple(idx)]
                    acc += float(np.sum(diff * diff))
                    count += 1
        if count:
            total += acc / count
    return total


def naive_attention(q_in, kv_in, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Multi-head attention with explicit per-head, per-query loops."""
    m, c = q_in.shape
    dh = c // heads
    q = q_in @ wq.T + bq
    k = kv_in @ wk.T + bk
    v = kv_in @ wv.T + bv
    concat = np.zeros((m, c))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(m):
            scores = np.array([np.dot(q[i, sl], k[j, sl]) / math.sqrt(dh) for j in range(k.shape[0])])
            scores = np.exp(scores - scores.max())
            probs = scores / scores.sum()
            concat[i, sl] = sum(probs[j] * v[j, sl] for j in range(k.shape[0]))
    return concat @ wo.T + bo


def scalar_srgb_decode(v: float) -> float:
    v = max(v, 0.0)
    return v / 12.92 if v <= 0.04045 else ((v + 0.055) / 1.055) ** 2.4


def scalar_srgb_encode(v: float) -> float:
    v = max(v, 0.0)
    return v * 12.92 if v <= 0.0031308 else 1.055 * v ** (1 / 2.4) - 0.055


def scalar_isp_pixel(rgb, p, field_value: float):
    """Straight-line per-pixel version of the ISP corruption pipeline."""
    lin = [scalar_srgb_decode(c) for c in rgb]
    gain = 2.0 ** p.exposure_ev
    lin = [lin[0] * p.wb_gain_r * gain, lin[1] * gain, lin[2] * p.wb_gain_b * gain]
    ccm = np.asarray(p.ccm)
    lin = [sum(ccm[r, c] * lin[c] for c in range(3)) for r in range(3)]
    y = 0.2126 * lin[0] + 0.7152 * lin[1] + 0.0722 * lin[2]
    y = min(max(y, 0.0), 1.0)
    g = 1.0 + p.tone_field_strength * field_value * (p.shadow_lift * (1 - y) - p.highlight_compress * y)
    lin = [c * g for c in lin]
    out = [scalar_srgb_encode(c) ** p.gamma for c in lin]
    return [min(max(c, 0.0), 1.0) for c in out]


def scalar_adam(grads, lr, betas=(0.9, 0.999), eps=1e-8, x0=0.0):
    """Plain Adam on one scalar, given the gradient sequence; returns the trajectory."""
    m = v = 0.0
    x = x0
    traj = []
    for t, g in enumerate(grads, start=1):
        m = betas[0] * m + (1 - betas[0]) * g
        v = betas[1] * v + (1 - betas[1]) * g * g
        mhat = m / (1 - betas[0] ** t)
        vhat = v / (1 - betas[1] ** t)
        x = x - lr * mhat / (math.sqrt(vhat) + eps)
        traj.append(x)
    return traj


def two_pass_stats(values) -> tuple[float, float]:
    vals = list(np.asarray(values, dtype=np.float64).ravel())
    mu = sum(vals) / len(vals)
    return mu, sum((x - mu) ** 2 for x in vals) / len(vals)


def pinv_color_fit(render, gt) -> np.ndarray:
    x = np.hstack([render.reshape(-1, 3), np.ones((render.size // 3, 1))])
    return (np.linalg.pinv(x) @ gt.reshape(-1, 3)).T


def direct_psnr(a, b) -> float:
    a = np.clip(a, 0, 1)
    b = np.clip(b, 0, 1)
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (x - y) ** 2
    return 10 * math.log10(1.0 / (total / a.size))

"""Differentiable 3D bilateral grids of affine colour transforms.

A grid has shape ``(h_s, w_s, d, P)`` over (image row, image column,
luminance).  Affine grids use ``P = 12``: the row-major flattening of a
``3 x 4`` matrix ``[A | b]``.  Confidence grids use ``P = 1`` and hold
log-confidence.  Every function accepts an optional leading batch
dimension on both the grid and the image.

Slicing interpolates with nested linear blends (``a + t * (b - a)``) rather
than an explicit weighted sum, so a constant grid is reproduced exactly and
an identity grid returns its input bit for bit.
"""

from __future__ import annotations

import numpy as np
import torch

from ._validation import check_grid_dims

LUMA_709 = (0.2126, 0.7152, 0.0722)
AFFINE_PARAMS = 12

# Set to True to assert interpolation-weight invariants on every slice call.
DEBUG_WEIGHTS = False


def _as_tensor(x, dtype=None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    t = torch.as_tensor(np.array(x))
    if dtype is not None:
        t = t.to(dtype)
    elif not t.is_floating_point():
        t = t.to(torch.float64)
    return t


def identity_grid(h_s: int, w_s: int, d: int, dtype=torch.float64) -> torch.Tensor:
    h_s, w_s, d = check_grid_dims(h_s, w_s, d)
    eye = torch.zeros(3, 4, dtype=dtype)
    eye[:, :3] = torch.eye(3, dtype=dtype)
    return eye.reshape(1, 1, 1, AFFINE_PARAMS).expand(h_s, w_s, d, AFFINE_PARAMS).clone()


def luminance(image) -> torch.Tensor:
    """Rec. 709 luma of the (non-linear) RGB values, shape ``(..., H, W)``."""
    im = _as_tensor(image)
    r, g, b = im.unbind(-1)
    return LUMA_709[0] * r + LUMA_709[1] * g + LUMA_709[2] * b


def grid_coordinates(h: int, w: int, h_s: int, w_s: int, d: int, image: torch.Tensor):
    """Continuous grid coordinates ``(y, x, z)`` for every pixel.

    ``y`` and ``x`` use half-pixel centres clamped to the vertex range; ``z``
    is the luminance scaled to ``[0, d - 1]``.
    """
    dtype = image.dtype
    v = torch.arange(h, dtype=dtype)
    u = torch.arange(w, dtype=dtype)
    y = ((v + 0.5) / h * h_s - 0.5).clamp(0, h_s - 1)
    x = ((u + 0.5) / w * w_s - 0.5).clamp(0, w_s - 1)
    z = (luminance(image) * (d - 1)).clamp(0, d - 1)
    return y, x, z


def _split(coord: torch.Tensor, size: int):
    lo = coord.floor().clamp(0, size - 1).long()
    hi = (lo + 1).clamp(max=size - 1)
    return lo, hi, coord - lo.to(coord.dtype)


def interpolation_weights(grid_shape, image) -> tuple[torch.Tensor, torch.Tensor]:
    """Explicit trilinear weights and flat vertex indices, each ``(..., H*W, 8)``.

    Used by debug assertions and tests; :func:`slice_grid` itself blends
    corner values directly.
    """
    im = _as_tensor(image)
    h_s, w_s, d = grid_shape[-4:-1]
    h, w = im.shape[-3:-1]
    y, x, z = grid_coordinates(h, w, h_s, w_s, d, im)
    y0, y1, fy = _split(y, h_s)
    x0, x1, fx = _split(x, w_s)
    z0, z1, fz = _split(z, d)
    lead = z.shape[:-2]
    fy = fy.view(h, 1).expand(*lead, h, w)
    fx = fx.view(1, w).expand(*lead, h, w)
    ws, idx = [], []
    for ya, wy in ((y0, 1 - fy), (y1, fy)):
        for xa, wx in ((x0, 1 - fx), (x1, fx)):
            for za, wz in ((z0, 1 - fz), (z1, fz)):
                ws.append((wy * wx * wz).reshape(*lead, h * w))
                flat = (ya.view(h, 1) * w_s + xa.view(1, w)) * d + za
                idx.append(flat.reshape(*lead, h * w))
    return torch.stack(ws, -1), torch.stack(idx, -1)


def slice_grid(grid, image) -> torch.Tensor:
    """Trilinearly interpolate grid channels at every pixel, ``(..., H, W, P)``.

    ``grid`` is ``(..., h_s, w_s, d, P)`` and ``image`` (the guidance source)
    is ``(..., H, W, 3)`` with matching leading dimensions.
    """
    g = _as_tensor(grid)
    im = _as_tensor(image, g.dtype)
    if g.ndim < 4:
        raise ValueError(f"grid must have at least 4 dims, got shape {tuple(g.shape)}")
    if not torch.isfinite(g).all():
        raise ValueError("grid contains non-finite values")
    h_s, w_s, d, p = g.shape[-4:]
    if d < 2:
        raise ValueError("guidance dimension d must be >= 2")
    h, w = im.shape[-3:-1]
    lead = g.shape[:-4]
    if im.shape[:-3] != lead:
        raise ValueError(f"grid batch {tuple(lead)} does not match image batch {tuple(im.shape[:-3])}")

    y, x, z = grid_coordinates(h, w, h_s, w_s, d, im)
    y0, y1, fy = _split(y, h_s)
    x0, x1, fx = _split(x, w_s)
    z0, z1, fz = _split(z, d)

    if DEBUG_WEIGHTS:
        wts, _ = interpolation_weights(g.shape, im)
        assert bool((wts >= 0).all()), "negative interpolation weight"
        assert torch.allclose(wts.sum(-1), torch.ones((), dtype=wts.dtype)), "weights do not sum to 1"

    flat = g.reshape(*lead, h_s * w_s * d, p)

    def corner(ya, xa, za):
        index = ((ya.view(h, 1) * w_s + xa.view(1, w)) * d + za).reshape(*lead, h * w, 1)
        return torch.gather(flat, -2, index.expand(*lead, h * w, p)).reshape(*lead, h, w, p)

    fz = fz.unsqueeze(-1)
    fy = fy.view(h, 1, 1)
    fx = fx.view(1, w, 1)

    def lerp(a, b, t):
        return a + t * (b - a)

    def along_z(ya, xa):
        return lerp(corner(ya, xa, z0), corner(ya, xa, z1), fz)

    top = lerp(along_z(y0, x0), along_z(y0, x1), fx)
    bottom = lerp(along_z(y1, x0), along_z(y1, x1), fx)
    return lerp(top, bottom, fy)


def apply_affine(theta: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
    """Apply per-pixel ``[A | b]`` (``(..., 12)``) to RGB values."""
    m = theta.reshape(*theta.shape[:-1], 3, 4)
    r, g, b = image.unsqueeze(-2).unbind(-1)
    return m[..., 0] * r + m[..., 1] * g + m[..., 2] * b + m[..., 3]


def slice_affine(grid, image) -> torch.Tensor:
    """Slice an affine grid and apply it to ``image``; the result is not clamped."""
    g = _as_tensor(grid)
    if g.shape[-1] != AFFINE_PARAMS:
        raise ValueError(f"affine grid needs {AFFINE_PARAMS} channels, got {g.shape[-1]}")
    im = _as_tensor(image, g.dtype)
    return apply_affine(slice_grid(g, im), im)


def slice_confidence(cgrid, image) -> torch.Tensor:
    """Slice a log-confidence grid and exponentiate, giving an ``(..., H, W, 1)`` map."""
    g = _as_tensor(cgrid)
    if g.shape[-1] != 1:
        raise ValueError(f"confidence grid needs 1 channel, got {g.shape[-1]}")
    return torch.exp(slice_grid(g, image))


def tv_loss(grid) -> torch.Tensor:
    """Smoothness penalty over adjacent vertices.

    For each of the three grid axes, the squared L2 distance between
    neighbouring parameter vectors is averaged over all neighbour pairs; the
    three axis means are summed.  Axes of length one contribute nothing.
    Leading batch dimensions are averaged into each axis mean.
    """
    g = _as_tensor(grid)
    total = g.new_zeros(())
    for axis in (-4, -3, -2):
        n = g.shape[axis]
        if n < 2:
            continue
        diff = g.narrow(axis, 1, n - 1) - g.narrow(axis, 0, n - 1)
        total = total + (diff * diff).sum(-1).mean()
    return total

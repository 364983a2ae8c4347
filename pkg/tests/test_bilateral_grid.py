import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import mvharmonize.bilateral_grid as bg
from mvharmonize.bilateral_grid import (
    identity_grid,
    interpolation_weights,
    luminance,
    slice_affine,
    slice_confidence,
    slice_grid,
    tv_loss,
)

from .oracles import brute_force_affine_pixel, brute_force_confidence_pixel, naive_tv


def test_identity_layout():
    g = identity_grid(2, 2, 2)
    assert g.shape == (2, 2, 2, 12)
    assert g[0, 0, 0].tolist() == [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0]


@pytest.mark.parametrize("dims", [(0, 2, 2), (2, 0, 2), (2, 2, 1)])
def test_identity_invalid_dims(dims):
    with pytest.raises(ValueError):
        identity_grid(*dims)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_identity_slice_is_exact(rng, dtype):
    img = rng.uniform(size=(13, 7, 3)).astype(dtype)
    out = slice_affine(identity_grid(3, 2, 5, dtype=torch.from_numpy(img).dtype), img)
    assert np.array_equal(out.numpy(), img)


def test_identity_tv_is_zero():
    assert float(tv_loss(identity_grid(4, 3, 8))) == 0.0


@pytest.mark.parametrize("rgb, y", [((0, 0, 0), 0.0), ((1, 1, 1), 1.0), ((0, 1, 0), 0.7152)])
def test_luminance_values(rgb, y):
    assert float(luminance(np.array([[rgb]], dtype=float))[0, 0]) == pytest.approx(y, abs=1e-15)


def test_constant_grid_applies_same_transform(rng):
    theta = rng.normal(size=12)
    grid = np.broadcast_to(theta, (3, 4, 5, 12)).copy()
    img = rng.uniform(size=(9, 11, 3))
    out = slice_affine(grid, img).numpy()
    m = theta.reshape(3, 4)
    expected = img @ m[:, :3].T + m[:, 3]
    assert np.allclose(out, expected, atol=1e-12)


def test_slice_matches_brute_force(rng):
    for _ in range(20):
        grid = rng.normal(size=(2, 2, 2, 12))
        h, w = rng.integers(1, 9, size=2)
        img = rng.uniform(size=(h, w, 3))
        out = slice_affine(grid, img).numpy()
        v, u = rng.integers(h), rng.integers(w)
        assert np.allclose(out[v, u], brute_force_affine_pixel(grid, h, w, v, u, img[v, u]), atol=1e-6)


def test_confidence_slicing(rng):
    img = rng.uniform(size=(5, 6, 3))
    assert np.all(slice_confidence(np.zeros((2, 3, 4, 1)), img).numpy() == 1.0)
    const = slice_confidence(np.full((2, 3, 4, 1), -0.7), img).numpy()
    assert np.allclose(const, np.exp(-0.7), rtol=1e-15)
    cgrid = rng.normal(size=(2, 2, 2, 1))
    out = slice_confidence(cgrid, img).numpy()
    for v in range(5):
        for u in range(6):
            assert out[v, u, 0] == pytest.approx(brute_force_confidence_pixel(cgrid, 5, 6, v, u, img[v, u]), abs=1e-6)
    assert out.shape == (5, 6, 1) and np.all(out > 0)


def test_slicing_rejects_bad_grids(rng):
    img = rng.uniform(size=(4, 4, 3))
    bad = np.zeros((2, 2, 2, 12))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        slice_affine(bad, img)
    with pytest.raises(ValueError):
        slice_affine(np.zeros((2, 2, 1, 12)), img)
    with pytest.raises(ValueError):
        slice_confidence(np.zeros((2, 2, 2, 12)), img)


def test_batched_slicing_matches_per_frame(rng):
    grids = rng.normal(size=(3, 2, 3, 4, 12))
    imgs = rng.uniform(size=(3, 10, 12, 3))
    batched = slice_affine(grids, imgs).numpy()
    for i in range(3):
        assert np.allclose(batched[i], slice_affine(grids[i], imgs[i]).numpy(), atol=1e-14)


def test_debug_weight_invariants(rng, monkeypatch):
    monkeypatch.setattr(bg, "DEBUG_WEIGHTS", True)
    img = rng.uniform(size=(7, 5, 3))
    slice_affine(rng.normal(size=(3, 3, 4, 12)), img)
    w, idx = interpolation_weights((3, 3, 4, 12), torch.as_tensor(img))
    assert torch.all(w >= 0)
    assert torch.allclose(w.sum(-1), torch.ones(35, dtype=w.dtype))
    assert int(idx.max()) < 3 * 3 * 4


def test_theta_linear_in_params(rng):
    img = rng.uniform(size=(6, 7, 3))
    g1, g2 = rng.normal(size=(2, 3, 3, 4, 12))
    lhs = slice_grid(g1 + g2, img)
    rhs = slice_grid(g1, img) + slice_grid(g2, img)
    assert torch.allclose(lhs, rhs, atol=1e-6)


def test_theta_affine_along_scanline():
    h, w, ws = 4, 64, 4
    img = np.full((h, w, 3), 0.4)
    ramp = np.arange(ws, dtype=float)[None, :, None, None] * np.linspace(0.1, 1.2, 12)
    grid = np.broadcast_to(ramp, (2, ws, 3, 12)).copy()
    theta = slice_grid(grid, img).numpy()[1]
    u = np.arange(w)
    interior = ((u + 0.5) / w * ws - 0.5 >= 0) & ((u + 0.5) / w * ws - 0.5 <= ws - 1)
    for c in range(12):
        coeffs = np.polyfit(u[interior], theta[interior, c], 1)
        resid = theta[interior, c] - np.polyval(coeffs, u[interior])
        assert np.max(np.abs(resid)) < 1e-6


def test_slice_gradient_matches_finite_differences(rng):
    grid = torch.tensor(rng.normal(size=(2, 2, 2, 12)), requires_grad=True)
    img = torch.tensor(rng.uniform(size=(4, 4, 3)))
    weights = torch.tensor(rng.normal(size=(4, 4, 3)))

    def loss_of(g):
        out = slice_affine(g, img)
        return (weights * out).sum() + (out**2).sum()

    (analytic,) = torch.autograd.grad(loss_of(grid), [grid])
    base = grid.detach().clone()
    eps = 1e-4
    worst = 0.0
    for idx in np.ndindex(*base.shape):
        up, dn = base.clone(), base.clone()
        up[idx] += eps
        dn[idx] -= eps
        fd = (float(loss_of(up)) - float(loss_of(dn))) / (2 * eps)
        a = float(analytic[idx])
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    assert worst < 1e-4


def test_tv_examples(rng):
    assert float(tv_loss(np.full((3, 3, 4, 12), 2.5))) == 0.0
    g = np.array([0.0, 2.0]).reshape(1, 1, 2, 1)
    assert float(tv_loss(g)) == 4.0
    g2 = np.broadcast_to(g, (2, 1, 2, 1)).copy()
    assert float(tv_loss(g2)) == 4.0
    for shape in [(3, 4, 5, 12), (1, 3, 2, 1), (2, 2, 2, 1)]:
        grid = rng.normal(size=shape)
        assert float(tv_loss(grid)) == pytest.approx(naive_tv(grid), abs=1e-9)


def test_tv_gradient(rng):
    grid = torch.tensor(rng.normal(size=(2, 3, 2, 3)), requires_grad=True)
    (g,) = torch.autograd.grad(tv_loss(grid), [grid])
    eps = 1e-5
    base = grid.detach()
    for idx in [(0, 0, 0, 0), (1, 2, 1, 2), (0, 1, 1, 1)]:
        up, dn = base.clone(), base.clone()
        up[idx] += eps
        dn[idx] -= eps
        fd = (float(tv_loss(up)) - float(tv_loss(dn))) / (2 * eps)
        assert float(g[idx]) == pytest.approx(fd, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_tv_nonnegative_and_zero_iff_constant(hs, ws, d, seed):
    r = np.random.default_rng(seed)
    grid = r.normal(size=(hs, ws, d, 2))
    assert float(tv_loss(grid)) >= 0
    assert float(tv_loss(np.broadcast_to(grid[:1, :1, :1], grid.shape))) == 0.0

import math

import numpy as np
import pytest
import torch

from mvharmonize.isp_sim import synth_scene
from mvharmonize.uncertainty import (
    confidence_stats,
    normalize_confidences,
    reconstruction_weights,
    soft_threshold,
    toy_reconstruct,
    weighted_recon_loss,
    weighted_stage_steps,
)

from .oracles import two_pass_stats


def blob_case(seed: int, n_frames: int = 2, size: int = 32):
    """Clean image, frames corrupted by one bright blob each, and confidences low inside the blobs."""
    rng = np.random.default_rng(seed)
    clean = synth_scene(seed, 1, size, size)[0]
    yy, xx = np.mgrid[:size, :size]
    frames, confs = [], []
    for _ in range(n_frames):
        cy, cx = rng.uniform(6, size - 6, size=2)
        blob = (yy - cy) ** 2 + (xx - cx) ** 2 <= rng.uniform(4, 7) ** 2
        f = clean.copy()
        f[blob] = np.clip(f[blob] + rng.uniform(0.3, 0.6, size=3), 0, 1)
        frames.append(f)
        confs.append(np.where(blob, rng.uniform(0.05, 0.2), rng.uniform(1.5, 2.0, size=(size, size)))[..., None])
    return clean, frames, confs


def stage_one_mae(seed: int, weighted: bool, iters: int = 200, frac: float = 0.25) -> float:
    clean, frames, confs = blob_case(seed)
    if not weighted:
        confs = [np.ones_like(c) for c in confs]
    stop = weighted_stage_steps(iters, frac) - 1
    seen = {}

    def grab(k, latent):
        if k == stop:
            seen["mae"] = float(np.abs(latent - clean).mean())

    toy_reconstruct(frames, confs, iters=iters, weighted_fraction=frac, callback=grab)
    return seen["mae"]


def test_normalize_constant_single_map():
    out = normalize_confidences([np.full((3, 3), 2.5)])
    assert np.array_equal(out[0], np.ones((3, 3)))


def test_normalize_joint_range():
    a = np.array([[2.0, 4.0]])
    b = np.array([[6.0, 3.0]])
    na, nb = normalize_confidences([a, b])
    assert na[0, 1] == 0.5 and na[0, 0] == 0.0 and nb[0, 0] == 1.0


def test_normalize_spans_unit_interval(rng):
    maps = normalize_confidences([rng.uniform(0.1, 5, size=(4, 4)) for _ in range(3)])
    assert min(m.min() for m in maps) == 0.0 and max(m.max() for m in maps) == 1.0


def test_normalize_empty():
    with pytest.raises(ValueError):
        normalize_confidences([])


def test_stats_examples(rng):
    assert confidence_stats(np.full((5, 5), 0.3)) == (pytest.approx(0.3), pytest.approx(0.0, abs=1e-30))
    assert confidence_stats(np.array([0.0, 1.0, 0.0, 1.0])) == (0.5, 0.25)
    m = rng.random((17, 13))
    mu, s2 = confidence_stats(m)
    omu, os2 = two_pass_stats(m)
    assert abs(mu - omu) < 1e-9 and abs(s2 - os2) < 1e-9


def test_soft_threshold_examples():
    c = np.full((3, 3), 0.4)
    assert np.array_equal(soft_threshold(c, *confidence_stats(c)), np.ones((3, 3)))
    out = soft_threshold(np.array([0.2, 0.8]), 0.5, 0.09)
    assert out.tolist() == [0.2, 1.0]


def test_soft_threshold_monotone(rng):
    c = rng.random(50)
    mu, s2 = confidence_stats(c)
    w = soft_threshold(c, mu, s2)
    order = np.argsort(c)
    assert np.all(np.diff(w[order]) >= 0)
    raised = c.copy()
    raised[3] += 0.2
    assert soft_threshold(raised, mu, s2)[3] >= w[3]


def test_reconstruction_weights_range(rng):
    ws = reconstruction_weights([rng.uniform(0.2, 3, size=(8, 8)) for _ in range(3)])
    for w in ws:
        assert w.min() >= 0 and w.max() == 1.0


def test_weighted_loss_examples(rng):
    r, t = rng.random((6, 6, 3)), rng.random((6, 6, 3))
    plain = float(weighted_recon_loss(r, t, np.ones((6, 6))))
    assert plain == pytest.approx(np.abs(t - r).sum(-1).mean(), abs=1e-12)
    w = rng.random((6, 6))
    assert float(weighted_recon_loss(r, t, w)) == pytest.approx((w * np.abs(t - r).sum(-1)).mean(), abs=1e-9)


def test_weighted_loss_masks_corrupted_half(rng):
    clean = rng.random((8, 8, 3))
    bad = clean.copy()
    bad[:, 4:] = rng.random((8, 4, 3))
    w = np.ones((8, 8))
    w[:, 4:] = 0
    assert float(weighted_recon_loss(clean, bad, w)) == 0.0


def test_weighted_loss_detaches_weights(rng):
    r = torch.as_tensor(rng.random((4, 4, 3))).requires_grad_(True)
    w = torch.as_tensor(rng.random((4, 4))).requires_grad_(True)
    loss = weighted_recon_loss(r, rng.random((4, 4, 3)), w)
    loss.backward()
    assert w.grad is None and r.grad is not None


def test_weighted_loss_monotone_in_weights(rng):
    r, t = rng.random((5, 5, 3)), rng.random((5, 5, 3))
    w = rng.random((5, 5))
    w2 = w.copy()
    w2[2, 2] += 0.5
    assert float(weighted_recon_loss(r, t, w2)) >= float(weighted_recon_loss(r, t, w))


def test_weighted_loss_shape_mismatch(rng):
    with pytest.raises(ValueError):
        weighted_recon_loss(rng.random((4, 4, 3)), rng.random((4, 5, 3)), np.ones((4, 4)))


def test_stage_switch_boundary():
    assert weighted_stage_steps(400, 0.25) == 100
    assert weighted_stage_steps(10, 0.25) == 3
    assert weighted_stage_steps(7, 1.0) == 7
    with pytest.raises(ValueError):
        weighted_stage_steps(10, 0.0)


def test_stage_switch_is_exact(monkeypatch):
    import mvharmonize.uncertainty as unc

    calls = []
    real = unc.weighted_recon_loss

    def spy(render, target, weights):
        calls.append(bool(torch.all(torch.as_tensor(weights) == 1)))
        return real(render, target, weights)

    monkeypatch.setattr(unc, "weighted_recon_loss", spy)
    conf = np.ones((4, 4, 1))
    conf[:, 2:] = 0.1
    unc.toy_reconstruct([np.full((4, 4, 3), 0.5)], [conf], iters=10, weighted_fraction=0.25)
    # ceil(2.5) = 3 weighted iterations, then plain L1
    assert calls == [False] * 3 + [True] * 7


def test_single_frame_converges():
    clean = synth_scene(0, 1, 16, 16)[0]
    latent = toy_reconstruct([clean], [np.ones((16, 16, 1))], iters=50)
    assert np.abs(latent - clean).mean() < 1e-3


def test_identical_frames_start_at_optimum():
    clean = synth_scene(1, 1, 16, 16)[0]
    first = {}
    toy_reconstruct([clean, clean, clean], [np.ones((16, 16, 1))] * 3, iters=3,
                    callback=lambda k, lat: first.setdefault(k, lat.copy()))
    assert np.abs(first[0] - clean).max() < 1e-12


def test_toy_reconstruct_errors():
    with pytest.raises(ValueError):
        toy_reconstruct([], [])
    with pytest.raises(ValueError):
        toy_reconstruct([np.zeros((4, 4, 3))], [])


def test_confidence_weighting_beats_unweighted():
    weighted = np.mean([stage_one_mae(s, True) for s in range(5)])
    plain = np.mean([stage_one_mae(s, False) for s in range(5)])
    assert weighted < plain
    assert math.isfinite(weighted)

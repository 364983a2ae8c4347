import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mvharmonize import BilateralGridFitter, GridHarmonizer, generate_training_pair, synth_scene
from mvharmonize.harmonizer import harmonized_psnr_gain
from mvharmonize.transformer import GridTransformer, ModelConfig

TINY = dict(image_size=(16, 16), patch_size=(8, 8), embed_dim=16, heads=2, enc_blocks=1, dec_blocks=1,
            guidance_bins=4, mlp_ratio=2)


def test_fitter_params_and_clone():
    est = BilateralGridFitter(steps=10, grid_dims=(2, 2, 2))
    params = est.get_params()
    assert params == {"steps": 10, "lr": 1e-2, "lambda_tv": 1e-3, "grid_dims": (2, 2, 2), "schedule": "cosine"}
    twin = clone(est).set_params(lr=0.5)
    assert twin.lr == 0.5 and est.lr == 1e-2


def test_fitter_not_fitted(rng):
    with pytest.raises(NotFittedError):
        BilateralGridFitter().transform(rng.random((4, 4, 3)))


def test_harmonizer_params_roundtrip():
    est = GridHarmonizer(**TINY, iterations=3)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert not hasattr(twin, "model_")


def test_harmonizer_fit_transform():
    scenes = [synth_scene(k, 3, 16, 16) for k in range(2)]
    est = GridHarmonizer(**TINY, iterations=3, frames_per_batch=3).fit(scenes)
    assert len(est.history_) == 3
    seq = generate_training_pair(scenes[0], 0, 0.5).inputs
    out = est.transform(seq)
    assert len(out) == 2 and out[0].shape == (16, 16, 3)
    conf = est.predict_confidence(seq)
    assert conf[0].shape == (16, 16, 1) and bool(np.all(conf[0] > 0))


def test_harmonizer_checkpoint_roundtrip(tmp_path):
    model = GridTransformer(ModelConfig(**TINY), seed=2)
    est = GridHarmonizer.from_model(model)
    est.save(tmp_path / "m.bgtx")
    again = GridHarmonizer.from_checkpoint(tmp_path / "m.bgtx")
    assert again.embed_dim == 16 and again.guidance_bins == 4
    seq = synth_scene(1, 3, 16, 16)
    for a, b in zip(est.transform(seq), again.transform(seq)):
        assert np.array_equal(a, b)


def test_untrained_harmonizer_gains_nothing():
    est = GridHarmonizer.from_model(GridTransformer(ModelConfig(**TINY)))
    pairs = [generate_training_pair(synth_scene(3, 3, 16, 16), 1, 0.7)]
    res = harmonized_psnr_gain(est, pairs)
    assert res["mean_gain_db"] == pytest.approx(0.0, abs=1e-9)
    assert res["improved_fraction"] == 0.0


def test_harmonizer_requires_fit():
    with pytest.raises(NotFittedError):
        GridHarmonizer().transform([np.zeros((64, 64, 3))] * 2)

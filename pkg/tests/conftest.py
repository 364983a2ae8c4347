import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    from mvharmonize.transformer import ModelConfig

    return ModelConfig(image_size=(16, 16), patch_size=(8, 8), embed_dim=16, heads=2,
                       enc_blocks=1, dec_blocks=1, guidance_bins=4, mlp_ratio=2)


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])

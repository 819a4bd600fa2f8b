import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


def rand64(gen, *shape):
    return torch.rand(*shape, generator=gen, dtype=torch.float64)


@pytest.fixture(scope="session")
def toy_result():
    """One 500-step toy overfit run shared by the trainer and acceptance tests."""
    from absgn.trainer import toy_run

    losses = []
    model, history, ds = toy_run(step_callback=lambda step, loss: losses.append(loss))
    return model, history, ds, losses

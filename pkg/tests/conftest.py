import numpy as np
import pytest

from mmdgm.dataset import LabeledDataset, synth_toy
from mmdgm.mathcore import RngStream
from mmdgm.trainer import TrainConfig, init_model


def central_diff(f, x, h=1e-6, points=3):
    """Central finite differences of scalar ``f`` wrt every entry of ``x``.

    ``x`` is perturbed in place and restored. ``points=5`` uses the fourth-order
    stencil, which is what the tight (1e-5 relative) checks need.
    """
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]

        def at(d):
            x[i] = old + d
            return f()

        if points == 3:
            g[i] = (at(h) - at(-h)) / (2 * h)
        else:
            g[i] = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)
        x[i] = old
    return g


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


@pytest.fixture
def tiny_config():
    return TrainConfig(C=5.0, L=2, m=4, epochs=3, pretrain_epochs=1, latent_dim=3, hidden=(5,),
                       base_lr=1e-2, sigma2_eta=10.0, seed=3)


@pytest.fixture
def tiny_data():
    rng = RngStream(11, "data")
    images = rng.uniform((12, 8))
    labels = np.arange(12) % 3
    return LabeledDataset(images, labels, 3)


@pytest.fixture
def tiny_state(tiny_config):
    return init_model(tiny_config, 8, 3)


@pytest.fixture(scope="session")
def toy_small():
    rng = RngStream(0, "data")
    return synth_toy(rng.child(0), 20, 3, 8, noise=0.05, shift=0), synth_toy(rng.child(1), 10, 3, 8, noise=0.05, shift=0)


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

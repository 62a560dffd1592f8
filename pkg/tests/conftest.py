import json
from pathlib import Path

import numpy as np
import pytest

from probcert.network import Network, TiedPredictionError, predicted_class

DATA = Path(__file__).parent / "data"
SYNTHETIC_MODEL = DATA / "synthetic_50x20x20x5.json"
SYNTHETIC_POOL = DATA / "synthetic_pool.json"
SYNTHETIC_INPUTS = DATA / "inputs"

ACCEPTANCE_LINES: list[str] = []


def random_net(seed, n_in, hidden, n_out, act="relu", scale=1.0):
    rng = np.random.default_rng(seed)
    dims = [n_in, *hidden, n_out]
    ws, bs = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        ws.append(rng.normal(0.0, scale / np.sqrt(a), (b, a)))
        bs.append(rng.normal(0.0, 0.1, b))
    acts = [act] * len(hidden) + ["identity"]
    return Network.from_arrays(ws, bs, acts)


def random_anchor(net, seed):
    """An input with a strict prediction."""
    rng = np.random.default_rng(seed)
    while True:
        x0 = rng.uniform(-1.0, 1.0, net.input_dim)
        try:
            predicted_class(net, x0)
            return x0
        except TiedPredictionError:
            continue


def sample_box(rng, x0, eps, n):
    return x0 + rng.uniform(-eps, eps, (n, x0.size))


@pytest.fixture
def relu_identity_net():
    eye = np.eye(2)
    return Network.from_arrays([eye, eye], [np.zeros(2), np.zeros(2)], ["relu", "identity"])


@pytest.fixture
def toy_222():
    """2-2-2 ReLU net whose backward pass is worked out by hand in test_relaxation."""
    w1 = np.array([[1.0, 1.0], [1.0, -1.0]])
    return Network.from_arrays([w1, np.eye(2)], [np.zeros(2), np.zeros(2)], ["relu", "identity"])


@pytest.fixture(scope="session")
def synthetic_net():
    from probcert.network import load_network

    return load_network(SYNTHETIC_MODEL)


@pytest.fixture(scope="session")
def synthetic_pool():
    data = json.loads(SYNTHETIC_POOL.read_text())
    return np.array([d["x0"] for d in data]), np.array([d["label"] for d in data])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

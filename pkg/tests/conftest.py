from pathlib import Path

import numpy as np
import pytest

from contribaware.data import SyntheticSpec, gen_synthetic
from contribaware.nn import ClassifierArch, init_params

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"
MNIST_DIR = REPO / "data" / "mnist"

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def relu_margin(arch, params, x):
    """Smallest |pre-activation| over all hidden units; FD checks need it away from 0."""
    from contribaware.nn import _im2col

    margins = []
    a = x
    for (kind, shape, stride), w, b in list(zip(arch.layers(), params.weights, params.biases))[:-1]:
        if kind == "conv":
            z = _im2col(a, stride) @ w.reshape(-1, shape[3]) + b
        else:
            a = a.reshape(len(a), -1)
            z = a @ w + b
        margins.append(np.abs(z).min())
        a = np.maximum(z, 0)
    return min(margins)


def random_small_config(rng, kind):
    """A random float64 net with at most ~200 parameters plus a batch and labels."""
    c = int(rng.integers(2, 5))
    if kind == "mlp":
        arch = ClassifierArch("mlp", (3, 3, int(rng.integers(1, 3))), tuple(int(h) for h in rng.integers(2, 7, size=int(rng.integers(1, 3)))), c)
    else:
        dense = (int(rng.integers(2, 4)),) if rng.random() < 0.5 else ()
        arch = ClassifierArch(
            "small-conv", (5, 5, 1), ((int(rng.integers(1, 3)), int(rng.integers(1, 3))),), c, dense_sizes=dense
        )
    params = init_params(arch, int(rng.integers(2**31)), dtype=np.float64)
    for b in params.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    x = rng.random((3, *arch.input_shape))
    y = rng.integers(0, c, 3)
    return arch, params, x, y


def finite_difference_grads(arch, params, x, y, h=1e-3):
    from contribaware.nn import loss_and_grad

    out = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + h
            lp, _ = loss_and_grad(arch, params, x, y)
            arr[i] = old - h
            lm, _ = loss_and_grad(arch, params, x, y)
            arr[i] = old
            g[i] = (lp - lm) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max()))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs():
    """Small 4-class synthetic train/test pair."""
    spec = SyntheticSpec(num_classes=4, samples_per_class=60, image_side=10, noise=0.1)
    test_spec = SyntheticSpec(num_classes=4, samples_per_class=25, image_side=10, noise=0.1)
    return gen_synthetic(spec, 0), gen_synthetic(test_spec, 1)

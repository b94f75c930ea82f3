import numpy as np
import pytest

from acer_lab.policynet import Architecture, NetworkParams, init_params


def central_difference(fn, params: NetworkParams, names=None, step=1e-5):
    """Central finite differences of a scalar function over the flat parameter vector."""
    names = params.names() if names is None else names
    base = params.flat(names)
    grad = np.zeros_like(base)
    for i in range(base.size):
        hi = base.copy()
        lo = base.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (fn(params.with_flat(hi, names)) - fn(params.with_flat(lo, names))) / (2 * step)
    return grad


def max_rel_err(a, b, floor=1e-6):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def tiny_arch():
    return Architecture(input_dim=4, n_summary=3, n_inform=1, h1=3, h2=3)


@pytest.fixture
def tiny_master_arch():
    # 2 non-inform actions, 1 inform kind with 2 payload bits -> 2 + 4 = 6 master actions
    return Architecture(input_dim=4, n_summary=3, n_inform=1, payload_bits=2, h1=3, h2=3)


def random_tiny(arch, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    params = init_params(arch, rng)
    for k in params.blocks:
        params.blocks[k] = params.blocks[k] * scale + rng.normal(0, 0.3, params.blocks[k].shape)
    return params


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

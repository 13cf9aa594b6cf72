import numpy as np
import pytest

from src.tensor_core import Rng


def triple_loop(a, b):
    """Reference product summed in the same order as ``matmul``."""
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc = acc + a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def rel_err(approx, exact):
    return np.linalg.norm(approx - exact) / max(np.linalg.norm(exact), 1e-30)


@pytest.fixture
def rng():
    return Rng(1234)

import numpy as np
import pytest

from srlab.group import MetivierStructure, make_heisenberg

ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


@pytest.fixture(scope="session")
def heis():
    return make_heisenberg()


@pytest.fixture(scope="session")
def aniso():
    """Metivier but not H-type: n=2, m=1, singular values {1, 2}."""
    j = np.zeros((1, 4, 4))
    j[0, :2, :2] = ROT
    j[0, 2:, 2:] = 2.0 * ROT
    return MetivierStructure(n=2, m=1, maps=j)


@pytest.fixture(scope="session")
def degenerate():
    """Fails the Metivier condition: J annihilates the second block."""
    j = np.zeros((1, 4, 4))
    j[0, :2, :2] = ROT
    return MetivierStructure(n=2, m=1, maps=j)


def random_points(s, count, seed, box=2.0, min_norm=0.0):
    """Random off-identity coordinate arrays in a box, optionally bounded away."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-box, box, size=(count, s.horizontal_dim))
    t = rng.uniform(-box, box, size=(count, s.m))
    if min_norm > 0.0:
        from srlab.norms import norm_xt
        keep = norm_xt(x, t) >= min_norm
        x, t = x[keep], t[keep]
    return x, t

import numpy as np
import pytest

from csipose.skeleton import build_skeleton


def random_connected_graph(rng: np.random.Generator, n: int,
                           extra_edges: int = 2):
    """A random spanning tree plus a few extra edges; always connected."""
    order = rng.permutation(n)
    edges = set()
    for i in range(1, n):
        a = int(order[i])
        b = int(order[rng.integers(0, i)])
        edges.add((min(a, b), max(a, b)))
    for _ in range(extra_edges):
        a, b = rng.integers(0, n, size=2)
        if a != b:
            edges.add((min(int(a), int(b)), max(int(a), int(b))))
    return build_skeleton(n, tuple(sorted(edges)))


def random_pose(rng: np.random.Generator, scale: float = 300.0) -> np.ndarray:
    return rng.normal(size=(17, 3)) * scale


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    m = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(m)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

import numpy as np
import pytest

from cjengine.spatial import WardGraph


@pytest.fixture
def k2_graph():
    return WardGraph(("a", "b"), np.array([[0.0, 1.0], [1.0, 0.0]]))


@pytest.fixture
def disconnected_pair():
    return WardGraph(("a", "b"), np.zeros((2, 2)))


@pytest.fixture
def path3_graph():
    adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    return WardGraph(("a", "b", "c"), adj)


@pytest.fixture
def path4_graph():
    adj = np.zeros((4, 4))
    for i in range(3):
        adj[i, i + 1] = adj[i + 1, i] = 1.0
    return WardGraph(("a", "b", "c", "d"), adj)


def random_er_graph(rng, n, p=0.4):
    """Erdos-Renyi fixture used by covariance property tests."""
    adj = (rng.random((n, n)) < p).astype(float)
    adj = np.triu(adj, 1)
    adj = adj + adj.T
    ids = tuple(f"w{k}" for k in range(n))
    return WardGraph(ids, adj)

import numpy as np
import pytest

from mjsreduce.clustering import default_weights
from mjsreduce.model import MjsModel, Partition


def demoted_weights(model, t_factor=0.01):
    """Default weights with the transition share scaled down.

    Mirrors the published recipe for sweeps where the transition
    features should not steer the clustering.
    """
    wa, wb, wt = default_weights(model)
    wt *= t_factor
    total = wa + wb + wt
    return (wa / total, wb / total, wt / total)


# Three-state chain used across the metric tests: exactly lumpable for
# {{0}, {1, 2}} but with distinct rows inside the second cluster.
THREE_STATE_T = np.array(
    [
        [0.2, 0.4, 0.4],
        [0.7, 0.1, 0.2],
        [0.7, 0.0, 0.3],
    ]
)


def three_state_model():
    return MjsModel(np.zeros((3, 2, 2)), None, THREE_STATE_T)


# Symmetric (hence reversible with uniform stationary distribution),
# exactly lumpable for {{0,1},{2,3}}, eigenvalues 1, 0.4, 0.2, 0:
# informative spectrum with a clean gap after the second one.
REVERSIBLE_LUMPABLE_T = np.array(
    [
        [0.4, 0.3, 0.2, 0.1],
        [0.3, 0.4, 0.1, 0.2],
        [0.2, 0.1, 0.4, 0.3],
        [0.1, 0.2, 0.3, 0.4],
    ]
)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_partition(rng, s, r):
    """Random surjective labeling -> partition with exactly r clusters."""
    while True:
        labels = rng.integers(0, r, size=s)
        if len(np.unique(labels)) == r:
            return Partition.from_labels(labels)


def random_model(rng, s=4, n=2, p=1, a_scale=0.4):
    """Generic dense model with an ergodic chain; stable for a_scale < ~0.5."""
    A = np.stack([_scaled(rng, (n, n), a_scale) for _ in range(s)])
    B = rng.standard_normal((s, n, p)) if p else np.zeros((s, n, 0))
    T = rng.dirichlet(np.ones(s), size=s)
    return MjsModel(A, B, T)


def _scaled(rng, shape, target):
    M = rng.standard_normal(shape)
    return M * (target / np.linalg.norm(M, 2))

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def sup_gap(a, b):
    """Largest pointwise difference between two adapted processes, both fields."""
    tree = a.tree
    worst = 0.0
    for i in range(tree.depth + 1):
        worst = max(worst, float(np.max(np.abs(a.point[i] - b.point[i]))))
    for i in range(tree.depth):
        worst = max(worst, float(np.max(np.abs(a.right[i] - b.right[i]))))
    return worst

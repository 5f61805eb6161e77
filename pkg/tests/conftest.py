import numpy as np
import pytest
from hypothesis import settings

from hiertest.tree import tree_from_children

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def four_leaf_tree():
    """((1,2),(3,4)) with 0-based variables: leaves 0..3, {0,1} = 4, {2,3} = 5, root = 6."""
    children = {"a": (("leaf", 0), ("leaf", 1)), "b": (("leaf", 2), ("leaf", 3)), "r": ("a", "b")}
    heights = {"a": 0.2, "b": 0.3, "r": 0.9}
    return tree_from_children(children, heights, 4)


def random_binary_tree(rng, p):
    """Random binary hierarchy by merging random pairs of clusters."""
    clusters = [("leaf", j) for j in range(p)]
    children, heights = {}, {}
    h = 0.0
    k = 0
    while len(clusters) > 1:
        i, j = sorted(rng.choice(len(clusters), size=2, replace=False))
        b = clusters.pop(j)
        a = clusters.pop(i)
        key = f"n{k}"
        k += 1
        h += float(rng.uniform(0.01, 0.2))
        children[key], heights[key] = (a, b), h
        clusters.append(key)
    return tree_from_children(children, heights, p)


@pytest.fixture
def make_binary_tree():
    return random_binary_tree


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])

"""Bundled demo data: n = 40 observations, p = 10 variables, signal on variable 3."""

from importlib import resources

import numpy as np

DEMO_SEED = 20140526
DEMO_N, DEMO_P, DEMO_ACTIVE = 40, 10, 2  # 0-based column of variable 3


def make_demo(seed: int = DEMO_SEED):
    """Regenerate the demo data: three correlated pairs plus independent
    columns, and ``y = 2 x_3 + N(0, 0.5^2)``."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((DEMO_N, DEMO_P))
    for j in (0, 2, 4):
        X[:, j + 1] = 0.6 * X[:, j] + 0.8 * X[:, j + 1]
    y = 2.0 * X[:, DEMO_ACTIVE] + 0.5 * rng.standard_normal(DEMO_N)
    return X, y


def demo_paths():
    """Paths of the bundled ``demo_x.csv`` and ``demo_y.csv``."""
    base = resources.files("hiertest") / "data"
    return base / "demo_x.csv", base / "demo_y.csv"


def load_demo():
    from .io import parse_matrix_csv, parse_vector_csv

    x_path, y_path = demo_paths()
    return parse_matrix_csv(x_path), parse_vector_csv(y_path)

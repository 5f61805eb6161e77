"""
Hierarchical cluster testing with multi sample-splitting.

Per split ``b`` the rows are halved, the Lasso screens an active set on one
half, and every cluster ``C`` of the tree is tested on the other half by the
partial F-test that drops ``C`` intersected with the screened set. The
per-split p-values are inflated for multiplicity, aggregated across splits
by a gamma-quantile with the ``1 - log(gamma_min)`` price for searching over
gamma, and finally made monotone down the tree.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .linalg import NestedFTest
from .screening import CV_RULES, PATH_THRESH, screen
from .tree import ClusterTree

log = logging.getLogger(__name__)

MODES = ("top_down", "bottom_up")
CENTERING = ("global", "per_split")


@dataclass(frozen=True)
class EngineConfig:
    B: int = 50
    gamma_min: float = 0.05
    gamma_step: float = 0.025
    alpha: float = 0.05
    shaffer: bool = True
    mode: str = "top_down"
    seed: int = 0
    center: str = "global"
    cv_folds: int = 10
    cv_rule: str = "min"
    path_thresh: float = PATH_THRESH
    n_jobs: int = 1

    def __post_init__(self):
        if not (isinstance(self.B, (int, np.integer)) and self.B >= 1):
            raise ValueError(f"B must be a positive integer, got {self.B!r}")
        if not 0 < self.gamma_min < 1:
            raise ValueError(f"gamma_min must lie in (0, 1), got {self.gamma_min}")
        if not 0 < self.gamma_step <= 1 - self.gamma_min:
            raise ValueError(f"gamma_step must lie in (0, 1 - gamma_min], got {self.gamma_step}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.center not in CENTERING:
            raise ValueError(f"center must be one of {CENTERING}, got {self.center!r}")
        if not (isinstance(self.seed, (int, np.integer)) and self.seed >= 0):
            raise ValueError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.cv_rule not in CV_RULES:
            raise ValueError(f"cv_rule must be one of {CV_RULES}, got {self.cv_rule!r}")
        if not 0 < self.path_thresh < 1:
            raise ValueError(f"path_thresh must lie in (0, 1), got {self.path_thresh}")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be at least 1")

    @property
    def gamma_grid(self) -> np.ndarray:
        return gamma_grid(self.gamma_min, self.gamma_step)


def gamma_grid(gamma_min: float = 0.05, step: float = 0.025) -> np.ndarray:
    """Closed grid ``gamma_min, gamma_min + step, ..., 1``."""
    k = int(math.floor(round((1.0 - gamma_min) / step, 9)))
    grid = gamma_min + step * np.arange(k + 1)
    if grid[-1] < 1.0 - 1e-12:
        grid = np.append(grid, 1.0)
    grid[-1] = min(grid[-1], 1.0)
    return np.round(grid, 12)


@dataclass(frozen=True)
class SplitPlan:
    splits: Tuple[Tuple[np.ndarray, np.ndarray], ...]
    seed: int

    @property
    def B(self) -> int:
        return len(self.splits)


@dataclass(frozen=True)
class SplitPValues:
    split_index: int
    s_hat: np.ndarray
    raw: np.ndarray
    adjusted: np.ndarray


@dataclass(frozen=True)
class HierTestResult:
    tree: ClusterTree
    q_grid: np.ndarray  # (n_nodes, n_gamma)
    p_c: np.ndarray
    p_h: np.ndarray
    config: EngineConfig
    gamma: np.ndarray = field(repr=False)
    splits: Tuple[SplitPValues, ...] = field(repr=False)


def split_rng(seed: int, b: int, stream: int = 0) -> np.random.Generator:
    """Generator for split ``b``; independent of how many other splits exist."""
    return np.random.default_rng([int(seed), int(b), int(stream)])


def make_splits(n: int, B: int, seed: int) -> SplitPlan:
    """``B`` random partitions into halves of size ``n // 2`` and ``n - n // 2``."""
    if n < 4:
        raise ValueError(f"need at least 4 observations to split, got {n}")
    if B < 1:
        raise ValueError("B must be at least 1")
    splits = []
    for b in range(B):
        perm = split_rng(seed, b).permutation(n)
        splits.append((np.sort(perm[: n // 2]), np.sort(perm[n // 2:])))
    return SplitPlan(tuple(splits), int(seed))


def screening_cap(n: int) -> int:
    return n // 2 - 1


def _center(X, y):
    return X - X.mean(axis=0), y - y.mean()


def _validate(tree: ClusterTree, X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: X {X.shape}, y {y.shape}")
    if X.shape[1] != tree.p:
        raise ValueError(f"tree covers {tree.p} variables but X has {X.shape[1]} columns")
    if X.shape[1] < 2:
        raise ValueError("need at least 2 variables")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    return X, y


def screen_split(X, y, split, config: EngineConfig, split_index: int) -> np.ndarray:
    n_in, _ = split
    return screen(X[n_in], y[n_in], seed=[config.seed, split_index, 1],
                  cap=screening_cap(X.shape[0]), k=config.cv_folds,
                  rule=config.cv_rule, thresh=config.path_thresh)


def _raw_pvalues(tree: ClusterTree, X_out, y_out, s_hat, center: bool, split_index: int):
    """Per-cluster partial F p-values and the counts ``|C cap S_hat|``."""
    n_nodes = tree.n_nodes
    raw = np.ones(n_nodes)
    k = len(s_hat)
    if k == 0:
        return raw, np.zeros(n_nodes, dtype=np.intp)
    M = tree.membership[:, s_hat]
    counts = M.sum(axis=1)
    if k + (1 if center else 0) >= X_out.shape[0]:
        log.warning("split %d: screened set of size %d leaves no residual df; p = 1", split_index, k)
        return raw, counts
    hit = np.flatnonzero(counts)
    patterns, inverse = np.unique(M[hit], axis=0, return_inverse=True)
    try:
        test = NestedFTest(X_out, y_out, s_hat, center=center)
    except (ValueError, np.linalg.LinAlgError) as exc:
        log.warning("split %d: full model fit failed (%s); p = 1", split_index, exc)
        return raw, counts
    pvals = np.ones(len(patterns))
    for i, pat in enumerate(patterns):
        try:
            pvals[i] = test.pvalue(s_hat[pat])
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("split %d: submodel fit failed (%s); p = 1", split_index, exc)
    raw[hit] = pvals[np.ravel(inverse)]
    return raw, counts


def shaffer_sizes(tree: ClusterTree, counts: np.ndarray) -> np.ndarray:
    """Effective sizes for all nodes at once from per-node counts ``|C cap S_hat|``.

    ``ch(si(C))`` partitions ``si(C)``, so some child meets the screened set
    exactly when the sibling is internal and meets it.
    """
    if not tree.is_binary:
        raise ValueError("the Shaffer adjustment needs a binary tree; disable it for this tree")
    eff = counts.copy()
    sib = tree.sibling_array
    has = sib >= 0
    s = sib[has]
    sib_internal_hit = (~tree.leaf_mask[s]) & (counts[s] > 0)
    eff[has] = np.where(sib_internal_hit, counts[has], counts[has] + counts[s])
    return eff


def adjust_split(tree: ClusterTree, raw, counts, k: int, shaffer: bool) -> np.ndarray:
    adjusted = np.ones_like(raw)
    hit = counts > 0
    denom = shaffer_sizes(tree, counts) if shaffer else counts
    adjusted[hit] = np.minimum(raw[hit] * k / denom[hit], 1.0)
    return adjusted


def split_pvalues(tree: ClusterTree, X, y, split, config: EngineConfig,
                  split_index: int = 0, s_hat: Optional[np.ndarray] = None) -> SplitPValues:
    """Screen on the in-half, test every cluster on the out-half, adjust.

    ``s_hat`` may be passed to reuse a screening already computed for the
    same split.
    """
    X, y = _validate(tree, X, y)
    if s_hat is None:
        s_hat = screen_split(X, y, split, config, split_index)
    s_hat = np.asarray(s_hat, dtype=np.intp)
    _, n_out = split
    raw, counts = _raw_pvalues(tree, X[n_out], y[n_out], s_hat,
                               config.center == "per_split", split_index)
    adjusted = adjust_split(tree, raw, counts, len(s_hat), config.shaffer)
    return SplitPValues(split_index, s_hat, raw, adjusted)


def aggregate_q(adjusted, gamma) -> np.ndarray:
    """``min(1, q_gamma(p / gamma))`` with q the ``ceil(gamma B)``-th smallest value.

    ``adjusted`` has shape (B,) or (B, m); ``gamma`` is a scalar or 1-d
    grid. The result drops the B axis and appends a gamma axis when
    ``gamma`` is an array.
    """
    P = np.sort(np.asarray(adjusted, dtype=np.float64), axis=0)
    B = P.shape[0]
    if B < 1:
        raise ValueError("need at least one split")
    g = np.asarray(gamma, dtype=np.float64)
    if np.any((g <= 0) | (g > 1)):
        raise ValueError("gamma must lie in (0, 1]")
    # rounding guards ceil against 0.3 * 10 = 3.0000000000000004
    k = np.ceil(np.round(g * B, 9)).astype(np.intp)
    order_stats = P[k - 1]
    if g.ndim == 0:
        return np.minimum(order_stats / g, 1.0)
    out = order_stats / g.reshape((-1,) + (1,) * (P.ndim - 1))
    return np.moveaxis(np.minimum(out, 1.0), 0, -1)


def gamma_eliminate(q_values, gamma_min: float) -> np.ndarray:
    """``min(1, (1 - log gamma_min) * min over the gamma grid)``; grid on the last axis."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.size == 0 or q.shape[-1] == 0:
        raise ValueError("empty gamma grid")
    return np.minimum((1.0 - math.log(gamma_min)) * q.min(axis=-1), 1.0)


def hierarchical_adjust(values, tree: ClusterTree) -> np.ndarray:
    """Replace each node's value by the maximum over itself and its ancestors."""
    v = np.array(values, dtype=np.float64)
    if v.shape[0] != tree.n_nodes:
        raise ValueError(f"expected {tree.n_nodes} values, got {v.shape[0]}")
    parent = tree.parent_array
    for c in tree.preorder[1:]:
        v[c] = max(v[c], v[parent[c]])
    return v


def descendant_min(values, tree: ClusterTree) -> np.ndarray:
    """Minimum over each node and all of its descendants."""
    v = np.array(values, dtype=np.float64)
    parent = tree.parent_array
    for c in tree.preorder[::-1][:-1]:
        p = parent[c]
        if v[c] < v[p]:
            v[p] = v[c]
    return v


def bottom_up_values(tree: ClusterTree, sp: SplitPValues) -> np.ndarray:
    """Per-split ``min(2 |S_hat| min_{D subset C} p^D, 1)``."""
    k = len(sp.s_hat)
    if k == 0:
        return np.ones(tree.n_nodes)
    return np.minimum(2.0 * k * descendant_min(sp.raw, tree), 1.0)


def _map(fn, items, n_jobs: int):
    if n_jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def _prepare_data(X, y, config: EngineConfig):
    if config.center == "global":
        return _center(X, y)
    return X, y


def screen_all(X, y, plan: SplitPlan, config: EngineConfig) -> List[np.ndarray]:
    """Screened sets for every split of ``plan``, in split order."""
    return _map(lambda b: screen_split(X, y, plan.splits[b], config, b),
                range(plan.B), config.n_jobs)


def _finish(tree, per_split, config, bottom_up: bool) -> HierTestResult:
    grid = config.gamma_grid
    if bottom_up:
        stacked = np.vstack([bottom_up_values(tree, sp) for sp in per_split])
    else:
        stacked = np.vstack([sp.adjusted for sp in per_split])
    q = aggregate_q(stacked, grid)
    p_c = gamma_eliminate(q, config.gamma_min)
    p_h = p_c.copy() if bottom_up else hierarchical_adjust(p_c, tree)
    return HierTestResult(tree, q, p_c, p_h, config, grid, tuple(per_split))


def run_trees(trees: Sequence[ClusterTree], X, y, configs: Sequence[EngineConfig],
              plan: Optional[SplitPlan] = None,
              screened: Optional[Sequence[np.ndarray]] = None) -> List[HierTestResult]:
    """Run several trees/configs on one set of splits and screenings.

    All configs must agree on the fields that determine the splits and the
    screening (``B``, ``seed``, ``center`` and the CV settings).
    """
    if not trees or len(trees) != len(configs):
        raise ValueError("need one config per tree")
    base = configs[0]
    for cfg in configs[1:]:
        key = ("B", "seed", "cv_folds", "cv_rule", "path_thresh", "center")
        if any(getattr(cfg, f) != getattr(base, f) for f in key):
            raise ValueError("configs disagree on split or screening settings")
    for tree in trees:
        X, y = _validate(tree, X, y)
    for tree, cfg in zip(trees, configs):
        if cfg.shaffer and not tree.is_binary:
            raise ValueError("the Shaffer adjustment needs a binary tree; disable it for this tree")
    X, y = _prepare_data(X, y, base)
    if plan is None:
        plan = make_splits(X.shape[0], base.B, base.seed)
    if screened is None:
        screened = screen_all(X, y, plan, base)
    out = []
    for tree, cfg in zip(trees, configs):
        def one(b, tree=tree, cfg=cfg):
            return split_pvalues(tree, X, y, plan.splits[b], cfg, b, screened[b])
        per_split = _map(one, range(plan.B), cfg.n_jobs)
        out.append(_finish(tree, per_split, cfg, cfg.mode == "bottom_up"))
    return out


def run(tree: ClusterTree, X, y, config: EngineConfig = EngineConfig()) -> HierTestResult:
    """Full pipeline for one tree; dispatches on ``config.mode``."""
    return run_trees([tree], X, y, [config])[0]


def bottom_up_run(tree: ClusterTree, X, y, config: EngineConfig = EngineConfig()) -> HierTestResult:
    return run(tree, X, y, replace(config, mode="bottom_up"))


@dataclass(frozen=True)
class Detections:
    rejected: np.ndarray
    minimal: np.ndarray
    minimal_true: Optional[np.ndarray] = None  # aligned with ``minimal`` when a truth set is given


def significant_clusters(result: HierTestResult, alpha: Optional[float] = None,
                         s0: Optional[Sequence[int]] = None) -> Detections:
    """Rejected clusters and the minimal ones among them (no rejected descendant)."""
    tree = result.tree
    alpha = result.config.alpha if alpha is None else alpha
    rej = result.p_h <= alpha
    parent = tree.parent_array
    # children before parents, so `below` marks any rejected strict descendant
    below = np.zeros(tree.n_nodes, dtype=bool)
    for c in tree.preorder[::-1][:-1]:
        if (rej[c] or below[c]) and parent[c] >= 0:
            below[parent[c]] = True
    rejected = np.flatnonzero(rej)
    minimal = np.flatnonzero(rej & ~below)
    labels = None
    if s0 is not None:
        truth = np.zeros(tree.p, dtype=bool)
        truth[np.asarray(list(s0), dtype=np.intp)] = True
        labels = tree.membership[minimal][:, truth].any(axis=1)
    return Detections(rejected, minimal, labels)

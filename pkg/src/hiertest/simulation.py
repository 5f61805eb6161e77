"""
Monte Carlo harness: synthetic and semi-real designs, SNR calibration and
power / error metrics for the hierarchical procedure and the single-variable
baseline.

The design matrix is drawn once per scenario and kept fixed; every run
draws fresh noise, and fresh coefficients too when ``vary_beta`` is set.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .engine import EngineConfig, HierTestResult, make_splits, run_trees, screen_all, significant_clusters
from .tree import ClusterTree, build_correlation_tree, single_variable_tree

log = logging.getLogger(__name__)

DESIGNS = ("equi_corr", "small_blocks", "large_blocks", "semi_real_normal", "semi_real_blocks")
DEFAULT_RHO = {"equi_corr": 0.3, "small_blocks": 0.9, "large_blocks": 0.9}
RHO_GRID = (0.0, 0.4, 0.7, 0.8, 0.85, 0.9, 0.95, 0.99)
BUCKETS = ("1", "2", "3-10", "11-20", ">20")
N_LARGE_BLOCKS = 10
SEMI_REAL_BLOCK = 10


@dataclass(frozen=True)
class ScenarioSpec:
    design: str
    n: int
    p: int
    s0: int = 10
    snr: float = 8.0
    n_runs: int = 100
    rho: Optional[float] = None
    engine: EngineConfig = field(default_factory=EngineConfig)
    vary_beta: bool = False
    seed: int = 0
    external_matrix: Optional[str] = None
    baseline: bool = True

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"design: must be one of {DESIGNS}, got {self.design!r}")
        if self.n < 4:
            raise ValueError(f"n: need at least 4 observations, got {self.n}")
        if self.p < 2:
            raise ValueError(f"p: need at least 2 variables, got {self.p}")
        if not 0 <= self.s0 <= self.p:
            raise ValueError(f"s0: must satisfy 0 <= s0 <= p, got s0={self.s0}, p={self.p}")
        if not self.snr > 0:
            raise ValueError(f"snr: must be positive, got {self.snr}")
        if self.n_runs < 1:
            raise ValueError(f"n_runs: must be at least 1, got {self.n_runs}")
        if self.seed < 0:
            raise ValueError(f"seed: must be non-negative, got {self.seed}")
        semi = self.design.startswith("semi_real")
        if semi and self.external_matrix is None:
            raise ValueError(f"external_matrix: required for design {self.design}")
        if semi and self.rho is not None:
            raise ValueError(f"rho: not used by design {self.design}")
        if self.rho is not None and not 0 <= self.rho < 1:
            raise ValueError(f"rho: must lie in [0, 1), got {self.rho}")
        if self.design == "small_blocks" and 2 * self.s0 > self.p:
            raise ValueError(f"s0: small_blocks needs 2*s0 <= p, got s0={self.s0}, p={self.p}")
        if self.design in ("large_blocks", "semi_real_blocks") and self.p % 10:
            raise ValueError(f"p: {self.design} needs p divisible by 10, got {self.p}")
        if self.design == "large_blocks" and self.s0 > N_LARGE_BLOCKS:
            raise ValueError(f"s0: large_blocks places at most one active per block (10), got {self.s0}")
        if self.design == "semi_real_blocks" and self.s0 > self.p // SEMI_REAL_BLOCK:
            raise ValueError(f"s0: semi_real_blocks allows at most p/10 actives, got {self.s0}")

    @property
    def correlation(self) -> Optional[float]:
        return DEFAULT_RHO.get(self.design) if self.rho is None else self.rho


@dataclass(frozen=True)
class GroundTruth:
    beta0: np.ndarray
    s0_set: np.ndarray
    sigma: float


@dataclass(frozen=True)
class RunMetrics:
    run: int
    perf1: float
    perf2: float
    n_mtd: int
    mtd_buckets: Tuple[int, ...]
    n_false: int
    fwer: bool
    tpr: float
    fpr: float
    screening_failures: int
    monotonicity_violations: int
    error: Optional[str] = None


@dataclass(frozen=True)
class MetricsReport:
    fwer_count: int
    n_runs: int
    perf1_mean: float
    perf2_mean: float
    mtd_total_mean: float
    mtd_by_cardinality: Dict[str, float]
    tpr: float
    fpr: float
    screening_failure_rate: float
    monotonicity_violations: int
    n_failed: int
    per_run: Tuple[RunMetrics, ...] = ()
    baseline: Optional["MetricsReport"] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["per_run"] = [asdict(r) for r in self.per_run]
        if self.baseline is not None:
            out["baseline"] = self.baseline.to_dict()
        return out


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, stream)])


def standardize_columns(X) -> np.ndarray:
    """Column means 0 and (population) variances 1."""
    X = np.asarray(X, dtype=np.float64)
    Z = X - X.mean(axis=0)
    sd = np.sqrt((Z * Z).mean(axis=0))
    if np.any(sd == 0):
        raise ValueError(f"constant column(s): {np.flatnonzero(sd == 0).tolist()}")
    return Z / sd


def _equicorrelated(rng, n: int, p: int, rho: float) -> np.ndarray:
    # exact one-factor representation of the equicorrelation matrix
    return math.sqrt(rho) * rng.standard_normal((n, 1)) + math.sqrt(1.0 - rho) * rng.standard_normal((n, p))


def _small_blocks(rng, n: int, p: int, n_pairs: int, rho: float) -> np.ndarray:
    X = rng.standard_normal((n, p))
    for j in range(0, 2 * n_pairs, 2):
        X[:, j + 1] = rho * X[:, j] + math.sqrt(1.0 - rho * rho) * X[:, j + 1]
    return X


def _large_blocks(rng, n: int, p: int, rho: float) -> np.ndarray:
    size = p // N_LARGE_BLOCKS
    return np.hstack([_equicorrelated(rng, n, size, rho) for _ in range(N_LARGE_BLOCKS)])


def correlated_block_columns(M, p: int, rng, block: int = SEMI_REAL_BLOCK) -> np.ndarray:
    """Greedy blocks: a random leader plus the ``block - 1`` remaining columns
    most correlated with it in absolute value, repeated until ``p`` columns."""
    M = np.asarray(M, dtype=np.float64)
    if p > M.shape[1]:
        raise ValueError(f"matrix has {M.shape[1]} columns, need {p}")
    Z = standardize_columns(M)
    remaining = np.ones(M.shape[1], dtype=bool)
    chosen: List[int] = []
    while len(chosen) < p:
        leader = int(rng.choice(np.flatnonzero(remaining)))
        remaining[leader] = False
        cor = np.abs(Z.T @ Z[:, leader]) / Z.shape[0]
        cor[~remaining] = -np.inf
        take = min(block - 1, p - len(chosen) - 1, int(remaining.sum()))
        # stable sort so equal correlations go to the lower column index
        mates = np.argsort(-cor, kind="stable")[:take]
        remaining[mates] = False
        chosen.extend([leader, *mates.tolist()])
    return np.asarray(chosen, dtype=np.intp)


def load_external_matrix(spec: ScenarioSpec) -> np.ndarray:
    from .io import parse_matrix_csv

    return parse_matrix_csv(spec.external_matrix)


def design_matrix(spec: ScenarioSpec, external: Optional[np.ndarray] = None) -> np.ndarray:
    """The scenario's fixed, standardized design matrix."""
    rng = _rng(spec.seed, 0)
    rho = spec.correlation
    if spec.design == "equi_corr":
        X = _equicorrelated(rng, spec.n, spec.p, rho)
    elif spec.design == "small_blocks":
        X = _small_blocks(rng, spec.n, spec.p, spec.s0 if spec.s0 else min(10, spec.p // 2), rho)
    elif spec.design == "large_blocks":
        X = _large_blocks(rng, spec.n, spec.p, rho)
    else:
        M = load_external_matrix(spec) if external is None else np.asarray(external, dtype=np.float64)
        if M.shape[0] != spec.n:
            raise ValueError(f"n: external matrix has {M.shape[0]} rows, spec says {spec.n}")
        if spec.design == "semi_real_normal":
            cols = np.sort(rng.choice(M.shape[1], size=spec.p, replace=False))
        else:
            cols = correlated_block_columns(M, spec.p, rng)
        X = M[:, cols]
    return standardize_columns(X)


def active_set(spec: ScenarioSpec, rng) -> np.ndarray:
    s0, p = spec.s0, spec.p
    if s0 == 0:
        return np.zeros(0, dtype=np.intp)
    if spec.design == "small_blocks":
        S = 2 * np.arange(s0) + rng.integers(0, 2, size=s0)
    elif spec.design == "large_blocks":
        size = p // N_LARGE_BLOCKS
        blocks = np.sort(rng.choice(N_LARGE_BLOCKS, size=s0, replace=False))
        S = blocks * size + rng.integers(0, size, size=s0)
    elif spec.design == "semi_real_blocks":
        S = SEMI_REAL_BLOCK * rng.choice(p // SEMI_REAL_BLOCK, size=s0, replace=False)
    else:
        S = rng.choice(p, size=s0, replace=False)
    return np.sort(S).astype(np.intp)


def calibrate_sigma(X, beta0, snr: float) -> float:
    """Noise level giving ``sqrt(b' X' X b / (n sigma^2)) = snr``."""
    X = np.asarray(X, dtype=np.float64)
    if not snr > 0:
        raise ValueError(f"snr must be positive, got {snr}")
    signal = X @ np.asarray(beta0, dtype=np.float64)
    energy = float(signal @ signal) / X.shape[0]
    if energy <= 0:
        raise ValueError("zero signal: sigma is undefined for beta0 = 0")
    return math.sqrt(energy) / snr


def ground_truth(spec: ScenarioSpec, X, rng) -> GroundTruth:
    S = active_set(spec, rng)
    beta = np.zeros(spec.p)
    beta[S] = rng.choice([-1.0, 1.0], size=len(S))
    # the global null has no signal to calibrate against; use unit noise
    sigma = calibrate_sigma(X, beta, spec.snr) if len(S) else 1.0
    return GroundTruth(beta, S, sigma)


def generate_design(spec: ScenarioSpec, seed: Optional[int] = None,
                    external: Optional[np.ndarray] = None) -> Tuple[np.ndarray, GroundTruth]:
    """Fixed design matrix and the scenario's first ground truth."""
    if seed is not None:
        spec = replace(spec, seed=seed)
    X = design_matrix(spec, external)
    return X, ground_truth(spec, X, _rng(spec.seed, 1))


def performance1(mtd_sizes: Sequence[int], s0: int) -> float:
    if s0 <= 0:
        return 0.0
    return float(sum(1.0 / c for c in mtd_sizes)) / s0


def performance2(mtd_sizes: Sequence[int], s0: int) -> float:
    if s0 <= 0:
        return 0.0
    return float(sum(0.5 * (1.0 / c + 1.0) for c in mtd_sizes if c <= 20)) / s0


def bucket_counts(sizes: Sequence[int]) -> Tuple[int, ...]:
    edges = [(1, 1), (2, 2), (3, 10), (11, 20), (21, math.inf)]
    return tuple(sum(lo <= c <= hi for c in sizes) for lo, hi in edges)


def tpr_fpr(n_true_mtd: int, n_false_mtd: int, s0: int, p: int) -> Tuple[float, float]:
    tpr = n_true_mtd / s0 if s0 else 0.0
    fpr = n_false_mtd / (p - s0) if p > s0 else 0.0
    return tpr, fpr


def monotonicity_violations(result: HierTestResult) -> int:
    parent = result.tree.parent_array
    child = np.flatnonzero(parent >= 0)
    return int(np.count_nonzero(result.p_h[parent[child]] > result.p_h[child]))


def run_metrics(result: HierTestResult, truth: GroundTruth, run: int, screening_failures: int,
                singletons_only: bool = False) -> RunMetrics:
    """Score one run. ``singletons_only`` restricts rejections to leaves
    (the single-variable method tests nothing else)."""
    tree = result.tree
    det = significant_clusters(result)
    rejected, minimal = det.rejected, det.minimal
    if singletons_only:
        rejected = rejected[tree.leaf_mask[rejected]]
        minimal = rejected
    truth_mask = np.zeros(tree.p, dtype=bool)
    truth_mask[truth.s0_set] = True
    member = tree.membership
    rejected_null = ~member[rejected][:, truth_mask].any(axis=1)
    is_true = member[minimal][:, truth_mask].any(axis=1)
    sizes = member[minimal[is_true]].sum(axis=1).tolist()
    n_false = int(np.count_nonzero(~is_true))
    s0 = len(truth.s0_set)
    tpr, fpr = tpr_fpr(len(sizes), n_false, s0, tree.p)
    return RunMetrics(
        run=run,
        perf1=performance1(sizes, s0),
        perf2=performance2(sizes, s0),
        n_mtd=len(sizes),
        mtd_buckets=bucket_counts(sizes),
        n_false=n_false,
        fwer=bool(rejected_null.any()),
        tpr=tpr,
        fpr=fpr,
        screening_failures=screening_failures,
        monotonicity_violations=monotonicity_violations(result),
    )


def summarize(per_run: Sequence[RunMetrics], B: int,
              baseline: Optional[MetricsReport] = None) -> MetricsReport:
    ok = [r for r in per_run if r.error is None]
    m = len(ok)

    def mean(vals):
        return float(np.mean(vals)) if m else float("nan")

    buckets = np.array([r.mtd_buckets for r in ok], dtype=float).reshape(m, len(BUCKETS))
    return MetricsReport(
        fwer_count=sum(r.fwer for r in ok),
        n_runs=len(per_run),
        perf1_mean=mean([r.perf1 for r in ok]),
        perf2_mean=mean([r.perf2 for r in ok]),
        mtd_total_mean=mean([r.n_mtd for r in ok]),
        mtd_by_cardinality={b: float(v) for b, v in zip(BUCKETS, buckets.mean(axis=0) if m else [float("nan")] * 5)},
        tpr=mean([r.tpr for r in ok]),
        fpr=mean([r.fpr for r in ok]),
        screening_failure_rate=float(sum(r.screening_failures for r in ok)) / (m * B) if m else float("nan"),
        monotonicity_violations=sum(r.monotonicity_violations for r in ok),
        n_failed=len(per_run) - m,
        per_run=tuple(per_run),
        baseline=baseline,
    )


def _failed(run: int, exc: Exception) -> RunMetrics:
    return RunMetrics(run, float("nan"), float("nan"), 0, (0,) * 5, 0, False,
                      float("nan"), float("nan"), 0, 0, error=f"{type(exc).__name__}: {exc}")


def run_seed(spec: ScenarioSpec, run: int) -> int:
    """Engine seed of one run, derived from the scenario and engine seeds."""
    seq = np.random.SeedSequence([spec.seed, spec.engine.seed, 3, run])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def run_scenario(spec: ScenarioSpec, external: Optional[np.ndarray] = None,
                 tree: Optional[ClusterTree] = None) -> MetricsReport:
    """Run the scenario ``spec.n_runs`` times and aggregate the metrics.

    The hierarchical method and the single-variable baseline share splits
    and screenings within a run. A run that raises is recorded with its
    error and excluded from the means.
    """
    X = design_matrix(spec, external)
    if tree is None:
        tree = build_correlation_tree(X)
    base_tree = single_variable_tree(spec.p)
    fixed = ground_truth(spec, X, _rng(spec.seed, 1))
    hier_runs, base_runs = [], []
    for r in range(spec.n_runs):
        truth = ground_truth(spec, X, _rng(spec.seed, 1, r + 1)) if spec.vary_beta else fixed
        eps = _rng(spec.seed, 2, r).standard_normal(spec.n)
        y = X @ truth.beta0 + truth.sigma * eps
        cfg = replace(spec.engine, seed=run_seed(spec, r))
        try:
            trees, cfgs = [tree], [cfg]
            if spec.baseline:
                trees.append(base_tree)
                cfgs.append(replace(cfg, shaffer=False, mode="top_down"))
            Xc, yc = (X - X.mean(axis=0), y - y.mean()) if cfg.center == "global" else (X, y)
            plan = make_splits(spec.n, cfg.B, cfg.seed)
            screened = screen_all(Xc, yc, plan, cfg)
            failures = sum(not np.isin(truth.s0_set, s).all() for s in screened)
            results = run_trees(trees, X, y, cfgs, plan=plan, screened=screened)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("run %d failed: %s", r, exc)
            hier_runs.append(_failed(r, exc))
            base_runs.append(_failed(r, exc))
            continue
        hier_runs.append(run_metrics(results[0], truth, r, failures))
        if spec.baseline:
            base_runs.append(run_metrics(results[1], truth, r, failures, singletons_only=True))
    baseline = summarize(base_runs, spec.engine.B) if spec.baseline else None
    return summarize(hier_runs, spec.engine.B, baseline)

"""Time the compiled kernels against the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Each kernel is run on the same inputs through both modules; the outputs
are checked for agreement before timings are reported.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from hiertest import _pykernels

try:
    from hiertest import _kernels
except ImportError:  # extension not built
    _kernels = None


def lasso_case(rng, n=100, p=200):
    X = np.asfortranarray(rng.standard_normal((n, p)))
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    y = X[:, :10] @ rng.standard_normal(10) + rng.standard_normal(n)
    y = y - y.mean()
    col_sq = np.einsum("ij,ij->j", X, X)
    lam_max = np.abs(X.T @ y).max() / n
    grid = lam_max * np.logspace(0, -3, 100)
    return (X, y, grid, col_sq, 100_000, 1e-7)


def linkage_case(rng, n=100, p=200):
    Z = rng.standard_normal((n, p))
    D = 1.0 - np.abs(np.corrcoef(Z.T))
    np.fill_diagonal(D, 0.0)
    return (D,)


def betainc_batch(module, points):
    return [module.betainc(a, b, x) for a, b, x in points]


def betainc_case(rng, m=2000):
    return [(float(a), float(b), float(x))
            for a, b, x in zip(rng.uniform(0.5, 50, m), rng.uniform(0.5, 200, m), rng.random(m))]


def agree(kernel, a, b):
    if kernel == "lasso_path":
        return np.allclose(a[0], b[0], atol=1e-6)
    if kernel == "complete_linkage":
        return all(np.array_equal(u, v) for u, v in zip(a, b))
    return np.allclose(a, b, rtol=1e-10)


def bench(repeat, seed):
    rng = np.random.default_rng(seed)
    cases = {
        "lasso_path": (lambda m, args: m.lasso_path(*args), lasso_case(rng)),
        "complete_linkage": (lambda m, args: m.complete_linkage(*args), linkage_case(rng)),
        "betainc": (lambda m, args: betainc_batch(m, args), betainc_case(rng)),
    }
    rows = []
    for name, (call, args) in cases.items():
        row = {"kernel": name}
        outputs = {}
        for label, module in (("compiled", _kernels), ("python", _pykernels)):
            if module is None:
                continue
            outputs[label] = call(module, args)
            row[label] = min(timeit.repeat(lambda: call(module, args), number=1, repeat=repeat))
        if len(outputs) == 2:
            row["agree"] = bool(agree(name, outputs["compiled"], outputs["python"]))
            row["speedup"] = row["python"] / row["compiled"]
        rows.append(row)
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", help="also write the results to this file")
    args = parser.parse_args(argv)
    rows = bench(args.repeat, args.seed)
    print(f"{'kernel':<18}{'compiled s':>12}{'python s':>12}{'speedup':>10}  agree")
    for r in rows:
        comp = f"{r['compiled']:.4f}" if "compiled" in r else "n/a"
        speed = f"{r['speedup']:.1f}x" if "speedup" in r else "n/a"
        print(f"{r['kernel']:<18}{comp:>12}{r['python']:>12.4f}{speed:>10}  {r.get('agree', 'n/a')}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r.get("agree", True) for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``hiertest {analyze,simulate,cluster,version}``."""

import argparse
import dataclasses
import logging
import secrets
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from ._backend import BACKEND
from .engine import EngineConfig, run
from .io import (
    DimensionError,
    InputError,
    atomic_write_text,
    dendrogram_svg,
    dump_json,
    engine_config_from_dict,
    load_json,
    parse_matrix_csv,
    parse_vector_csv,
    result_records,
    scenario_spec_from_dict,
    significant_csv,
)
from .simulation import BUCKETS, run_scenario, standardize_columns
from .tree import build_correlation_tree, from_newick, to_newick

EXIT_OK, EXIT_INPUT, EXIT_DIMENSION = 0, 2, 3

log = logging.getLogger("hiertest")


def _engine_overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.alpha is not None:
        out["alpha"] = args.alpha
    if args.splits is not None:
        out["B"] = args.splits
    if args.no_shaffer:
        out["shaffer"] = False
    if args.mode is not None:
        out["mode"] = args.mode
    if args.jobs is not None:
        out["n_jobs"] = args.jobs
    return out


def _entropy_seed() -> int:
    return secrets.randbits(64)


def _load_engine_config(args) -> EngineConfig:
    data = load_json(args.config) if args.config else {}
    if "engine" in data and len(data) == 1:
        data = data["engine"]
    data = {**data, **_engine_overrides(args)}
    if "seed" not in data:
        data["seed"] = _entropy_seed()
    return engine_config_from_dict(data, where=str(args.config or "engine"))


def _standardize(X, what: str):
    try:
        return standardize_columns(X)
    except ValueError as exc:
        raise InputError(f"{what}: {exc}") from exc


def _load_tree(args, p: int, X):
    if args.tree:
        try:
            text = Path(args.tree).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read {args.tree}: {exc.strerror}") from exc
        try:
            tree = from_newick(text)
        except ValueError as exc:
            raise InputError(f"{args.tree}: {exc}") from exc
        if tree.p != p:
            raise DimensionError(f"{args.tree}: tree has {tree.p} leaves, X has {p} columns")
        return tree
    return build_correlation_tree(X, linkage=args.linkage)


def cmd_analyze(args) -> int:
    X = parse_matrix_csv(args.x)
    y = parse_vector_csv(args.y)
    if X.shape[0] != y.shape[0]:
        raise DimensionError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    if X.shape[1] < 2:
        raise DimensionError("X needs at least 2 columns")
    config = _load_engine_config(args)
    if X.shape[0] < 4:
        raise DimensionError(f"need at least 4 observations, got {X.shape[0]}")
    Xs = _standardize(X, args.x)
    y = y - y.mean()
    tree = _load_tree(args, X.shape[1], Xs)
    if config.shaffer and not tree.is_binary:
        raise InputError("the tree is not binary; rerun with --no-shaffer")
    result = run(tree, Xs, y, config)
    records = result_records(result)
    out = Path(args.out)
    atomic_write_text(out / "results.json", dump_json(records))
    atomic_write_text(out / "run.json", dump_json({
        "version": __version__,
        "backend": BACKEND,
        "seed": config.seed,
        "config": dataclasses.asdict(config),
        "n": int(X.shape[0]),
        "p": int(X.shape[1]),
    }))
    atomic_write_text(out / "tree.nwk", to_newick(tree) + "\n")
    atomic_write_text(out / "significant_clusters.csv", significant_csv(records))
    atomic_write_text(out / "dendrogram.svg", dendrogram_svg(tree, result.p_h, config.alpha))
    n_rej = sum(r["rejected"] for r in records)
    print(f"seed {config.seed}: {n_rej} significant cluster(s); results in {out}")
    return EXIT_OK


def per_run_csv(report) -> str:
    cols = ["run", "method", "perf1", "perf2", "n_mtd"] + [f"mtd_{b}" for b in BUCKETS] + [
        "n_false", "fwer", "screening_failures", "monotonicity_violations", "error"]
    lines = [",".join(cols)]
    methods = [("hierarchical", report)]
    if report.baseline is not None:
        methods.append(("single", report.baseline))
    for name, rep in methods:
        for r in rep.per_run:
            row = [r.run, name, f"{r.perf1:.6g}", f"{r.perf2:.6g}", r.n_mtd, *r.mtd_buckets,
                   r.n_false, int(r.fwer), r.screening_failures, r.monotonicity_violations,
                   (r.error or "").replace(",", ";")]
            lines.append(",".join(str(v) for v in row))
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    data = load_json(args.config)
    engine = dict(data.get("engine", {}))
    overrides = _engine_overrides(args)
    if "seed" in overrides:
        data["seed"] = overrides.pop("seed")
    elif "seed" not in data:
        data["seed"] = _entropy_seed()
    engine.update(overrides)
    data["engine"] = engine
    spec = scenario_spec_from_dict(data, where=str(args.config))
    report = run_scenario(spec)
    out = Path(args.out)
    payload = {"version": __version__, "backend": BACKEND, "spec": spec, "metrics": report.to_dict()}
    atomic_write_text(out / "metrics.json", dump_json(payload))
    atomic_write_text(out / "runs.csv", per_run_csv(report))
    line = f"seed {spec.seed}: FWER {report.fwer_count}/{report.n_runs}, mean MTDs {report.mtd_total_mean:.3g}"
    if report.baseline is not None:
        line += f" (single-variable {report.baseline.mtd_total_mean:.3g})"
    print(line)
    return EXIT_OK


def cmd_cluster(args) -> int:
    X = _standardize(parse_matrix_csv(args.x), args.x)
    if X.shape[1] < 2:
        raise DimensionError("X needs at least 2 columns")
    tree = build_correlation_tree(X, linkage=args.linkage)
    out = Path(args.out)
    atomic_write_text(out / "tree.nwk", to_newick(tree) + "\n")
    atomic_write_text(out / "dendrogram.svg", dendrogram_svg(tree))
    print(f"tree over {tree.p} variables written to {out / 'tree.nwk'}")
    return EXIT_OK


def cmd_version(args) -> int:
    print(f"hiertest {__version__} ({BACKEND} kernels)")
    return EXIT_OK


def _add_engine_flags(p):
    p.add_argument("--config", metavar="PATH", help="JSON config with EngineConfig fields")
    p.add_argument("--seed", type=int, help="random seed (default: fresh entropy, recorded in the output)")
    p.add_argument("--alpha", type=float, help="significance level")
    p.add_argument("--splits", type=int, metavar="B", help="number of sample splits")
    p.add_argument("--no-shaffer", action="store_true", help="plain multiplicity adjustment")
    p.add_argument("--mode", choices=["top_down", "bottom_up"])
    p.add_argument("--jobs", type=int, help="worker threads over splits")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiertest", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="test all clusters of a hierarchy")
    a.add_argument("--x", required=True, metavar="CSV", help="design matrix, one column per variable")
    a.add_argument("--y", required=True, metavar="CSV", help="response vector")
    a.add_argument("--tree", metavar="NEWICK", help="use this hierarchy instead of clustering X")
    a.add_argument("--linkage", default="complete", choices=["complete", "average", "single"])
    _add_engine_flags(a)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a simulation scenario")
    _add_engine_flags(s)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("cluster", help="build the correlation hierarchy only")
    c.add_argument("--x", required=True, metavar="CSV")
    c.add_argument("--linkage", default="complete", choices=["complete", "average", "single"])
    c.add_argument("--out", metavar="DIR", default=".")
    c.set_defaults(func=cmd_cluster)

    v = sub.add_parser("version", help="print the version")
    v.set_defaults(func=cmd_version)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "simulate" and not args.config:
        parser.error("simulate requires --config PATH")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"hiertest: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DimensionError as exc:
        print(f"hiertest: error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION


if __name__ == "__main__":
    sys.exit(main())

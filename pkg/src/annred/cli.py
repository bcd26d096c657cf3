"""Command-line surface: build, query, verify and bench.

Point and query files hold one point per line, d decimal numbers separated
by commas or whitespace; lines starting with '#' are ignored. Identical
inputs and flags produce byte-identical index files and stats, wall-time
fields aside.
"""
from __future__ import annotations

import argparse
import json
import math
import re
import sys
import time

import numpy as np

from . import index_io
from .errors import IndexFormatError, InputError, InvariantError
from .geometry import Metric, PointSet
from .nbr import nbr_size_bound
from .oracle import ORACLE_NAMES, make_oracle
from .query import brute_force_nn, query
from .split_tree import build

_SPLIT = re.compile(r"[,\s]+")
_DISTRIBUTIONS = ("uniform", "clustered", "grid")


def _read_points_file(path) -> np.ndarray:
    """Parse a point file into an (n, d) array; raises with the line number."""
    rows: list[list[float]] = []
    d = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = [p for p in _SPLIT.split(text) if p]
            try:
                row = [float(p) for p in parts]
            except ValueError:
                raise InputError(f"{path}:{lineno}: not a number: {text!r}") from None
            if d is None:
                d = len(row)
            elif len(row) != d:
                raise InputError(
                    f"{path}:{lineno}: expected {d} coordinates, found {len(row)}")
            rows.append(row)
    if not rows:
        return np.empty((0, 0))
    return np.asarray(rows, dtype=np.float64)


def _emit_stats(stats: dict, path: str | None) -> None:
    text = json.dumps(stats, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_build(args) -> int:
    rows = _read_points_file(args.points)
    if rows.size == 0:
        raise InputError(f"{args.points}: no points")
    points = PointSet.from_rows(rows)
    tree = build(points, args.epsilon, Metric.parse(args.metric))
    index_io.save(tree, args.out)
    stats = tree.stats.as_dict()
    stats["index_path"] = str(args.out)
    stats["points_ingested"] = int(rows.shape[0])
    _emit_stats(stats, args.stats)
    return 0


def _load_queries(tree, path) -> np.ndarray:
    qs = _read_points_file(path)
    if qs.size == 0:
        return np.empty((0, tree.d))
    if qs.shape[1] != tree.d:
        raise InputError(
            f"{path}: queries have dimension {qs.shape[1]}, index has {tree.d}")
    return qs


def cmd_query(args) -> int:
    tree = index_io.load(args.index)
    queries = _load_queries(tree, args.queries)
    oracle = make_oracle(args.oracle, args.seed)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for q in queries:
            res = query(tree, q, oracle)
            originals = ",".join(str(i) for i in sorted(tree.points.original_ids[res.answer_id]))
            out.write(f"{originals}\t{res.answer_distance!r}\t"
                      f"{res.oracle_invocations}\t{res.terminal}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_verify(args) -> int:
    tree = index_io.load(args.index)
    queries = _load_queries(tree, args.queries)
    tolerance = (1.0 + tree.epsilon) * (1.0 + 1e-9)
    trials = args.trials if args.oracle == "adversarial" else 1
    violations = 0
    max_ratio = 0.0
    checked = 0
    for trial in range(trials):
        oracle = make_oracle(args.oracle, args.seed + trial)
        for q in queries:
            res = query(tree, q, oracle)
            _, exact = brute_force_nn(tree.points, q, tree.metric)
            checked += 1
            if exact == 0.0:
                ratio = 1.0 if res.answer_distance == 0.0 else math.inf
            else:
                ratio = res.answer_distance / exact
            max_ratio = max(max_ratio, ratio)
            if ratio > tolerance:
                violations += 1
    report = {
        "queries": int(queries.shape[0]),
        "trials": trials,
        "checked": checked,
        "epsilon": tree.epsilon,
        "tolerance": tolerance,
        "max_ratio": max_ratio,
        "violations": violations,
        "oracle": args.oracle,
    }
    _emit_stats(report, args.stats)
    return 1 if violations else 0


def _gen_points(distribution: str, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if distribution == "uniform":
        return rng.random((n, d))
    if distribution == "clustered":
        k = max(1, n // 100)
        centers = rng.random((k, d))
        assignment = rng.integers(0, k, size=n)
        return centers[assignment] + rng.normal(0.0, 0.01, size=(n, d))
    side = math.ceil(n ** (1.0 / d))
    axes = np.linspace(0.0, 1.0, side)
    grid = np.stack(np.meshgrid(*([axes] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return grid[:n]


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if sizes != sorted(sizes):
        raise InputError("sizes must be ascending")
    if args.distribution not in _DISTRIBUTIONS:
        raise InputError(f"unknown distribution {args.distribution!r}; "
                         f"expected one of {_DISTRIBUTIONS}")
    metric = Metric.parse(args.metric)
    rows = []
    for n in sizes:
        rng = np.random.default_rng(args.seed)
        pts = PointSet.from_rows(_gen_points(args.distribution, n, args.dim, rng))
        started = time.perf_counter()
        tree = build(pts, args.epsilon, metric)
        elapsed = time.perf_counter() - started
        qn = min(args.queries, max(1, n))
        lo = tree.points.coords.min(axis=0)
        hi = tree.points.coords.max(axis=0)
        queries = lo + rng.random((qn, args.dim)) * np.maximum(hi - lo, 1e-12)
        oracle = make_oracle("exact")
        invocations = [query(tree, q, oracle).oracle_invocations for q in queries]
        height_bound = math.ceil(math.log2(tree.n)) if tree.n > 1 else 0
        row = {
            "n": tree.n,
            "d": tree.d,
            "epsilon": args.epsilon,
            "metric": metric.value,
            "distribution": args.distribution,
            "build_seconds": elapsed,
            "node_count": tree.stats.node_count,
            "node_bound": 2 * tree.n,
            "height": tree.stats.height,
            "height_bound": height_bound,
            "nbr_max": tree.stats.nbr_max,
            "nbr_mean": tree.stats.nbr_mean,
            "nbr_bound": nbr_size_bound(tree.d, args.epsilon),
            "query_count": qn,
            "invocations_mean": float(np.mean(invocations)),
            "invocations_bound": height_bound + 1,
            "log2_n": math.log2(tree.n) if tree.n > 1 else 0.0,
        }
        rows.append(row)
        print(json.dumps(row, sort_keys=True))
    if args.stats:
        with open(args.stats, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="annred",
        description="Nearest neighbor search that consults a pluggable "
                    "near-neighbor decision oracle a logarithmic number of times.")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build an index from a point file")
    b.add_argument("--points", required=True, help="input point file")
    b.add_argument("--epsilon", type=float, required=True, help="approximation factor > 0")
    b.add_argument("--metric", default="l2", choices=[m.value for m in Metric])
    b.add_argument("--out", required=True, help="index output path")
    b.add_argument("--stats", default=None, help="write the build stats JSON here")
    b.set_defaults(fn=cmd_build)

    q = sub.add_parser("query", help="answer queries from an index")
    q.add_argument("--index", required=True)
    q.add_argument("--queries", required=True, help="query point file")
    q.add_argument("--oracle", default="exact", choices=ORACLE_NAMES)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", default=None, help="write result rows here instead of stdout")
    q.set_defaults(fn=cmd_query)

    v = sub.add_parser("verify", help="check answers against brute force")
    v.add_argument("--index", required=True)
    v.add_argument("--queries", required=True)
    v.add_argument("--oracle", default="exact", choices=ORACLE_NAMES)
    v.add_argument("--seed", type=int, default=0, help="first adversarial seed")
    v.add_argument("--trials", type=int, default=1,
                   help="adversarial seeds to sweep (seed..seed+trials-1)")
    v.add_argument("--stats", default=None)
    v.set_defaults(fn=cmd_verify)

    s = sub.add_parser("bench", help="measure builds and queries over synthetic data")
    s.add_argument("--sizes", required=True, help="comma-separated ascending point counts")
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--metric", default="l2", choices=[m.value for m in Metric])
    s.add_argument("--distribution", default="uniform", choices=_DISTRIBUTIONS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--queries", type=int, default=100)
    s.add_argument("--stats", default=None)
    s.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if getattr(args, "epsilon", 1.0) <= 0.0:
        print("error: epsilon must be positive", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (InputError, IndexFormatError, InvariantError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

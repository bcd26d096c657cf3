"""Near-neighbor decision oracles.

An oracle answers: given candidate points Q, a query point, a range r and a
factor c > 1 — if some candidate lies within r, return a candidate within
c*r; if all candidates lie beyond c*r, return No. Between r and c*r either
answer is allowed. The search descent treats the oracle as a black box, so
any implementation honouring this contract can be plugged in.

Oracles are pure functions of (query, seed) and safe to call concurrently.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InputError
from .geometry import Metric, distances_to

__all__ = [
    "OracleQuery",
    "OracleAnswer",
    "NO",
    "ExactOracle",
    "AdversarialOracle",
    "exact_oracle",
    "adversarial_oracle",
    "make_oracle",
    "ORACLE_NAMES",
]


@dataclass(frozen=True)
class OracleQuery:
    """One decision request: candidates (id, coords), query point, range r,
    factor c and the metric to measure under."""

    candidates: tuple[tuple[int, tuple[float, ...]], ...]
    query: tuple[float, ...]
    r: float
    c: float
    metric: Metric

    def __post_init__(self):
        if not self.candidates:
            raise InputError("oracle query needs at least one candidate")
        if not self.r > 0.0:
            raise InputError("oracle range r must be positive")
        if not self.c > 1.0:
            raise InputError("oracle factor c must exceed 1")


@dataclass(frozen=True)
class OracleAnswer:
    """Either a candidate point id or No (point_id is None)."""

    point_id: int | None

    @property
    def is_no(self) -> bool:
        return self.point_id is None


NO = OracleAnswer(point_id=None)

Oracle = Callable[[OracleQuery], OracleAnswer]


def _scan(q: OracleQuery) -> tuple[np.ndarray, np.ndarray]:
    ids = np.asarray([c[0] for c in q.candidates], dtype=np.int64)
    pts = np.asarray([c[1] for c in q.candidates], dtype=np.float64)
    dists = distances_to(np.asarray(q.query, dtype=np.float64), pts, q.metric)
    return ids, dists


class ExactOracle:
    """Linear-scan oracle. Returns the nearest candidate whenever one lies
    within c*r (the permissive choice in the undefined band), else No."""

    def __call__(self, q: OracleQuery) -> OracleAnswer:
        ids, dists = _scan(q)
        order = np.argsort(ids, kind="stable")  # smallest id wins ties
        ids, dists = ids[order], dists[order]
        best = int(np.argmin(dists))
        if dists[best] <= q.c * q.r:
            return OracleAnswer(point_id=int(ids[best]))
        return NO


class AdversarialOracle:
    """Contract-compliant but maximally unhelpful oracle.

    Within the mandatory branches it picks a pseudo-random legal candidate
    instead of the nearest; in the undefined band it flips a coin between No
    and a random legal candidate. Fully determined by (query, seed).
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def _rng(self, q: OracleQuery) -> random.Random:
        h = hashlib.blake2b(digest_size=8)
        h.update(repr((self.seed, q.candidates, q.query, q.r, q.c, q.metric.value)).encode())
        return random.Random(int.from_bytes(h.digest(), "little"))

    def __call__(self, q: OracleQuery) -> OracleAnswer:
        ids, dists = _scan(q)
        legal = ids[dists <= q.c * q.r]
        if legal.size == 0:
            return NO
        rng = self._rng(q)
        if float(dists.min()) <= q.r:
            return OracleAnswer(point_id=int(sorted(legal)[rng.randrange(legal.size)]))
        if rng.random() < 0.5:
            return NO
        return OracleAnswer(point_id=int(sorted(legal)[rng.randrange(legal.size)]))


def exact_oracle(q: OracleQuery) -> OracleAnswer:
    return ExactOracle()(q)


def adversarial_oracle(q: OracleQuery, seed: int) -> OracleAnswer:
    return AdversarialOracle(seed)(q)


ORACLE_NAMES = ("exact", "adversarial")


def make_oracle(name: str, seed: int = 0) -> Oracle:
    """Oracle factory keyed by name; seed only matters for 'adversarial'."""
    if name == "exact":
        return ExactOracle()
    if name == "adversarial":
        return AdversarialOracle(seed)
    raise InputError(f"unknown oracle {name!r}; expected one of {ORACLE_NAMES}")

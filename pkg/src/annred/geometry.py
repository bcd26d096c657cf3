"""Points, L1/L2/Linf metrics, minimal cubical boxes and the center split step.

Everything here is a pure function of its inputs and safe to call from any
number of threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InputError

__all__ = [
    "Metric",
    "Point",
    "PointSet",
    "CubicalBox",
    "distance",
    "distances_to",
    "mcb",
    "split_step",
    "pairwise_diameter",
    "dmax_between",
]

# Block size for the quadratic L2 diameter scan; keeps peak memory ~32 MB.
_CHUNK = 2048


class Metric(str, Enum):
    L1 = "l1"
    L2 = "l2"
    LINF = "linf"

    @classmethod
    def parse(cls, name: str) -> "Metric":
        try:
            return cls(name.lower())
        except ValueError:
            raise InputError(f"unknown metric {name!r}; expected one of l1, l2, linf") from None


@dataclass(frozen=True)
class Point:
    """A d-dimensional point with a stable non-negative id."""

    id: int
    coords: tuple[float, ...]


class PointSet:
    """Dense store of n distinct d-dimensional points, ids 0..n-1.

    `original_ids[i]` lists the ids the i-th point carried before exact
    duplicates were collapsed (identity when constructed from unique rows).
    """

    __slots__ = ("coords", "n", "d", "original_ids")

    def __init__(self, coords: np.ndarray, original_ids: list[list[int]] | None = None):
        arr = np.ascontiguousarray(np.asarray(coords, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise InputError("coords must be a non-empty (n, d) array")
        if not np.all(np.isfinite(arr)):
            raise InputError("coordinates must be finite")
        self.coords = arr
        self.n, self.d = arr.shape
        if original_ids is None:
            original_ids = [[i] for i in range(self.n)]
        if len(original_ids) != self.n:
            raise InputError("original_ids length must match point count")
        self.original_ids = original_ids

    @classmethod
    def from_rows(cls, rows: np.ndarray) -> "PointSet":
        """Build a PointSet from raw rows, collapsing exact duplicates.

        Representatives keep first-occurrence order, so the point with the
        smallest surviving id is always the earliest ingested row.
        """
        arr = np.ascontiguousarray(np.asarray(rows, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise InputError("need at least one point")
        if not np.all(np.isfinite(arr)):
            raise InputError("coordinates must be finite")
        _, first, inverse = np.unique(arr, axis=0, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")  # unique rows by first occurrence
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        groups: list[list[int]] = [[] for _ in range(order.size)]
        for row, uniq in enumerate(inverse):
            groups[rank[uniq]].append(row)
        return cls(arr[first[order]], groups)

    def __len__(self) -> int:
        return self.n


@dataclass
class CubicalBox:
    """Minimal cubical box of a point subset.

    anchor is the coordinate-wise minimum corner; len is the maximum
    coordinate extent of the contained points (0 iff a single point).
    """

    anchor: np.ndarray
    len: float
    point_ids: np.ndarray
    mins: np.ndarray = field(repr=False, default=None)
    maxs: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.mins is None:
            self.mins = self.anchor
        if self.maxs is None:
            self.maxs = self.anchor + self.len

    @property
    def size(self) -> int:
        return int(self.point_ids.size)


def _coerce(x) -> np.ndarray:
    if isinstance(x, Point):
        x = x.coords
    return np.asarray(x, dtype=np.float64)


def distance(a, b, metric: Metric) -> float:
    """Distance between two points under the given metric."""
    pa, pb = _coerce(a), _coerce(b)
    if pa.shape != pb.shape:
        raise InputError(f"dimension mismatch: {pa.shape} vs {pb.shape}")
    diff = np.abs(pa - pb)
    if metric is Metric.L1:
        return float(diff.sum())
    if metric is Metric.L2:
        return float(np.sqrt(np.square(diff).sum()))
    return float(diff.max())


def distances_to(q: np.ndarray, pts: np.ndarray, metric: Metric) -> np.ndarray:
    """Distances from one point to each row of a (k, d) array."""
    diff = np.abs(pts - q)
    if metric is Metric.L1:
        return diff.sum(axis=1)
    if metric is Metric.L2:
        return np.sqrt(np.square(diff).sum(axis=1))
    return diff.max(axis=1)


def _check_ids(ids: np.ndarray, points: PointSet) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise InputError("empty point-id set")
    if ids.min() < 0 or ids.max() >= points.n:
        raise InputError("unknown point id")
    return ids


def mcb(points: PointSet, ids=None) -> CubicalBox:
    """Minimal cubical box of the given ids (all points when ids is None).

    The box is anchored at the coordinate-wise minimum corner; its side is
    the largest coordinate extent, so shrinking it by any amount would
    exclude at least one point.
    """
    if ids is None:
        ids = np.arange(points.n, dtype=np.int64)
    ids = _check_ids(ids, points)
    pts = points.coords[ids]
    mins = pts.min(axis=0)
    maxs = pts.max(axis=0)
    side = float((maxs - mins).max())
    return CubicalBox(anchor=mins, len=side, point_ids=np.sort(ids), mins=mins, maxs=maxs)


def split_step(box: CubicalBox, points: PointSet) -> list[CubicalBox]:
    """Cut a box by the d hyperplanes through its center and shrink each
    non-empty cell to the minimal cubical box of its points.

    Points lying exactly on a cutting hyperplane go to the lower cell.
    Returns between 2 and 2^d boxes; refuses boxes that cannot be split.
    """
    if box.size < 2 or box.len <= 0.0:
        raise InputError("cannot split a singleton or zero-extent box")
    ids = box.point_ids
    pts = points.coords[ids]
    center = box.anchor + box.len / 2.0
    codes = (pts > center) @ (1 << np.arange(points.d, dtype=np.int64))
    order = np.argsort(codes, kind="stable")
    codes_sorted = codes[order]
    boundaries = np.flatnonzero(np.diff(codes_sorted)) + 1
    pieces = np.split(ids[order], boundaries)
    out = [mcb(points, sub) for sub in pieces]
    if len(out) < 2:
        raise InputError("split produced a single cell; box was not minimal")
    return out


def _diameter_exhaustive_l2(pts: np.ndarray) -> float:
    best = 0.0
    k = pts.shape[0]
    for i in range(0, k, _CHUNK):
        a = pts[i : i + _CHUNK]
        for j in range(i, k, _CHUNK):
            b = pts[j : j + _CHUNK]
            d2 = np.square(a[:, None, :] - b[None, :, :]).sum(axis=2)
            m = float(d2.max())
            if m > best:
                best = m
    return float(np.sqrt(best))


def _signs(d: int) -> np.ndarray:
    # Half of {-1,+1}^d (first component fixed +1); the other half mirrors.
    if d == 1:
        return np.ones((1, 1))
    rest = ((np.arange(1 << (d - 1))[:, None] >> np.arange(d - 1)) & 1) * 2.0 - 1.0
    return np.hstack([np.ones((rest.shape[0], 1)), rest])


def pairwise_diameter(ids, points: PointSet, metric: Metric) -> float:
    """Exact maximum pairwise distance within a point-id set.

    Equivalent to the full O(k^2) pair scan. Linf reduces to the largest
    coordinate extent and L1 to extents of the 2^(d-1) signed projections,
    both exact rearrangements of the scan; L2 runs the scan in blocks.
    """
    ids = _check_ids(ids, points)
    if ids.size == 1:
        return 0.0
    pts = points.coords[ids]
    if metric is Metric.LINF:
        return float((pts.max(axis=0) - pts.min(axis=0)).max())
    if metric is Metric.L1:
        proj = pts @ _signs(points.d).T
        return float((proj.max(axis=0) - proj.min(axis=0)).max())
    return _diameter_exhaustive_l2(pts)


def dmax_between(a_ids, b_ids, points: PointSet, metric: Metric) -> float:
    """Exact maximum cross distance between two point-id sets."""
    a_ids = _check_ids(a_ids, points)
    b_ids = _check_ids(b_ids, points)
    a = points.coords[a_ids]
    b = points.coords[b_ids]
    if a.shape[0] == 1:
        return float(distances_to(a[0], b, metric).max())
    if b.shape[0] == 1:
        return float(distances_to(b[0], a, metric).max())
    if metric is Metric.LINF:
        per_dim = np.maximum(a.max(axis=0) - b.min(axis=0), b.max(axis=0) - a.min(axis=0))
        return float(per_dim.max())
    if metric is Metric.L1:
        s = _signs(points.d).T
        pa, pb = a @ s, b @ s
        gap = np.maximum(pa.max(axis=0) - pb.min(axis=0), pb.max(axis=0) - pa.min(axis=0))
        return float(gap.max())
    best = 0.0
    for i in range(0, a.shape[0], _CHUNK):
        blk = a[i : i + _CHUNK]
        for j in range(0, b.shape[0], _CHUNK):
            d2 = np.square(blk[:, None, :] - b[None, j : j + _CHUNK, :]).sum(axis=2)
            best = max(best, float(d2.max()))
    return float(np.sqrt(best))

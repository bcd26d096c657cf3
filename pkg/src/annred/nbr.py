"""Neighbor-set maintenance under split events.

Every box carries a set of nearby boxes that is guaranteed to contain the
exact nearest neighbor of any query routed into the box. When a box is
split, its successors inherit the set, every neighbor learns about the
successors, and pairs whose centers are further apart than
(3 + 4/epsilon) * rho are pruned, where rho is the largest child radius
across the owning node's own neighbor collection at event time.

Sets are maintained over the live partition: a consumed box is swapped for
its successors in every set that held it, so views always reference current
boxes. Two exceptions keep history where it is needed: a box whose set has
stopped evolving (it was consumed itself) acts as a frozen snapshot that the
tree later resolves into per-level neighbor lists, and a box whose split
grew the tree stays visible to strictly higher-level neighbors until those
neighbors descend.

Each set keeps the retention radius it was created with. A box born early,
when its surroundings were still coarse, therefore holds on to a wide
neighborhood even as far regions refine, which is what guarantees that a
query routed into it from a coarse decision still finds the true nearest
neighbor in its set.

Mutation happens only inside the single-threaded build; finished sets are
immutable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InputError
from .geometry import Metric, PointSet, distances_to

__all__ = ["NbrContext", "on_split", "rmax_of", "nbr_size_bound"]


@dataclass
class NbrContext:
    """Build-wide state handed to each maintenance event."""

    registry: dict
    points: PointSet
    metric: Metric
    eps: float


def rmax_of(members: Iterable) -> float:
    """Largest child radius across a neighbor collection; 0 when every
    member is a singleton."""
    values = [m.rmax for m in members]
    if not values:
        raise InputError("neighbor collection must not be empty")
    return max(values)


def nbr_size_bound(d: int, eps: float) -> int:
    """Packing cap on the size of any neighbor set: 2^d (2d*ceil((3+4/eps)d)+3)^d."""
    r = (3.0 + 4.0 / eps) * d
    return (2 ** d) * (2 * d * math.ceil(r) + 3) ** d


def on_split(ctx: NbrContext, box, succ: list, rmax_parent_nbr: float, flag: bool) -> None:
    """Maintain neighbor sets after `box` was split into `succ`.

    rmax_parent_nbr is the collection radius of the owning node's neighbor
    set captured at event time; flag says whether this split materialized a
    tree level under the owner.
    """
    registry = ctx.registry
    succ_ids = {s.seq for s in succ}
    others = sorted(box.nbr_ids - {box.seq})

    # Successors inherit the live view; consumed members are skipped because
    # the event that consumed them placed their successors into this set.
    base = set(succ_ids)
    for m_id in others:
        if not registry[m_id].split_done:
            base.add(m_id)
    for s in succ:
        s.nbr_ids = set(base)

    # Radii for fresh singletons: smallest max-distance to any neighbor.
    for s in succ:
        if s.size == 1:
            view = sorted(s.nbr_ids - {s.seq})
            s.est = min(
                _dmax_to(ctx, s, registry[m_id]) for m_id in view
            )

    # Every live neighbor swaps the consumed box for its successors. When
    # this split grew the tree, strictly higher-level neighbors keep the
    # consumed box visible until they descend themselves.
    for m_id in others:
        rec = registry[m_id]
        if rec.split_done:
            continue  # snapshots of consumed boxes stay as they were
        if flag and rec.level < box.level:
            rec.nbr_ids |= succ_ids
        else:
            rec.nbr_ids.discard(box.seq)
            rec.nbr_ids |= succ_ids

    # Pruning. Membership in a set is governed by the radius that set was
    # created with: the fresh boxes drop members beyond this event's radius,
    # and each counterpart drops the fresh box only if it falls outside the
    # counterpart's own (older, usually wider) radius.
    threshold = (3.0 + 4.0 / ctx.eps) * rmax_parent_nbr
    coords = ctx.points.coords
    for s in succ:
        s.keep_radius = threshold
        view = sorted(s.nbr_ids - {s.seq})
        if not view:
            continue
        centers = coords[[registry[m_id].center_id for m_id in view]]
        dists = distances_to(coords[s.center_id], centers, ctx.metric)
        for m_id, dist in zip(view, dists):
            if dist > threshold:
                s.nbr_ids.discard(m_id)
            if dist > registry[m_id].keep_radius:
                registry[m_id].nbr_ids.discard(s.seq)


def _dmax_to(ctx: NbrContext, single, other) -> float:
    """Max distance from a singleton box to any point of another box."""
    pt = ctx.points.coords[single.box.point_ids[0]]
    if ctx.metric is Metric.LINF:
        lo = np.abs(pt - other.box.mins)
        hi = np.abs(pt - other.box.maxs)
        return float(np.maximum(lo, hi).max())
    return float(distances_to(pt, ctx.points.coords[other.box.point_ids], ctx.metric).max())

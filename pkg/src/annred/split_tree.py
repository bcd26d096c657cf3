"""Box split tree construction.

The tree refines the minimal cubical box of the point set by repeatedly
splitting the globally largest pending box at its center hyperplanes. Each
tree node keeps a pending-box max-heap while it grows; a secondary heap over
the per-node heap tops picks the global largest in O(log n). A node's
children materialize only once the pending boxes are fine enough relative to
the node, which keeps every oracle parameterization derived from the tree
legal (factor strictly above 1).

Construction is single-threaded; a finished tree is immutable and may be
queried concurrently.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from . import nbr as _nbr
from .errors import InputError, InvariantError
from .geometry import CubicalBox, Metric, PointSet, dmax_between, mcb, pairwise_diameter, split_step

__all__ = ["TreeNode", "SplitTree", "BuildStats", "est", "thresholds", "is_split_fine", "build"]


def est(contents, nbr_view, points: PointSet, metric: Metric) -> float:
    """Enclosing radius of a box: its exact diameter when it holds two or
    more points, else the smallest max-distance to any neighboring set.

    A singleton needs a non-empty neighbor view; for two or more stored
    points that case never arises during a build.
    """
    ids = np.asarray(contents, dtype=np.int64)
    if ids.size == 0:
        raise InputError("empty point-id set")
    if ids.size >= 2:
        return pairwise_diameter(ids, points, metric)
    if not nbr_view:
        raise InvariantError("singleton box with no neighbors has no defined radius")
    return min(dmax_between(ids, other, points, metric) for other in nbr_view)


def thresholds(node: "TreeNode", epsilon: float) -> tuple[float, float]:
    """Far thresholds (T1, T2) for a node: beyond T1 from the node center
    every contained point is a valid answer; T2 tightens that using the
    children's radii. T2 < T1 at every internal node by construction."""
    if epsilon <= 0.0:
        raise InputError("epsilon must be positive")
    t1 = (1.0 + 2.0 / epsilon) * node.est
    t2 = node.est + (1.0 + 2.0 / epsilon) * node.rmax
    return t1, t2


def is_split_fine(parent_len: float, top_len: float, epsilon: float, d: int) -> bool:
    """Side-length criterion deciding that pending boxes are fine enough to
    hang as children: top_len < 2/((2+eps)*d) * parent_len."""
    return top_len < (2.0 / ((2.0 + epsilon) * d)) * parent_len


class TreeNode:
    """One box of the hierarchy.

    Records are created when a split produces the box; `node_id` stays None
    until the box is hung into the tree. `est` is the enclosing radius,
    `rmax` the largest child radius (0 for leaves; frozen when children
    materialize). `nbr_nodes` holds the finished neighbor set, always
    including the node itself.
    """

    __slots__ = (
        "seq",
        "box",
        "level",
        "center_id",
        "est",
        "rmax",
        "node_id",
        "parent",
        "children",
        "nbr_ids",
        "nbr_nodes",
        "split_done",
        "succ",
        "prune_radius",
        "keep_radius",
    )

    def __init__(self, seq: int, box: CubicalBox, level: int):
        self.seq = seq
        self.box = box
        self.level = level
        self.center_id = int(box.point_ids.min())
        self.est: float | None = None
        self.rmax: float | None = None
        self.node_id: int | None = None
        self.parent: TreeNode | None = None
        self.children: list[TreeNode] = []
        self.nbr_ids: set[int] = set()
        self.nbr_nodes: tuple[TreeNode, ...] = ()
        self.split_done = False
        self.succ: list[TreeNode] = []
        self.prune_radius: float | None = None  # build-time aggregate, see _Builder
        self.keep_radius = float("inf")  # neighbor retention radius, fixed at creation

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def size(self) -> int:
        return self.box.size

    def __repr__(self):  # pragma: no cover - debugging aid
        return (
            f"TreeNode(node_id={self.node_id}, level={self.level}, size={self.size}, "
            f"len={self.box.len:.6g}, est={self.est}, rmax={self.rmax})"
        )


@dataclass
class BuildStats:
    n: int
    d: int
    epsilon: float
    metric: str
    node_count: int
    leaf_count: int
    height: int
    nbr_max: int
    nbr_mean: float
    duplicates_collapsed: int
    split_events: int
    dead_refs_dropped: int
    build_seconds: float

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "epsilon": self.epsilon,
            "metric": self.metric,
            "node_count": self.node_count,
            "leaf_count": self.leaf_count,
            "height": self.height,
            "nbr_max": self.nbr_max,
            "nbr_mean": self.nbr_mean,
            "duplicates_collapsed": self.duplicates_collapsed,
            "split_events": self.split_events,
            "dead_refs_dropped": self.dead_refs_dropped,
            "build_seconds": self.build_seconds,
        }


class SplitTree:
    """Finished hierarchy over a PointSet. Immutable after construction."""

    def __init__(self, root: TreeNode, nodes: list[TreeNode], points: PointSet,
                 epsilon: float, metric: Metric, stats: BuildStats):
        self.root = root
        self.nodes = nodes  # node_id ascending
        self.points = points
        self.epsilon = epsilon
        self.metric = metric
        self.stats = stats

    @property
    def n(self) -> int:
        return self.points.n

    @property
    def d(self) -> int:
        return self.points.d

    @property
    def height(self) -> int:
        return max(node.level for node in self.nodes)

    def leaves(self) -> list[TreeNode]:
        return [node for node in self.nodes if node.is_leaf]

    def validate(self, *, check_nbr_levels: bool = True) -> None:
        """Check structural invariants; raises InvariantError on violation."""
        n = self.n
        if len(self.nodes) > 2 * n:
            raise InvariantError(f"{len(self.nodes)} nodes exceeds bound {2 * n}")
        leaves = self.leaves()
        if len(leaves) != n:
            raise InvariantError(f"{len(leaves)} leaves != {n} points")
        fine = 2.0 / (2.0 + self.epsilon)
        for node in self.nodes:
            if node.node_id is None or node.est is None or node.rmax is None:
                raise InvariantError("node missing finalized fields")
            if node.center_id not in node.box.point_ids:
                raise InvariantError("center not inside its box")
            if node.children:
                if len(node.children) < 2:
                    raise InvariantError("internal node with fan-out below 2")
                merged = np.sort(np.concatenate([c.box.point_ids for c in node.children]))
                if not np.array_equal(merged, node.box.point_ids):
                    raise InvariantError("children do not partition the parent")
                for c in node.children:
                    if c.level != node.level + 1 or c.parent is not node:
                        raise InvariantError("bad child linkage")
                if not node.rmax < fine * node.est:
                    raise InvariantError(
                        f"child radius bound violated: rmax={node.rmax} est={node.est}")
            elif node.size != 1:
                raise InvariantError("multi-point leaf")
            if node.size >= 2 and n >= 2:
                lo, hi = node.box.len, self.d * node.box.len
                tol = 1e-12 * max(1.0, hi)
                if not (lo - tol <= node.est <= hi + tol):
                    raise InvariantError(
                        f"radius sandwich violated: len={node.box.len} est={node.est}")
            if not node.nbr_nodes or node not in node.nbr_nodes:
                raise InvariantError("neighbor set must contain its owner")
            if check_nbr_levels:
                for m in node.nbr_nodes:
                    if m.size > 1 and m.level != node.level:
                        raise InvariantError(
                            f"non-singleton neighbor at level {m.level} of node at {node.level}")
                if node.size == 1:
                    for m in node.nbr_nodes:
                        if m.size != 1:
                            raise InvariantError("singleton with multi-point neighbor")


@dataclass
class _Grower:
    """Pending-box state for one growing node.

    Two radius aggregates ride along with the heap. `contrib` tracks the
    largest multi-point pending radius; it freezes into the node's rmax and
    drives the fineness decision. `contrib_all` additionally counts the
    radii of pending singletons; it freezes into the node's prune_radius,
    the quantity neighbor pruning aggregates over, so that pruning stays at
    the scale of the point spacing rather than collapsing to zero once all
    pieces are single points.
    """

    owner: TreeNode
    heap: list = field(default_factory=list)          # (-len, seq)
    members: set[int] = field(default_factory=set)
    contrib: list = field(default_factory=list)       # (-radius, seq), multi boxes only
    contrib_all: list = field(default_factory=list)   # (-radius, seq), all boxes


class _Builder:
    def __init__(self, points: PointSet, epsilon: float, metric: Metric, audit: bool):
        self.points = points
        self.eps = epsilon
        self.metric = metric
        self.audit = audit
        self.registry: dict[int, TreeNode] = {}
        self.growers: dict[int, _Grower] = {}
        self.h2: list = []  # (-len, seq, owner_seq)
        self.next_seq = 0
        self.next_node_id = 0
        self.multi_live = 0
        self.split_events = 0
        self.dead_refs_dropped = 0

    # -- record management ------------------------------------------------

    def _new_record(self, box: CubicalBox, level: int) -> TreeNode:
        rec = TreeNode(self.next_seq, box, level)
        self.next_seq += 1
        self.registry[rec.seq] = rec
        if box.size >= 2:
            rec.est = pairwise_diameter(box.point_ids, self.points, self.metric)
            self.multi_live += 1
        return rec

    def _hang(self, rec: TreeNode, parent: TreeNode | None) -> None:
        rec.node_id = self.next_node_id
        self.next_node_id += 1
        rec.parent = parent
        if rec.size == 1:
            rec.rmax = 0.0
        else:
            grower = _Grower(owner=rec)
            self._insert_pending(grower, rec)
            self.growers[rec.seq] = grower
            self._push_h2(grower)

    def _insert_pending(self, grower: _Grower, rec: TreeNode) -> None:
        heapq.heappush(grower.heap, (-rec.box.len, rec.seq))
        grower.members.add(rec.seq)
        if rec.size >= 2:
            heapq.heappush(grower.contrib, (-rec.est, rec.seq))
            heapq.heappush(grower.contrib_all, (-rec.est, rec.seq))

    def _top(self, grower: _Grower) -> TreeNode | None:
        heap = grower.heap
        while heap and heap[0][1] not in grower.members:
            heapq.heappop(heap)
        return self.registry[heap[0][1]] if heap else None

    @staticmethod
    def _lazy_max(heap: list, members: set[int]) -> float:
        while heap and heap[0][1] not in members:
            heapq.heappop(heap)
        return -heap[0][0] if heap else 0.0

    def _pending_radius(self, grower: _Grower) -> float:
        return self._lazy_max(grower.contrib, grower.members)

    def _pending_radius_all(self, grower: _Grower) -> float:
        return self._lazy_max(grower.contrib_all, grower.members)

    def _push_h2(self, grower: _Grower) -> None:
        top = self._top(grower)
        if top is not None:
            heapq.heappush(self.h2, (-top.box.len, top.seq, grower.owner.seq))

    def _pop_h2(self) -> tuple[_Grower, TreeNode]:
        while self.h2:
            neg_len, seq, owner_seq = heapq.heappop(self.h2)
            grower = self.growers.get(owner_seq)
            if grower is None or seq not in grower.members:
                continue
            top = self._top(grower)
            if top is None or top.seq != seq:
                continue
            return grower, top
        raise InvariantError("secondary heap exhausted with pending boxes remaining")

    # -- neighbor-aggregate radius ----------------------------------------

    def _radius_of(self, rec: TreeNode) -> float:
        # Radius a neighbor-collection member adds to the pruning aggregate:
        # singletons count 0; a multi-point box counts the largest enclosing
        # radius over its current partition (itself while unsplit).
        if rec.size == 1:
            return 0.0
        grower = self.growers.get(rec.seq)
        if grower is not None:
            return self._pending_radius_all(grower)
        if rec.prune_radius is not None:
            return rec.prune_radius
        return rec.est

    def _collection_radius(self, owner: TreeNode) -> float:
        return max((self._radius_of(self.registry[s]) for s in owner.nbr_ids), default=0.0)

    # -- main loop ---------------------------------------------------------

    def run(self) -> tuple[TreeNode, int]:
        points = self.points
        root_box = mcb(points)
        root = self._new_record(root_box, level=0)
        root.nbr_ids = {root.seq}
        if points.n == 1:
            root.est = 0.0
            self._hang(root, parent=None)
            return root, 0
        self._hang(root, parent=None)

        fine = 2.0 / (2.0 + self.eps)
        scale = 1.0 + 2.0 / self.eps
        while self.multi_live > 0:
            grower, box = self._pop_h2()
            owner = grower.owner
            if self.audit:
                self._audit_global_top(box)
            rho = self._collection_radius(owner)

            grower.members.discard(box.seq)
            box.split_done = True
            self.multi_live -= 1
            succ = [self._new_record(b, owner.level + 1) for b in split_step(box.box, points)]
            box.succ = succ
            for rec in succ:
                self._insert_pending(grower, rec)
            self.split_events += 1

            top = self._top(grower)
            pending_radius = self._pending_radius(grower)
            flag = (
                is_split_fine(owner.box.len, top.box.len, self.eps, points.d)
                and pending_radius < fine * owner.est
                and owner.est + scale * pending_radius < scale * owner.est
            )
            if not flag:
                self._push_h2(grower)

            _nbr.on_split(self._nbr_ctx(), box, succ, rho, flag)
            for rec in succ:
                if rec.size == 1:  # singleton radii exist only after the event
                    heapq.heappush(grower.contrib_all, (-rec.est, rec.seq))
            if flag:
                self._materialize(grower, pending_radius)

        if self.growers:
            raise InvariantError("build finished with unmaterialized pending boxes")
        return root, self.next_node_id

    def _materialize(self, grower: _Grower, pending_radius: float) -> None:
        owner = grower.owner
        children = sorted((self.registry[s] for s in grower.members), key=lambda r: r.seq)
        if len(children) < 2:
            raise InvariantError("materialization with fewer than 2 children")
        owner.rmax = pending_radius
        owner.prune_radius = self._pending_radius_all(grower)
        owner.children = children
        del self.growers[owner.seq]
        for child in children:
            self._hang(child, parent=owner)

    def _nbr_ctx(self) -> _nbr.NbrContext:
        return _nbr.NbrContext(
            registry=self.registry, points=self.points, metric=self.metric, eps=self.eps)

    def _audit_global_top(self, box: TreeNode) -> None:
        widest = max(
            (self.registry[s].box.len for g in self.growers.values() for s in g.members),
            default=0.0,
        )
        if box.box.len < widest:
            raise InvariantError(
                f"heap discipline broken: popped len {box.box.len} < live max {widest}")


def _resolve_members(node: TreeNode, registry: dict[int, TreeNode]) -> tuple[tuple, int]:
    """Resolve a node's neighbor snapshot into tree nodes at its own level.

    The snapshot references boxes as they existed when the node's own box
    was consumed. Consumed references are walked through: a box that never
    joined the tree stands for its successors, a coarser node for its
    children, and a finer multi-point node for its ancestor at this level.
    The result is this node plus same-level nodes and singleton leaves. A
    singleton owner has no level floor; its view resolves to singletons.
    """
    level = node.level if node.size > 1 else None
    out: dict[int, TreeNode] = {node.node_id: node}
    seen: set[int] = set()
    stack = list(node.nbr_ids)
    walked = 0
    while stack:
        seq = stack.pop()
        if seq in seen:
            continue
        seen.add(seq)
        rec = registry[seq]
        if rec.node_id is None:
            if not rec.split_done:
                raise InvariantError("live pending box survived the build")
            walked += 1
            stack.extend(s.seq for s in rec.succ)
        elif rec.size == 1 or rec.level == level:
            out[rec.node_id] = rec
        elif level is None or rec.level < level:
            walked += 1
            stack.extend(c.seq for c in rec.children)
        else:
            anc = rec
            while anc.level > level:
                anc = anc.parent
            out[anc.node_id] = anc
    return tuple(out[k] for k in sorted(out)), walked


def build(points: PointSet, epsilon: float, metric: Metric, *, audit: bool = False) -> SplitTree:
    """Build the hierarchy over a deduplicated PointSet.

    epsilon is the approximation factor the finished tree guarantees; it
    shapes both the fineness of every materialization and the neighbor
    pruning radius. Duplicated coordinates are rejected (collapse them with
    PointSet.from_rows first).
    """
    if epsilon <= 0.0:
        raise InputError("epsilon must be positive")
    if points.n >= 2 and np.unique(points.coords, axis=0).shape[0] != points.n:
        raise InputError("duplicate coordinates; build from PointSet.from_rows")

    started = time.perf_counter()
    builder = _Builder(points, epsilon, metric, audit)
    root, node_count = builder.run()

    nodes: list[TreeNode] = [None] * node_count
    for rec in builder.registry.values():
        if rec.node_id is not None:
            nodes[rec.node_id] = rec
    if any(node is None for node in nodes):
        raise InvariantError("node id sequence has gaps")

    resolved_through = 0
    for node in nodes:
        node.nbr_nodes, walked = _resolve_members(node, builder.registry)
        resolved_through += walked
    for node in nodes:
        node.nbr_ids = set()  # builder bookkeeping, not part of the tree
    builder.dead_refs_dropped = resolved_through

    duplicates = sum(len(g) - 1 for g in points.original_ids)
    sizes = [len(node.nbr_nodes) for node in nodes]
    stats = BuildStats(
        n=points.n,
        d=points.d,
        epsilon=epsilon,
        metric=metric.value,
        node_count=len(nodes),
        leaf_count=sum(1 for node in nodes if node.is_leaf),
        height=max(node.level for node in nodes),
        nbr_max=max(sizes),
        nbr_mean=float(np.mean(sizes)),
        duplicates_collapsed=duplicates,
        split_events=builder.split_events,
        dead_refs_dropped=resolved_through,
        build_seconds=time.perf_counter() - started,
    )
    return SplitTree(root, nodes, points, epsilon, metric, stats)

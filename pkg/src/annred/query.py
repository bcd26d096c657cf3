"""Oracle-driven nearest neighbor search over a finished split tree.

The descent walks the tree level by level. At each step it gathers the
children of every box in the current neighborhood (singleton members stand
for themselves), asks the decision oracle whether any of their centers is
near the query, and either descends into the returned box, stops with a
certified answer on No, or finishes with an exact scan once a single-point
box is reached. Each step costs one oracle invocation, so a query spends
at most height+1 invocations.

Queries are read-only on the tree and safe to run concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, InvariantError
from .geometry import Metric, PointSet, distance, distances_to
from .oracle import Oracle, OracleQuery
from .split_tree import SplitTree, TreeNode, thresholds

__all__ = ["QueryResult", "candidate_boxes", "oracle_params", "query", "brute_force_nn"]

TERMINAL_FAR_ROOT = "far-root"
TERMINAL_ORACLE_NO = "oracle-no"
TERMINAL_LEAF_SCAN = "leaf-scan"


@dataclass(frozen=True)
class QueryResult:
    answer_id: int
    answer_distance: float
    oracle_invocations: int
    descent_path: tuple[int, ...]
    terminal: str
    audit_checks: int = 0


def brute_force_nn(points: PointSet, q, metric: Metric) -> tuple[int, float]:
    """Exact nearest neighbor by full scan; smallest id wins ties."""
    if points.n == 0:
        raise InputError("empty point set")
    qa = np.asarray(q, dtype=np.float64)
    if qa.shape != (points.d,):
        raise InputError(f"query has dimension {qa.shape}, expected ({points.d},)")
    dists = distances_to(qa, points.coords, metric)
    best = int(np.argmin(dists))  # argmin returns the first minimum: smallest id
    return best, float(dists[best])


def candidate_boxes(tree: SplitTree, node: TreeNode) -> list[TreeNode]:
    """Next-level candidates seen from a node: the children of every box in
    its neighborhood, with singleton members standing for themselves.

    No candidate sits more than one level below the node: a member that
    degenerated to a point further down is represented by its ancestor on
    the next level, whose neighbor set was built at this step's scale and
    therefore covers any descent the oracle may legally pick.
    """
    floor = node.level + 1
    seen: dict[int, TreeNode] = {}
    for member in node.nbr_nodes:
        if member.children:
            for child in member.children:
                seen[child.node_id] = child
        elif member.level <= floor:
            seen[member.node_id] = member
        else:
            anc = member
            while anc.level > floor:
                anc = anc.parent
            seen[anc.node_id] = anc
    if not seen:
        raise InvariantError("empty candidate set")
    return [seen[k] for k in sorted(seen)]


def oracle_params(cands: list[TreeNode], epsilon: float, points: PointSet
                  ) -> tuple[list[tuple[int, tuple[float, ...]]], float, float]:
    """Oracle inputs for one descent step: candidate centers, the range
    r = max T2 and the factor c with c*r = max T1. Per-candidate T2 < T1
    holds by construction, so c > 1."""
    if not cands:
        raise InputError("need at least one candidate")
    t1s, t2s = zip(*(thresholds(node, epsilon) for node in cands))
    r = max(t2s)
    cr = max(t1s)
    if not r > 0.0:
        raise InvariantError("oracle range collapsed to zero")
    c = cr / r
    if not c > 1.0:
        raise InvariantError(f"oracle factor must exceed 1, got {c}")
    centers = [
        (node.center_id, tuple(points.coords[node.center_id])) for node in cands
    ]
    return centers, r, c


def _scan_points(tree: SplitTree, node: TreeNode) -> np.ndarray:
    ids = [m.box.point_ids for m in node.nbr_nodes]
    return np.unique(np.concatenate(ids))


def query(tree: SplitTree, q, oracle: Oracle, *, audit_nn_id: int | None = None) -> QueryResult:
    """Find a point within (1+epsilon) of the true nearest distance.

    audit_nn_id, when given, must be the brute-force nearest id; the descent
    then verifies at every step that this point stays inside the candidate
    pool, raising InvariantError otherwise.
    """
    qa = np.asarray(q, dtype=np.float64)
    if qa.shape != (tree.d,):
        raise InputError(f"query has dimension {qa.shape}, expected ({tree.d},)")
    points = tree.points
    root = tree.root
    path = [root.node_id]
    audits = 0

    if tree.n == 1:
        return QueryResult(
            answer_id=root.center_id,
            answer_distance=distance(qa, points.coords[root.center_id], tree.metric),
            oracle_invocations=0,
            descent_path=tuple(path),
            terminal=TERMINAL_FAR_ROOT,
            audit_checks=audits,
        )

    _, t2_root = thresholds(root, tree.epsilon)
    root_dist = distance(qa, points.coords[root.center_id], tree.metric)
    if root_dist >= t2_root:
        return QueryResult(
            answer_id=root.center_id,
            answer_distance=root_dist,
            oracle_invocations=0,
            descent_path=tuple(path),
            terminal=TERMINAL_FAR_ROOT,
            audit_checks=audits,
        )

    current = root
    invocations = 0
    while current.size > 1:
        if audit_nn_id is not None:
            pool = _scan_points(tree, current)
            if audit_nn_id not in pool:
                raise InvariantError(
                    f"exact neighbor {audit_nn_id} left the candidate pool at node "
                    f"{current.node_id}")
            audits += 1
        cands = candidate_boxes(tree, current)
        centers, r, c = oracle_params(cands, tree.epsilon, points)
        answer = oracle(OracleQuery(
            candidates=tuple(centers), query=tuple(qa), r=r, c=c, metric=tree.metric))
        invocations += 1
        if answer.is_no:
            center_pts = points.coords[[cid for cid, _ in centers]]
            dists = distances_to(qa, center_pts, tree.metric)
            pick = min(range(len(centers)), key=lambda i: (dists[i], centers[i][0]))
            return QueryResult(
                answer_id=centers[pick][0],
                answer_distance=float(dists[pick]),
                oracle_invocations=invocations,
                descent_path=tuple(path),
                terminal=TERMINAL_ORACLE_NO,
                audit_checks=audits,
            )
        by_center = {node.center_id: node for node in cands}
        if answer.point_id not in by_center:
            raise InvariantError(f"oracle returned unknown candidate {answer.point_id}")
        target = by_center[answer.point_id]
        # The returned box is safe to enter only if its neighbor set, built
        # with its own retention radius, provably covers the true nearest
        # neighbor from here: 2*D(q, center) plus the largest candidate
        # radius must fit inside that retention radius. A decision that
        # cannot be certified ends the walk with an exact scan of the
        # current pool, which contains the true neighbor by induction.
        landing = distance(qa, points.coords[target.center_id], tree.metric)
        widest = max((node.est for node in cands if node.size > 1), default=0.0)
        if 2.0 * landing + widest > target.keep_radius:
            break
        current = target
        path.append(current.node_id)
        if audit_nn_id is not None:
            pool = _scan_points(tree, current)
            if audit_nn_id not in pool:
                raise InvariantError(
                    f"exact neighbor {audit_nn_id} not covered after descending into "
                    f"node {current.node_id}")
            audits += 1

    pool = _scan_points(tree, current)
    dists = distances_to(qa, points.coords[pool], tree.metric)
    pick = int(np.argmin(dists))  # pool is sorted: smallest id on ties
    return QueryResult(
        answer_id=int(pool[pick]),
        answer_distance=float(dists[pick]),
        oracle_invocations=invocations,
        descent_path=tuple(path),
        terminal=TERMINAL_LEAF_SCAN,
        audit_checks=audits,
    )

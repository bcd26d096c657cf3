"""Versioned binary serialization of a built index.

Layout (all integers little-endian, floats IEEE-754 binary64):

  magic "ANNRED" | version u32 | d u32 | n u64 | epsilon f64 | metric u8
  point table: n*d f64, internal-id order
  duplicate map: per internal id, u32 count + count*u64 original ids
  node table: u64 count, then per node in node_id order:
    node_id u64 | level u32 | center_id u64 | est f64 | rmax f64 | keep_radius f64
    anchor d*f64 | len f64
    child count u32 + child node ids u64...
    neighbor count u32 + neighbor node ids u64...

Saving the same tree twice yields identical bytes; loading re-derives the
per-node point sets from the leaves and checks the structure before
returning.
"""
from __future__ import annotations

import struct
from io import BytesIO

import numpy as np

from .errors import IndexFormatError
from .geometry import CubicalBox, Metric, PointSet
from .split_tree import BuildStats, SplitTree, TreeNode

__all__ = ["MAGIC", "FORMAT_VERSION", "save", "load", "to_bytes", "from_bytes"]

MAGIC = b"ANNRED"
FORMAT_VERSION = 1

_METRIC_TAGS = {Metric.L1: 1, Metric.L2: 2, Metric.LINF: 3}
_TAG_METRICS = {v: k for k, v in _METRIC_TAGS.items()}


def to_bytes(tree: SplitTree) -> bytes:
    out = BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<IIQdB", FORMAT_VERSION, tree.d, tree.n, tree.epsilon,
                          _METRIC_TAGS[tree.metric]))
    out.write(np.ascontiguousarray(tree.points.coords, dtype="<f8").tobytes())
    for originals in tree.points.original_ids:
        out.write(struct.pack("<I", len(originals)))
        out.write(struct.pack(f"<{len(originals)}Q", *sorted(originals)))
    out.write(struct.pack("<Q", len(tree.nodes)))
    for node in tree.nodes:
        out.write(struct.pack("<QIQddd", node.node_id, node.level, node.center_id,
                              node.est, node.rmax, node.keep_radius))
        out.write(np.ascontiguousarray(node.box.anchor, dtype="<f8").tobytes())
        out.write(struct.pack("<d", node.box.len))
        kids = [c.node_id for c in node.children]
        out.write(struct.pack("<I", len(kids)))
        if kids:
            out.write(struct.pack(f"<{len(kids)}Q", *kids))
        members = sorted(m.node_id for m in node.nbr_nodes)
        out.write(struct.pack("<I", len(members)))
        if members:
            out.write(struct.pack(f"<{len(members)}Q", *members))
    return out.getvalue()


def save(tree: SplitTree, path) -> None:
    data = to_bytes(tree)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise IndexFormatError("truncated index file")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def take_floats(self, count: int) -> np.ndarray:
        size = 8 * count
        if self.pos + size > len(self.data):
            raise IndexFormatError("truncated index file")
        arr = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos).copy()
        self.pos += size
        return arr

    def done(self) -> bool:
        return self.pos == len(self.data)


def from_bytes(data: bytes) -> SplitTree:
    rd = _Reader(data)
    if data[:6] != MAGIC:
        raise IndexFormatError("not an index file (bad magic)")
    rd.pos = 6
    (version,) = rd.take("<I")
    if version != FORMAT_VERSION:
        raise IndexFormatError(
            f"unsupported index version {version}; this build reads version {FORMAT_VERSION}")
    d, n, epsilon, metric_tag = rd.take("<IQdB")
    if metric_tag not in _TAG_METRICS:
        raise IndexFormatError(f"unknown metric tag {metric_tag}")
    metric = _TAG_METRICS[metric_tag]
    if d == 0 or n == 0:
        raise IndexFormatError("empty index")

    coords = rd.take_floats(n * d).reshape(n, d)
    originals: list[list[int]] = []
    for _ in range(n):
        (count,) = rd.take("<I")
        originals.append(list(rd.take(f"<{count}Q")) if count else [])
    points = PointSet(coords, originals)

    (node_count,) = rd.take("<Q")
    if node_count == 0 or node_count > 2 * n:
        raise IndexFormatError(f"implausible node count {node_count}")
    raw = []
    for _ in range(node_count):
        node_id, level, center_id, est, rmax, keep = rd.take("<QIQddd")
        anchor = rd.take_floats(d)
        (side,) = rd.take("<d")
        (n_children,) = rd.take("<I")
        children = list(rd.take(f"<{n_children}Q")) if n_children else []
        (n_nbr,) = rd.take("<I")
        members = list(rd.take(f"<{n_nbr}Q")) if n_nbr else []
        raw.append((node_id, level, center_id, est, rmax, keep, anchor, side,
                    children, members))
    if not rd.done():
        raise IndexFormatError("trailing bytes after node table")

    nodes: list[TreeNode | None] = [None] * node_count
    for seq, (node_id, level, center_id, est, rmax, keep, anchor, side, _, _) in enumerate(raw):
        if node_id != seq:
            raise IndexFormatError("node ids must be dense and ascending")
        box = CubicalBox(anchor=anchor, len=side, point_ids=np.empty(0, dtype=np.int64))
        node = TreeNode(seq=node_id, box=box, level=level)
        node.center_id = int(center_id)
        node.est = est
        node.rmax = rmax
        node.keep_radius = keep
        node.node_id = node_id
        nodes[node_id] = node

    for node_id, *_rest in raw:
        children, members = raw[node_id][8], raw[node_id][9]
        node = nodes[node_id]
        for cid in children:
            if cid >= node_count:
                raise IndexFormatError("child id out of range")
            child = nodes[cid]
            child.parent = node
            node.children.append(child)
        try:
            node.nbr_nodes = tuple(nodes[m] for m in sorted(members))
        except IndexError:
            raise IndexFormatError("neighbor id out of range") from None

    _rebuild_point_ids(nodes, n)
    tree = SplitTree(nodes[0], nodes, points, epsilon, metric, _stats_for(nodes, points, epsilon, metric))
    _check_structure(tree)
    return tree


def load(path) -> SplitTree:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def _rebuild_point_ids(nodes: list[TreeNode], n: int) -> None:
    for node in sorted(nodes, key=lambda nd: nd.level, reverse=True):
        if not node.children:
            node.box.point_ids = np.asarray([node.center_id], dtype=np.int64)
            node.box.mins = node.box.anchor
            node.box.maxs = node.box.anchor + node.box.len
        else:
            node.box.point_ids = np.sort(
                np.concatenate([c.box.point_ids for c in node.children]))


def _check_structure(tree: SplitTree) -> None:
    n = tree.n
    leaves = [node for node in tree.nodes if not node.children]
    if len(leaves) != n:
        raise IndexFormatError(f"index has {len(leaves)} leaves for {n} points")
    if tree.root.box.point_ids.size != n:
        raise IndexFormatError("root does not cover all points")
    for node in tree.nodes:
        if node.children:
            if len(node.children) < 2:
                raise IndexFormatError("internal node with fewer than 2 children")
            total = sum(c.box.point_ids.size for c in node.children)
            merged = np.unique(np.concatenate([c.box.point_ids for c in node.children]))
            if total != merged.size or total != node.box.point_ids.size:
                raise IndexFormatError("children do not partition their parent")
        if node.center_id not in node.box.point_ids:
            raise IndexFormatError("node center outside its box")
        if not node.nbr_nodes or node not in node.nbr_nodes:
            raise IndexFormatError("neighbor set must contain its owner")


def _stats_for(nodes, points, epsilon, metric) -> BuildStats:
    sizes = [len(node.nbr_nodes) for node in nodes]
    return BuildStats(
        n=points.n,
        d=points.d,
        epsilon=epsilon,
        metric=metric.value,
        node_count=len(nodes),
        leaf_count=sum(1 for node in nodes if not node.children),
        height=max(node.level for node in nodes),
        nbr_max=max(sizes) if sizes else 0,
        nbr_mean=float(np.mean(sizes)) if sizes else 0.0,
        duplicates_collapsed=sum(len(g) - 1 for g in points.original_ids),
        split_events=0,
        dead_refs_dropped=0,
        build_seconds=0.0,
    )

"""Approximate nearest neighbor search reduced to near-neighbor decisions.

Build a split tree over a point set once, then answer (1+epsilon)-nearest
neighbor queries with a logarithmic number of calls to any oracle honouring
the near-neighbor decision contract.
"""

from .errors import IndexFormatError, InputError, InvariantError
from .geometry import CubicalBox, Metric, Point, PointSet
from .index_io import load, save
from .nbr import nbr_size_bound, rmax_of
from .oracle import (
    NO,
    AdversarialOracle,
    ExactOracle,
    OracleAnswer,
    OracleQuery,
    adversarial_oracle,
    exact_oracle,
    make_oracle,
)
from .query import QueryResult, brute_force_nn, candidate_boxes, oracle_params, query
from .split_tree import BuildStats, SplitTree, TreeNode, build, est, is_split_fine, thresholds

__version__ = "0.1.0"

__all__ = [
    "AdversarialOracle",
    "BuildStats",
    "CubicalBox",
    "ExactOracle",
    "IndexFormatError",
    "InputError",
    "InvariantError",
    "Metric",
    "NO",
    "OracleAnswer",
    "OracleQuery",
    "Point",
    "PointSet",
    "QueryResult",
    "SplitTree",
    "TreeNode",
    "adversarial_oracle",
    "brute_force_nn",
    "build",
    "candidate_boxes",
    "est",
    "exact_oracle",
    "is_split_fine",
    "load",
    "make_oracle",
    "nbr_size_bound",
    "oracle_params",
    "query",
    "rmax_of",
    "save",
    "thresholds",
    "__version__",
]

"""Node-level sum-product networks.

:class:`SpnGraph` is the explicit graph: a list of sum, product and leaf
records ordered so that every child id is smaller than its parent's.  It is
what gets serialised and what the exact reference routines (feed-forward
evaluation, induced-tree enumeration) operate on.  The Gibbs sampler works on
the equivalent :class:`~bayspn.layout.RegionLayout` arrays instead.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .layout import RegionLayout, compile_layout
from .leaves import EvaluationError
from .region_graph import RegionGraph
from .scope import ScopeTable


class CapacityError(RuntimeError):
    """Enumeration would exceed the configured number of induced trees."""


@dataclass
class SumNode:
    children: list
    log_weights: np.ndarray


@dataclass
class ProductNode:
    children: list


@dataclass
class LeafNode:
    theta: np.ndarray | None = None   # (D, P); NaN marks an unpopulated slot
    scope: frozenset | None = None    # fixed scope; None means "look up in the ScopeTable"


@dataclass
class InstanceView:
    values: np.ndarray
    missing_mask: np.ndarray

    @classmethod
    def complete(cls, values):
        values = np.asarray(values, dtype=float)
        return cls(values, np.zeros(values.shape, dtype=bool))


@dataclass
class SpnGraph:
    nodes: list
    root: int
    origin: dict = field(default_factory=dict)
    families: object = None           # ColumnFamilies, needed to evaluate leaves
    layout: RegionLayout | None = None

    @property
    def num_dims(self):
        return None if self.families is None else self.families.num_dims

    def sums(self):
        return [i for i, n in enumerate(self.nodes) if isinstance(n, SumNode)]

    def products(self):
        return [i for i, n in enumerate(self.nodes) if isinstance(n, ProductNode)]

    def leaves(self):
        return [i for i, n in enumerate(self.nodes) if isinstance(n, LeafNode)]


def _node_ids(layout):
    """Deterministic node ids for a layout: leaves, then regions bottom-up."""
    leaf_ids = np.arange(layout.num_leaves)
    next_id = layout.num_leaves
    sum_ids = np.full(layout.num_sums, -1)
    product_ids = {}
    for r in range(layout.num_regions - 1, -1, -1):
        if layout.region_is_leaf[r]:
            continue
        for p in layout.parts_of(r):
            if p >= layout.num_real_partitions:
                continue
            for j in range(layout.part_nprod[p]):
                product_ids[(p, j)] = next_id
                next_id += 1
        base = layout.region_sum_base[r]
        for j in range(layout.region_nnodes[r]):
            sum_ids[base + j] = next_id
            next_id += 1
    return leaf_ids, sum_ids, product_ids, next_id


def layout_node_ids(layout):
    """Node ids that :func:`graph_from_layout` gives the layout's leaves and sums."""
    leaf_ids, sum_ids, _, _ = _node_ids(layout)
    return leaf_ids, sum_ids


def region_node_ids(layout, r, leaf_ids, sum_ids):
    if layout.region_is_leaf[r]:
        base = layout.region_leaf_base[r]
        return leaf_ids[base: base + layout.region_nnodes[r]]
    base = layout.region_sum_base[r]
    return sum_ids[base: base + layout.region_nnodes[r]]


def graph_from_layout(layout, log_weights=None, theta=None, families=None, leaf_scopes=None):
    """Materialise the explicit graph for a layout and (optional) parameters."""
    rg = layout.rg
    leaf_ids, sum_ids, product_ids, n_nodes = _node_ids(layout)
    nodes = [None] * n_nodes
    origin = {}
    if log_weights is None:
        log_weights = layout.uniform_log_weights()

    for l in range(layout.num_leaves):
        r = layout.leaf_region[l]
        nodes[leaf_ids[l]] = LeafNode(
            None if theta is None else np.array(theta[l], dtype=float),
            None if leaf_scopes is None else frozenset(int(d) for d in np.flatnonzero(leaf_scopes[l])),
        )
        origin[int(leaf_ids[l])] = ("region", int(layout.region_id[r]))

    for r in range(layout.num_regions - 1, -1, -1):
        if layout.region_is_leaf[r]:
            continue
        children = []
        for p in layout.parts_of(r):
            kids = layout.children_of(p)
            kid_nodes = [region_node_ids(layout, c, leaf_ids, sum_ids) for c in kids]
            if p >= layout.num_real_partitions:
                children.extend(int(i) for i in kid_nodes[0])
                continue
            for j, combo in enumerate(itertools.product(*kid_nodes)):
                pid = product_ids[(p, j)]
                nodes[pid] = ProductNode([int(c) for c in combo])
                origin[pid] = ("partition", int(rg.partitions[p].id))
                children.append(pid)
        block = layout.weight_block(log_weights, r)
        base = layout.region_sum_base[r]
        for j in range(layout.region_nnodes[r]):
            sid = int(sum_ids[base + j])
            nodes[sid] = SumNode(list(children), np.array(block[j], dtype=float))
            origin[sid] = ("region", int(layout.region_id[r]))

    return SpnGraph(nodes, int(sum_ids[0]), origin, families, layout)


def build_spn(rg: RegionGraph, num_leaves: int, num_sums: int, families=None) -> SpnGraph:
    """Build the SPN skeleton for a region graph with uniform weights, leaves unpopulated."""
    return graph_from_layout(compile_layout(rg, num_leaves, num_sums), families=families)


# ---------------------------------------------------------------------------
# Exact reference evaluation


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore", under="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def _leaf_scope(spn, node_id, table):
    leaf = spn.nodes[node_id]
    if leaf.scope is not None:
        return leaf.scope
    kind, oid = spn.origin[node_id]
    if table is None:
        raise EvaluationError(f"leaf {node_id} has no fixed scope and no scope table was given")
    return table.regions[oid] if kind == "region" else table.partitions[oid]


def node_log_values(spn: SpnGraph, table: ScopeTable | None, values, missing):
    """Per-node log values for a batch of instances: (N, num_nodes)."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    missing = np.atleast_2d(np.asarray(missing, dtype=bool))
    n = values.shape[0]
    out = np.zeros((n, len(spn.nodes)))
    touched = np.zeros((n, len(spn.nodes)), dtype=bool)  # any observed dim in scope
    fams = None if spn.families is None else spn.families.families
    for i, node in enumerate(spn.nodes):
        if isinstance(node, LeafNode):
            scope = _leaf_scope(spn, i, table)
            acc = np.zeros(n)
            for d in sorted(scope):
                obs = ~missing[:, d]
                if not obs.any():
                    continue
                touched[:, i] |= obs
                if fams is None:
                    raise EvaluationError("SPN has no leaf families attached")
                theta = None if node.theta is None else node.theta[d]
                if theta is None or np.isnan(theta[: fams[d].n_params]).any():
                    raise EvaluationError(f"leaf {i}: parameter for dimension {d} is unpopulated")
                acc[obs] += fams[d].log_pdf(theta, values[obs, d])
            out[:, i] = acc
        elif isinstance(node, ProductNode):
            out[:, i] = out[:, node.children].sum(axis=1)
            touched[:, i] = touched[:, node.children].any(axis=1)
        else:
            lw = np.asarray(node.log_weights)
            out[:, i] = _logsumexp(out[:, node.children] + lw[None, :], axis=1)
            touched[:, i] = touched[:, node.children].any(axis=1)
        out[~touched[:, i], i] = 0.0
    return out


def log_evaluate(spn: SpnGraph, table: ScopeTable | None, instance: InstanceView) -> np.ndarray:
    """Per-node log values for one instance; entry ``spn.root`` is the log density."""
    return node_log_values(spn, table, instance.values[None, :], instance.missing_mask[None, :])[0]


def log_density(spn, table, values, missing=None):
    values = np.atleast_2d(values)
    if missing is None:
        missing = np.zeros(values.shape, dtype=bool)
    return node_log_values(spn, table, values, missing)[:, spn.root]


# ---------------------------------------------------------------------------
# Induced trees


@dataclass(frozen=True)
class InducedTree:
    edges: dict      # sum id -> kept child position
    leaves: frozenset


def count_induced_trees(spn: SpnGraph) -> int:
    """Product-of-choices count (exact for tree-shaped region graphs, an upper bound otherwise)."""
    count = [0] * len(spn.nodes)
    for i, node in enumerate(spn.nodes):
        if isinstance(node, LeafNode):
            count[i] = 1
        elif isinstance(node, ProductNode):
            count[i] = math.prod(count[c] for c in node.children)
        else:
            count[i] = sum(count[c] for c in node.children)
    return count[spn.root]


def enumerate_induced_trees(spn: SpnGraph, limit: int = 10 ** 6):
    """Yield every induced tree once, keeping one outgoing edge per reachable sum."""
    total = count_induced_trees(spn)
    if total > limit:
        raise CapacityError(f"{total} induced trees exceed the limit of {limit}")

    def expand(frontier, edges, leaves):
        while frontier:
            i = frontier[-1]
            frontier = frontier[:-1]
            node = spn.nodes[i]
            if isinstance(node, LeafNode):
                leaves = leaves | {i}
            elif isinstance(node, ProductNode):
                frontier = frontier + tuple(node.children)
            elif i not in edges:
                for k, c in enumerate(node.children):
                    yield from expand(frontier + (c,), {**edges, i: k}, leaves)
                return
        yield InducedTree(edges, frozenset(leaves))

    yield from expand((spn.root,), {}, frozenset())


def evaluate_via_induced_trees(spn: SpnGraph, table: ScopeTable | None, instance: InstanceView, limit=10 ** 6):
    """Log density as the explicit mixture over induced trees."""
    vals = log_evaluate(spn, table, instance)
    terms = []
    for tree in enumerate_induced_trees(spn, limit):
        lw = sum(float(spn.nodes[s].log_weights[k]) for s, k in tree.edges.items())
        terms.append(lw + sum(vals[l] for l in tree.leaves))
    return float(_logsumexp(np.asarray(terms), axis=0))

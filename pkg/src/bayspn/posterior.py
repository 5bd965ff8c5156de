"""Posterior snapshots and the posterior-predictive density.

The predictive density of a new instance is the average of the snapshot
densities, computed in log space.  Equivalently it is one SPN whose root
mixes the T snapshot SPNs with weight 1/T; :func:`assemble_predictive_spn`
builds that graph explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoding import EncodedData, encode
from .layout import RegionLayout, root_log_density
from .leaves import ColumnFamilies
from .scope import ScopeAssignment, induced_scope
from .spn import InstanceView, LeafNode, ProductNode, SpnGraph, SumNode, graph_from_layout, log_evaluate


@dataclass(frozen=True, eq=False)
class Snapshot:
    y: np.ndarray            # (num_partitions, D), 0-based child positions
    log_weights: np.ndarray  # flat per-sum log weights
    theta: np.ndarray        # (L, D, P)


@dataclass(eq=False)
class PosteriorChain:
    layout: RegionLayout
    families: ColumnFamilies
    snapshots: list
    train_config: object = None
    graph_config: object = None
    trace: list = field(default_factory=list)    # (iteration, train LL, seconds)
    train_digest: str | None = None
    train_score: float | None = None
    _graphs: dict = field(default_factory=dict, repr=False)

    @property
    def rg(self):
        return self.layout.rg

    @property
    def num_snapshots(self):
        return len(self.snapshots)

    def scope_assignment(self, t):
        beta = getattr(self.train_config, "beta", 1.0)
        return ScopeAssignment(self.snapshots[t].y, beta)

    def scope_table(self, t):
        return induced_scope(self.rg, self.scope_assignment(t))


def snapshot_graph(chain: PosteriorChain, t: int) -> SpnGraph:
    """Materialised SPN of snapshot ``t`` with its leaf scopes baked in."""
    if t not in chain._graphs:
        snap = chain.snapshots[t]
        layout = chain.layout
        scopes = layout.leaf_scope(layout.layout_y(snap.y))
        chain._graphs[t] = graph_from_layout(layout, snap.log_weights, snap.theta, chain.families, scopes)
    return chain._graphs[t]


def snapshot_pattern_ll(layout, families, snap: Snapshot, data: EncodedData):
    """Root log density of one snapshot for every distinct pattern of ``data``."""
    return root_log_density(layout, snap.log_weights, families.natural(snap.theta),
                            layout.layout_y(snap.y), data.phi, data.observed_any)


def _logmeanexp(a, axis=0):
    mx = np.max(a, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.mean(np.exp(a - mx), axis=axis)) + np.squeeze(mx, axis=axis)
    return out


def predictive_pattern_ll(chain: PosteriorChain, data: EncodedData):
    if not chain.snapshots:
        raise ValueError("chain has no snapshots")
    per = np.stack([snapshot_pattern_ll(chain.layout, chain.families, s, data) for s in chain.snapshots])
    return _logmeanexp(per, axis=0)


def predictive_log_likelihoods(chain: PosteriorChain, values, missing=None):
    """Predictive log density of every row, (N,)."""
    data = encode(values, missing, chain.families)
    return predictive_pattern_ll(chain, data)[data.pattern]


def predictive_log_likelihood(chain: PosteriorChain, instance: InstanceView) -> float:
    """Log of the snapshot-averaged density of one instance, by explicit graph evaluation."""
    if not chain.snapshots:
        raise ValueError("chain has no snapshots")
    vals = []
    for t in range(chain.num_snapshots):
        g = snapshot_graph(chain, t)
        vals.append(log_evaluate(g, None, instance)[g.root])
    return float(_logmeanexp(np.asarray(vals)))


def assemble_predictive_spn(chain: PosteriorChain) -> SpnGraph:
    """One SPN: a root sum over the T snapshot SPNs with uniform weights."""
    t_count = chain.num_snapshots
    if t_count < 1:
        raise ValueError("chain has no snapshots")
    nodes, origin, roots = [], {}, []
    for t in range(t_count):
        g = snapshot_graph(chain, t)
        off = len(nodes)
        for i, node in enumerate(g.nodes):
            if isinstance(node, LeafNode):
                new = LeafNode(node.theta, node.scope)
            elif isinstance(node, ProductNode):
                new = ProductNode([c + off for c in node.children])
            else:
                new = SumNode([c + off for c in node.children], node.log_weights.copy())
            nodes.append(new)
            origin[off + i] = (*g.origin[i], t)
        roots.append(off + g.root)
    nodes.append(SumNode(roots, np.full(t_count, -np.log(t_count))))
    origin[len(nodes) - 1] = ("mixture", -1, -1)
    return SpnGraph(nodes, len(nodes) - 1, origin, chain.families, None)


def model_score(chain: PosteriorChain, values=None, missing=None) -> float:
    """Mean predictive log-likelihood over the training rows.

    With no data given, or with the exact data the chain was trained on, the
    value accumulated during training is returned.
    """
    if values is None:
        if chain.train_score is None:
            raise ValueError("chain carries no training score; pass the training data")
        return chain.train_score
    data = encode(values, missing, chain.families)
    if chain.train_score is not None and data.digest == chain.train_digest:
        return chain.train_score
    ll = predictive_pattern_ll(chain, data)
    return float(np.dot(data.counts, ll) / max(data.num_instances, 1))

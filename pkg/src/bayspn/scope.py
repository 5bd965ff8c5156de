"""Scope assignments and the scope function they induce.

``y[p, d]`` holds the (0-based) child position that partition row ``p``
sends dimension ``d`` to.  Rows follow ``rg.partitions`` order.  The mapping
is dense: every (partition, dimension) pair has a value, including pairs the
dimension never reaches.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .region_graph import RegionGraph


@dataclass
class ScopeAssignment:
    y: np.ndarray
    beta: float = 1.0

    def copy(self):
        return ScopeAssignment(self.y.copy(), self.beta)

    def to_list(self):
        """1-based nested list, the on-disk convention."""
        return (self.y + 1).tolist()

    @classmethod
    def from_list(cls, rows, beta=1.0, num_dims=None):
        y = np.asarray(rows, dtype=np.int64) - 1
        if y.size == 0:
            y = y.reshape(0, num_dims or 0)
        return cls(y, beta)


@dataclass
class ScopeTable:
    regions: dict[int, frozenset]
    partitions: dict[int, frozenset]


def check_assignment(rg: RegionGraph, sa: ScopeAssignment):
    y = np.asarray(sa.y)
    if y.shape != (len(rg.partitions), rg.num_dims):
        raise ValueError(f"scope assignment has shape {y.shape}, expected {(len(rg.partitions), rg.num_dims)}")
    for row, p in enumerate(rg.partitions):
        if y[row].min(initial=0) < 0 or y[row].max(initial=0) >= len(p.children):
            raise ValueError(f"partition {p.id}: child index out of range")


def sample_scope_prior(rg: RegionGraph, beta: float, rng: np.random.Generator) -> ScopeAssignment:
    """Draw v_P ~ Dir(beta) per partition, then each y[P, d] ~ Cat(v_P)."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    y = np.zeros((len(rg.partitions), rg.num_dims), dtype=np.int64)
    for row, p in enumerate(rg.partitions):
        k = len(p.children)
        v = rng.dirichlet(np.full(k, beta))
        v = v / v.sum()
        y[row] = rng.choice(k, size=rg.num_dims, p=v)
    return ScopeAssignment(y, beta)


def induced_scope(rg: RegionGraph, sa: ScopeAssignment) -> ScopeTable:
    """Push the full variable set down from the root, splitting at partitions by ``y``."""
    y = np.asarray(sa.y)
    regions = {}
    partitions = {}
    stack = [(rg.root, np.arange(rg.num_dims))]
    while stack:
        rid, dims = stack.pop()
        regions[rid] = frozenset(int(d) for d in dims)
        for pid in rg.region(rid).children:
            p = rg.partition(pid)
            partitions[pid] = regions[rid]
            choice = y[rg.partition_index(pid), dims]
            for k, cid in enumerate(p.children):
                stack.append((cid, dims[choice == k]))
    return ScopeTable(regions, partitions)


def validate_scope(rg: RegionGraph, table: ScopeTable) -> list[str]:
    problems = []
    full = frozenset(range(rg.num_dims))
    if table.regions.get(rg.root) != full:
        problems.append(f"region {rg.root}: root scope is not the full variable set")
    for r in rg.regions:
        if r.id not in table.regions:
            problems.append(f"region {r.id}: missing from scope table")
    for p in rg.partitions:
        if p.id not in table.partitions:
            problems.append(f"partition {p.id}: missing from scope table")
    if problems:
        return problems

    for r in rg.regions:
        if not r.children:
            continue
        mine = table.regions[r.id]
        for pid in r.children:
            if table.partitions[pid] != mine:
                problems.append(
                    f"partition {pid}: completeness violated, scope differs from parent region {r.id}"
                )
    for p in rg.partitions:
        seen = set()
        union = set()
        for cid in p.children:
            child = table.regions[cid]
            overlap = seen & child
            if overlap:
                problems.append(
                    f"partition {p.id}: decomposability violated, children share {sorted(overlap)}"
                )
            seen |= child
            union |= child
        if frozenset(union) != table.partitions[p.id]:
            problems.append(f"partition {p.id}: completeness violated, union of children != partition scope")
    return problems

"""Flat, region-major layout of an SPN built from a tree-shaped region graph.

Each region owns a block of nodes: one sum for the root, ``J`` sums for
inner regions, ``I`` leaves for leaf regions.  Products are never stored;
a sum's children are the concatenated cross-products of its region's
partitions, enumerated in row-major order (first child region slowest).
With this layout the upward pass is one outer product plus one matrix product
per region (node values are kept node-major, ``(num_values, U)``), and the per-instance Gibbs kernels work on plain int arrays.

When the root region is itself a leaf (depth 0), a pseudo partition with a
single child stands between the root sum and its ``I`` leaves.  It has a
constant all-zero ``y`` row and is skipped by the structure sampler.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .region_graph import ConfigError, RegionGraph, validate_region_graph


@dataclass
class RegionLayout:
    rg: RegionGraph
    num_sums_per_region: int
    num_leaves_per_region: int
    num_dims: int
    # regions, top-down (breadth-first) order
    region_id: np.ndarray          # layout position -> region id in rg
    region_is_leaf: np.ndarray
    region_nnodes: np.ndarray
    region_val_off: np.ndarray
    region_sum_base: np.ndarray
    region_leaf_base: np.ndarray
    region_part_ptr: np.ndarray
    region_parts: np.ndarray
    region_nprod: np.ndarray
    region_parent_part: np.ndarray
    region_child_pos: np.ndarray
    # partitions, row order of the scope assignment (+ optional pseudo row)
    part_region: np.ndarray
    part_child_ptr: np.ndarray
    part_children: np.ndarray
    part_nprod: np.ndarray
    part_prod_off: np.ndarray
    num_real_partitions: int
    # sums and leaves
    sum_region: np.ndarray
    sum_w_off: np.ndarray
    leaf_region: np.ndarray
    num_values: int
    num_weights: int

    @property
    def num_regions(self):
        return len(self.region_id)

    @property
    def num_partitions(self):
        return len(self.part_region)

    @property
    def num_sums(self):
        return len(self.sum_region)

    @property
    def num_leaves(self):
        return len(self.leaf_region)

    @property
    def has_pseudo_partition(self):
        return self.num_partitions > self.num_real_partitions

    @property
    def depth(self):
        depth = np.zeros(self.num_regions, dtype=np.int64)
        for r in range(1, self.num_regions):
            depth[r] = depth[self.part_region[self.region_parent_part[r]]] + 1
        return int(depth.max())

    def parts_of(self, r):
        return self.region_parts[self.region_part_ptr[r]: self.region_part_ptr[r + 1]]

    def children_of(self, p):
        return self.part_children[self.part_child_ptr[p]: self.part_child_ptr[p + 1]]

    def weight_block(self, logw, r):
        """Log-weights of region ``r``'s sums as a (num_sums, num_products) view."""
        base = self.region_sum_base[r]
        start = self.sum_w_off[base]
        n, m = self.region_nnodes[r], self.region_nprod[r]
        return logw[start: start + n * m].reshape(n, m)

    def layout_y(self, y):
        y = np.asarray(y, dtype=np.int64)
        if self.has_pseudo_partition:
            y = np.vstack([y.reshape(-1, self.num_dims), np.zeros((1, self.num_dims), dtype=np.int64)])
        return np.ascontiguousarray(y)

    def region_scope(self, y_layout):
        """Boolean scope matrix (num_regions, D) for a layout-level assignment."""
        scope = np.zeros((self.num_regions, self.num_dims), dtype=bool)
        scope[0] = True
        for r in range(1, self.num_regions):
            p = self.region_parent_part[r]
            scope[r] = scope[self.part_region[p]] & (y_layout[p] == self.region_child_pos[r])
        return scope

    def leaf_scope(self, y_layout):
        return self.region_scope(y_layout)[self.leaf_region]

    def uniform_log_weights(self):
        logw = np.empty(self.num_weights)
        for g in range(self.num_sums):
            m = self.region_nprod[self.sum_region[g]]
            logw[self.sum_w_off[g]: self.sum_w_off[g] + m] = -np.log(m)
        return logw

    def kernel_arrays(self):
        """Structure arrays in the positional order the compiled kernels expect."""
        return (
            self.region_is_leaf.astype(np.int64), self.region_nnodes, self.region_val_off,
            self.region_sum_base, self.region_leaf_base, self.region_part_ptr, self.region_parts,
            self.part_child_ptr, self.part_children, self.part_nprod, self.part_prod_off,
            self.sum_w_off,
        )


def compile_layout(rg: RegionGraph, num_leaves: int, num_sums: int) -> RegionLayout:
    if num_leaves < 1 or num_sums < 1:
        raise ConfigError("I and J must be positive")
    problems = validate_region_graph(rg)
    if problems:
        raise ConfigError("invalid region graph: " + "; ".join(problems[:5]))

    order = []
    pos = {}
    queue = [rg.root]
    while queue:
        rid = queue.pop(0)
        pos[rid] = len(order)
        order.append(rid)
        for pid in rg.region(rid).children:
            queue.extend(rg.partition(pid).children)

    pseudo = rg.region(rg.root).is_leaf
    n_real_parts = len(rg.partitions)
    n_regions = len(order) + (1 if pseudo else 0)

    is_leaf = np.zeros(n_regions, dtype=bool)
    nnodes = np.zeros(n_regions, dtype=np.int64)
    parent_part = np.full(n_regions, -1, dtype=np.int64)
    child_pos = np.zeros(n_regions, dtype=np.int64)
    region_ids = np.zeros(n_regions, dtype=np.int64)
    parts_of = [[] for _ in range(n_regions)]

    part_region = np.zeros(n_real_parts + (1 if pseudo else 0), dtype=np.int64)
    part_kids = [[] for _ in range(len(part_region))]

    for rid in order:
        r = pos[rid]
        region = rg.region(rid)
        region_ids[r] = rid
        if r == 0:
            nnodes[r] = 1
        elif region.is_leaf:
            is_leaf[r], nnodes[r] = True, num_leaves
        else:
            nnodes[r] = num_sums
        for pid in region.children:
            p = rg.partition_index(pid)
            parts_of[r].append(p)
            part_region[p] = r
            for k, cid in enumerate(rg.partition(pid).children):
                part_kids[p].append(pos[cid])
                parent_part[pos[cid]] = p
                child_pos[pos[cid]] = k
    if pseudo:
        leaf_r = n_regions - 1
        region_ids[leaf_r] = rg.root
        is_leaf[leaf_r], nnodes[leaf_r] = True, num_leaves
        p = n_real_parts
        part_region[p] = 0
        part_kids[p] = [leaf_r]
        parts_of[0] = [p]
        parent_part[leaf_r] = p

    val_off = np.concatenate([[0], np.cumsum(nnodes)[:-1]]).astype(np.int64)
    part_child_ptr = np.concatenate([[0], np.cumsum([len(k) for k in part_kids])]).astype(np.int64)
    part_children = np.asarray([c for k in part_kids for c in k], dtype=np.int64)
    part_nprod = np.asarray([int(np.prod([nnodes[c] for c in k])) for k in part_kids], dtype=np.int64)
    part_prod_off = np.zeros(len(part_region), dtype=np.int64)
    region_part_ptr = np.concatenate([[0], np.cumsum([len(p) for p in parts_of])]).astype(np.int64)
    region_parts = np.asarray([p for ps in parts_of for p in ps], dtype=np.int64)
    nprod = np.zeros(n_regions, dtype=np.int64)
    for r in range(n_regions):
        off = 0
        for p in parts_of[r]:
            part_prod_off[p] = off
            off += part_nprod[p]
        nprod[r] = off

    sum_base = np.full(n_regions, -1, dtype=np.int64)
    leaf_base = np.full(n_regions, -1, dtype=np.int64)
    sum_region, sum_w_off, leaf_region = [], [], []
    w_off = 0
    for r in range(n_regions):
        if is_leaf[r]:
            leaf_base[r] = len(leaf_region)
            leaf_region.extend([r] * nnodes[r])
        else:
            sum_base[r] = len(sum_region)
            for _ in range(nnodes[r]):
                sum_region.append(r)
                sum_w_off.append(w_off)
                w_off += nprod[r]

    return RegionLayout(
        rg=rg,
        num_sums_per_region=num_sums,
        num_leaves_per_region=num_leaves,
        num_dims=rg.num_dims,
        region_id=region_ids,
        region_is_leaf=is_leaf,
        region_nnodes=nnodes,
        region_val_off=val_off,
        region_sum_base=sum_base,
        region_leaf_base=leaf_base,
        region_part_ptr=region_part_ptr,
        region_parts=region_parts,
        region_nprod=nprod,
        region_parent_part=parent_part,
        region_child_pos=child_pos,
        part_region=part_region,
        part_child_ptr=part_child_ptr,
        part_children=part_children,
        part_nprod=part_nprod,
        part_prod_off=part_prod_off,
        num_real_partitions=n_real_parts,
        sum_region=np.asarray(sum_region, dtype=np.int64),
        sum_w_off=np.asarray(sum_w_off, dtype=np.int64),
        leaf_region=np.asarray(leaf_region, dtype=np.int64),
        num_values=int(nnodes.sum()),
        num_weights=int(w_off),
    )


# ---------------------------------------------------------------------------
# Vectorised evaluation


def leaf_values(layout, phi, eta, y_layout):
    """Log value of every leaf for every row, node-major: (L, U).

    ``phi`` is (U, D, F) with zeros at missing entries, ``eta`` is (L, D, F).
    """
    scope = layout.leaf_scope(y_layout)
    coef = eta * scope[:, :, None]
    u = phi.shape[0]
    return coef.reshape(coef.shape[0], -1) @ phi.reshape(u, coef.shape[1] * coef.shape[2]).T


def product_values(layout, values_t, r):
    """Concatenated cross-product log values of region ``r``, node-major: (M_r, U)."""
    blocks = []
    u = values_t.shape[1]
    for p in layout.parts_of(r):
        acc = None
        for c in layout.children_of(p):
            off = layout.region_val_off[c]
            v = values_t[off: off + layout.region_nnodes[c]]
            acc = v if acc is None else (acc[:, None, :] + v[None, :, :]).reshape(-1, u)
        blocks.append(acc)
    return blocks[0] if len(blocks) == 1 else np.concatenate(blocks, axis=0)


def logsumexp_weighted(prods, logw_block):
    """``log sum_c exp(logw[s, c] + prods[c, n])`` for all sums s and rows n: (J, U)."""
    t = logw_block[:, :, None] + prods[None, :, :]
    tm = t.max(axis=1, keepdims=True)
    tm = np.where(np.isfinite(tm), tm, 0.0)
    with np.errstate(divide="ignore", under="ignore"):
        return np.log(np.exp(t - tm).sum(axis=1)) + tm[:, 0, :]


def shifted_products(layout, values_t, r):
    """``exp(products - shift)`` for region ``r`` as outer products of child exponentials.

    Returns the (M_r, U) linear block and the per-row shift (U,).  Each child
    is shifted by its own maximum, so the largest product of a partition is
    exactly 1 before partitions are brought to a common shift.
    """
    u = values_t.shape[1]
    blocks, shifts = [], []
    for p in layout.parts_of(r):
        acc, sh = None, np.zeros(u)
        for c in layout.children_of(p):
            off = layout.region_val_off[c]
            v = values_t[off: off + layout.region_nnodes[c]]
            m = v.max(axis=0)
            m = np.where(np.isfinite(m), m, 0.0)
            with np.errstate(under="ignore"):
                e = np.exp(v - m)
            sh += m
            acc = e if acc is None else (acc[:, None, :] * e[None, :, :]).reshape(-1, u)
        blocks.append(acc)
        shifts.append(sh)
    if len(blocks) == 1:
        return blocks[0], shifts[0]
    shifts = np.stack(shifts)
    top = shifts.max(axis=0)
    with np.errstate(under="ignore"):
        scale = np.exp(shifts - top)
    return np.concatenate([b * s for b, s in zip(blocks, scale)], axis=0), top


# below this a linear-space mixture is redone in log space
TINY_MASS = 1e-290


def region_sum_values(layout, values_t, logw, r):
    """Log values of region ``r``'s sums, node-major: (J, U)."""
    block = layout.weight_block(logw, r)
    prods, shift = shifted_products(layout, values_t, r)
    with np.errstate(under="ignore"):
        s = np.exp(block) @ prods
    with np.errstate(divide="ignore"):
        out = np.log(s) + shift
    bad = ~(s > TINY_MASS).all(axis=0) | ~np.isfinite(out).all(axis=0)
    if bad.any():
        out[:, bad] = logsumexp_weighted(product_values(layout, values_t[:, bad], r), block)
    return out


def upward(layout, logw, leafvals_t):
    """All region-node log values computed bottom-up, node-major: (num_values, U)."""
    u = leafvals_t.shape[1]
    values_t = np.empty((layout.num_values, u))
    if u == 0:
        return values_t
    for r in range(layout.num_regions - 1, -1, -1):
        off, n = layout.region_val_off[r], layout.region_nnodes[r]
        if layout.region_is_leaf[r]:
            base = layout.region_leaf_base[r]
            values_t[off: off + n] = leafvals_t[base: base + n]
        else:
            values_t[off: off + n] = region_sum_values(layout, values_t, logw, r)
    return values_t


def root_log_density(layout, logw, theta_eta, y_layout, phi, observed_any, values_out=None):
    """Root log density per row, clamped so fully-missing rows give exactly 0."""
    values_t = upward(layout, logw, leaf_values(layout, phi, theta_eta, y_layout))
    root = values_t[0].copy()
    root[~observed_any] = 0.0
    root[root < -1e200] = -np.inf
    if values_out is not None:
        values_out.append(values_t)
    return root

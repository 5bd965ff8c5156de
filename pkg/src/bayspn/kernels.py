"""Per-instance Gibbs kernels.

Three loops dominate a sweep once the upward pass is done with BLAS:

* ``route``: top-down ancestral sampling of each instance's induced tree,
* ``leaf_stats``: routing every observed entry to its leaf and summing features,
* ``sweep_y``: the collapsed structure update, one (partition, dimension) at a time.

Each has an ``@njit`` version and a numpy version.  Both take the same
pre-drawn uniforms and use inverse-CDF sampling, so they agree draw for draw
unless two cumulative sums straddle a uniform by a rounding error.
"""
import numpy as np

from . import _accel
from ._accel import njit
from .layout import TINY_MASS, product_values, shifted_products

# ---------------------------------------------------------------------------
# compiled versions


@njit(cache=True)
def _route_nb(is_leaf, nnodes, val_off, sum_base, leaf_base, part_ptr, parts, child_ptr, children,
              part_nprod, part_prod_off, sum_w_off, values, logw, pattern, unif,
              route_node, route_part, route_choice, counts):
    n_inst = pattern.shape[0]
    n_reg = is_leaf.shape[0]
    max_m = 1
    max_n = 1
    for r in range(n_reg):
        m = 0
        for q in range(part_ptr[r], part_ptr[r + 1]):
            m += part_nprod[parts[q]]
        max_m = max(max_m, m)
        max_n = max(max_n, nnodes[r])
    expw = np.exp(logw)
    probs = np.empty(max_m)
    child_e = np.empty(max_n)
    shifts = np.empty(n_reg)
    stack = np.empty(n_reg, dtype=np.int64)
    for n in range(n_inst):
        u = pattern[n]
        route_node[n, 0] = 0
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            r = stack[top]
            if is_leaf[r]:
                continue
            w0 = sum_w_off[sum_base[r] + route_node[n, r]]
            # linear-space products: outer products of max-shifted child exponentials
            q0 = part_ptr[r]
            n_parts = part_ptr[r + 1] - q0
            top_shift = -np.inf
            for qi in range(n_parts):
                p = parts[q0 + qi]
                start = part_prod_off[p]
                probs[start] = 1.0
                size = 1
                sh = 0.0
                for ci in range(child_ptr[p], child_ptr[p + 1]):
                    ch = children[ci]
                    nc = nnodes[ch]
                    off = val_off[ch]
                    mx = -np.inf
                    for j in range(nc):
                        if values[u, off + j] > mx:
                            mx = values[u, off + j]
                    if not np.isfinite(mx):
                        mx = 0.0
                    sh += mx
                    for j in range(nc):
                        child_e[j] = np.exp(values[u, off + j] - mx)
                    for i in range(size - 1, -1, -1):
                        a = probs[start + i]
                        for j in range(nc - 1, -1, -1):
                            probs[start + i * nc + j] = a * child_e[j]
                    size *= nc
                shifts[qi] = sh
                if sh > top_shift:
                    top_shift = sh
            m = 0
            total = 0.0
            for qi in range(n_parts):
                p = parts[q0 + qi]
                scale = np.exp(shifts[qi] - top_shift)
                for c in range(part_prod_off[p], part_prod_off[p] + part_nprod[p]):
                    probs[c] *= scale * expw[w0 + c]
                    total += probs[c]
                m += part_nprod[p]
            if not (total > 1e-290 and total < np.inf):
                # mass underflowed: recompute this region in log space
                c = 0
                mx = -np.inf
                for qi in range(n_parts):
                    p = parts[q0 + qi]
                    for t in range(part_nprod[p]):
                        rem = t
                        v = logw[w0 + c]
                        for ci in range(child_ptr[p + 1] - 1, child_ptr[p] - 1, -1):
                            ch = children[ci]
                            size = nnodes[ch]
                            v += values[u, val_off[ch] + rem % size]
                            rem //= size
                        probs[c] = v
                        if v > mx:
                            mx = v
                        c += 1
                total = 0.0
                for c in range(m):
                    probs[c] = np.exp(probs[c] - mx)
                    total += probs[c]
            target = unif[n, r] * total
            acc = 0.0
            chosen = m - 1
            for c in range(m):
                acc += probs[c]
                if acc >= target:
                    chosen = c
                    break
            counts[w0 + chosen] += 1.0
            route_choice[n, r] = chosen
            for qi in range(n_parts):
                p = parts[q0 + qi]
                if chosen < part_prod_off[p] + part_nprod[p]:
                    route_part[n, r] = qi
                    rem = chosen - part_prod_off[p]
                    for ci in range(child_ptr[p + 1] - 1, child_ptr[p] - 1, -1):
                        ch = children[ci]
                        size = nnodes[ch]
                        route_node[n, ch] = rem % size
                        rem //= size
                        stack[top] = ch
                        top += 1
                    break


@njit(cache=True)
def _leaf_stats_nb(is_leaf, leaf_base, part_ptr, parts, child_ptr, children,
                   route_node, route_part, y, phi, observed, pattern, stats):
    n_inst = pattern.shape[0]
    n_dims = phi.shape[1]
    n_feat = phi.shape[2]
    for n in range(n_inst):
        u = pattern[n]
        for d in range(n_dims):
            if not observed[u, d]:
                continue
            r = 0
            while not is_leaf[r]:
                p = parts[part_ptr[r] + route_part[n, r]]
                r = children[child_ptr[p] + y[p, d]]
            leaf = leaf_base[r] + route_node[n, r]
            for f in range(n_feat):
                stats[leaf, d, f] += phi[u, d, f]


@njit(cache=True)
def _y_logits_nb(p, d, is_leaf, leaf_base, part_ptr, parts, child_ptr, children, part_region,
                 region_scope, y, route_node, route_part, pattern, phi, observed, eta,
                 inst_ptr, inst_list, beta, count_all, out):
    k_children = child_ptr[p + 1] - child_ptr[p]
    n_dims = y.shape[1]
    n_feat = phi.shape[2]
    pr = part_region[p]
    total = 0.0
    for k in range(k_children):
        out[k] = 0.0
    for dd in range(n_dims):
        if dd == d:
            continue
        if count_all or region_scope[pr, dd]:
            out[y[p, dd]] += 1.0
            total += 1.0
    denom = np.log(k_children * beta + total)
    for k in range(k_children):
        out[k] = np.log(beta + out[k]) - denom
    if not region_scope[pr, d]:
        return
    for k in range(k_children):
        ll = 0.0
        start = children[child_ptr[p] + k]
        for i in range(inst_ptr[p], inst_ptr[p + 1]):
            n = inst_list[i]
            u = pattern[n]
            if not observed[u, d]:
                continue
            r = start
            while not is_leaf[r]:
                q = parts[part_ptr[r] + route_part[n, r]]
                r = children[child_ptr[q] + y[q, d]]
            leaf = leaf_base[r] + route_node[n, r]
            for f in range(n_feat):
                ll += phi[u, d, f] * eta[leaf, d, f]
        out[k] += ll


@njit(cache=True)
def _refresh_scope_column(d, y, part_region, region_parent_part, region_child_pos, region_scope):
    region_scope[0, d] = True
    for r in range(1, region_scope.shape[0]):
        q = region_parent_part[r]
        region_scope[r, d] = region_scope[part_region[q], d] and y[q, d] == region_child_pos[r]


@njit(cache=True)
def _sweep_y_nb(pairs, unif, is_leaf, leaf_base, part_ptr, parts, child_ptr, children, part_region,
                region_parent_part, region_child_pos, region_scope, y, route_node, route_part,
                pattern, phi, observed, eta, inst_ptr, inst_list, beta, count_all):
    max_k = 1
    for p in range(child_ptr.shape[0] - 1):
        if child_ptr[p + 1] - child_ptr[p] > max_k:
            max_k = child_ptr[p + 1] - child_ptr[p]
    logits = np.empty(max_k)
    changes = 0
    for i in range(pairs.shape[0]):
        p = pairs[i, 0]
        d = pairs[i, 1]
        k_children = child_ptr[p + 1] - child_ptr[p]
        _y_logits_nb(p, d, is_leaf, leaf_base, part_ptr, parts, child_ptr, children, part_region,
                     region_scope, y, route_node, route_part, pattern, phi, observed, eta,
                     inst_ptr, inst_list, beta, count_all, logits)
        mx = -np.inf
        for k in range(k_children):
            if logits[k] > mx:
                mx = logits[k]
        total = 0.0
        for k in range(k_children):
            total += np.exp(logits[k] - mx)
        target = unif[i] * total
        acc = 0.0
        chosen = k_children - 1
        for k in range(k_children):
            acc += np.exp(logits[k] - mx)
            if acc >= target:
                chosen = k
                break
        if chosen != y[p, d]:
            y[p, d] = chosen
            changes += 1
            _refresh_scope_column(d, y, part_region, region_parent_part, region_child_pos, region_scope)
    return changes


# ---------------------------------------------------------------------------
# numpy versions


def _inverse_cdf_linear(probs, unif):
    cdf = np.cumsum(probs, axis=1)
    target = unif * cdf[:, -1]
    chosen = (cdf < target[:, None]).sum(axis=1)
    return np.minimum(chosen, probs.shape[1] - 1)


def _inverse_cdf(logits, unif):
    return _inverse_cdf_linear(np.exp(logits - logits.max(axis=1, keepdims=True)), unif)


def _route_np(layout, values_t, logw, pattern, unif, route_node, route_part, route_choice, counts):
    for r in range(layout.num_regions):
        if layout.region_is_leaf[r]:
            continue
        active = np.flatnonzero(route_node[:, r] >= 0)
        if active.size == 0:
            continue
        rows = pattern[active]
        block = layout.weight_block(logw, r)
        prods, _ = shifted_products(layout, values_t[:, rows], r)
        with np.errstate(under="ignore"):
            probs = prods.T * np.exp(block)[route_node[active, r]]
        total = probs.sum(axis=1)
        bad = ~((total > TINY_MASS) & np.isfinite(total))
        if bad.any():
            logits = block[route_node[active[bad], r]] + product_values(layout, values_t[:, rows[bad]], r).T
            probs[bad] = np.exp(logits - logits.max(axis=1, keepdims=True))
        chosen = _inverse_cdf_linear(probs, unif[active, r])
        g = layout.region_sum_base[r] + route_node[active, r]
        np.add.at(counts, layout.sum_w_off[g] + chosen, 1.0)
        route_choice[active, r] = chosen
        parts = layout.parts_of(r)
        offs = layout.part_prod_off[parts]
        local = np.searchsorted(offs, chosen, side="right") - 1
        route_part[active, r] = local
        rem = chosen - offs[local]
        for qi, p in enumerate(parts):
            sel = local == qi
            if not sel.any():
                continue
            t = rem[sel]
            for ch in layout.children_of(p)[::-1]:
                size = layout.region_nnodes[ch]
                route_node[active[sel], ch] = t % size
                t = t // size


def _descend_np(layout, start, route_node, route_part, y_col, inst):
    r = np.full(inst.shape, start, dtype=np.int64) if np.isscalar(start) else start.copy()
    while True:
        inner = ~layout.region_is_leaf[r]
        if not inner.any():
            break
        idx = np.flatnonzero(inner)
        q = layout.region_parts[layout.region_part_ptr[r[idx]] + route_part[inst[idx], r[idx]]]
        r[idx] = layout.part_children[layout.part_child_ptr[q] + y_col[q]]
    return layout.region_leaf_base[r] + route_node[inst, r]


def _leaf_stats_np(layout, route_node, route_part, y, phi, observed, pattern, stats):
    n_inst = pattern.shape[0]
    inst = np.arange(n_inst)
    for d in range(y.shape[1]):
        obs = observed[pattern, d]
        if not obs.any():
            continue
        sel = inst[obs]
        leaf = _descend_np(layout, 0, route_node, route_part, y[:, d], sel)
        np.add.at(stats[:, d, :], leaf, phi[pattern[sel], d, :])


def _y_logits_np(layout, p, d, region_scope, y, route_node, route_part, pattern, phi, observed,
                 eta, inst_ptr, inst_list, beta, count_all):
    kids = layout.children_of(p)
    k_children = len(kids)
    pr = layout.part_region[p]
    mask = np.ones(y.shape[1], dtype=bool) if count_all else region_scope[pr].copy()
    mask[d] = False
    m = np.bincount(y[p, mask], minlength=k_children).astype(float)
    out = np.log(beta + m) - np.log(k_children * beta + m.sum())
    if not region_scope[pr, d]:
        return out
    inst = inst_list[inst_ptr[p]: inst_ptr[p + 1]]
    inst = inst[observed[pattern[inst], d]]
    if inst.size == 0:
        return out
    ph = phi[pattern[inst], d, :]
    for k, start in enumerate(kids):
        leaf = _descend_np(layout, int(start), route_node, route_part, y[:, d], inst)
        out[k] += float(np.sum(ph * eta[leaf, d, :]))
    return out


def _sweep_y_np(layout, pairs, unif, region_scope, y, route_node, route_part, pattern, phi,
                observed, eta, inst_ptr, inst_list, beta, count_all):
    changes = 0
    for i, (p, d) in enumerate(pairs):
        logits = _y_logits_np(layout, p, d, region_scope, y, route_node, route_part, pattern, phi,
                              observed, eta, inst_ptr, inst_list, beta, count_all)
        chosen = int(_inverse_cdf(logits[None, :], unif[i: i + 1])[0])
        if chosen != y[p, d]:
            y[p, d] = chosen
            changes += 1
            region_scope[:, d] = layout.region_scope(y)[:, d]
    return changes


# ---------------------------------------------------------------------------
# dispatch


def route(layout, values_t, logw, pattern, unif):
    """Sample induced trees for all instances from node-major values ``(num_values, U)``.

    Returns ``(route_node, route_part, route_choice, counts)``: per instance and
    region the visited node (-1 if unvisited), the local index of the chosen
    partition and the chosen child of the visited sum; ``counts`` adds one per
    visited (sum, child) pair on the flat weight axis.
    """
    n = pattern.shape[0]
    shape = (n, layout.num_regions)
    route_node = np.full(shape, -1, dtype=np.int64)
    route_part = np.full(shape, -1, dtype=np.int64)
    route_choice = np.full(shape, -1, dtype=np.int64)
    counts = np.zeros(layout.num_weights)
    if n == 0:
        return route_node, route_part, route_choice, counts
    route_node[:, 0] = 0
    if _accel.enabled():
        a = layout.kernel_arrays()
        # row-major copy: each instance reads a handful of nodes from one pattern
        _route_nb(*a, np.ascontiguousarray(values_t.T), logw, pattern, unif,
                  route_node, route_part, route_choice, counts)
    else:
        _route_np(layout, values_t, logw, pattern, unif, route_node, route_part, route_choice, counts)
    return route_node, route_part, route_choice, counts


def leaf_stats(layout, route_node, route_part, y_layout, phi, observed, pattern):
    stats = np.zeros((layout.num_leaves, phi.shape[1], phi.shape[2]))
    if pattern.shape[0] == 0:
        return stats
    if _accel.enabled():
        _leaf_stats_nb(layout.region_is_leaf, layout.region_leaf_base, layout.region_part_ptr,
                       layout.region_parts, layout.part_child_ptr, layout.part_children,
                       route_node, route_part, y_layout, phi, observed, pattern, stats)
    else:
        _leaf_stats_np(layout, route_node, route_part, y_layout, phi, observed, pattern, stats)
    return stats


def partition_instances(layout, route_part):
    """CSR lists of the instances whose induced tree passes through each partition."""
    n_parts = layout.num_partitions
    inner = np.flatnonzero(~layout.region_is_leaf)
    sub = route_part[:, inner]
    inst, col = np.nonzero(sub >= 0)
    regions = inner[col]
    part = layout.region_parts[layout.region_part_ptr[regions] + sub[inst, col]]
    order = np.lexsort((inst, part))
    inst_list = inst[order].astype(np.int64)
    inst_ptr = np.zeros(n_parts + 1, dtype=np.int64)
    np.add.at(inst_ptr, part + 1, 1)
    return np.cumsum(inst_ptr), inst_list


def region_scope(layout, y_layout):
    return np.ascontiguousarray(layout.region_scope(y_layout))


def y_logits(layout, p, d, y_layout, route_node, route_part, pattern, phi, observed, eta,
             beta, count_all, inst=None):
    inst_ptr, inst_list = partition_instances(layout, route_part) if inst is None else inst
    scope = region_scope(layout, y_layout)
    if _accel.enabled():
        out = np.empty(len(layout.children_of(p)))
        _y_logits_nb(p, d, layout.region_is_leaf, layout.region_leaf_base, layout.region_part_ptr,
                     layout.region_parts, layout.part_child_ptr, layout.part_children,
                     layout.part_region, scope, y_layout, route_node, route_part, pattern, phi,
                     observed, eta, inst_ptr, inst_list, float(beta), bool(count_all), out)
        return out
    return _y_logits_np(layout, p, d, scope, y_layout, route_node, route_part, pattern, phi,
                        observed, eta, inst_ptr, inst_list, float(beta), bool(count_all))


def sweep_y(layout, pairs, unif, y_layout, route_node, route_part, pattern, phi, observed, eta,
            beta, count_all):
    """Resample ``y_layout`` in place over ``pairs`` (rows of (partition, dim)); returns #changes."""
    inst_ptr, inst_list = partition_instances(layout, route_part)
    scope = region_scope(layout, y_layout)
    if _accel.enabled():
        return int(_sweep_y_nb(pairs, unif, layout.region_is_leaf, layout.region_leaf_base,
                               layout.region_part_ptr, layout.region_parts, layout.part_child_ptr,
                               layout.part_children, layout.part_region, layout.region_parent_part,
                               layout.region_child_pos, scope, y_layout, route_node, route_part,
                               pattern, phi, observed, eta, inst_ptr, inst_list, float(beta),
                               bool(count_all)))
    return _sweep_y_np(layout, pairs, unif, scope, y_layout, route_node, route_part, pattern, phi,
                       observed, eta, inst_ptr, inst_list, float(beta), bool(count_all))

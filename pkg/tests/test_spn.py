import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayspn.encoding import encode
from bayspn.layout import compile_layout, root_log_density
from bayspn.leaves import Bernoulli, Categorical, ColumnFamilies, EvaluationError, Gaussian
from bayspn.region_graph import GraphConfig, build_region_graph
from bayspn.scope import induced_scope, validate_scope
from bayspn.spn import (CapacityError, InstanceView, LeafNode, ProductNode, SpnGraph, SumNode, build_spn,
                        count_induced_trees, enumerate_induced_trees, evaluate_via_induced_trees,
                        graph_from_layout, log_density, log_evaluate)

from _oracles import all_states, all_z, log_joint_xz, random_params, random_spn


def _layout(depth, parts, kids, leaves, sums, dims):
    return compile_layout(build_region_graph(GraphConfig(depth, parts, kids), dims), leaves, sums)


def test_depth_zero_root_sum_over_leaves():
    g = build_spn(build_region_graph(GraphConfig(depth=0), 3), 1, 4)
    root = g.nodes[g.root]
    assert isinstance(root, SumNode) and len(root.children) == 1
    assert root.log_weights[0] == 0.0
    g3 = build_spn(build_region_graph(GraphConfig(depth=0), 3), 3, 4)
    assert len(g3.nodes[g3.root].children) == 3


def test_cross_product_count():
    g = build_spn(build_region_graph(GraphConfig(1, 1, 2), 4), 2, 3)
    root = g.nodes[g.root]
    assert len(root.children) == 4
    assert all(isinstance(g.nodes[c], ProductNode) for c in root.children)


def test_depth_two_product_tally():
    g = build_spn(build_region_graph(GraphConfig(2, 2, 2), 8), 2, 2)
    # 8 lower partitions over leaf pairs (2*2 each) + 2 root partitions over sum pairs (2*2 each)
    assert len(g.products()) == 8 * 4 + 2 * 4 == 40
    assert len(g.leaves()) == 16 * 2
    assert len(g.sums()) == 1 + 4 * 2
    for s in g.sums():
        assert len(g.nodes[s].children) == 8
        assert math.isclose(np.exp(g.nodes[s].log_weights).sum(), 1.0, abs_tol=1e-12)
    # children precede parents, single root, leaves are the only childless nodes
    for i, node in enumerate(g.nodes):
        if not isinstance(node, LeafNode):
            assert node.children and max(node.children) < i
    assert g.root == len(g.nodes) - 1


def test_all_missing_is_zero():
    layout = _layout(2, 2, 2, 2, 2, 5)
    fams = ColumnFamilies.bernoulli(5)
    sa, logw, theta = random_params(layout, fams, np.random.default_rng(0))
    g = graph_from_layout(layout, logw, theta, fams)
    inst = InstanceView(np.zeros(5), np.ones(5, dtype=bool))
    assert log_evaluate(g, induced_scope(layout.rg, sa), inst)[g.root] == 0.0


def test_factorised_leaf():
    g = SpnGraph([LeafNode(np.array([[0.5], [0.5]]), frozenset({0, 1}))], 0,
                 families=ColumnFamilies.bernoulli(2))
    val = log_evaluate(g, None, InstanceView.complete([1, 0]))[0]
    assert val == pytest.approx(math.log(0.25), abs=1e-15)


def test_unpopulated_parameter_raises():
    layout = _layout(1, 1, 2, 1, 1, 2)
    fams = ColumnFamilies.bernoulli(2)
    g = graph_from_layout(layout, families=fams)
    table = induced_scope(layout.rg, random_params(layout, fams, np.random.default_rng(0))[0])
    with pytest.raises(EvaluationError):
        log_evaluate(g, table, InstanceView.complete([1, 0]))


@pytest.mark.parametrize("seed", range(12))
def test_exhaustive_normalization(seed):
    rng = np.random.default_rng(seed)
    dims = int(rng.integers(1, 11))
    layout, g, table, *_ = random_spn(rng, dims, max_trees=10 ** 6)
    total = np.exp(log_density(g, table, all_states(dims))).sum()
    assert abs(total - 1.0) < 1e-8


@pytest.mark.parametrize("seed", range(8))
def test_marginalization_consistency(seed):
    rng = np.random.default_rng(100 + seed)
    dims = 5
    layout, g, table, *_ = random_spn(rng, dims)
    x = (rng.random(dims) < 0.5).astype(float)
    miss = rng.random(dims) < 0.3
    d = int(rng.integers(dims))
    miss[d] = False
    vals = []
    for v in (0.0, 1.0):
        x2 = x.copy()
        x2[d] = v
        vals.append(log_density(g, table, x2, miss)[0])
    masked = miss.copy()
    masked[d] = True
    assert np.logaddexp(*vals) == pytest.approx(log_density(g, table, x, masked)[0], abs=1e-10)


def test_single_sum_k_trees():
    fams = ColumnFamilies.bernoulli(1)
    leaves = [LeafNode(np.array([[p]]), frozenset({0})) for p in (0.2, 0.5, 0.9)]
    w = np.log(np.array([0.5, 0.3, 0.2]))
    g = SpnGraph(leaves + [SumNode([0, 1, 2], w)], 3, families=fams)
    assert len(list(enumerate_induced_trees(g))) == 3
    expect = math.log(0.5 * 0.2 + 0.3 * 0.5 + 0.2 * 0.9)
    assert evaluate_via_induced_trees(g, None, InstanceView.complete([1])) == pytest.approx(expect, abs=1e-14)
    assert log_evaluate(g, None, InstanceView.complete([1]))[3] == pytest.approx(expect, abs=1e-14)


def test_two_level_eight_trees():
    fams = ColumnFamilies.bernoulli(2)
    nodes = []

    def leaf(d, p):
        nodes.append(LeafNode(np.array([[p], [p]]), frozenset({d})))
        return len(nodes) - 1

    def sum_of(kids):
        nodes.append(SumNode(kids, np.log(np.full(len(kids), 1 / len(kids)))))
        return len(nodes) - 1

    prods = []
    for _ in range(2):
        a = sum_of([leaf(0, 0.3), leaf(0, 0.6)])
        b = sum_of([leaf(1, 0.1), leaf(1, 0.8)])
        nodes.append(ProductNode([a, b]))
        prods.append(len(nodes) - 1)
    root = sum_of(prods)
    g = SpnGraph(nodes, root, families=fams)
    trees = list(enumerate_induced_trees(g))
    assert len(trees) == count_induced_trees(g) == 8
    assert len({tuple(sorted(t.edges.items())) for t in trees}) == 8


def test_unary_sums_single_tree():
    layout = _layout(2, 1, 2, 1, 1, 4)
    fams = ColumnFamilies.bernoulli(4)
    sa, logw, theta = random_params(layout, fams, np.random.default_rng(1))
    g = graph_from_layout(layout, logw, theta, fams)
    table = induced_scope(layout.rg, sa)
    (tree,) = list(enumerate_induced_trees(g))
    x = InstanceView.complete([1, 0, 1, 1])
    vals = log_evaluate(g, table, x)
    assert vals[g.root] == pytest.approx(sum(vals[l] for l in tree.leaves), abs=1e-12)


def _tree_count_recursion(layout):
    counts = {}
    for r in range(layout.num_regions - 1, -1, -1):
        if layout.region_is_leaf[r]:
            counts[r] = 1
            continue
        total = 0
        for p in layout.parts_of(r):
            total += math.prod(int(layout.region_nnodes[c]) * counts[int(c)] for c in layout.children_of(p))
        counts[r] = total
    return counts[0]


@pytest.mark.parametrize("parts,kids,leaves,sums", [(2, 2, 2, 2), (1, 3, 2, 1), (2, 2, 1, 3)])
def test_tree_count_recursion(parts, kids, leaves, sums):
    g = graph_from_layout(_layout(2, parts, kids, leaves, sums, 6))
    assert count_induced_trees(g) == _tree_count_recursion(g.layout)
    if count_induced_trees(g) <= 20000:
        assert len(list(enumerate_induced_trees(g))) == count_induced_trees(g)


def test_capacity_guard():
    g = graph_from_layout(_layout(3, 2, 2, 4, 4, 8))
    with pytest.raises(CapacityError):
        next(iter(enumerate_induced_trees(g, limit=1000)))


def test_trees_touch_one_node_per_region():
    layout = _layout(2, 2, 2, 2, 2, 4)
    g = graph_from_layout(layout)
    for tree in enumerate_induced_trees(g):
        seen = {}
        stack = [g.root]
        while stack:
            i = stack.pop()
            node = g.nodes[i]
            if not isinstance(node, ProductNode):
                region = g.origin[i][1]
                assert seen.setdefault(region, i) == i
            if isinstance(node, SumNode):
                stack.append(node.children[tree.edges[i]])
            elif isinstance(node, ProductNode):
                stack.extend(node.children)


@pytest.mark.parametrize("seed", range(10))
def test_feed_forward_equals_tree_mixture(seed):
    rng = np.random.default_rng(seed)
    dims = int(rng.integers(2, 8))
    layout, g, table, *_ = random_spn(rng, dims)
    x = (rng.random(dims) < 0.5).astype(float)
    miss = rng.random(dims) < 0.2
    inst = InstanceView(x, miss)
    assert abs(evaluate_via_induced_trees(g, table, inst) - log_evaluate(g, table, inst)[g.root]) < 1e-10


@pytest.mark.parametrize("seed", range(6))
def test_latent_marginalisation(seed):
    rng = np.random.default_rng(seed)
    while True:
        layout, g, table, *_ = random_spn(rng, 4, max_depth=2)
        if 1 < len(g.sums()) <= 4 and math.prod(len(g.nodes[s].children) for s in g.sums()) <= 5000:
            break
    x = (rng.random(4) < 0.5).astype(float)
    miss = np.zeros(4, dtype=bool)
    lj = [log_joint_xz(g, table, x, miss, z) for z in all_z(g)]
    assert np.logaddexp.reduce(lj) == pytest.approx(log_density(g, table, x, miss)[0], abs=1e-10)


def _mixed_families():
    return ColumnFamilies([Bernoulli(), Gaussian(), Categorical(3), Bernoulli(), Gaussian()])


@pytest.mark.parametrize("alpha", [1.0, 0.05])
def test_vectorised_pass_matches_graph(alpha):
    rng = np.random.default_rng(int(alpha * 100))
    fams = _mixed_families()
    for config in [GraphConfig(0, 1, 2, 1, 3), GraphConfig(1, 2, 2, 2, 2), GraphConfig(2, 2, 3, 3, 2)]:
        layout = compile_layout(build_region_graph(config, 5), config.leaves_per_region, config.sums_per_region)
        sa, logw, theta = random_params(layout, fams, rng, alpha=alpha)
        values = np.column_stack([rng.integers(0, 2, 40), rng.normal(size=40), rng.integers(1, 4, 40),
                                  rng.integers(0, 2, 40), 3 * rng.normal(size=40)]).astype(float)
        miss = rng.random(values.shape) < 0.25
        miss[0] = True
        data = encode(values, miss, fams)
        fast = root_log_density(layout, logw, fams.natural(theta), layout.layout_y(sa.y), data.phi,
                                data.observed_any)[data.pattern]
        g = graph_from_layout(layout, logw, theta, fams)
        ref = log_density(g, induced_scope(layout.rg, sa), np.where(miss, 0.0, values), miss)
        np.testing.assert_allclose(fast, ref, rtol=1e-10, atol=1e-10)
        assert fast[0] == 0.0


def test_extreme_leaf_values_stay_finite():
    # leaves far apart in log space push the linear-space mixture below the float range
    layout = _layout(1, 2, 2, 3, 2, 60)
    fams = ColumnFamilies.bernoulli(60)
    rng = np.random.default_rng(0)
    sa, logw, theta = random_params(layout, fams, rng)
    theta[:] = 1e-9
    theta[::2] = 1 - 1e-9
    x = np.ones((3, 60))
    data = encode(x, None, fams)
    fast = root_log_density(layout, logw, fams.natural(theta), layout.layout_y(sa.y), data.phi, data.observed_any)
    g = graph_from_layout(layout, logw, theta, fams)
    ref = log_density(g, induced_scope(layout.rg, sa), x)
    assert np.isfinite(fast).all()
    np.testing.assert_allclose(fast[data.pattern], ref, rtol=1e-10)


@dataclass(frozen=True)
class _CountingBernoulli(Bernoulli):
    def log_pdf(self, theta, x):
        _calls.append(np.asarray(x).copy())
        return super().log_pdf(theta, x)


_calls: list = []


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), frac=st.floats(0.0, 1.0))
def test_missing_entries_never_evaluated(seed, frac):
    rng = np.random.default_rng(seed)
    dims = 4
    fams = ColumnFamilies([_CountingBernoulli()] * dims)
    layout = _layout(1, 2, 2, 2, 1, dims)
    sa, logw, theta = random_params(layout, fams, rng)
    table = induced_scope(layout.rg, sa)
    assert validate_scope(layout.rg, table) == []
    g = graph_from_layout(layout, logw, theta, fams)
    values = (rng.random((6, dims)) < 0.5).astype(float)
    miss = rng.random((6, dims)) < frac
    values[miss] = np.nan
    _calls.clear()
    log_density(g, table, values, miss)
    seen = np.concatenate(_calls) if _calls else np.zeros(0)
    assert not np.isnan(seen).any()
    # one entry per (leaf, in-scope dim, observed row)
    expect = sum((~miss[:, d]).sum() for l in g.leaves() for d in table.regions[g.origin[l][1]])
    assert len(seen) == expect

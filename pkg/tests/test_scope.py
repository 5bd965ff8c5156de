import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bayspn.region_graph import GraphConfig, build_region_graph
from bayspn.scope import (ScopeAssignment, ScopeTable, check_assignment, induced_scope,
                          sample_scope_prior, validate_scope)

from _oracles import brute_scope, random_region_graph


def test_depth_one_example():
    rg = build_region_graph(GraphConfig(1, 1, 2), 3)
    sa = ScopeAssignment.from_list([[1, 2, 1]])
    table = induced_scope(rg, sa)
    r1, r2 = rg.partition(0).children
    assert table.regions[r1] == {0, 2}
    assert table.regions[r2] == {1}
    assert table.regions[rg.root] == {0, 1, 2}
    assert sa.to_list() == [[1, 2, 1]]


def test_root_is_full_for_any_draw():
    rg = build_region_graph(GraphConfig(2, 2, 2), 6)
    rng = np.random.default_rng(3)
    for _ in range(20):
        assert induced_scope(rg, sample_scope_prior(rg, 0.5, rng)).regions[rg.root] == frozenset(range(6))


def test_matches_indicator_oracle():
    rg = build_region_graph(GraphConfig(2, 2, 2), 7)
    rng = np.random.default_rng(11)
    for _ in range(100):
        sa = sample_scope_prior(rg, 1.0, rng)
        assert induced_scope(rg, sa).regions == brute_scope(rg, sa.y)


def test_seed_determinism():
    rg = build_region_graph(GraphConfig(2, 2, 3), 9)
    a = sample_scope_prior(rg, 1.0, np.random.default_rng(5))
    b = sample_scope_prior(rg, 1.0, np.random.default_rng(5))
    np.testing.assert_array_equal(a.y, b.y)


def test_large_beta_is_symmetric():
    rg = build_region_graph(GraphConfig(1, 1, 2), 50)
    rng = np.random.default_rng(0)
    freq = np.mean([sample_scope_prior(rg, 1e6, rng).y.mean() for _ in range(400)])
    assert abs(freq - 0.5) < 0.01


def test_small_beta_rich_get_richer():
    rg = build_region_graph(GraphConfig(1, 1, 2), 100)
    rng = np.random.default_rng(1)
    n0 = np.array([(sample_scope_prior(rg, 0.1, rng).y[0] == 0).sum() for _ in range(1000)])
    # under independent fair coins each count is Binomial(100, 1/2)
    chi2 = ((n0 - 50.0) ** 2 / 25.0).sum()
    assert stats.chi2.sf(chi2, df=len(n0)) < 0.01


def test_beta_must_be_positive():
    rg = build_region_graph(GraphConfig(1, 1, 2), 3)
    with pytest.raises(ValueError):
        sample_scope_prior(rg, 0.0, np.random.default_rng(0))


def test_check_assignment_shape_and_range():
    rg = build_region_graph(GraphConfig(1, 1, 2), 3)
    check_assignment(rg, ScopeAssignment(np.zeros((1, 3), dtype=np.int64)))
    with pytest.raises(ValueError):
        check_assignment(rg, ScopeAssignment(np.zeros((2, 3), dtype=np.int64)))
    with pytest.raises(ValueError):
        check_assignment(rg, ScopeAssignment(np.array([[0, 2, 1]])))


def _table(rg, y):
    return induced_scope(rg, ScopeAssignment(np.asarray(y)))


def test_shared_dimension_breaks_decomposability():
    rg = build_region_graph(GraphConfig(1, 1, 2), 4)
    table = _table(rg, [[0, 1, 0, 1]])
    r1, r2 = rg.partition(0).children
    regions = dict(table.regions)
    regions[r1] = regions[r1] | {2}
    regions[r2] = regions[r2] | {2}
    problems = validate_scope(rg, ScopeTable(regions, table.partitions))
    assert any("partition 0" in p and "decomposability" in p for p in problems)


def test_partition_smaller_than_region_breaks_completeness():
    rg = build_region_graph(GraphConfig(1, 1, 2), 4)
    table = _table(rg, [[0, 1, 0, 1]])
    parts = {0: frozenset({0, 1, 2})}
    problems = validate_scope(rg, ScopeTable(table.regions, parts))
    assert any("completeness" in p for p in problems)


def test_root_not_full():
    rg = build_region_graph(GraphConfig(1, 1, 2), 3)
    table = _table(rg, [[0, 1, 0]])
    regions = dict(table.regions)
    regions[rg.root] = frozenset({0, 1})
    assert any("root scope" in p for p in validate_scope(rg, ScopeTable(regions, table.partitions)))


def test_empty_scopes_are_legal():
    rg = build_region_graph(GraphConfig(2, 1, 2), 3)
    table = _table(rg, np.zeros((len(rg.partitions), 3), dtype=np.int64))
    assert any(len(s) == 0 for s in table.regions.values())
    assert validate_scope(rg, table) == []


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), dims=st.integers(1, 9), beta=st.floats(0.05, 5.0))
def test_leaf_scopes_partition_dimensions(seed, dims, beta):
    rng = np.random.default_rng(seed)
    rg = random_region_graph(rng, dims)
    sa = sample_scope_prior(rg, beta, rng)
    table = induced_scope(rg, sa)
    assert validate_scope(rg, table) == []
    # the children of every partition split their region's scope
    for r in rg.regions:
        for pid in r.children:
            kids = [table.regions[c] for c in rg.partition(pid).children]
            assert frozenset().union(*kids) == table.regions[r.id]
            assert sum(len(k) for k in kids) == len(table.regions[r.id])
    assert table.regions == brute_scope(rg, sa.y)


def test_single_partition_graph_leaves_cover_once():
    rg = build_region_graph(GraphConfig(3, 1, 2), 10)
    rng = np.random.default_rng(2)
    for _ in range(50):
        table = induced_scope(rg, sample_scope_prior(rg, 1.0, rng))
        hits = np.zeros(10, dtype=int)
        for r in rg.leaf_regions():
            hits[list(table.regions[r.id])] += 1
        assert (hits == 1).all()

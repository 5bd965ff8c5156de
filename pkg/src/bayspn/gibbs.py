"""Joint Gibbs sampler over scope assignments, sum weights and leaf parameters.

One iteration is::

    sample_z -> update_weights -> update_leaf_params -> sweep_y

``z`` is stored only where the instance's induced tree visits a sum (the
routing arrays).  Unvisited sums would get ``z`` drawn from ``Cat(w_S)``;
those draws only ever enter the weight counts, so :func:`update_weights`
adds them as one multinomial per sum instead of materialising them.
:func:`complete_z` produces the explicit per-(instance, sum) table when it is
needed for inspection.

All randomness comes from one ``numpy.random.Generator`` seeded from
``TrainConfig.seed``; per-instance kernels consume pre-drawn uniforms, so
results do not depend on the thread count or on whether numba is enabled.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .encoding import EncodedData
from .layout import RegionLayout, root_log_density
from .leaves import ColumnFamilies
from .posterior import PosteriorChain, Snapshot
from .region_graph import ConfigError
from .scope import ScopeAssignment, induced_scope, sample_scope_prior

log = logging.getLogger("bayspn")

PRESETS = {
    "paper": {"burn_in": 5000, "num_samples": 10000, "thinning": 1},
    "desk": {"burn_in": 500, "num_samples": 200, "thinning": 5},
}


class ChainError(RuntimeError):
    """The chain produced a non-finite log-likelihood."""

    def __init__(self, iteration, message):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 1.0
    burn_in: int = 500
    num_samples: int = 200
    thinning: int = 5
    seed: int = 0
    # "scope": m_{P,k} counts the other dims in scope at P; "all": every other dim
    prior_counts: str = "scope"

    def check(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError("alpha and beta must be positive")
        if self.burn_in < 0 or self.num_samples < 1 or self.thinning < 1:
            raise ConfigError("need burn_in >= 0, num_samples >= 1, thinning >= 1")
        if self.prior_counts not in ("scope", "all"):
            raise ConfigError(f"prior_counts must be 'scope' or 'all', got {self.prior_counts!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must fit in 64 bits")
        return self

    @property
    def num_iterations(self):
        return self.burn_in + self.num_samples * self.thinning

    @classmethod
    def preset(cls, name, **overrides):
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}")
        return cls(**{**PRESETS[name], **overrides})

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class GibbsState:
    layout: RegionLayout
    families: ColumnFamilies
    y: np.ndarray                 # layout-level scope assignment (incl. pseudo row)
    log_weights: np.ndarray       # flat, see RegionLayout.sum_w_off
    theta: np.ndarray             # (L, D, P)
    beta: float = 1.0
    route_node: np.ndarray = None
    route_part: np.ndarray = None
    route_choice: np.ndarray = None
    visit_counts: np.ndarray = None
    num_instances: int = 0

    @property
    def scope_assignment(self):
        return ScopeAssignment(self.y[: self.layout.num_real_partitions].copy(), self.beta)

    @property
    def scope_table(self):
        return induced_scope(self.layout.rg, self.scope_assignment)

    def eta(self):
        return self.families.natural(self.theta)

    def snapshot(self):
        return Snapshot(self.y[: self.layout.num_real_partitions].copy(),
                        self.log_weights.copy(), self.theta.copy())


def sample_log_dirichlet(layout, conc, rng):
    """Log of independent Dirichlet draws for every sum, concentrations on the flat weight axis.

    Small concentrations use Gamma(a) = Gamma(a + 1) * U^(1/a) in log space,
    so weights far below the float range stay finite.
    """
    conc = np.asarray(conc, dtype=float)
    small = conc < 1.0
    g = rng.standard_gamma(np.where(small, conc + 1.0, conc))
    u = rng.random(conc.shape)
    with np.errstate(divide="ignore"):
        logg = np.log(g) + np.where(small, np.log(u) / conc, 0.0)
    offs = layout.sum_w_off
    sizes = np.diff(np.append(offs, len(conc)))
    mx = np.maximum.reduceat(logg, offs)
    shifted = np.exp(logg - np.repeat(mx, sizes))
    lognorm = mx + np.log(np.add.reduceat(shifted, offs))
    return logg - np.repeat(lognorm, sizes)


def init_state(layout, families, config: TrainConfig, rng) -> GibbsState:
    """Draw (y, w, theta) from the prior."""
    sa = sample_scope_prior(layout.rg, config.beta, rng)
    logw = sample_log_dirichlet(layout, np.full(layout.num_weights, config.alpha), rng)
    theta = families.prior_sample(layout.num_leaves, rng)
    return GibbsState(layout, families, layout.layout_y(sa.y), logw, theta, config.beta)


def upward_pass(state, data: EncodedData):
    """Node values for every distinct pattern and the root log density per pattern."""
    out = []
    root = root_log_density(state.layout, state.log_weights, state.eta(), state.y, data.phi,
                            data.observed_any, values_out=out)
    return out[0], root


def sample_z(state, data: EncodedData, rng, values=None):
    """Ancestral sampling of every instance's induced tree given (y, w, theta)."""
    if values is None:
        values, _ = upward_pass(state, data)
    unif = rng.random((data.num_instances, state.layout.num_regions))
    (state.route_node, state.route_part, state.route_choice,
     state.visit_counts) = kernels.route(state.layout, values, state.log_weights, data.pattern, unif)
    state.num_instances = data.num_instances
    return state


def complete_z(state, rng):
    """Explicit z table (N, num_sums): routed choices plus prior draws for unvisited sums."""
    layout = state.layout
    n = state.num_instances
    z = np.full((n, layout.num_sums), -1, dtype=np.int64)
    inst, r = np.nonzero((state.route_node >= 0) & ~layout.region_is_leaf[None, :])
    z[inst, layout.region_sum_base[r] + state.route_node[inst, r]] = state.route_choice[inst, r]
    for g in range(layout.num_sums):
        free = np.flatnonzero(z[:, g] < 0)
        if free.size:
            m = layout.region_nprod[layout.sum_region[g]]
            w = np.exp(state.log_weights[layout.sum_w_off[g]: layout.sum_w_off[g] + m])
            z[free, g] = rng.choice(m, size=free.size, p=w / w.sum())
    return z


def weight_counts(state, rng):
    """c_{S,k} over all N instances: routed counts plus multinomial prior draws for unvisited ones."""
    layout = state.layout
    counts = np.zeros(layout.num_weights) if state.visit_counts is None else state.visit_counts.copy()
    n = state.num_instances
    if n == 0:
        return counts
    for r in range(layout.num_regions):
        if layout.region_is_leaf[r]:
            continue
        base = layout.sum_w_off[layout.region_sum_base[r]]
        j, m = layout.region_nnodes[r], layout.region_nprod[r]
        block = counts[base: base + j * m].reshape(j, m)
        unvisited = n - block.sum(axis=1).astype(np.int64)
        if not unvisited.any():
            continue
        p = np.exp(layout.weight_block(state.log_weights, r))
        p /= p.sum(axis=1, keepdims=True)
        block += rng.multinomial(unvisited, p)
    return counts


def update_weights(state, alpha, rng):
    counts = weight_counts(state, rng)
    state.log_weights = sample_log_dirichlet(state.layout, alpha + counts, rng)
    return state


def leaf_feature_sums(state, data: EncodedData):
    if state.route_node is None:
        return np.zeros((state.layout.num_leaves, data.phi.shape[1], data.phi.shape[2]))
    return kernels.leaf_stats(state.layout, state.route_node, state.route_part, state.y,
                              data.phi, data.observed, data.pattern)


def update_leaf_params(state, data: EncodedData, rng):
    """Conjugate draws per (leaf, dim); out-of-scope or unrouted pairs see empty stats, i.e. the prior."""
    state.theta = state.families.posterior_sample(leaf_feature_sums(state, data), rng)
    return state


def y_conditional(state, data: EncodedData, p, d, beta=None, prior_counts="scope"):
    """Unnormalised log p(y_{P,d} = k | rest) for each child k of partition row ``p``."""
    beta = state.beta if beta is None else beta
    return kernels.y_logits(state.layout, int(p), int(d), state.y, state.route_node, state.route_part,
                            data.pattern, data.phi, data.observed, state.eta(), beta,
                            prior_counts == "all")


def sweep_pairs(layout):
    """(partition, dim) pairs that the structure sampler visits."""
    parts = np.arange(layout.num_real_partitions)
    parts = parts[layout.part_child_ptr[parts + 1] - layout.part_child_ptr[parts] >= 2]
    pp, dd = np.meshgrid(parts, np.arange(layout.num_dims), indexing="ij")
    return np.ascontiguousarray(np.stack([pp.ravel(), dd.ravel()], axis=1).astype(np.int64))


def sweep_y(state, data: EncodedData, beta, rng, prior_counts="scope"):
    """Resample every y_{P,d} once, in a fresh random order; returns the number of changes."""
    pairs = sweep_pairs(state.layout)
    pairs = pairs[rng.permutation(len(pairs))]
    unif = rng.random(len(pairs))
    if len(pairs) == 0:
        return 0
    state.beta = beta
    route_node, route_part = state.route_node, state.route_part
    if route_node is None:
        route_node = np.zeros((0, state.layout.num_regions), dtype=np.int64)
        route_part = route_node
    return kernels.sweep_y(state.layout, pairs, unif, state.y, route_node, route_part,
                           data.pattern, data.phi, data.observed, state.eta(), beta,
                           prior_counts == "all")


def gibbs_iteration(state, data: EncodedData, config: TrainConfig, rng, values=None):
    """One full sweep over (z, w, theta, y)."""
    sample_z(state, data, rng, values)
    update_weights(state, config.alpha, rng)
    update_leaf_params(state, data, rng)
    sweep_y(state, data, config.beta, rng, config.prior_counts)
    return state


def stored_iterations(config: TrainConfig):
    return set(range(config.burn_in + config.thinning - 1, config.num_iterations, config.thinning))


def _mean_ll(root, data):
    return float(np.dot(data.counts, root) / max(data.num_instances, 1))


def run_chain(layout: RegionLayout, data: EncodedData, config: TrainConfig, trace=None,
              graph_config=None) -> PosteriorChain:
    """Run the sampler and return the stored snapshots.

    ``trace`` is an optional writable text stream that receives one line per
    iteration: index, train log-likelihood of the state after that iteration,
    and wall time of the iteration in seconds.
    """
    config.check()
    if data.num_instances == 0:
        raise ConfigError("training data is empty")
    rng = np.random.default_rng(np.random.SeedSequence(int(config.seed)))
    state = init_state(layout, data.families, config, rng)
    keep = stored_iterations(config)
    snapshots, history = [], []
    acc = np.full(data.num_patterns, -np.inf)
    total = config.num_iterations
    tick = time.perf_counter()
    for it in range(total + 1):
        values, root = upward_pass(state, data)
        if it > 0:
            bad = ~np.isfinite(root)
            if bad.any():
                raise ChainError(it - 1, f"non-finite log-likelihood for {int(bad.sum())} training patterns")
            ll = _mean_ll(root, data)
            now = time.perf_counter()
            history.append((it - 1, ll, now - tick))
            tick = now
            if trace is not None:
                trace.write(f"{it - 1}\t{ll!r}\t{history[-1][2]:.6f}\n")
            if (it - 1) % 100 == 0 or it == total:
                log.info("iteration %d/%d train LL %.5f", it, total, ll)
            if (it - 1) in keep:
                acc = np.logaddexp(acc, root)
        if it == total:
            break
        gibbs_iteration(state, data, config, rng, values)
        if it in keep:
            snapshots.append(state.snapshot())
    t = len(snapshots)
    train_score = _mean_ll(acc - np.log(t), data)
    return PosteriorChain(
        layout=layout,
        families=data.families,
        snapshots=snapshots,
        train_config=config,
        graph_config=graph_config,
        trace=history,
        train_digest=data.digest,
        train_score=train_score,
    )


def with_seed(config: TrainConfig, seed):
    return replace(config, seed=int(seed))

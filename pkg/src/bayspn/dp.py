"""Truncated stick-breaking mixture of Bayesian SPNs.

Blocked Gibbs over ``K_max`` components that share one region graph:

    (a) cluster assignments  ~  pi_k * p_k(x_n)
    (b) sticks               ~  Beta(1 + n_k, c + sum_{j>k} n_j)
    (c) one Gibbs iteration of every component on its own instances

Components with no instances still take their iteration, which then draws
their parameters from the prior.  Component 0 uses the same random stream as
:func:`bayspn.gibbs.run_chain` with the same seed, so ``K_max = 1`` reproduces
the single-SPN chain exactly.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .encoding import EncodedData, encode
from .gibbs import ChainError, TrainConfig, gibbs_iteration, init_state, stored_iterations, upward_pass
from .layout import RegionLayout
from .leaves import ColumnFamilies
from .posterior import snapshot_pattern_ll
from .region_graph import ConfigError

log = logging.getLogger("bayspn")


@dataclass(frozen=True)
class DpConfig:
    concentration: float = 1.0
    k_max: int = 20

    def check(self):
        if int(self.k_max) < 1:
            raise ConfigError(f"K_max must be at least 1, got {self.k_max}")
        if not self.concentration > 0:
            raise ConfigError("concentration must be positive")
        return self

    def to_dict(self):
        return {"concentration": self.concentration, "k_max": self.k_max}


@dataclass(frozen=True, eq=False)
class DpSnapshot:
    log_pi: np.ndarray          # (K_max,) stick weights, tail mass excluded
    components: list            # K_max Snapshots
    assignments: np.ndarray     # (N,)


@dataclass
class DpState:
    concentration: float
    k_max: int
    stick_betas: np.ndarray
    cluster_assignments: np.ndarray
    components: list

    @property
    def log_pi(self):
        return stick_log_weights(self.stick_betas)


@dataclass(eq=False)
class DpChain:
    layout: RegionLayout
    families: ColumnFamilies
    snapshots: list
    dp_config: DpConfig
    train_config: TrainConfig = None
    graph_config: object = None
    trace: list = field(default_factory=list)
    train_digest: str | None = None
    train_score: float | None = None


def stick_log_weights(betas):
    """log pi_k = log b_k + sum_{j<k} log(1 - b_j)."""
    betas = np.asarray(betas, dtype=float)
    with np.errstate(divide="ignore"):
        log_rest = np.concatenate([[0.0], np.cumsum(np.log1p(-betas))[:-1]])
        return np.log(betas) + log_rest


def sample_sticks(counts, concentration, rng):
    counts = np.asarray(counts, dtype=float)
    tail = np.concatenate([np.cumsum(counts[::-1])[::-1][1:], [0.0]])
    return rng.beta(1.0 + counts, concentration + tail)


def _normalise(log_pi):
    finite = log_pi[np.isfinite(log_pi)]
    top = finite.max() if finite.size else 0.0
    return log_pi - (top + np.log(np.exp(log_pi - top).sum()))


def _mixture_ll(log_pi, comp_ll):
    """log sum_k pi_k p_k for (K,) log weights (renormalised) and (K, U) component values."""
    t = _normalise(log_pi)[:, None] + comp_ll
    mx = t.max(axis=0)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(t - mx).sum(axis=0)) + mx


def _assign(log_pi, comp_ll, pattern, rng):
    logits = log_pi[:, None] + comp_ll          # (K, U)
    logits = logits[:, pattern].T               # (N, K)
    mx = logits.max(axis=1, keepdims=True)
    cdf = np.cumsum(np.exp(logits - mx), axis=1)
    u = rng.random(len(pattern)) * cdf[:, -1]
    return np.minimum((cdf < u[:, None]).sum(axis=1), logits.shape[1] - 1)


def component_rng(seed, k):
    if k == 0:
        return np.random.default_rng(np.random.SeedSequence(int(seed)))
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(k)]))


def run_dp_chain(layout: RegionLayout, data: EncodedData, config: TrainConfig, dp_config: DpConfig,
                 trace=None, graph_config=None) -> DpChain:
    config.check()
    dp_config.check()
    if data.num_instances == 0:
        raise ConfigError("training data is empty")
    k_max = int(dp_config.k_max)
    rngs = [component_rng(config.seed, k) for k in range(k_max)]
    dp_rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 2 ** 32]))
    states = [init_state(layout, data.families, config, rngs[k]) for k in range(k_max)]
    betas = sample_sticks(np.zeros(k_max), dp_config.concentration, dp_rng)
    z = np.zeros(data.num_instances, dtype=np.int64)
    keep = stored_iterations(config)
    snapshots, history = [], []
    acc = np.full(data.num_patterns, -np.inf)
    total = config.num_iterations
    tick = time.perf_counter()
    for it in range(total + 1):
        passes = [upward_pass(s, data) for s in states]
        comp_ll = np.stack([root for _, root in passes])
        log_pi = stick_log_weights(betas)
        if it > 0:
            mix = _mixture_ll(log_pi, comp_ll)
            if not np.isfinite(mix).all():
                raise ChainError(it - 1, "non-finite mixture log-likelihood")
            ll = float(np.dot(data.counts, mix) / data.num_instances)
            now = time.perf_counter()
            history.append((it - 1, ll, now - tick))
            tick = now
            if trace is not None:
                trace.write(f"{it - 1}\t{ll!r}\t{history[-1][2]:.6f}\n")
            if (it - 1) % 100 == 0 or it == total:
                log.info("iteration %d/%d train LL %.5f, %d clusters", it, total, ll,
                         len(np.unique(z)))
            if (it - 1) in keep:
                acc = np.logaddexp(acc, mix)
        if it == total:
            break
        if k_max > 1:
            z = _assign(log_pi, comp_ll, data.pattern, dp_rng)
        counts = np.bincount(z, minlength=k_max)
        betas = sample_sticks(counts, dp_config.concentration, dp_rng)
        for k in range(k_max):
            idx = np.flatnonzero(z == k)
            gibbs_iteration(states[k], data.subset(idx), config, rngs[k], passes[k][0])
        if it in keep:
            snapshots.append(DpSnapshot(stick_log_weights(betas), [s.snapshot() for s in states], z.copy()))
    train_score = float(np.dot(data.counts, acc - np.log(len(snapshots))) / data.num_instances)
    return DpChain(layout, data.families, snapshots, dp_config, config, graph_config, history,
                   data.digest, train_score)


def dp_pattern_ll(chain: DpChain, data: EncodedData):
    if not chain.snapshots:
        raise ValueError("chain has no snapshots")
    per = []
    for snap in chain.snapshots:
        comp = np.stack([snapshot_pattern_ll(chain.layout, chain.families, c, data) for c in snap.components])
        per.append(_mixture_ll(snap.log_pi, comp))
    per = np.stack(per)
    mx = per.max(axis=0)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.mean(np.exp(per - mx), axis=0)) + mx


def dp_predictive(chain: DpChain, values, missing=None):
    """Predictive log density of every row under the mixture, (N,)."""
    data = encode(values, missing, chain.families)
    return dp_pattern_ll(chain, data)[data.pattern]


def occupied_clusters(snapshot: DpSnapshot):
    return np.unique(snapshot.assignments)


def as_single_snapshot_list(chain: DpChain, k):
    """Component ``k``'s snapshots, e.g. to inspect one cluster's SPN."""
    return [s.components[k] for s in chain.snapshots]


__all__ = ["DpConfig", "DpSnapshot", "DpState", "DpChain", "run_dp_chain", "dp_predictive",
           "dp_pattern_ll", "stick_log_weights", "sample_sticks", "occupied_clusters"]

"""Univariate leaf families with conjugate priors.

Every family is written as an exponential family ``log p(x | theta) =
features(x) . natural(theta)``.  Summed features double as the sufficient
statistics, which lets the sampler compute leaf log-likelihoods with a single
matrix product and update parameters from plain feature sums.

Categorical states are numbered ``1..K``, like the scope indices on disk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class EvaluationError(ValueError):
    """A density was requested for an ill-typed value or a missing parameter."""


@dataclass(frozen=True)
class Bernoulli:
    a0: float = 1.0
    b0: float = 1.0
    tag = "bernoulli"
    n_params = 1

    @property
    def n_features(self):
        return 2

    def check_value(self, x):
        if x not in (0, 1, 0.0, 1.0, True, False):
            raise EvaluationError(f"Bernoulli value must be 0 or 1, got {x!r}")

    def features(self, x):
        x = np.asarray(x)
        return np.stack([(x == 1), (x == 0)], axis=-1).astype(float)

    def natural(self, theta):
        p = theta[..., 0]
        with np.errstate(divide="ignore"):
            return np.stack([np.log(p), np.log1p(-p)], axis=-1)

    def log_density(self, theta, x):
        self.check_value(x)
        return float(self.log_pdf(theta, np.asarray([x]))[0])

    def log_pdf(self, theta, x):
        x = np.asarray(x)
        if not np.isin(x, (0, 1)).all():
            raise EvaluationError("Bernoulli values must be 0 or 1")
        p = float(np.asarray(theta).reshape(-1)[0])
        with np.errstate(divide="ignore"):
            return np.where(x == 1, np.log(p), np.log1p(-p))

    def prior_sample(self, rng, size):
        return rng.beta(self.a0, self.b0, size=size)[:, None]

    def posterior_sample(self, sums, rng):
        sums = np.asarray(sums, dtype=float).reshape(-1, 2)
        return rng.beta(self.a0 + sums[:, 0], self.b0 + sums[:, 1])[:, None]

    def to_dict(self):
        return {"family": self.tag, "a0": self.a0, "b0": self.b0}


@dataclass(frozen=True)
class Gaussian:
    """Normal likelihood with a Normal-Gamma prior on (mean, precision)."""

    mu0: float = 0.0
    lam0: float = 1.0
    a0: float = 2.0
    b0: float = 1.0
    tag = "gaussian"
    n_params = 2

    @property
    def n_features(self):
        return 3

    def check_value(self, x):
        if isinstance(x, (bool, np.bool_)) or not np.isfinite(x):
            raise EvaluationError(f"Gaussian value must be a finite real, got {x!r}")

    def features(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.ones_like(x), x, x * x], axis=-1)

    def natural(self, theta):
        mu, var = theta[..., 0], theta[..., 1]
        tau = 1.0 / var
        return np.stack(
            [-0.5 * mu * mu * tau + 0.5 * np.log(tau) - 0.5 * LOG_2PI, mu * tau, -0.5 * tau], axis=-1
        )

    def log_density(self, theta, x):
        self.check_value(x)
        return float(self.log_pdf(theta, np.asarray([x], dtype=float))[0])

    def log_pdf(self, theta, x):
        x = np.asarray(x, dtype=float)
        if not np.isfinite(x).all():
            raise EvaluationError("Gaussian values must be finite")
        mu, var = (float(t) for t in np.asarray(theta).reshape(-1)[:2])
        return -0.5 * (LOG_2PI + math.log(var) + (x - mu) ** 2 / var)

    def posterior_params(self, n, sx, sxx):
        lam = self.lam0 + n
        mu = (self.lam0 * self.mu0 + sx) / lam
        a = self.a0 + 0.5 * n
        b = self.b0 + 0.5 * (sxx + self.lam0 * self.mu0 ** 2 - lam * mu * mu)
        return mu, lam, a, np.maximum(b, 1e-12)

    def _draw(self, mu, lam, a, b, rng):
        tau = rng.gamma(a, 1.0 / b)
        mean = rng.normal(mu, 1.0 / np.sqrt(lam * tau))
        return np.stack([mean, 1.0 / tau], axis=-1)

    def prior_sample(self, rng, size):
        return self._draw(np.full(size, self.mu0), np.full(size, self.lam0),
                          np.full(size, self.a0), np.full(size, self.b0), rng)

    def posterior_sample(self, sums, rng):
        sums = np.asarray(sums, dtype=float).reshape(-1, 3)
        return self._draw(*self.posterior_params(sums[:, 0], sums[:, 1], sums[:, 2]), rng)

    def to_dict(self):
        return {"family": self.tag, "mu0": self.mu0, "lam0": self.lam0, "a0": self.a0, "b0": self.b0}


@dataclass(frozen=True)
class Categorical:
    arity: int
    gamma: float = 1.0
    tag = "categorical"

    @property
    def n_params(self):
        return self.arity

    @property
    def n_features(self):
        return self.arity

    def check_value(self, x):
        if isinstance(x, (bool, np.bool_)) or x != int(x) or not 1 <= int(x) <= self.arity:
            raise EvaluationError(f"categorical value must be an integer in 1..{self.arity}, got {x!r}")

    def features(self, x):
        x = np.asarray(x)
        return (x[..., None] == np.arange(1, self.arity + 1)).astype(float)

    def natural(self, theta):
        with np.errstate(divide="ignore"):
            return np.log(theta[..., : self.arity])

    def log_density(self, theta, x):
        self.check_value(x)
        return float(self.log_pdf(theta, np.asarray([x]))[0])

    def log_pdf(self, theta, x):
        x = np.asarray(x)
        if not (np.equal(np.mod(x, 1), 0).all() and ((x >= 1) & (x <= self.arity)).all()):
            raise EvaluationError(f"categorical values must be integers in 1..{self.arity}")
        q = np.asarray(theta, dtype=float).reshape(-1)[: self.arity]
        with np.errstate(divide="ignore"):
            return np.log(q)[x.astype(np.int64) - 1]

    def prior_sample(self, rng, size):
        return rng.dirichlet(np.full(self.arity, self.gamma), size=size)

    def posterior_sample(self, sums, rng):
        sums = np.asarray(sums, dtype=float).reshape(-1, self.arity)
        # per-row Dirichlet via normalised gammas
        g = rng.standard_gamma(self.gamma + sums)
        g = np.maximum(g, np.finfo(float).tiny)
        return g / g.sum(axis=1, keepdims=True)

    def to_dict(self):
        return {"family": self.tag, "arity": self.arity, "gamma": self.gamma}


LeafFamily = Bernoulli | Gaussian | Categorical


def family_from_dict(meta):
    tag = meta.get("family", "bernoulli")
    if tag == "bernoulli":
        return Bernoulli(meta.get("a0", 1.0), meta.get("b0", 1.0))
    if tag == "gaussian":
        return Gaussian(meta.get("mu0", 0.0), meta.get("lam0", 1.0), meta.get("a0", 2.0), meta.get("b0", 1.0))
    if tag == "categorical":
        return Categorical(int(meta["arity"]), meta.get("gamma", 1.0))
    raise ValueError(f"unknown leaf family {tag!r}")


def leaf_log_density(family, theta, x):
    return family.log_density(theta, x)


@dataclass(frozen=True)
class SuffStats:
    """Additive sufficient statistics (summed features) for one family."""

    family: object
    sums: tuple = None

    def __post_init__(self):
        if self.sums is None:
            object.__setattr__(self, "sums", (0.0,) * self.family.n_features)

    @property
    def n(self):
        if isinstance(self.family, Gaussian):
            return self.sums[0]
        return sum(self.sums)

    @property
    def s(self):
        return self.sums[0]

    @property
    def sum_x(self):
        return self.sums[1]

    @property
    def sum_x2(self):
        return self.sums[2]

    @property
    def counts(self):
        return self.sums

    def __add__(self, other):
        if other.family != self.family:
            raise ValueError("cannot merge statistics of different families")
        return SuffStats(self.family, tuple(a + b for a, b in zip(self.sums, other.sums)))


def accumulate(stats: SuffStats, x) -> SuffStats:
    stats.family.check_value(x)
    phi = stats.family.features(np.asarray(x))
    return SuffStats(stats.family, tuple(float(a + b) for a, b in zip(stats.sums, phi)))


def merge(a: SuffStats, b: SuffStats) -> SuffStats:
    return a + b


def posterior_sample(family, stats: SuffStats, rng):
    return family.posterior_sample(np.asarray(stats.sums, dtype=float)[None, :], rng)[0]


# Finite stand-in for log(0) inside matrix products (0 * -inf would be nan).
NEG_LARGE = -1e250


@dataclass
class ColumnFamilies:
    """One leaf family per data column, with vectorised helpers over all columns."""

    families: list
    groups: list = field(init=False, repr=False)

    def __post_init__(self):
        order = {}
        for d, fam in enumerate(self.families):
            order.setdefault(fam, []).append(d)
        self.groups = [(fam, np.asarray(cols)) for fam, cols in order.items()]

    @property
    def num_dims(self):
        return len(self.families)

    @property
    def n_features(self):
        return max(f.n_features for f in self.families)

    @property
    def n_params(self):
        return max(f.n_params for f in self.families)

    def features(self, values, missing):
        """Per-entry features, zero for missing entries: shape (N, D, F)."""
        values = np.asarray(values, dtype=float)
        out = np.zeros(values.shape + (self.n_features,))
        for fam, cols in self.groups:
            out[:, cols, : fam.n_features] = fam.features(values[:, cols])
        out[np.asarray(missing, dtype=bool)] = 0.0
        return out

    def natural(self, theta, finite=True):
        """Natural parameters (L, D, F); ``-inf`` replaced by a large negative when ``finite``."""
        out = np.zeros(theta.shape[:2] + (self.n_features,))
        for fam, cols in self.groups:
            out[:, cols, : fam.n_features] = fam.natural(theta[:, cols, :])
        if finite:
            out = np.where(np.isfinite(out), out, NEG_LARGE)
        return out

    def prior_sample(self, num_leaves, rng):
        theta = np.full((num_leaves, self.num_dims, self.n_params), np.nan)
        for fam, cols in self.groups:
            draw = fam.prior_sample(rng, num_leaves * len(cols))
            theta[:, cols, : fam.n_params] = draw.reshape(num_leaves, len(cols), fam.n_params)
        return theta

    def posterior_sample(self, sums, rng):
        """Conjugate draws for every (leaf, dim) from feature sums of shape (L, D, F)."""
        num_leaves = sums.shape[0]
        theta = np.full((num_leaves, self.num_dims, self.n_params), np.nan)
        for fam, cols in self.groups:
            s = sums[:, cols, : fam.n_features].reshape(-1, fam.n_features)
            draw = fam.posterior_sample(s, rng)
            theta[:, cols, : fam.n_params] = draw.reshape(num_leaves, len(cols), fam.n_params)
        return theta

    def to_list(self):
        return [f.to_dict() for f in self.families]

    @classmethod
    def from_list(cls, metas):
        return cls([family_from_dict(m) for m in metas])

    @classmethod
    def bernoulli(cls, num_dims, a0=1.0, b0=1.0):
        return cls([Bernoulli(a0, b0)] * num_dims)

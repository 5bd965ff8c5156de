"""Deduplicated feature encoding of a data matrix.

Binary benchmark data repeats rows a lot (NLTCS has ~16k rows but only a few
thousand distinct patterns), so the upward pass runs once per distinct
``(values, missing)`` pattern and instances point into that table.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .leaves import Bernoulli, Categorical, ColumnFamilies, EvaluationError, Gaussian


def check_values(families: ColumnFamilies, values, missing):
    values = np.asarray(values, dtype=float)
    missing = np.asarray(missing, dtype=bool)
    if values.ndim != 2 or values.shape != missing.shape:
        raise EvaluationError("values and missing mask must be matching 2-d arrays")
    if values.shape[1] != families.num_dims:
        raise EvaluationError(f"data has {values.shape[1]} columns, model expects {families.num_dims}")
    for fam, cols in families.groups:
        v = values[:, cols][~missing[:, cols]]
        if isinstance(fam, Gaussian):
            ok = np.isfinite(v)
        elif isinstance(fam, Bernoulli):
            ok = (v == 0) | (v == 1)
        elif isinstance(fam, Categorical):
            ok = (v == np.round(v)) & (v >= 1) & (v <= fam.arity)
        else:  # pragma: no cover
            raise EvaluationError(f"unsupported family {fam!r}")
        if not ok.all():
            raise EvaluationError(f"value {v[~ok][0]!r} is not valid for {fam.tag} columns")


@dataclass
class EncodedData:
    families: ColumnFamilies
    pattern: np.ndarray        # (N,) row -> pattern index
    values: np.ndarray         # (U, D) distinct rows, missing entries zeroed
    missing: np.ndarray        # (U, D)
    phi: np.ndarray            # (U, D, F)
    digest: str

    @property
    def num_instances(self):
        return len(self.pattern)

    @property
    def num_patterns(self):
        return len(self.values)

    @property
    def observed(self):
        return ~self.missing

    @property
    def observed_any(self):
        return self.observed.any(axis=1)

    @property
    def counts(self):
        return np.bincount(self.pattern, minlength=self.num_patterns).astype(float)

    def subset(self, idx) -> "EncodedData":
        """Same pattern table, restricted to the instances in ``idx``."""
        return EncodedData(self.families, self.pattern[np.asarray(idx, dtype=np.int64)],
                           self.values, self.missing, self.phi, self.digest)

    def rows(self):
        return self.values[self.pattern], self.missing[self.pattern]


def encode(values, missing, families: ColumnFamilies) -> EncodedData:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if missing is None:
        missing = np.isnan(values)
    missing = np.atleast_2d(np.asarray(missing, dtype=bool))
    check_values(families, values, missing)
    clean = np.where(missing, 0.0, values)
    if len(clean) == 0:
        uniq_v = np.zeros((0, families.num_dims))
        uniq_m = np.zeros((0, families.num_dims), dtype=bool)
        inverse = np.zeros(0, dtype=np.int64)
    else:
        key = np.concatenate([clean, missing.astype(float)], axis=1)
        uniq, inverse = np.unique(key, axis=0, return_inverse=True)
        d = families.num_dims
        uniq_v, uniq_m = uniq[:, :d], uniq[:, d:].astype(bool)
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(clean).tobytes())
    h.update(np.ascontiguousarray(missing).tobytes())
    return EncodedData(
        families=families,
        pattern=np.asarray(inverse, dtype=np.int64).reshape(-1),
        values=np.ascontiguousarray(uniq_v),
        missing=np.ascontiguousarray(uniq_m),
        phi=np.ascontiguousarray(families.features(uniq_v, uniq_m)),
        digest=h.hexdigest(),
    )

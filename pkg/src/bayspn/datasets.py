"""CSV datasets, column metadata and MCAR corruption.

Files are comma-separated, one instance per line, no header.  An empty field
or ``?`` marks a missing entry.  A dataset ``name`` is the triple
``name.ts.data`` / ``name.valid.data`` / ``name.test.data`` plus an optional
``name.meta.json`` describing the columns; without it every column is binary.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .leaves import ColumnFamilies

SPLITS = {"train": ".ts.data", "valid": ".valid.data", "test": ".test.data"}


class DataError(ValueError):
    """Unreadable or ill-formed data file."""


@dataclass(frozen=True, eq=False)
class Dataset:
    values: np.ndarray          # (N, D) float, NaN where missing
    missing_mask: np.ndarray    # (N, D) bool
    column_meta: tuple          # one dict per column
    split: str | None = None

    @property
    def num_instances(self):
        return self.values.shape[0]

    @property
    def num_dims(self):
        return self.values.shape[1]

    @property
    def families(self):
        return ColumnFamilies.from_list(self.column_meta)

    def with_values(self, values, missing, split=None):
        return replace(self, values=values, missing_mask=missing, split=split or self.split)


def bernoulli_meta(num_dims):
    return tuple({"family": "bernoulli"} for _ in range(num_dims))


def load_meta(path) -> tuple:
    try:
        with open(path) as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read column metadata {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    cols = meta["columns"] if isinstance(meta, dict) else meta
    if not isinstance(cols, list) or not cols:
        raise DataError(f"{path}: expected a non-empty list of column descriptions")
    return tuple(dict(c) for c in cols)


def save_meta(path, column_meta):
    with open(path, "w") as fh:
        json.dump({"columns": list(column_meta)}, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _parse_field(text, meta, where):
    family = meta.get("family", "bernoulli")
    try:
        x = float(text)
    except ValueError:
        raise DataError(f"{where}: cannot parse {text!r}") from None
    if family == "bernoulli":
        if x not in (0.0, 1.0):
            raise DataError(f"{where}: binary column holds {text!r}")
    elif family == "categorical":
        arity = int(meta["arity"])
        if x != int(x) or not 1 <= x <= arity:
            raise DataError(f"{where}: categorical value {text!r} outside 1..{arity}")
    elif family == "gaussian":
        if not math.isfinite(x):
            raise DataError(f"{where}: non-finite value {text!r}")
    else:
        raise DataError(f"{where}: unknown column family {family!r}")
    return x


def load_csv(path, column_meta=None, split=None) -> Dataset:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows, masks = [], []
    with fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields:
                continue
            if column_meta is None:
                column_meta = bernoulli_meta(len(fields))
            if len(fields) != len(column_meta):
                raise DataError(f"{path}:{lineno}: expected {len(column_meta)} fields, found {len(fields)}")
            row, mask = [], []
            for d, text in enumerate(fields):
                text = text.strip()
                if text in ("", "?"):
                    row.append(np.nan)
                    mask.append(True)
                else:
                    row.append(_parse_field(text, column_meta[d], f"{path}:{lineno}, column {d + 1}"))
                    mask.append(False)
            rows.append(row)
            masks.append(mask)
    if not rows:
        raise DataError(f"{path}: no instances")
    return Dataset(np.asarray(rows, dtype=float), np.asarray(masks, dtype=bool), tuple(column_meta), split)


def _format(x, meta):
    if meta.get("family", "bernoulli") == "gaussian":
        return repr(float(x))
    return str(int(x))


def write_csv(data: Dataset, path):
    with open(path, "w", newline="") as fh:
        for row, mask in zip(data.values, data.missing_mask):
            fh.write(",".join("?" if m else _format(x, meta)
                              for x, m, meta in zip(row, mask, data.column_meta)))
            fh.write("\n")


def split_path(prefix, split):
    return Path(f"{prefix}{SPLITS[split]}")


def load_splits(prefix, meta_path=None, splits=("train", "valid", "test")) -> dict:
    """Load the requested splits of ``prefix``; missing optional files are skipped."""
    if meta_path is None and Path(f"{prefix}.meta.json").exists():
        meta_path = f"{prefix}.meta.json"
    meta = load_meta(meta_path) if meta_path else None
    out = {}
    for name in splits:
        path = split_path(prefix, name)
        if path.exists():
            out[name] = load_csv(path, meta, name)
            meta = out[name].column_meta
    if "train" not in out:
        raise DataError(f"training file {split_path(prefix, 'train')} not found")
    return out


def concat(a: Dataset, b: Dataset, split=None) -> Dataset:
    if a.num_dims != b.num_dims:
        raise DataError("cannot concatenate datasets with different column counts")
    return Dataset(np.vstack([a.values, b.values]), np.vstack([a.missing_mask, b.missing_mask]),
                   a.column_meta, split or f"{a.split}+{b.split}")


def apply_mcar(data: Dataset, frac_rows: float, frac_dims: float, rng) -> Dataset:
    """Mask ``floor(frac_dims * D)`` random dims in ``floor(frac_rows * N)`` random rows."""
    if not (0.0 <= frac_rows <= 1.0 and 0.0 <= frac_dims <= 1.0):
        raise ValueError("fractions must lie in [0, 1]")
    n, d = data.values.shape
    n_rows = int(math.floor(frac_rows * n))
    n_dims = int(math.floor(frac_dims * d))
    mask = data.missing_mask.copy()
    rows = np.sort(rng.choice(n, size=n_rows, replace=False))
    for i in rows:
        mask[i, rng.choice(d, size=n_dims, replace=False)] = True
    values = np.where(mask, np.nan, data.values)
    return data.with_values(values, mask)


def standardize(train: Dataset, *others: Dataset):
    """Shift and scale Gaussian columns by train-split statistics.

    Returns the transformed datasets (train first).  Constants are stored in
    each column's metadata as ``shift`` and ``scale``.
    """
    meta = [dict(m) for m in train.column_meta]
    shift = np.zeros(train.num_dims)
    scale = np.ones(train.num_dims)
    for d, m in enumerate(meta):
        if m.get("family") != "gaussian":
            continue
        col = train.values[~train.missing_mask[:, d], d]
        mu = float(col.mean()) if col.size else 0.0
        sd = float(col.std()) if col.size > 1 else 1.0
        sd = sd if sd > 0 else 1.0
        m["shift"], m["scale"] = mu, sd
        shift[d], scale[d] = mu, sd
    out = []
    for ds in (train, *others):
        values = (ds.values - shift) / scale
        out.append(Dataset(values, ds.missing_mask.copy(), tuple(meta), ds.split))
    return out


def log_jacobian(data: Dataset):
    """Per-row log |d standardized / d original|, to add to densities of standardized data."""
    scale = np.array([float(m.get("scale", 1.0)) for m in data.column_meta])
    return -(np.log(scale)[None, :] * ~data.missing_mask).sum(axis=1)


def is_standardized(column_meta):
    return any("scale" in m for m in column_meta)


def apply_standardization(data: Dataset, column_meta) -> Dataset:
    """Transform ``data`` with constants already stored in ``column_meta``."""
    shift = np.array([float(m.get("shift", 0.0)) for m in column_meta])
    scale = np.array([float(m.get("scale", 1.0)) for m in column_meta])
    return Dataset((data.values - shift) / scale, data.missing_mask.copy(), tuple(column_meta), data.split)

"""Model files.

A model is one JSON document: column families, the graph configuration, the
region graph, the SPN sizes (I, J) and the list of snapshots.  Scope
assignments are written 1-based.  Log-weights are written rather than
probabilities because weights drawn with a small Dirichlet concentration can
sit far below the smallest double.  Floats use ``repr``, the shortest string
that parses back to the same double, so save/load is exact and two runs with
the same seed produce byte-identical files.
"""
from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .dp import DpChain, DpConfig, DpSnapshot
from .gibbs import TrainConfig
from .layout import compile_layout
from .leaves import ColumnFamilies
from .posterior import PosteriorChain, Snapshot
from .region_graph import GraphConfig, RegionGraph

FORMAT = "bayspn-model"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _floats(a):
    """Nested lists; NaN becomes null and infinities become strings (plain JSON has neither)."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        x = float(a)
        if np.isnan(x):
            return None
        return x if np.isfinite(x) else repr(x)
    return [_floats(x) for x in a]


def _decode(x):
    if isinstance(x, list):
        return [_decode(v) for v in x]
    return np.nan if x is None else float(x)


def _array(nested):
    return np.asarray(_decode(nested), dtype=float)


def _snapshot_dict(s: Snapshot):
    return {"y": (np.asarray(s.y) + 1).tolist(), "log_weights": _floats(s.log_weights), "theta": _floats(s.theta)}


def _snapshot_from(d, num_dims):
    y = np.asarray(d["y"], dtype=np.int64).reshape(-1, num_dims) - 1
    lw = _array(d["log_weights"])
    theta = _array(d["theta"])
    return Snapshot(y, lw, theta)


def chain_to_dict(chain, extra=None):
    layout = chain.layout
    out = {
        "format": FORMAT,
        "version": VERSION,
        "columns": chain.families.to_list(),
        "graph_config": None if chain.graph_config is None else asdict(chain.graph_config),
        "train_config": None if chain.train_config is None else chain.train_config.to_dict(),
        "region_graph": layout.rg.to_dict(),
        "spn": {"leaves_per_region": layout.num_leaves_per_region,
                "sums_per_region": layout.num_sums_per_region},
        "train_digest": chain.train_digest,
        "train_score": chain.train_score,
        "final_train_ll": chain.trace[-1][1] if chain.trace else None,
    }
    if isinstance(chain, DpChain):
        out["dp"] = {
            **chain.dp_config.to_dict(),
            "snapshots": [
                {"log_pi": _floats(s.log_pi), "assignments": s.assignments.tolist(),
                 "components": [_snapshot_dict(c) for c in s.components]}
                for s in chain.snapshots
            ],
        }
        out["snapshots"] = []
    else:
        out["snapshots"] = [_snapshot_dict(s) for s in chain.snapshots]
    if extra:
        out.update(extra)
    return out


def dumps(chain, extra=None) -> str:
    return json.dumps(chain_to_dict(chain, extra), indent=1, sort_keys=True, allow_nan=False) + "\n"


def save_model(path, chain, extra=None):
    text = dumps(chain, extra)
    with open(path, "w") as fh:
        fh.write(text)
    return text


def chain_from_dict(doc):
    if doc.get("format") != FORMAT:
        raise ModelFormatError("not a model file")
    if doc.get("version") != VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')}")
    families = ColumnFamilies.from_list(doc["columns"])
    rg = RegionGraph.from_dict(doc["region_graph"])
    layout = compile_layout(rg, doc["spn"]["leaves_per_region"], doc["spn"]["sums_per_region"])
    gc = None if doc.get("graph_config") is None else GraphConfig(**doc["graph_config"])
    tc = None if doc.get("train_config") is None else TrainConfig(**doc["train_config"])
    d = families.num_dims
    if "dp" in doc:
        dp = doc["dp"]
        snaps = [DpSnapshot(_array(s["log_pi"]),
                            [_snapshot_from(c, d) for c in s["components"]],
                            np.asarray(s["assignments"], dtype=np.int64))
                 for s in dp["snapshots"]]
        return DpChain(layout, families, snaps, DpConfig(dp["concentration"], dp["k_max"]), tc, gc,
                       [], doc.get("train_digest"), doc.get("train_score"))
    snaps = [_snapshot_from(s, d) for s in doc["snapshots"]]
    return PosteriorChain(layout, families, snaps, tc, gc, [], doc.get("train_digest"), doc.get("train_score"))


def load_model(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON: {exc}") from exc
    return chain_from_dict(doc)

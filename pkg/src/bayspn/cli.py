"""Command line interface: ``bayspn {construct,train,evaluate,select,corrupt}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
``BAYSPN_LOG`` sets the log level (e.g. ``INFO``).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, _accel
from .datasets import (DataError, Dataset, apply_mcar, apply_standardization, concat, load_csv,
                       load_splits, log_jacobian, save_meta, split_path, standardize, write_csv)
from .dp import DpChain, DpConfig, dp_pattern_ll, run_dp_chain
from .encoding import encode
from .gibbs import PRESETS, ChainError, TrainConfig, run_chain
from .layout import compile_layout
from .leaves import EvaluationError
from .posterior import predictive_pattern_ll
from .region_graph import ConfigError, GraphConfig, build_region_graph
from .serialize import ModelFormatError, load_model, save_model
from .spn import build_spn, count_induced_trees

log = logging.getLogger("bayspn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# shared argument groups


def _graph_args(p, multi=False):
    kw = {"nargs": "+"} if multi else {}
    p.add_argument("--depth", type=int, default=[2] if multi else 2, **kw)
    p.add_argument("--partitions", type=int, default=[2] if multi else 2, **kw)
    p.add_argument("--children", type=int, default=[2] if multi else 2, **kw)
    p.add_argument("--sums", type=int, default=[4] if multi else 4, metavar="J", **kw)
    p.add_argument("--leaves", type=int, default=[4] if multi else 4, metavar="I", **kw)


def _train_args(p):
    p.add_argument("--data", required=True, help="dataset prefix (<prefix>.ts.data, ...)")
    p.add_argument("--meta", help="column metadata JSON (default <prefix>.meta.json if present)")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--burnin", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prior-counts", choices=("scope", "all"), default="scope")
    p.add_argument("--dp", action="store_true", help="train a stick-breaking mixture of SPNs")
    p.add_argument("--kmax", type=int, default=20)
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--merge-valid", action="store_true")
    p.add_argument("--threads", type=int, default=1)


def _train_config(args):
    base = dict(PRESETS[args.preset]) if args.preset else dict(PRESETS["desk"])
    for key, flag in (("burn_in", "burnin"), ("num_samples", "samples"), ("thinning", "thin")):
        if getattr(args, flag) is not None:
            base[key] = getattr(args, flag)
    return TrainConfig(alpha=args.alpha, beta=args.beta, seed=args.seed,
                       prior_counts=args.prior_counts, **base).check()


def _load_training(args):
    splits = load_splits(args.data, args.meta)
    train = splits["train"]
    if args.merge_valid:
        if "valid" not in splits:
            raise DataError(f"--merge-valid given but {split_path(args.data, 'valid')} is missing")
        train = concat(train, splits["valid"], "train+valid")
    others = [splits[k] for k in ("valid", "test") if k in splits]
    train, *others = standardize(train, *others)
    files = {k: {"path": str(split_path(args.data, k)), "sha256": _sha256(split_path(args.data, k)),
                 "rows": splits[k].num_instances} for k in splits}
    return train, dict(zip([k for k in ("valid", "test") if k in splits], others)), files


def _fit(train: Dataset, gc: GraphConfig, tc: TrainConfig, dp: DpConfig | None, trace=None):
    rg = build_region_graph(gc.check(), train.num_dims)
    layout = compile_layout(rg, gc.leaves_per_region, gc.sums_per_region)
    data = encode(train.values, train.missing_mask, train.families)
    if dp is not None:
        return run_dp_chain(layout, data, tc, dp, trace=trace, graph_config=gc)
    return run_chain(layout, data, tc, trace=trace, graph_config=gc)


def _pattern_ll(chain, data):
    if isinstance(chain, DpChain):
        return dp_pattern_ll(chain, data)
    return predictive_pattern_ll(chain, data)


def _score(chain, ds: Dataset):
    """Per-row predictive log density in the original units of ``ds``."""
    data = encode(ds.values, ds.missing_mask, chain.families)
    return _pattern_ll(chain, data)[data.pattern] + log_jacobian(ds)


def _graph_config(depth, partitions, children, sums, leaves):
    return GraphConfig(depth=depth, num_partitions_per_region=partitions, children_per_partition=children,
                       sums_per_region=sums, leaves_per_region=leaves)


# ---------------------------------------------------------------------------
# commands


def cmd_construct(args):
    if args.dims is None and args.data is None:
        raise UsageError("construct needs --dims or --data")
    if args.dims is not None:
        num_dims = args.dims
    else:
        num_dims = load_splits(args.data, args.meta, splits=("train",))["train"].num_dims
    gc = _graph_config(args.depth, args.partitions, args.children, args.sums, args.leaves).check()
    rg = build_region_graph(gc, num_dims)
    spn = build_spn(rg, gc.leaves_per_region, gc.sums_per_region)
    summary = {
        "num_dims": num_dims,
        "regions": len(rg.regions),
        "partitions": len(rg.partitions),
        "sums": len(spn.sums()),
        "products": len(spn.products()),
        "leaves": len(spn.leaves()),
        "induced_trees": str(count_induced_trees(spn)),
    }
    for k, v in summary.items():
        print(f"{k}\t{v}")
    if args.out:
        _write_json(args.out, {"graph_config": asdict(gc), "region_graph": rg.to_dict(), "summary": summary})
    return EXIT_OK


def cmd_train(args):
    if args.dp and args.kmax < 1:
        raise UsageError("--kmax must be at least 1")
    tc = _train_config(args)
    gc = _graph_config(args.depth, args.partitions, args.children, args.sums, args.leaves).check()
    dp = DpConfig(args.concentration, args.kmax).check() if args.dp else None
    _accel.set_threads(args.threads)
    train, _, files = _load_training(args)
    out = Path(args.out)
    start = time.perf_counter()
    with open(f"{out}.log", "w") as trace:
        trace.write("iteration\ttrain_ll\tseconds\n")
        chain = _fit(train, gc, tc, dp, trace)
    wall = time.perf_counter() - start
    save_model(out, chain, {"column_meta": list(train.column_meta)})
    final_ll = chain.trace[-1][1]
    _write_json(f"{out}.manifest.json", {
        "tool": "bayspn", "version": __version__, "command": "train",
        "graph_config": asdict(gc), "train_config": tc.to_dict(),
        "dp": None if dp is None else dp.to_dict(), "merge_valid": args.merge_valid,
        "data": files, "seed": tc.seed, "wall_time_s": wall,
        "results": {"final_train_ll": final_ll, "train_score": chain.train_score,
                    "snapshots": len(chain.snapshots)},
        "model_sha256": _sha256(out),
    })
    print(f"final train LL {final_ll:.6f}  train score {chain.train_score:.6f}  ({wall:.1f}s)")
    return EXIT_OK


def _resolve_eval_path(data, split):
    p = Path(data)
    if p.is_file():
        return p
    p = split_path(data, split)
    if not p.is_file():
        raise DataError(f"no data file at {data} or {p}")
    return p


def cmd_evaluate(args):
    chain = load_model(args.model)
    with open(args.model) as fh:
        meta = json.load(fh).get("column_meta") or chain.families.to_list()
    path = _resolve_eval_path(args.data, args.split)
    with open(path) as fh:
        first = next((line for line in fh if line.strip()), "")
    width = len(next(csv.reader([first]))) if first else 0
    if width != chain.families.num_dims:
        raise UsageError(f"{path} has {width} columns, model expects {chain.families.num_dims}")
    ds = apply_standardization(load_csv(path, tuple(meta)), tuple(meta))
    ll = _score(chain, ds)
    mean = float(ll.mean())
    stderr = float(ll.std(ddof=1) / math.sqrt(len(ll))) if len(ll) > 1 else 0.0
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "log_density"])
            for i, v in enumerate(ll):
                w.writerow([i, repr(float(v))])
    print(f"mean {mean:.6f} stderr {stderr:.6f} n {len(ll)}")
    return EXIT_OK


def _select_point(train, test, gc, tc, dp):
    chain = _fit(train, gc, tc, dp)
    test_ll = float(_score(chain, test).mean()) if test is not None else None
    return chain.train_score, test_ll, chain


def cmd_select(args):
    from joblib import Parallel, delayed

    tc = _train_config(args)
    dp = DpConfig(args.concentration, args.kmax).check() if args.dp else None
    splits = load_splits(args.data, args.meta)
    # selection scores on the training data, so train and valid are always pooled
    train = concat(splits["train"], splits["valid"], "train+valid") if "valid" in splits else splits["train"]
    test = splits.get("test")
    if test is not None:
        train, test = standardize(train, test)
    else:
        (train,) = standardize(train)
    grid = [_graph_config(*combo).check() for combo in
            itertools.product(args.depth, args.partitions, args.children, args.sums, args.leaves)]
    if not grid:
        raise UsageError("empty grid")
    jobs = min(_accel.set_threads(args.threads), len(grid))
    start = time.perf_counter()
    results = Parallel(n_jobs=jobs)(delayed(_select_point)(train, test, gc, tc, dp) for gc in grid)
    order = sorted(range(len(grid)), key=lambda i: (-results[i][0], i))
    header = ["rank", "depth", "partitions", "children", "J", "I", "score", "test_ll"]
    rows = []
    for rank, i in enumerate(order, start=1):
        gc = grid[i]
        score, test_ll, _ = results[i]
        rows.append([rank, gc.depth, gc.num_partitions_per_region, gc.children_per_partition,
                     gc.sums_per_region, gc.leaves_per_region, repr(score),
                     "" if test_ll is None else repr(test_ll)])
    print("\t".join(header))
    for row in rows:
        print("\t".join(str(x) for x in row))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    if args.save_best:
        best = results[order[0]][2]
        save_model(args.save_best, best, {"column_meta": list(train.column_meta)})
    log.info("selection over %d configurations took %.1fs", len(grid), time.perf_counter() - start)
    return EXIT_OK


def cmd_corrupt(args):
    splits = load_splits(args.data, args.meta)
    out_prefix = args.out or f"{args.data}-mcar"
    written = {}
    for frac in args.rows:
        if not 0.0 <= frac <= 1.0:
            raise UsageError(f"row fraction {frac} outside [0, 1]")
        pct = int(round(100 * frac))
        prefix = f"{out_prefix}-{pct}"
        rng = np.random.default_rng(np.random.SeedSequence([int(args.seed), pct]))
        for name, ds in splits.items():
            target = split_path(prefix, name)
            if name == "test":
                write_csv(ds, target)
            else:
                write_csv(apply_mcar(ds, frac, args.dims_frac, rng), target)
            written[str(target)] = _sha256(target)
        save_meta(f"{prefix}.meta.json", splits["train"].column_meta)
    _write_json(f"{out_prefix}.manifest.json", {
        "tool": "bayspn", "version": __version__, "command": "corrupt", "source": str(args.data),
        "rows": args.rows, "dims_frac": args.dims_frac, "seed": args.seed, "files": written,
    })
    for path in written:
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="bayspn", description="Bayesian structure and parameter learning for SPNs")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("construct", help="build a region graph and report SPN sizes")
    _graph_args(p)
    p.add_argument("--dims", type=int)
    p.add_argument("--data")
    p.add_argument("--meta")
    p.add_argument("--out")
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("train", help="run the Gibbs sampler and save the posterior")
    _graph_args(p)
    _train_args(p)
    p.add_argument("--out", default="model.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="predictive log-likelihood of a data file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="data file, or a prefix combined with --split")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--out", help="per-instance CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select", help="grid search over graph settings ranked by train score")
    _graph_args(p, multi=True)
    _train_args(p)
    p.add_argument("--out", help="ranking CSV")
    p.add_argument("--save-best", help="write the top-ranked model here")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("corrupt", help="write MCAR-corrupted copies of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--meta")
    p.add_argument("--rows", type=float, nargs="+", default=[0.2, 0.4, 0.6, 0.8])
    p.add_argument("--dims-frac", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output prefix (default <data>-mcar)")
    p.set_defaults(func=cmd_corrupt)
    return parser


def main(argv=None):
    level = os.environ.get("BAYSPN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("missing command (construct, train, evaluate, select, corrupt)")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EvaluationError, ModelFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ChainError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface: train maps, rank sources, evaluate rankings, export
2-D projections.

Exit codes: 0 success, 1 user error, 2 internal error. ESM_SELECT_THREADS sets
the default for --threads. Commands never leave partial output files.
"""

from __future__ import annotations

import argparse
import json
import os
import resource
import sys
from pathlib import Path

import numpy as np

from . import projection, ranking, store
from .esm import EsmTrainConfig, train_esm_closed_form, train_esm_iterative


def _default_threads() -> int:
    env = os.environ.get("ESM_SELECT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esm-select")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train an embedding-space map")
    train.add_argument("--base", required=True, help="base-model embeddings file")
    train.add_argument("--tuned", required=True, help="tuned-model embeddings file")
    train.add_argument("--out", required=True, help="output map file")
    train.add_argument("--method", choices=["closed-form", "iterative"],
                       default="closed-form")
    train.add_argument("--lambda", dest="ridge_lambda", type=float, default=0.0,
                       help="ridge penalty for the closed-form solver")
    train.add_argument("--epochs", type=int, default=10)
    train.add_argument("--lr", type=float, default=0.001)
    train.add_argument("--weight-decay", type=float, default=0.01)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--source-id", default="", help="source task tag for metadata")

    rank = sub.add_parser("rank", help="rank manifest sources for a target")
    rank.add_argument("--target-emb", required=True)
    rank.add_argument("--labels", required=True)
    rank.add_argument("--manifest", required=True)
    rank.add_argument("--method", required=True,
                      choices=["esm-logme", "leep", "nce", "vocab", "textemb"])
    rank.add_argument("--out", required=True)
    rank.add_argument("--threads", type=int, default=None)
    rank.add_argument("--target-tokens", help="target token-set file (vocab method)")
    rank.add_argument("--target-id", default=None,
                      help="target tag for the ranking (default: embedding file stem)")

    ev = sub.add_parser("evaluate", help="score rankings against ground truth")
    ev.add_argument("--ranking", required=True, nargs="+")
    ev.add_argument("--ground-truth", required=True, nargs="+")
    ev.add_argument("--k", default="1,3,5", help="comma-separated regret cutoffs")
    ev.add_argument("--out", required=True)

    proj = sub.add_parser("project", help="export a 2-D projection as CSV")
    proj.add_argument("--emb", required=True)
    proj.add_argument("--labels", required=True)
    proj.add_argument("--out", required=True)

    return parser


def _cmd_train(args) -> int:
    base = store.read_matrix(args.base)
    tuned = store.read_matrix(args.tuned)
    if args.method == "iterative":
        cfg = EsmTrainConfig(method="iterative", epochs=args.epochs,
                             learning_rate=args.lr, weight_decay=args.weight_decay,
                             seed=args.seed)
        esm = train_esm_iterative(base, tuned, cfg, source_task_id=args.source_id)
    else:
        esm = train_esm_closed_form(base, tuned, args.ridge_lambda,
                                    source_task_id=args.source_id)
    store.write_esm(esm, args.out)
    print(f"wrote {args.out}: {esm.d_in}->{esm.d_out} map, "
          f"{esm.param_count} parameters, train MSE {esm.meta['train_mse']:.6g}")
    return 0


def _cmd_rank(args) -> int:
    target_emb = store.read_matrix(args.target_emb)
    labels = store.read_labels(args.labels)
    manifest = store.load_manifest(args.manifest)
    tokens = store.read_tokenset(args.target_tokens) if args.target_tokens else None
    method = args.method.replace("-", "_")
    target_id = args.target_id or Path(args.target_emb).stem
    threads = args.threads if args.threads else _default_threads()
    result = ranking.rank_sources(target_emb, labels, manifest, method,
                                  target_tokens=tokens, target_id=target_id,
                                  threads=threads)
    ranking.save_ranking(result, args.out)
    peak_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    print(f"wrote {args.out}: {len(result.items)} sources in "
          f"{result.wall_time_ms['total']:.1f} ms "
          f"({len(result.warnings)} skipped, peak RSS {peak_mb:.0f} MB)")
    return 0


def _cmd_evaluate(args) -> int:
    ks = sorted({int(part) for part in args.k.split(",") if part.strip()})
    if not ks or min(ks) < 1:
        raise ValueError("--k needs positive integers")
    truths = {}
    for path in args.ground_truth:
        gt = ranking.load_ground_truth(path)
        truths[gt.target_id] = gt
    rows = []
    for path in args.ranking:
        rk = ranking.load_ranking(path)
        target = rk.target_id or Path(path).stem
        if target not in truths:
            raise ValueError(f"no ground-truth file for target {target!r}")
        rk.target_id = target
        rows.append(ranking.evaluate_ranking(rk, truths[target], ks))
    report = ranking.aggregate_report(rows, ks)
    ranking.save_report(report, args.out)
    print(report.table())
    return 0


def _cmd_project(args) -> int:
    emb = store.read_matrix(args.emb)
    labels = store.read_labels(args.labels)
    store.pair_check(emb, labels)
    coords, _ = projection.project_2d(emb.data)
    if labels.kind == "classification":
        tags = [str(int(c)) for c in labels.classes]
    else:
        tags = [repr(float(v)) for v in labels.values[:, 0]]
    with store.atomic_write(args.out) as f:
        lines = ["x,y,label"]
        lines += [f"{float(coords[i, 0])!r},{float(coords[i, 1])!r},{tags[i]}"
                  for i in range(emb.n)]
        f.write(("\n".join(lines) + "\n").encode("utf-8"))
    print(f"wrote {args.out}: {emb.n} points")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "rank": _cmd_rank,
    "evaluate": _cmd_evaluate,
    "project": _cmd_project,
}

_USER_ERRORS = (ValueError, OSError, json.JSONDecodeError, KeyError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

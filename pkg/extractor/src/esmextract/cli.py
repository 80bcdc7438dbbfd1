"""Command-line wrapper around the extraction jobs."""

from __future__ import annotations

import argparse
import sys

from .extract import (extract_embeddings, extract_mean_representation,
                      extract_pseudo_labels, extract_tokenset)
from .jobs import ExtractionJob


def _add_job_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True, help="model path or hub id")
    parser.add_argument("--dataset", required=True,
                        help="csv/jsonl file, or a directory holding <split>.csv|jsonl")
    parser.add_argument("--split", default=None)
    parser.add_argument("--input-column", required=True, action="append",
                        dest="input_columns",
                        help="input text column; give twice for paired inputs")
    parser.add_argument("--label-column", default=None)
    parser.add_argument("--label-kind", choices=["classification", "regression"],
                        default="classification")
    parser.add_argument("--pooling", choices=["cls", "mean"], default="cls")
    parser.add_argument("--max-rows", type=int, default=10_000)
    parser.add_argument("--max-seq-len", type=int, default=128)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esm-extract")
    sub = parser.add_subparsers(dest="command", required=True)
    emb = sub.add_parser("embeddings", help="write an ESEB embedding matrix")
    _add_job_args(emb)
    emb.add_argument("--labels-out", default=None,
                     help="also write the label column as an ESLB file")
    for name, help_text in (("pseudo", "write ESPL softmax pseudo-labels"),
                            ("tokens", "write the ESTS input token set"),
                            ("mean", "write the 1×d mean representation")):
        _add_job_args(sub.add_parser(name, help=help_text))
    return parser


def _job_from(args) -> ExtractionJob:
    return ExtractionJob(model=args.model, dataset=args.dataset, split=args.split,
                         input_columns=args.input_columns,
                         label_column=args.label_column, label_kind=args.label_kind,
                         pooling=args.pooling, max_rows=args.max_rows,
                         max_seq_len=args.max_seq_len, seed=args.seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = _job_from(args)
        if args.command == "embeddings":
            n = extract_embeddings(job, args.out, labels_out=args.labels_out)
            print(f"wrote {args.out}: {n} rows")
        elif args.command == "pseudo":
            n = extract_pseudo_labels(job, args.out)
            print(f"wrote {args.out}: {n} rows")
        elif args.command == "tokens":
            n = extract_tokenset(job, args.out)
            print(f"wrote {args.out}: {n} token ids")
        else:
            n = extract_mean_representation(job, args.out)
            print(f"wrote {args.out}: mean over {n} rows")
        return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

"""``decomp-embed`` command line: train, bench, compress, recommend, compare.

Results go to stdout. Failures go to stderr as one JSON object,
``{"error": <code>, "message": <text>}``, with these exit statuses:

====  ==========================================
2     usage error (bad flags, missing files)
3     invalid config, parameters or input data
4     corrupt checkpoint or format version mismatch
5     training diverged
1     any other library error
====  ==========================================
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bench import DEFAULT_WARMUP, run_bench
from .checkpoint import load_checkpoint, save_checkpoint, save_compressed
from .errors import (
    ConfigError,
    DecompEmbedError,
    DivergenceError,
    IntegrityError,
    MalformedInputError,
    ParameterError,
)
from .heuristic import DEFAULT_CAPACITY, DEFAULT_RANKS, recommend_pairs, select_default
from .pipeline import (
    METHODS,
    aligned,
    compare_csv,
    compress_checkpoint,
    read_config,
    run_compare,
    run_training,
    stability_csv,
)

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INTEGRITY = 4
EXIT_DIVERGENCE = 5


class UsageError(Exception):
    code = "USAGE_ERROR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("need at least one positive integer")
    return values


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return p


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a value >= 1, got {v}")
    return v


def _write(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


# ------------------------------------------------------------ commands ----


def cmd_train(args) -> int:
    cfg = read_config(args.config)
    model, optimizer, report, desc, tc = run_training(cfg, args.seed)
    save_checkpoint(model, args.out, optimizer, tc.seed, desc,
                    {"train": tc.to_dict(), "final_auc": report.final_auc})
    prefix = Path(args.report) if args.report else Path(str(args.out) + ".report")
    _write(prefix.with_name(prefix.name + ".csv"), report.to_csv())
    _write(prefix.with_name(prefix.name + ".json"), report.to_json())
    print(json.dumps({"final_auc": report.final_auc, "wall_time": report.wall_time,
                      "checkpoint": str(args.out), "report": str(prefix) + ".csv"}))
    return 0


def cmd_bench(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    budget = None if args.memory_budget_mb is None else int(args.memory_budget_mb * 2**20)
    report = run_bench(ckpt.model, args.batches, args.iters, args.warmup, args.zipf, args.seed,
                       args.workers, args.tag, budget)
    if args.out_csv:
        _write(args.out_csv, report.to_csv())
    if args.out_json:
        _write(args.out_json, report.to_json())
    sys.stdout.write(report.to_csv())
    return 0


def cmd_compress(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    opts = {"segments": args.segments, "init": args.init}
    if args.k is not None:
        opts["k"] = args.k
    if args.k_fraction is not None:
        opts["k_fraction"] = args.k_fraction
    if args.target_dim is not None:
        opts["target_dim"] = args.target_dim
    report, tables = compress_checkpoint(ckpt, args.method, opts, args.seed)
    save_compressed(args.out, args.method, tables, report)
    text = json.dumps(report, indent=2)
    _write(args.report or str(args.out) + ".report.json", text)
    print(text)
    return 0


def cmd_recommend(args) -> int:
    if args.n < 1 or args.d < 1:
        raise UsageError("--n and --d must be >= 1")
    pairs = recommend_pairs(args.n, args.d, args.capacity, args.ranks)
    out = {"candidates": [c.to_dict() for c in pairs], "default": None,
           "status": "ok" if pairs else "no_candidates"}
    if pairs:
        out["default"] = select_default(pairs).to_dict()
    print(json.dumps(out, indent=2))
    return 0


def cmd_compare(args) -> int:
    cfg = read_config(args.config)
    if args.seeds:
        cfg["seeds"] = args.seeds
    rows, stability = run_compare(cfg, args.seed)
    text = compare_csv(rows)
    if args.out_csv:
        _write(args.out_csv, text)
    if stability and args.stability_csv:
        _write(args.stability_csv, stability_csv(stability))
    sys.stdout.write(aligned(text))
    if stability:
        sys.stdout.write("\n" + aligned(stability_csv(stability)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="decomp-embed", description="Decomposed embedding layers and compressors.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", type=_existing, required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--report", default=None, help="report path prefix (default: <out>.report)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="batch-size latency/throughput sweep")
    p.add_argument("--ckpt", type=_existing, required=True)
    p.add_argument("--batches", type=_int_list, required=True, help="e.g. 2048,4096,8192")
    p.add_argument("--iters", type=_positive, required=True)
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    p.add_argument("--workers", type=_positive, default=1)
    p.add_argument("--zipf", type=float, default=1.1, help="Zipf exponent for sampled ids")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tag", default="", help="variant tag recorded in every row")
    p.add_argument("--memory-budget-mb", type=float, default=None)
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-json", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compress", help="post-training compression of a checkpoint")
    p.add_argument("--ckpt", type=_existing, required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=_positive, default=None, help="clusters per table (cluster)")
    p.add_argument("--k-fraction", type=float, default=None, help="clusters as a fraction of rows")
    p.add_argument("--init", choices=("frequent", "random"), default="frequent")
    p.add_argument("--segments", type=_positive, default=1, help="column segments (jl)")
    p.add_argument("--target-dim", type=_positive, default=None, help="projected width per segment (jl)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("recommend", help="candidate (r, p) pairs for a Frobenius layer")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--capacity", type=_positive, default=DEFAULT_CAPACITY)
    p.add_argument("--ranks", type=_int_list, default=list(DEFAULT_RANKS))
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("compare", help="train every configured variant and tabulate size vs AUC")
    p.add_argument("--config", type=_existing, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seeds", type=_int_list, default=None, help="also emit a per-seed AUC table")
    p.add_argument("--out-csv", default=None)
    p.add_argument("--stability-csv", default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def _fail(code: str, message: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    return status


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(UsageError.code, str(exc), EXIT_USAGE)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail(UsageError.code, str(exc), EXIT_USAGE)
    except DivergenceError as exc:
        return _fail(exc.code, str(exc), EXIT_DIVERGENCE)
    except IntegrityError as exc:
        return _fail(exc.code, str(exc), EXIT_INTEGRITY)
    except (ConfigError, ParameterError, MalformedInputError) as exc:
        return _fail(exc.code, str(exc), EXIT_CONFIG)
    except DecompEmbedError as exc:
        return _fail(exc.code, str(exc), 1)
    except OSError as exc:
        return _fail("IO_ERROR", str(exc), EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())

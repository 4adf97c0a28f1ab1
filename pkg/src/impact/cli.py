"""Command-line front end: train -> profile -> compress -> eval, plus sweep.

Every subcommand prints exactly one JSON line on stdout. Failures print one
JSON line on stderr (``{"error": ..., "module": ..., "message": ...}``) and
exit with 2 for usage errors or 1 for pipeline errors.

Datasets are regenerated from ``--dataset/--samples/--seed``. ``train`` and
``profile`` draw the training stream; ``eval`` and ``sweep`` draw a held-out
stream from the same task using sample seed ``seed + HELDOUT_OFFSET``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import modelio
from .compressor import METHODS, ImpactConfig
from .errors import ImpactError
from .pipeline import compress_model, profile_model, select_layers, sweep
from .toynet import DATASET_KINDS, evaluate, init_model, make_dataset, train

HELDOUT_OFFSET = 7919
DEFAULT_SWEEP_RATIOS = (90.0, 70.0, 50.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ratios(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad keep ratio list {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty keep ratio list")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--model", help="model file (input, or output for train)")
    common.add_argument("--stats", help="statistics file")
    common.add_argument("--out", help="output path")
    common.add_argument("--eta", type=float, default=0.5, help="importance blend in [0, 1]")
    common.add_argument("--keep-ratio", type=_ratios, default=None,
                        help="percent of sqrt-eigenvalue energy kept; comma list for sweep")
    common.add_argument("--rank", type=int, default=None, help="explicit rank, overrides --keep-ratio")
    common.add_argument("--method", choices=METHODS, default="impact")
    common.add_argument("--dataset", choices=DATASET_KINDS, default="hetero")
    common.add_argument("--samples", type=int, default=1500)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--layers", default="*", help="comma-separated layer name globs")
    common.add_argument("--epochs", type=int, default=60)
    common.add_argument("--lr", type=float, default=0.05)
    common.add_argument("--parallel", action="store_true", help="compress layers concurrently")
    common.add_argument("--grad-diagnostic", action="store_true",
                        help="profile: also write normalized gradient spectra as CSV")

    parser = _Parser(prog="impact", description="Importance-aware low-rank compression of a toy MLP.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a toy model and write it to --out")
    sub.add_parser("profile", parents=[common], help="collect layer statistics into --out")
    sub.add_parser("compress", parents=[common], help="compress --model using --stats into --out")
    sub.add_parser("eval", parents=[common], help="held-out loss and metric of --model")
    sub.add_parser("sweep", parents=[common], help="all methods at matched ranks; CSV report to --out")
    return parser


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} requires {', '.join(missing)}")


def _check_common(args):
    if args.samples < 2:
        raise UsageError("--samples must be at least 2")
    if args.epochs < 1:
        raise UsageError("--epochs must be positive")
    if args.rank is not None and args.rank < 1:
        raise UsageError("--rank must be positive")
    if args.keep_ratio is not None and args.command != "sweep" and len(args.keep_ratio) != 1:
        raise UsageError("--keep-ratio takes a single value outside sweep")
    if not 0.0 <= args.eta <= 1.0:
        raise UsageError("--eta must lie in [0, 1]")
    if args.keep_ratio is not None and not all(0.0 < k <= 100.0 for k in args.keep_ratio):
        raise UsageError("--keep-ratio values must lie in (0, 100]")


def _heldout(args):
    return make_dataset(args.dataset, args.samples, args.seed + HELDOUT_OFFSET)


def _config(args, keep=None) -> ImpactConfig:
    if keep is None:
        keep = args.keep_ratio[0] if args.keep_ratio else 90.0
    return ImpactConfig(eta=args.eta, keep_ratio=keep, explicit_rank=args.rank)


def cmd_train(args) -> dict:
    _require(args, "out")
    data = make_dataset(args.dataset, args.samples, args.seed)
    model = init_model(seed=args.seed)
    model, final = train(model, data, args.epochs, args.lr, args.seed)
    modelio.write_model(args.out, model)
    return {"model": args.out, "train_loss": final, "params": model.param_count}


def cmd_profile(args) -> dict:
    _require(args, "model", "out")
    model = modelio.read_model(args.model)
    data = make_dataset(args.dataset, args.samples, args.seed)
    stats = profile_model(model, data, args.layers)
    if not stats:
        raise UsageError(f"--layers {args.layers!r} matches no layer")
    modelio.write_stats(args.out, stats)
    summary = {"stats": args.out, "layers": list(stats), "samples": len(data)}
    if args.grad_diagnostic:
        path = str(Path(args.out).with_suffix(".diag.csv"))
        rows = modelio.write_diagnostic(path, stats)
        summary["diagnostic"] = path
        summary["max_over_mean"] = {name: max(v for n, _, v in rows if n == name) for name in stats}
    return summary


def cmd_compress(args) -> dict:
    _require(args, "model", "stats", "out")
    model = modelio.read_model(args.model)
    stats = modelio.read_stats(args.stats)
    if not select_layers(model, args.layers):
        raise UsageError(f"--layers {args.layers!r} matches no layer")
    cfg = _config(args)
    compressed, reports = compress_model(model, stats, args.method, cfg, args.layers,
                                         parallel=args.parallel)
    modelio.write_model(args.out, compressed)
    report_path = str(Path(args.out).with_suffix(".report.json"))
    modelio.write_json(report_path, {"method": args.method, "config": cfg.snapshot(),
                                     "profiled": "trained model (post-training gradients)",
                                     "layers": [r.to_dict() for r in reports]})
    return {
        "model": args.out,
        "report": report_path,
        "method": args.method,
        "rank_per_layer": {r.layer: r.rank for r in reports},
        "params_before": model.param_count,
        "params_after": compressed.param_count,
    }


def cmd_eval(args) -> dict:
    _require(args, "model")
    model = modelio.read_model(args.model)
    loss, metric = evaluate(model, _heldout(args))
    return {"model": args.model, "loss": loss, "metric": metric, "params": model.param_count}


def cmd_sweep(args) -> dict:
    _require(args, "model", "stats", "out")
    model = modelio.read_model(args.model)
    stats = modelio.read_stats(args.stats)
    ratios = args.keep_ratio or list(DEFAULT_SWEEP_RATIOS)
    cfg = _config(args, keep=ratios[0])
    rows = sweep(model, stats, _heldout(args), ratios, METHODS, cfg, args.layers, args.parallel)
    modelio.write_report(args.out, rows)
    return {"report": args.out, "rows": len(rows), "keep_ratios": ratios, "methods": list(METHODS)}


COMMANDS = {"train": cmd_train, "profile": cmd_profile, "compress": cmd_compress,
            "eval": cmd_eval, "sweep": cmd_sweep}


def _emit_error(kind: str, module: str, message: str) -> None:
    print(json.dumps({"error": kind, "module": module, "message": message}, sort_keys=True),
          file=sys.stderr)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _check_common(args)
        summary = COMMANDS[args.command](args)
    except UsageError as exc:
        _emit_error("usage", "cli", str(exc))
        return 2
    except ImpactError as exc:
        module = type(exc).__module__.rsplit(".", 1)[-1]
        origin = exc.__traceback__
        while origin.tb_next is not None:
            origin = origin.tb_next
        source = origin.tb_frame.f_globals.get("__name__", module).rsplit(".", 1)[-1]
        _emit_error(type(exc).__name__, source, str(exc))
        return 1
    except OSError as exc:
        _emit_error(type(exc).__name__, "io", str(exc))
        return 1
    print(json.dumps({"command": args.command, **summary}, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

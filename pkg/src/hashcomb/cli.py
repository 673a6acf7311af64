"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input error, 2 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import MODES, PRESETS, ConfigError, DPBlock, RunConfig, preset
from .data import DataError, fetch_spambase, read_column
from .experiment import _jsonable, run, write_outputs, write_transcript
from .ml_core import TrainingDivergence
from .privacy import DEFAULT_ALPHAS, adjacent_divergence_report
from .quantization import QuantizationScheme, solve_bias
from .secret_sharing import Transport, make_parties, run_negotiation

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2

_DP_FLAGS = {"epsilon": float, "delta": float, "clip": float, "q": float, "updates": int, "sigma2": float}


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors, so they exit 1, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    return lo, hi


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _add_run(sub) -> None:
    p = sub.add_parser("run", help="run a monolithic or federated experiment", argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--preset", help="start from a shipped preset (see `presets`)")
    p.add_argument("--dataset", help="CSV file with a header row")
    p.add_argument("--label", help="label column name or index (default: last)")
    p.add_argument("--positive-label", dest="positive_label")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--level", help="fixed:<l>, sampled, or sampled:<p>,<L>")
    p.add_argument("--epochs", type=int, help="SGD updates for a monolithic run")
    p.add_argument("--epochs-per-round", dest="epochs_per_round", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--nodes", type=int)
    p.add_argument("--fraction", type=float, help="share of the training split each node draws")
    p.add_argument("--fixed-partition", dest="resample", action="store_false")
    p.add_argument("--eta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--max-level", dest="max_level", type=int)
    p.add_argument("--target-mean", dest="target_mean", type=float)
    p.add_argument("--weight-range", dest="weight_range", type=_pair)
    p.add_argument("--threshold", type=int, help="Shamir threshold t for negotiation")
    for flag, kind in _DP_FLAGS.items():
        p.add_argument(f"--dp-{flag}", dest=f"dp_{flag}", type=kind)
    p.add_argument("--privacy-report", dest="privacy_report", action="store_true")
    p.add_argument("--no-timing", dest="timing", action="store_false", help="write wall_ms as 0")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hashcomb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_run(sub)

    p = sub.add_parser("solve-bias", help="coin bias giving a target mean level")
    p.add_argument("--target", type=float, default=8.0)
    p.add_argument("--L", dest="max_level", type=int, default=16)

    p = sub.add_parser("negotiate", help="simulate the hyper-parameter negotiation")
    p.add_argument("--range", dest="ranges", type=_pair, action="append", required=True, help="local lo,hi (repeat per party)")
    p.add_argument("--threshold", type=int)
    p.add_argument("--max-level", dest="max_level", type=int, default=16)
    p.add_argument("--target-mean", dest="target_mean", type=float, default=8.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--transcript", help="write the message log as JSON lines")

    p = sub.add_parser("privacy-report", help="Rényi divergences for one replaced sample value")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv", help="CSV file; the sample is one column")
    src.add_argument("--uniform", type=int, help="draw this many values uniformly from the source range")
    p.add_argument("--column", default="0", help="column name or index for --csv")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--replacement", type=float, required=True)
    p.add_argument("--range", dest="source_range", type=_pair, help="source lo,hi (default: sample range)")
    p.add_argument("--delta", type=float)
    p.add_argument("--level", type=int, default=8)
    p.add_argument("--alphas", type=_floats, default=list(DEFAULT_ALPHAS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("fetch-dataset", help="download and verify a dataset preset")
    p.add_argument("name", choices=["spambase"])
    p.add_argument("--dest", default="data/spambase.csv")
    p.add_argument("--source", choices=["keel", "uci"], default="keel")
    p.add_argument("--sha256")

    sub.add_parser("presets", help="list the shipped experiment presets")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = vars(args).copy()
    merged: dict = {}
    if "preset" in values:
        merged.update(preset(values.pop("preset")))
    if "config" in values:
        merged.update(RunConfig.from_file(values.pop("config")).to_dict())
    dp = dict(merged.get("dp") or {})
    for flag in _DP_FLAGS:
        if f"dp_{flag}" in values:
            dp[flag] = values.pop(f"dp_{flag}")
    for key in ("command", "verbose"):
        values.pop(key, None)
    merged.update(values)
    if dp or merged.get("mode") == "fedavg_dp":
        merged["dp"] = {**asdict(DPBlock()), **dp}
    return RunConfig.from_dict(merged)


def _cmd_run(args) -> int:
    config = config_from_args(args)
    outcome = run(config)
    out = write_outputs(outcome, config.out, timing=config.timing)
    res = outcome.manifest["results"]
    print(
        f"{config.mode}: final acc={res['final']['accuracy']:.4f} f1={res['final']['f1']:.4f}; "
        f"best f1={res['best']['f1']:.4f} (round {res['best']['round']}) -> {out}"
    )
    return EXIT_OK


def _cmd_solve_bias(args) -> int:
    t0 = time.perf_counter()
    p = solve_bias(args.target, args.max_level)
    logging.getLogger(__name__).info("solved in %.3f ms", (time.perf_counter() - t0) * 1000)
    print(f"{p:.9f}")
    return EXIT_OK


def _cmd_negotiate(args) -> int:
    n = len(args.ranges)
    t = args.threshold if args.threshold is not None else (n - 1) // 2
    transport = Transport()
    parties = make_parties(args.ranges, seed=args.seed)
    scheme = run_negotiation(parties, t, max_level=args.max_level, target_mean=args.target_mean, transport=transport)
    if args.transcript:
        write_transcript(transport.transcript, Path(args.transcript))
    summary = {
        "parties": n,
        "threshold": t,
        "coordinator": parties[0].state.coordinator,
        "fingerprint": scheme.fingerprint(),
        "c_min": scheme.c_min,
        "c_max": scheme.c_max,
        "delta": scheme.delta,
        "max_level": scheme.max_level,
        "selection_p": scheme.selection_p,
        "messages": len(transport.transcript),
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _cmd_privacy_report(args) -> int:
    if args.csv:
        sample = read_column(args.csv, args.column)
    else:
        lo, hi = args.source_range or (0.0, 1.0)
        sample = np.random.default_rng(args.seed).uniform(lo, hi, size=args.uniform)
    lo, hi = args.source_range or (float(sample.min()), float(sample.max()))
    scheme = QuantizationScheme.from_range(lo, hi, delta=args.delta, max_level=max(args.level, 2))
    report = adjacent_divergence_report(sample, args.index, args.replacement, scheme, args.alphas, args.level)
    text = json.dumps(_jsonable(report), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_fetch(args) -> int:
    path = fetch_spambase(args.dest, source=args.source, sha256=args.sha256)
    print(path)
    return EXIT_OK


def _cmd_presets(args) -> int:
    for name in sorted(PRESETS):
        print(name)
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "solve-bias": _cmd_solve_bias,
    "negotiate": _cmd_negotiate,
    "privacy-report": _cmd_privacy_report,
    "fetch-dataset": _cmd_fetch,
    "presets": _cmd_presets,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except TrainingDivergence as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

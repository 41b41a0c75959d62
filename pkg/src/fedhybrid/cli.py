"""``fedhybrid`` command line.

``fedhybrid run`` executes a sweep and writes one CSV row per
(cell, seed, round) plus a ``.summary.csv`` sidecar with per-cell statistics.
``fedhybrid sigma`` prints the calibrated Gaussian noise scale.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import dp
from .errors import ConfigError
from .experiment import (
    CsvSink,
    emit_summary_csv,
    parse_config,
    run_experiment,
    summary_path,
)

log = logging.getLogger("fedhybrid")


def _list(kind):
    def parse(text: str):
        items = [s for s in text.replace(" ", "").split(",") if s]
        if not items:
            raise argparse.ArgumentTypeError("expected a comma-separated list")
        try:
            values = [kind(s) for s in items]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
        return values if len(values) > 1 else values[0]

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedhybrid")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment sweep")
    run.add_argument("--config", help="TOML config file; flags override its values")
    run.add_argument("--mode", type=_list(str), help="plain, dp-only, he-only, hybrid (comma list)")
    run.add_argument("--n-clients", type=_list(int))
    run.add_argument("--alpha", type=_list(float))
    run.add_argument("--epsilon", type=_list(float))
    run.add_argument("--delta", type=float)
    run.add_argument("--clip-norm", type=float)
    run.add_argument("--rounds", type=int)
    run.add_argument("--eta", type=float)
    run.add_argument("--seeds", type=_list(int))
    run.add_argument("--he-params", choices=("paper", "desk"))
    run.add_argument("--backend", choices=("ckks", "mock"))
    run.add_argument("--batch-size", type=int)
    run.add_argument("--adjacency", choices=("add-remove", "replace"))
    run.add_argument("--workers", type=int)
    run.add_argument(
        "--timing",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="record phase timings (forces sequential cells); --no-timing zeroes them",
    )
    run.add_argument("--out", dest="output_path", help="CSV output path")

    sigma = sub.add_parser("sigma", help="print the calibrated noise scale")
    sigma.add_argument("--epsilon", type=float, required=True)
    sigma.add_argument("--delta", type=float, default=1e-5)
    sigma.add_argument("--clip-norm", type=float, default=20.0)
    sigma.add_argument("--adjacency", choices=("add-remove", "replace"), default="add-remove")
    return parser


_OVERRIDE_KEYS = (
    "mode",
    "n_clients",
    "alpha",
    "epsilon",
    "delta",
    "clip_norm",
    "rounds",
    "eta",
    "seeds",
    "he_params",
    "backend",
    "batch_size",
    "adjacency",
    "workers",
    "timing",
    "output_path",
)


def _cmd_run(args) -> int:
    overrides = {k: getattr(args, k) for k in _OVERRIDE_KEYS}
    try:
        config = parse_config(args.config, overrides)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    with CsvSink(config.output_path) as sink:
        result = run_experiment(config, on_cell=lambda cell, rows: sink.write(rows))
    if result.summaries:
        emit_summary_csv(result.summaries, summary_path(config.output_path))
        log.info("wrote %d rows to %s", sink.count, config.output_path)
    for cell, error in result.failures:
        log.error("failed cell %s: %s", cell, error)
    return 0 if result.ok else 1


def _cmd_sigma(args) -> int:
    try:
        params = dp.PrivacyParams.calibrated(
            args.epsilon, args.delta, args.clip_norm, args.adjacency
        )
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    classical = dp.classical_sigma(args.epsilon, args.delta, params.sensitivity)
    print(f"sigma={params.sigma:.9g} sensitivity={params.sensitivity:g} classical={classical:.9g}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handler = {"run": _cmd_run, "sigma": _cmd_sigma}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())

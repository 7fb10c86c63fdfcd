"""Command line entry point: ``clutter-vi run`` and ``clutter-vi gen-data``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .harness import ConfigError, ExperimentConfig, load_config, normalize_method, run_experiment
from .model import sample_dataset, write_dataset

EXIT_CONFIG = 2
EXIT_IO = 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _method_list(text: str) -> list[str]:
    try:
        return [normalize_method(part) for part in text.split(",") if part.strip()]
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clutter-vi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a comparison experiment")
    run.add_argument("--config", help="JSON config; omitted keys take the default clutter setting")
    run.add_argument("--out", help="output directory (overrides config output_dir)")
    run.add_argument("--diagnostics", action="store_true", help="record per-iteration ELBO and KL")
    run.add_argument("--seeds", type=_int_list)
    run.add_argument("--sizes", type=_int_list)
    run.add_argument("--methods", type=_method_list, help="subset of gaa,ep,mf,laplace,numeric")

    gen = sub.add_parser("gen-data", help="write one seeded dataset")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--true-mean", type=float, default=None)
    gen.add_argument("--config", help="JSON config supplying the model parameters")
    return parser


def _config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for key in ("seeds", "sizes", "methods"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "out", None) and args.command == "run":
        overrides["output_dir"] = args.out
    if getattr(args, "diagnostics", False):
        overrides["diagnostics"] = True
    if overrides:
        try:
            config = dataclasses.replace(config, **overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _config(args)
        if args.command == "gen-data":
            if args.n < 0:
                raise ConfigError("--n must be non-negative")
            true_mean = config.true_mean if args.true_mean is None else args.true_mean
            data = sample_dataset(config.model, true_mean, args.n, args.seed)
            write_dataset(args.out, data, config.model)
            return 0
        _, summary = run_experiment(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for n, block in summary["by_size"].items():
        parts = [
            f"{m}={stats['median_kl']:.3g}" if stats["median_kl"] is not None else f"{m}=n/a"
            for m, stats in block["methods"].items()
        ]
        print(f"n={n}: median KL " + " ".join(parts))
    print(f"wrote {config.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

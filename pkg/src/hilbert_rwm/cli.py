"""Command line entry point ``hilbert-rwm``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .runner import EXIT_RUNTIME, run_experiment
from .spde import h_of_ell, optimal_ell


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hilbert-rwm",
                                 description="Random-walk Metropolis on Hilbert space: "
                                             "diffusion-limit experiments.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a TOML config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None, help="override master_seed")
    run.add_argument("--threads", type=int, default=None,
                     help="worker threads (default: $HILBERT_RWM_THREADS or 1)")
    run.add_argument("--out", default=None, help="override output_dir")

    val = sub.add_parser("validate", help="check a config file without running it")
    val.add_argument("config")

    sub.add_parser("optimal-ell", help="print ell*, beta(ell*) and h(ell*)")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)

    if args.command == "optimal-ell":
        sc = optimal_ell()
        print(f"ell*  = {sc.ell:.6f}")
        print(f"beta* = {sc.beta:.6f}")
        print(f"h*    = {h_of_ell(sc.ell):.6f}")
        return 0

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_RUNTIME

    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.experiment}, config hash {cfg.config_hash()[:12]})")
        return 0

    return run_experiment(cfg, seed=args.seed, threads=args.threads, out=args.out)


if __name__ == "__main__":
    sys.exit(main())

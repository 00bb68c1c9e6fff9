"""Command-line entry point: ``hybridens <stage> [--config PATH] [--out DIR] ...``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import ConfigError, ExperimentConfig, load_config, validate
from .ensemble import MODES
from .pipeline import STAGES, PrerequisiteError, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridens", description="Hybrid perturbation/variational ensemble toolkit")
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--config", help="YAML experiment config (defaults if omitted)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="master seed (overrides seeds.master)")
    p.add_argument("--workers", type=int, help="worker processes for ensemble rollouts")
    p.add_argument("--mode", choices=MODES, help="ensemble scheme for the 'ensemble' stage")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else validate(ExperimentConfig())
    if args.out is not None:
        cfg.output = dataclasses.replace(cfg.output, dir=args.out)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seeds.master", f"--seed must be an unsigned 64-bit integer, got {args.seed}")
        cfg.seeds = dataclasses.replace(cfg.seeds, master=args.seed)
    if args.workers is not None:
        cfg.ensemble = dataclasses.replace(cfg.ensemble, workers=args.workers)
    if args.mode is not None:
        cfg.ensemble = dataclasses.replace(cfg.ensemble, mode=args.mode)
    return validate(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return run_pipeline(cfg, args.stage)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PrerequisiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 internal invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiments import EXPERIMENTS, ConfigError, ExperimentConfig, run_experiment, write_result
from .simulate import InvariantViolation

log = logging.getLogger("dualrail_dd")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dualrail-dd",
        description="Simulate dual-rail logical qubits protected by iSWAP decoupling.",
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name in EXPERIMENTS:
        s = sub.add_parser(name, help=f"run the {name} experiment")
        s.add_argument("--config", type=Path, help="JSON config file")
        s.add_argument("--seed", type=_u64, help="override noise.seed")
        s.add_argument("--shots", type=int, help="override shots")
        s.add_argument("--out", type=Path, help="result JSON path; CSVs go next to it")
    return p


def _load(experiment: str, path: Path | None) -> ExperimentConfig:
    if path is None:
        data = {"experiment": experiment}
    else:
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data.setdefault("experiment", experiment)
        if data["experiment"] != experiment:
            raise ConfigError(
                f"config is for {data['experiment']!r} but subcommand is {experiment!r}"
            )
    return ExperimentConfig.from_dict(data)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _load(args.experiment, args.config)
        cfg = cfg.with_overrides(seed=args.seed, shots=args.shots,
                                 output=None if args.out is None else str(args.out))
        log.info("running %s with %d shots", cfg.experiment, cfg.shots)
        result = run_experiment(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as err:
        print(f"invariant violation: {err}", file=sys.stderr)
        return EXIT_INVARIANT
    if cfg.output:
        for path in write_result(result, cfg.output):
            log.info("wrote %s", path)
    else:
        sys.stdout.write(result.to_json())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

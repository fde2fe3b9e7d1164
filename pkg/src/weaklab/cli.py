"""Command-line entry point.

``weaklab <subcommand> --config <path> [--seed N] [--out DIR]`` where the
subcommand is ``run`` (full pipeline) or one of the stages ``label``,
``aggregate``, ``train``, ``eval``, ``report``. Exit codes: 0 on success,
1 on configuration or missing-artifact errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .corpus import CorpusError
from .pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    run_pipeline,
    run_stage,
    STAGES,
)

logger = logging.getLogger("weaklab")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weaklab",
        description="Weak supervision pipeline: label, aggregate, train, eval, report.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run",) + STAGES:
        cmd = sub.add_parser(
            name,
            help="run the full pipeline" if name == "run" else f"run the {name} stage",
        )
        cmd.add_argument("--config", required=True, help="pipeline config file (JSON)")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
        cmd.add_argument("--out", default=None, help="override the output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = PipelineConfig.from_file(
            args.config, seed_override=args.seed, out_override=args.out
        )
    except (ConfigError, CorpusError) as exc:
        logger.error("invalid config: %s", exc)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            artifacts = run_pipeline(config)
        else:
            artifacts = run_stage(config, args.command)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except StageError as exc:
        if isinstance(exc.cause, ConfigError):
            logger.error("%s", exc)
            return EXIT_CONFIG
        logger.error("%s", exc)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        logger.error("unexpected failure: %s", exc)
        return EXIT_RUNTIME
    for key in sorted(artifacts):
        logger.info("wrote %s -> %s", key, artifacts[key])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 missing or corrupt artifact.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ArtifactError, ConfigError, NumericalError
from .config import load_config
from .pipeline import STAGE_ORDER, run_stage

log = logging.getLogger("stresstruss")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stresstruss",
        description="Stress-aligned truss generation from a tetrahedral "
                    "mesh: FEA, frame-field fit, parametrization, "
                    "isocurve extraction, simplification, geometry, and "
                    "verification.",
    )
    parser.add_argument("--config", required=True,
                        help="path to the JSON pipeline configuration")
    parser.add_argument("--stage", default="pipeline",
                        choices=list(STAGE_ORDER) + ["pipeline"],
                        help="stage to run (default: the full pipeline)")
    parser.add_argument("--out", default=None,
                        help="output directory (overrides config out_dir)")
    parser.add_argument("--log-level", default="info",
                        choices=["debug", "info", "warning", "error"])
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)
    try:
        cfg = load_config(args.config)
        written = run_stage(args.stage, cfg, out_dir=args.out)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 3
    except ArtifactError as exc:
        log.error("artifact error: %s", exc)
        return 4
    for path in written:
        log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""
Command Line

    python -m oec_sim --scenario config/scenarios/wize_2400_30.conf --out outputs/
    python -m oec_sim --matrix config/scenarios/paper_matrix.conf --parallel 4
    python -m oec_sim --reproduce-paper

Exit codes: 0 success, 1 a run aborted, 2 scenario/profile rejected.
"""

import argparse
import asyncio
import sys
from typing import List, Optional

import structlog

from .config import get_settings
from .exceptions import ScenarioError
from .logging_config import configure_logging
from .reproduce import reproduce_paper
from .scenario import load_matrix, load_scenario
from .simulation_manager import MatrixRunner

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_CONFIG_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oec_sim",
        description="Opportunistic vehicular identification simulator (BLE 5 / Wize)",
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--scenario", help="single scenario file")
    source.add_argument("--matrix", help="matrix file (defaults.* + cell.<name>.* keys)")
    source.add_argument("--reproduce-paper", action="store_true", help="run the shipped field-trial matrix and report")

    parser.add_argument("--out", help="output directory (default OEC_SIM_OUTPUT_DIR or ./outputs)")
    parser.add_argument("--seed", type=int, help="base seed, overrides the file")
    parser.add_argument("--parallel", type=int, help="max simultaneous runs (default OEC_SIM_PARALLEL or 1)")
    parser.add_argument("--profile-dir", help="radio profile directory")
    parser.add_argument("--dht-dump", action="store_true", help="write the DHT contents of every run as JSON lines")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    return parser


async def _run(args: argparse.Namespace) -> int:
    settings = get_settings()
    output_dir = args.out or settings.output_dir
    parallel = args.parallel or settings.parallel
    profile_dir = args.profile_dir or settings.profile_dir

    if args.reproduce_paper:
        report = await reproduce_paper(
            output_dir=output_dir,
            parallel=parallel,
            profile_dir=profile_dir,
            seed=args.seed,
            dht_dump=args.dht_dump,
        )
        print(report.text, end="")
        return EXIT_OK if report.matrix.ok else EXIT_RUN_FAILED

    scenarios = [load_scenario(args.scenario)] if args.scenario else load_matrix(args.matrix)
    if args.seed is not None:
        scenarios = [scenario.with_seed(args.seed) for scenario in scenarios]

    runner = MatrixRunner(
        output_dir=output_dir,
        parallel=parallel,
        profile_dir=profile_dir,
        dht_dump=args.dht_dump,
        log_level=args.log_level or settings.log_level,
    )
    result = await runner.run_matrix(scenarios)
    print(result.summary_path)
    if not result.ok:
        for failure in result.failures:
            logger.error("Run failed", scenario_id=failure.scenario_id, repetition=failure.repetition, cause=failure.cause)
        return EXIT_RUN_FAILED
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or get_settings().log_level)
    if args.parallel is not None and args.parallel < 1:
        logger.error("Invalid --parallel", value=args.parallel)
        return EXIT_CONFIG_ERROR

    try:
        return asyncio.run(_run(args))
    except ScenarioError as e:
        logger.error("Configuration rejected", error=str(e))
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""
Simulation Manager

Executes the experiment matrix: every scenario cell `runs` times with
per-repetition seeds, up to `parallel` runs at once, and a single
collector writing the CSV outputs in a fixed order.
"""

import asyncio
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import aiofiles
import structlog

from .config import get_settings
from .exceptions import RunAbortedError
from .logging_config import configure_logging
from .metrics import BEACON_COLUMNS, SUMMARY_COLUMNS, RunMetrics, beacon_rows, render_csv, summary_row
from .scenario import Scenario
from .simulation import RunResult, run_scenario

logger = structlog.get_logger()

SUMMARY_FILE = "summary.csv"
BEACONS_FILE = "beacons.csv"
DHT_DIR = "dht"


@dataclass(frozen=True)
class RunJob:
    """One (scenario, repetition) unit of work."""

    index: int
    scenario: Scenario
    repetition: int

    @property
    def label(self) -> str:
        return f"{self.scenario.scenario_id}#{self.repetition}"


def expand_jobs(scenarios: Sequence[Scenario]) -> List[RunJob]:
    """Cells in matrix order, repetitions in index order."""
    jobs = []
    for scenario in scenarios:
        for repetition in range(scenario.runs):
            jobs.append(RunJob(len(jobs), scenario, repetition))
    return jobs


def _execute(scenario: Scenario, repetition: int, profile_dir: Optional[str]) -> RunResult:
    """Worker entry point (module level so process pools can pickle it)."""
    return run_scenario(scenario, repetition, profile_dir)


@dataclass
class MatrixResult:
    summary_path: Path
    beacons_path: Path
    runs: List[RunMetrics] = field(default_factory=list)
    failures: List[RunAbortedError] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


class MatrixRunner:
    """
    Run scenario cells in parallel and collect their outputs.

    Runs share no state, so the parallelism degree never changes a byte
    of output: results are gathered first and written in job order.

    Example:
        >>> runner = MatrixRunner(output_dir="./outputs", parallel=4)
        >>> result = await runner.run_matrix(load_matrix("config/scenarios/paper_matrix.conf"))
        >>> result.summary_path
        PosixPath('outputs/summary.csv')
    """

    def __init__(
        self,
        output_dir: str | Path = "./outputs",
        parallel: int = 1,
        profile_dir: Optional[str | Path] = None,
        dht_dump: bool = False,
        log_level: str = "INFO",
    ):
        """
        Args:
            output_dir: Directory for CSV outputs
            parallel: Max simultaneous runs (worker processes when > 1)
            profile_dir: Radio profile directory (settings default if None)
            dht_dump: Also write one DHT dump per run
            log_level: Level configured in worker processes
        """
        if parallel < 1:
            raise ValueError(f"parallel must be >= 1, got {parallel}")
        self.output_dir = Path(output_dir)
        self.parallel = parallel
        self.profile_dir = str(profile_dir) if profile_dir is not None else None
        self.dht_dump = dht_dump
        self.log_level = log_level
        self.semaphore = asyncio.Semaphore(parallel)
        logger.info("MatrixRunner initialized", parallel=parallel, output_dir=str(self.output_dir))

    async def run_matrix(self, scenarios: Sequence[Scenario]) -> MatrixResult:
        """
        Execute every repetition of every cell and write the outputs.

        Args:
            scenarios: Validated scenarios

        Returns:
            MatrixResult; ok is False iff any run aborted

        Raises:
            ScenarioError: If a cell's radio profile is missing or invalid
        """
        profile_dir = self.profile_dir or get_settings().profile_dir
        for scenario in scenarios:
            scenario.radio_bundle(profile_dir)

        jobs = expand_jobs(scenarios)
        logger.info("Starting matrix", cells=len(scenarios), runs=len(jobs))

        executor: Optional[Executor] = None
        if self.parallel > 1:
            executor = ProcessPoolExecutor(
                max_workers=self.parallel, initializer=configure_logging, initargs=(self.log_level,)
            )
        try:
            outcomes = await asyncio.gather(
                *[self._run_single(job, executor) for job in jobs], return_exceptions=True
            )
        finally:
            if executor is not None:
                executor.shutdown()

        results: List[RunResult] = []
        failures: List[RunAbortedError] = []
        for job, outcome in zip(jobs, outcomes):
            if isinstance(outcome, RunAbortedError):
                failures.append(outcome)
            elif isinstance(outcome, BaseException):
                failures.append(RunAbortedError(job.scenario.scenario_id, job.repetition, str(outcome)))
            else:
                results.append(outcome)

        logger.info("Matrix complete", total=len(jobs), successes=len(results), failures=len(failures))

        summary_path, beacons_path = await self.collect(results)
        return MatrixResult(
            summary_path=summary_path,
            beacons_path=beacons_path,
            runs=[result.metrics for result in results],
            failures=failures,
        )

    async def _run_single(self, job: RunJob, executor: Optional[Executor]) -> RunResult:
        """Run one job under semaphore control."""
        async with self.semaphore:
            try:
                if executor is None:
                    return _execute(job.scenario, job.repetition, self.profile_dir)
                loop = asyncio.get_running_loop()
                return await loop.run_in_executor(
                    executor, _execute, job.scenario, job.repetition, self.profile_dir
                )
            except Exception as e:
                logger.error("Run aborted", run=job.label, error=str(e))
                raise RunAbortedError(job.scenario.scenario_id, job.repetition, str(e)) from e

    async def collect(self, results: Sequence[RunResult]) -> tuple[Path, Path]:
        """
        Single collector: write summary and per-beacon CSVs (and DHT dumps).

        Returns:
            (summary path, per-beacon path)
        """
        self.output_dir.mkdir(parents=True, exist_ok=True)
        summary_path = self.output_dir / SUMMARY_FILE
        beacons_path = self.output_dir / BEACONS_FILE

        summary = render_csv(SUMMARY_COLUMNS, (summary_row(r.metrics) for r in results))
        beacons = render_csv(BEACON_COLUMNS, (row for r in results for row in beacon_rows(r.metrics)))

        async with aiofiles.open(summary_path, "w", newline="") as f:
            await f.write(summary)
        async with aiofiles.open(beacons_path, "w", newline="") as f:
            await f.write(beacons)

        if self.dht_dump:
            dump_dir = self.output_dir / DHT_DIR
            dump_dir.mkdir(exist_ok=True)
            for result in results:
                metrics = result.metrics
                path = dump_dir / f"{metrics.scenario_id}_{metrics.repetition}.jsonl"
                async with aiofiles.open(path, "w") as f:
                    await f.write("".join(line + "\n" for line in result.dht_dump))

        logger.info("Results written", summary=str(summary_path), beacons=str(beacons_path), runs=len(results))
        return summary_path, beacons_path


async def run_matrix(
    scenarios: Sequence[Scenario],
    parallelism: int = 1,
    output_dir: str | Path = "./outputs",
    **kwargs,
) -> MatrixResult:
    """Convenience wrapper around MatrixRunner.run_matrix."""
    return await MatrixRunner(output_dir=output_dir, parallel=parallelism, **kwargs).run_matrix(scenarios)

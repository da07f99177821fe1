"""
Experiment runner for angle sweeps, BER runs and the reproduction presets.

Examples:
  # Run one experiment file (flat key = value format, see app/utils/spec_parser.py)
  python jobs/runner.py run experiments/fig4.txt

  # Same file, different seed, 8 workers, custom output directory
  python jobs/runner.py run experiments/fig4.txt --seed 11 --jobs 8 --out /tmp/fig4

  # Reproduce a figure preset at desk scale (writes <preset>_report.csv)
  python jobs/runner.py reproduce fig5

  # Smoke-run a preset with scaled-down stop rules
  python jobs/runner.py reproduce fig4 --quick

  # List the available presets
  python jobs/runner.py --list-presets

Exit codes: 0 on success, 2 on configuration errors (bad experiment file,
unknown preset), 1 on anything else. Experiment files are only read.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Ensure project root is on PYTHONPATH when invoked directly.
ROOT_DIR = Path(__file__).resolve().parents[1]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from app.utils.errors import ConfigurationError  # noqa: E402
from app.utils.spec_parser import parse_spec_file  # noqa: E402
from config import get_settings  # noqa: E402
from jobs.experiments import run_experiment  # noqa: E402
from jobs.presets import PRESETS, listing, reproduce  # noqa: E402

logger = logging.getLogger("mdpsm_runner")

EXIT_FAILURE = 1
EXIT_CONFIG = 2


def configure_logging() -> None:
    settings = get_settings()
    logging.basicConfig(
        level=getattr(logging, str(settings.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(message)s",
    )


def task_run(spec_path: str, out_dir: str, jobs: int, seed: Optional[int]) -> str:
    spec, text = parse_spec_file(spec_path)
    outcome = run_experiment(spec, out_dir, spec_text=text, jobs=jobs, seed=seed)
    for path in outcome.files:
        logger.info("Artifact %s", path)
    return outcome.summary


def task_reproduce(
    preset: str, out_dir: str, jobs: int, seed: Optional[int], quick: bool
) -> str:
    if preset not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {preset!r}; available presets:\n{listing()}", field="preset"
        )
    checks = reproduce(preset, out_dir, seed=seed, jobs=jobs, quick=quick)
    for check in checks:
        status = "-" if check.passed is None else ("pass" if check.passed else "FAIL")
        logger.info(
            "%-48s reference=%-12s measured=%-14s tol=%-6s %s",
            check.quantity,
            check.reference,
            check.measured,
            check.tolerance,
            status,
        )
    graded = [c for c in checks if c.passed is not None]
    return f"{sum(c.passed for c in graded)}/{len(graded)} checks within tolerance"


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Override the experiment seed")
    common.add_argument(
        "--out",
        default=settings.output_dir,
        help="Output directory (default: %(default)s, env MDPSM_OUTPUT_DIR)",
    )
    common.add_argument(
        "--jobs",
        type=int,
        default=settings.jobs,
        help="Max parallel worker processes (default: %(default)s)",
    )

    parser = argparse.ArgumentParser(description="Run MD-PSM / PSM link experiments.")
    parser.add_argument(
        "--list-presets", action="store_true", help="List reproduction presets and exit"
    )
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", parents=[common], help="Run one experiment file")
    run.add_argument("spec", help="Path to a key = value experiment file")

    repro = sub.add_parser(
        "reproduce", parents=[common], help="Run a figure/table preset with a pinned seed"
    )
    repro.add_argument("figure_id", help="Preset name, see --list-presets")
    repro.add_argument(
        "--quick", action="store_true", help="Scale stop rules down for a smoke run"
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.list_presets:
        print(listing())
        return 0
    if args.command is None:
        parser.error("a command is required (run or reproduce)")

    jobs = max(1, args.jobs)
    job_name = args.command if args.command == "run" else f"reproduce {args.figure_id}"
    logger.info("Starting job %s", job_name)
    try:
        if args.command == "run":
            summary = task_run(args.spec, args.out, jobs, args.seed)
        else:
            summary = task_reproduce(args.figure_id, args.out, jobs, args.seed, args.quick)
    except ConfigurationError as e:
        logger.error("Job %s rejected: %s", job_name, e.diagnostic())
        print(f"error: {e.diagnostic()}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        logger.exception("Job %s failed: %s", job_name, e)
        return EXIT_FAILURE
    logger.info("Job %s finished: %s", job_name, summary)
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())

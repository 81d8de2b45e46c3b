"""
Command line entry point: python -m app.cli <command>

Exit codes: 0 all checks pass, 1 a verdict failed, 2 configuration error,
3 runtime error.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from app.lab import catalog, runner
from app.lab.errors import ConfigError, ExponentOutOfRange, LabError

logger = logging.getLogger("app.cli")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pme-lab", description="Gradient-estimate lab for the weighted porous medium equation")
    sub = parser.add_subparsers(dest="command", required=True)

    validate = sub.add_parser("validate", help="parse a scenario and check its exponent rules")
    validate.add_argument("scenario")

    run = sub.add_parser("run", help="run every check of a scenario")
    run.add_argument("scenario")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--jobs", type=int, default=int(os.getenv("LAB_JOBS", "1")))
    run.add_argument("--record", action="store_true", help="store the run in the database")

    report = sub.add_parser("report", help="export tables and series of a finished run")
    report.add_argument("manifest")
    report.add_argument("--format", choices=runner.REPORT_FORMATS, default="json")
    report.add_argument("--render", action="store_true", help="also draw PNG plots of the series")

    sub.add_parser("list-catalog", help="list every catalog tag")

    golden = sub.add_parser("golden-update", help="freeze calibrated C* values")
    golden.add_argument("scenario")
    golden.add_argument("--force", action="store_true")
    return parser


def _print_catalog() -> None:
    for family, tags in catalog.catalog_listing().items():
        print(f"{family}:")
        for tag in tags:
            print(f"  {tag}")


def _record(manifest, manifest_path: str) -> None:
    from app.models.database import SessionLocal, init_db, record_run

    init_db()
    db = SessionLocal()
    try:
        row = record_run(db, manifest, manifest_path)
        logger.info("recorded run %d", row.id)
    finally:
        db.close()


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "validate":
        scenario = runner.validate(args.scenario)
        print(f"{scenario.name}: valid ({scenario.n_checks} checks)")
        return EXIT_PASS
    if args.command == "run":
        manifest = runner.run(args.scenario, args.out, args.seed, args.jobs)
        for name, passed in manifest.verdicts.items():
            print(f"{'PASS' if passed else 'FAIL'}  {name}")
        if args.record:
            scenario, _ = runner.load_scenario(args.scenario)
            _record(manifest, str(runner.run_directory(scenario, args.out) / "manifest.json"))
        return EXIT_PASS if manifest.passed else EXIT_FAIL
    if args.command == "report":
        for path in runner.report(args.manifest, args.format, args.render):
            print(path)
        return EXIT_PASS
    if args.command == "list-catalog":
        _print_catalog()
        return EXIT_PASS
    if args.command == "golden-update":
        print(runner.golden_update(args.scenario, force=args.force))
        return EXIT_PASS
    return EXIT_CONFIG


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except (ConfigError, ExponentOutOfRange) as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except LabError as e:
        logger.error("runtime error: %s", e)
        return EXIT_RUNTIME
    except Exception:
        logger.exception("unexpected failure")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

import argparse
import sys
import time

from core.config import ConfigManager, ExperimentConfig
from core.history import RunHistory
from core.logger import Logger
from core.report import ExperimentReport
from core.version import APP_NAME, APP_VERSION

EXPERIMENTS = (
    "alpha-trajectory", "borell-euclidean", "borell-sphere", "brascamp-lieb", "bridge-law", "convergence",
    "follmer-euclidean", "follmer-sphere", "frame-lemma", "girsanov", "jacobi-stationary", "logsob",
    "marginal-nu",
)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


class UnknownExperimentError(KeyError):
    pass


def get_experiment_instance(name):
    """Experiment modules are imported on demand"""
    if name == "borell-euclidean":
        from impl.borell import BorellEuclidean
        return BorellEuclidean()
    elif name == "borell-sphere":
        from impl.borell import BorellSphere
        return BorellSphere()
    elif name == "girsanov":
        from impl.borell import Girsanov
        return Girsanov()
    elif name == "jacobi-stationary":
        from impl.marginals import JacobiStationary
        return JacobiStationary()
    elif name == "marginal-nu":
        from impl.marginals import MarginalNu
        return MarginalNu()
    elif name == "convergence":
        from impl.marginals import Convergence
        return Convergence()
    elif name == "brascamp-lieb":
        from impl.brascamp_lieb import BrascampLieb
        return BrascampLieb()
    elif name == "frame-lemma":
        from impl.brascamp_lieb import FrameLemma
        return FrameLemma()
    elif name == "follmer-euclidean":
        from impl.follmer import FollmerEuclidean
        return FollmerEuclidean()
    elif name == "follmer-sphere":
        from impl.follmer import FollmerSphere
        return FollmerSphere()
    elif name == "bridge-law":
        from impl.follmer import BridgeLaw
        return BridgeLaw()
    elif name == "logsob":
        from impl.logsob import LogSobolev
        return LogSobolev()
    elif name == "alpha-trajectory":
        from impl.logsob import AlphaTrajectory
        return AlphaTrajectory()
    raise UnknownExperimentError(f"unknown experiment {name!r}; see `scl list`")


def list_experiments():
    return [get_experiment_instance(name).describe() for name in sorted(EXPERIMENTS)]


def build_parser():
    parser = argparse.ArgumentParser(prog="scl", description=f"{APP_NAME} {APP_VERSION}")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and save its report")
    run.add_argument("--config", help="JSON config file")
    run.add_argument("--experiment", help="experiment name (overrides the config file)")
    run.add_argument("--seed", type=int)
    run.add_argument("--paths", type=int)
    run.add_argument("--steps", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--out", help="report directory (default: <workspace>/reports)")

    sub.add_parser("list", help="list the available experiments")

    report = sub.add_parser("report", help="print a saved report")
    report.add_argument("--in", dest="input", required=True, help="report JSON file")
    report.add_argument("--format", choices=("csv", "json"), default="json")

    sub.add_parser("history", help="list recorded runs")
    return parser


def _load_config(args):
    if not args.config and not args.experiment:
        raise ValueError("give --config or --experiment")
    name = args.experiment or ExperimentConfig.load(args.config).experiment
    experiment = get_experiment_instance(name)
    if args.config:
        config = ExperimentConfig.load(args.config, experiment.defaults)
    else:
        config = ExperimentConfig.from_dict({"experiment": name}, experiment.defaults)
    config = config.with_overrides(experiment=name, seed=args.seed, paths=args.paths, steps=args.steps,
                                   workers=args.workers)
    return experiment, config.validate()


def cmd_run(args, logger):
    try:
        experiment, config = _load_config(args)
    except (ValueError, KeyError) as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG

    logger.info(f"Starting {experiment.name} (seed {config.seed}, {config.paths} paths, {config.steps} steps)...")
    started = time.perf_counter()
    try:
        checks = experiment.run(config, lambda percent: logger.debug(f"{experiment.name}: {percent}%"))
    except ValueError as e:
        logger.error(f"{experiment.name}: invalid parameter: {e}")
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"{experiment.name} failed: {e}")
        raise
    report = ExperimentReport(config.to_dict(), APP_VERSION, checks, time.perf_counter() - started)

    config_manager = ConfigManager()
    path = report.save(args.out or config_manager.get_reports_dir())
    RunHistory().add_record(experiment.name, config.seed, path, report.passed)
    config_manager.set_last_run_version(APP_VERSION)

    for row in report.failed_checks:
        logger.warning(f"FAIL {row.name}: value {row.value:.6g}, oracle {row.oracle:.6g}, tol {row.tol:.3g}")
    logger.info(f"{len(report.checks) - len(report.failed_checks)}/{len(report.checks)} checks passed, "
                f"report saved to {path}")
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_list(args, logger):
    for entry in list_experiments():
        print(f"{entry['name']:<20} {entry['module']:<22} {entry['anchor']:<52} {entry['statement']}")
    return EXIT_PASS


def cmd_report(args, logger):
    try:
        report = ExperimentReport.load(args.input)
    except (OSError, ValueError, KeyError) as e:
        logger.error(f"Failed to load report {args.input}: {e}")
        return EXIT_CONFIG
    sys.stdout.write(report.to_csv() if args.format == "csv" else report.to_json() + "\n")
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_history(args, logger):
    records = RunHistory().get_records()
    if not records:
        print("No runs recorded yet.")
    for r in records:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{r['run_time']}  {status}  {r['experiment']:<20} seed {r['seed']:<6} {r['report']}")
    return EXIT_PASS


COMMANDS = {"run": cmd_run, "list": cmd_list, "report": cmd_report, "history": cmd_history}


def main(argv=None):
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args, Logger())

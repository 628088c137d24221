"""Command-line interface for strip-mlp."""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .analysis import stage_report, table1, table1_text, write_report
from .autograd import DEFAULT_EPS
from .config import CONFIG_FILENAME, RunConfig, load_config, save_config
from .data import fetch_cifar10
from .data.download import CIFAR10_DIRNAME, CIFAR10_URL
from .errors import StripMLPError
from .gradcheck import DEFAULT_TOLERANCE, SUITES, run_suite
from .layers.blocks import MIXING_CHOICES, TOPOLOGIES
from .layers.strip import PATCH_POLICIES
from .models import build_model, load_checkpoint, variant_config
from .models.zoo import VARIANTS
from .training import evaluate, load_datasets, train


def setup_logging(verbose: bool = False) -> None:
    """Configure logging settings.

    Args:
        verbose: If True, sets logging level to DEBUG, otherwise INFO.
    """
    log_level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler()],
    )


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subcommand per operation.

    Returns:
        The configured parser.
    """
    formatter = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="strip-mlp",
        description="Strip-MLP - cost analysis, gradient checks, training and evaluation",
        formatter_class=formatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose output")
    commands = parser.add_subparsers(dest="command", metavar="<command>")
    commands.required = True

    p = commands.add_parser(
        "table1", formatter_class=formatter,
        help="Sparse MLP vs Strip MLP token-interaction cost comparison",
    )
    p.add_argument("--output", "-o", default=None, help="Also write the report as JSON to this path")

    p = commands.add_parser("analyze", formatter_class=formatter, help="Per-stage cost breakdown of a variant")
    p.add_argument("--variant", required=True, choices=sorted(VARIANTS), help="Model preset")
    p.add_argument("--classes", type=int, default=1000, help="Number of output classes")
    p.add_argument(
        "--patches", default="c4", choices=[*PATCH_POLICIES, "one"],
        help="Channel-patch policy (cN: P = C/N of the mixing module's channels)",
    )
    p.add_argument("--resolution", type=int, default=None, help="Input resolution (default: the preset's)")
    p.add_argument("--topology", default="cascade", choices=TOPOLOGIES, help="Group strip mixing topology")
    p.add_argument("--mixing", default="both", choices=MIXING_CHOICES, help="Active mixing branches")
    p.add_argument("--strip-width", type=int, default=3, help="Strip width k (odd)")
    p.add_argument("--output", "-o", default=None, help="Also write the report as JSON to this path")

    p = commands.add_parser("gradcheck", formatter_class=formatter, help="Finite-difference gradient suites")
    p.add_argument("--layer", default=None, choices=sorted(SUITES), help="Run only this suite")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help="Central-difference step")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE, help="Maximum relative error")
    p.add_argument("--seed", type=int, default=0, help="Seed for parameters, inputs and coordinates")

    p = commands.add_parser("train", formatter_class=formatter, help="Train a model from a run config")
    p.add_argument("--config", required=True, help="Run config (JSON)")
    p.add_argument("--run-dir", default=None, help="Run directory (overrides the config)")
    p.add_argument("--seed", type=int, default=None, help="Seed (overrides the config)")
    p.add_argument("--epochs", type=int, default=None, help="Total epochs (overrides the config)")
    p.add_argument("--max-steps", type=int, default=None, help="Stop after this many steps")
    p.add_argument(
        "--threads", type=int, default=None,
        help="Worker threads, 0 for deterministic serial execution (overrides the config)",
    )

    p = commands.add_parser("eval", formatter_class=formatter, help="Top-1 accuracy of a checkpoint")
    p.add_argument("--config", required=True, help="Run config (JSON)")
    p.add_argument("--checkpoint", required=True, help="Checkpoint file")
    p.add_argument("--split", default="test", choices=["train", "test"], help="Dataset split to evaluate")

    p = commands.add_parser("fetch", formatter_class=formatter, help="Download the CIFAR-10 binary archive")
    p.add_argument("--dest", default="./data", help=f"Directory to unpack {CIFAR10_DIRNAME} into")
    p.add_argument("--url", default=CIFAR10_URL, help="Archive URL")
    return parser


def cmd_table1(args: argparse.Namespace) -> int:
    report = table1()
    print(table1_text(report))
    if args.output:
        write_report(report, args.output)
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    overrides = dict(
        num_classes=args.classes,
        patch_policy=args.patches,
        topology=args.topology,
        mixing=args.mixing,
        strip_width=args.strip_width,
    )
    if args.resolution is not None:
        overrides["resolution"] = args.resolution
    cfg = variant_config(args.variant, **overrides)
    model, _ = build_model(cfg, seed=None)
    report = stage_report(model)
    print(report.to_text())
    if args.output:
        write_report(report, args.output)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    names = [args.layer] if args.layer else list(SUITES)
    failed = []
    print(f"{'layer':<18} {'tensors':>8} {'max rel err':>14}  result")
    for name in names:
        result = run_suite(name, eps=args.eps, seed=args.seed)
        ok = result.passed(args.tolerance)
        print(f"{name:<18} {len(result.checks):>8} {result.max_error:>14.3e}  {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
            logging.error(f"gradcheck {name} failed for: {', '.join(result.failures(args.tolerance))}")
    if failed:
        logging.error(f"{len(failed)} of {len(names)} gradient suites failed")
        return 1
    logging.info(f"all {len(names)} gradient suites passed (tolerance {args.tolerance:g})")
    return 0


def effective_config(args: argparse.Namespace) -> RunConfig:
    """Config file values with command-line flags applied on top."""
    config = load_config(args.config)
    changes = {}
    if getattr(args, "run_dir", None) is not None:
        changes["run_dir"] = args.run_dir
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "max_steps", None) is not None:
        changes["max_steps"] = args.max_steps
    if getattr(args, "threads", None) is not None:
        changes["threads"] = args.threads
        changes["deterministic"] = args.threads == 0
    if getattr(args, "epochs", None) is not None:
        schedule = config.schedule
        changes["schedule"] = dataclasses.replace(
            schedule, total_epochs=args.epochs, warmup_epochs=min(schedule.warmup_epochs, args.epochs - 1)
        )
    return config.replace(**changes) if changes else config


def cmd_train(args: argparse.Namespace) -> int:
    config = effective_config(args)
    run_dir = Path(config.run_dir)
    save_config(config, run_dir / CONFIG_FILENAME)
    threads = config.apply_threads()
    logging.info(f"run directory {run_dir}, seed {config.seed}, {threads or 'serial'} worker threads")
    train_set, eval_set = load_datasets(config)
    model, store = build_model(config.model, seed=config.seed)
    result = train(model, store, train_set, config, eval_set=eval_set, run_dir=run_dir)
    accuracy = evaluate(model, eval_set, resolution=config.model.resolution)
    final_loss = result.losses[-1] if result.losses else float("nan")
    print(f"steps {result.steps}  epochs {result.epochs}  final loss {final_loss:.4f}  top-1 {accuracy:.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = effective_config(args)
    config.apply_threads()
    train_set, test_set = load_datasets(config)
    model, store = build_model(config.model, seed=config.seed)
    load_checkpoint(args.checkpoint, store)
    dataset = train_set if args.split == "train" else test_set
    accuracy = evaluate(model, dataset, resolution=config.model.resolution)
    print(f"top-1 {accuracy:.4f} on {len(dataset)} {args.split} images")
    return 0


def cmd_fetch(args: argparse.Namespace) -> int:
    target = fetch_cifar10(args.dest, args.url)
    print(target)
    return 0


COMMANDS = {
    "table1": cmd_table1,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "eval": cmd_eval,
    "fetch": cmd_fetch,
}


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv`` and run one command.

    Returns:
        Exit code: 0 on success, 1 on a runtime failure, 2 on a usage error.
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    setup_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except (StripMLPError, OSError) as e:
        logging.error(f"{args.command} failed: {e}")
        if args.verbose:
            logging.exception("Detailed error information:")
        return 1


def main() -> int:
    """Main entry point for the CLI.

    Returns:
        Exit code (0 for success, non-zero for errors).
    """
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())

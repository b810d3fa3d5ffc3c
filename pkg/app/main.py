import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from pydantic import ValidationError

from app.core.config import AuditConfig
from app.core.errors import DataError, UsageError
from app.core.synth import GeneratorSpec
from app.services.name_resolver import resolve_format, resolve_metric, suggest
from app.services.pipeline import AuditPipeline

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _ArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting, so dispatch owns the exit status."""

    def error(self, message: str):
        raise UsageError(message)


def _epoch_path(value: str) -> Tuple[int, Path]:
    epoch, sep, path = value.partition("=")
    if not sep or not epoch.strip().isdigit() or not path:
        raise argparse.ArgumentTypeError(f"expected EPOCH=PATH, got '{value}'")
    return int(epoch), Path(path)


def _floats(value: str) -> List[float]:
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{value}'")


def _common_options() -> argparse.ArgumentParser:
    """Options shared by every subcommand. Unset options fall back to MIAUDIT_* variables, then defaults."""
    common = _ArgumentParser(add_help=False)
    common.add_argument("--k", dest="num_classes", type=int, help="expected number of classes")
    common.add_argument("--format", dest="fmt", help="prediction file format: csv or jsonl (default: from extension)")
    common.add_argument("--metric", help="metric: confidence, entropy, modified_entropy, correctness")
    common.add_argument("--bins", type=int, help="histogram bins, overflow bin included")
    common.add_argument("--pseudo-count", type=float, help="additive smoothing per histogram bin")
    common.add_argument("--smoothing", help="class pseudo-counts follow the 'pooled' histogram or are 'uniform'")
    common.add_argument("--min-class-support", type=int, help="members and non-members a class needs for its own model")
    common.add_argument("--p-train", type=float, help="prior probability of training membership")
    common.add_argument("--calibration-bins", type=int, help="equal-width risk-score bins for calibration")
    common.add_argument("--risk-thresholds", help="comma-separated risk-score thresholds")
    common.add_argument("--clamp-quantile", type=float, help="percentile where the overflow bin starts")
    common.add_argument("--balanced", action="store_const", const=True, help="maximize balanced accuracy")
    common.add_argument("--tolerance", dest="prob_tolerance", type=float, help="probability-sum tolerance")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--workers", type=int, help="worker threads")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _ArgumentParser(
        prog="miaudit",
        description="Membership-inference privacy audit of model prediction outputs.",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    thresholds = commands.add_parser("thresholds", parents=[common], help="learn and save attack thresholds")
    thresholds.add_argument("--shadow", type=Path, required=True)
    thresholds.add_argument("--out", type=Path, required=True, help="threshold table JSON")

    attack = commands.add_parser("attack", parents=[common], help="run the benchmark attack suite")
    attack.add_argument("--shadow", type=Path, required=True)
    attack.add_argument("--target", type=Path, required=True)
    attack.add_argument("--thresholds", type=Path, action="append", default=[], help="saved threshold table to reuse")
    attack.add_argument("--json", type=Path, help="write the full suite as JSON")
    attack.add_argument("--csv", type=Path, help="write per-attack results as CSV")

    score = commands.add_parser("score", parents=[common], help="compute privacy risk scores")
    score.add_argument("--shadow", type=Path)
    score.add_argument("--model", type=Path, help="saved class-conditional model instead of --shadow")
    score.add_argument("--target", type=Path, required=True)
    score.add_argument("--out", type=Path, required=True, help="risk scores, .json or .csv")
    score.add_argument("--model-out", type=Path, help="save the fitted class-conditional model")

    for name, help_text in (("calibrate", "calibration curve and RMSE"), ("report", "risk-score report")):
        sub = commands.add_parser(name, parents=[common], help=help_text)
        sub.add_argument("--scores", type=Path, help="risk scores written by 'score'")
        sub.add_argument("--shadow", type=Path)
        sub.add_argument("--target", type=Path)
        if name == "calibrate":
            sub.add_argument("--out", type=Path, help="calibration table CSV")
            sub.add_argument("--plot-data", type=Path, help="gnuplot data file")
        else:
            sub.add_argument("--out-dir", type=Path, help="directory for CSV tables and plot data")

    sweep = commands.add_parser("sweep", parents=[common], help="early-stopping sweep over saved epochs")
    sweep.add_argument("--snapshot", type=_epoch_path, action="append", required=True, metavar="EPOCH=PATH")
    sweep.add_argument("--shadow", type=Path, help="shadow set shared by every epoch")
    sweep.add_argument("--shadow-snapshot", type=_epoch_path, action="append", default=[], metavar="EPOCH=PATH")
    sweep.add_argument("--reference-accuracy", type=float, help="test accuracy of the defended model")
    sweep.add_argument("--out", type=Path, help="sweep table CSV")
    sweep.add_argument("--plot-data", type=Path, help="gnuplot data file")

    synth = commands.add_parser("synth", parents=[common], help="generate a synthetic prediction set")
    synth.add_argument("--n-member", type=int, default=1000)
    synth.add_argument("--n-nonmember", type=int, default=1000)
    synth.add_argument("--member-boost", type=float, default=50.0)
    synth.add_argument("--nonmember-boost", type=float, default=1.0)
    synth.add_argument("--base-concentration", type=float, default=1.0)
    synth.add_argument("--heterogeneity", type=_floats, help="comma-separated per-class boost multipliers")
    synth.add_argument("--out", type=Path, required=True)
    return parser


CONFIG_FLAGS = (
    "num_classes",
    "bins",
    "pseudo_count",
    "smoothing",
    "min_class_support",
    "p_train",
    "calibration_bins",
    "risk_thresholds",
    "clamp_quantile",
    "balanced",
    "prob_tolerance",
    "seed",
    "workers",
    "log_level",
)


def config_from_args(args: argparse.Namespace) -> AuditConfig:
    overrides = {name: getattr(args, name, None) for name in CONFIG_FLAGS}
    if args.metric is not None:
        overrides["metric"] = resolve_metric(args.metric)
    overrides["shadow_path"] = getattr(args, "shadow", None)
    overrides["target_path"] = getattr(args, "target", None)
    overrides["out_path"] = getattr(args, "out", None)
    return AuditConfig.from_env(**overrides)


def _unique_epochs(pairs: List[Tuple[int, Path]], flag: str) -> Dict[int, Path]:
    epochs = [epoch for epoch, _ in pairs]
    if len(set(epochs)) != len(epochs):
        raise UsageError(f"{flag} lists the same epoch twice")
    return dict(pairs)


COMMANDS: Dict[str, Callable[[AuditPipeline, argparse.Namespace], str]] = {
    "thresholds": lambda p, a: p.learn_thresholds(a.shadow, a.out),
    "attack": lambda p, a: p.attack(a.shadow, a.target, a.thresholds, a.json, a.csv),
    "score": lambda p, a: p.score(a.shadow, a.target, a.out, model_out=a.model_out, model_path=a.model),
    "calibrate": lambda p, a: p.calibrate(a.scores, a.shadow, a.target, a.out, a.plot_data),
    "report": lambda p, a: p.report(a.scores, a.shadow, a.target, a.out_dir),
    "sweep": lambda p, a: p.sweep(
        _unique_epochs(a.snapshot, "--snapshot"),
        shadow_path=a.shadow,
        shadow_paths=_unique_epochs(a.shadow_snapshot, "--shadow-snapshot"),
        reference_accuracy=a.reference_accuracy,
        out_path=a.out,
        plot_path=a.plot_data,
    ),
    "synth": lambda p, a: p.synth(
        GeneratorSpec(
            num_classes=p.config.num_classes or 10,
            n_member=a.n_member,
            n_nonmember=a.n_nonmember,
            member_boost=a.member_boost,
            nonmember_boost=a.nonmember_boost,
            base_concentration=a.base_concentration,
            heterogeneity=a.heterogeneity,
            seed=p.config.seed,
        ),
        a.out,
    ),
}


def _check_command(argv: List[str]):
    if not argv or argv[0].startswith("-") or argv[0] in COMMANDS:
        return
    hint = suggest(argv[0], COMMANDS)
    raise UsageError(f"unknown command '{argv[0]}'" + (f"; did you mean '{hint}'?" if hint else ""))


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """Run one CLI invocation and return its exit status: 0 ok, 1 usage error, 2 data error."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _check_command(argv)
        args = parser.parse_args(argv)
        config = config_from_args(args)
        logging.basicConfig(
            level=config.log_level,
            stream=sys.stderr,
            format="%(asctime)s %(levelname)s %(message)s",
            force=True,
        )
        pipeline = AuditPipeline(config, fmt=resolve_format(args.fmt))
        output = COMMANDS[args.command](pipeline, args)
    except (UsageError, ValidationError) as error:
        print(f"error: {error}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exit_request:
        # --help
        return int(exit_request.code or 0)

    if output:
        sys.stdout.write(output)
    return EXIT_OK


def main():
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()

"""Command-line entry point for the ARC convolution toolkit.

Machine-readable CSV goes to stdout or `--out`; logs and human summaries go
to stderr. Exit codes: 0 success, 1 check failure or bad input file,
2 usage error, 3 training divergence.
"""

import argparse
import csv
import logging
import math
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, TextIO

import numpy as np
from pydantic import ValidationError

from arcconv.analysis.benchmark import BenchmarkCheck
from arcconv.analysis.cost_estimator import estimate_cost, kernel_scaling_summary
from arcconv.analysis.equivalence_check import EquivalenceCheck
from arcconv.analysis.gradient_check import TARGETS, GradientCheck
from arcconv.config import get_bench_defaults, get_training_defaults, settings
from arcconv.core.descriptors import resnet50_descriptor, smallnet_descriptor
from arcconv.core.errors import ArcError, ConfigurationError, TrainingDivergenceError
from arcconv.core.network import build_smallnet
from arcconv.core.orchestrator import VerificationOrchestrator
from arcconv.core.rotation import rotate_kernel_stack
from arcconv.core.trainer import ablation, prepare_data, train
from arcconv.models.configs import ArcLayerConfig, DType, Stage, TrainConfig, TrainMode
from arcconv.models.reports import (ABLATION_CSV_HEADER, CHECK_CSV_HEADER, KERNEL_SCALING_CSV_HEADER,
                                    METRICS_CSV_HEADER, CheckReport, EpochMetrics)
from arcconv.services.datagen import export_dataset, generate, make_dataset_config
from arcconv.services.persistence import RunConfigFile, WeightArchive, kernel_entry

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_DIVERGED = 3

ESTIMATE_CSV_HEADER = ["kind", "params", "flops"]
BENCH_CSV_HEADER = ["fingerprint", "input_shape", "static_ms", "combined_ms", "naive_ms",
                    "naive_over_combined", "combined_over_static", "status"]

# train flags that map one-to-one onto TrainConfig fields
TRAIN_FIELDS = ("mode", "n", "stages", "epochs", "seed", "coeff_deg", "adaptive_combination",
                "adaptive_rotation", "spatial_encoding", "backbone_lr_scale", "train_count", "test_count",
                "image_size", "dtype", "batch_size", "lr", "momentum")


def configure_logging(level: Optional[str] = None) -> None:
    """Root handler on stderr; a no-op for the handler when one is already installed."""
    resolved = getattr(logging, (level or settings.log_level).upper(), logging.INFO)
    logging.basicConfig(level=resolved, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    logging.getLogger().setLevel(resolved)


@contextmanager
def open_output(path: Optional[str]) -> Iterator[TextIO]:
    """`--out` file, or stdout when absent."""
    if path is None:
        yield sys.stdout
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="") as handle:
        yield handle


def write_check_reports(reports: List[CheckReport], path: Optional[str]) -> int:
    with open_output(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CHECK_CSV_HEADER)
        for report in reports:
            writer.writerow(report.csv_row())
    for report in reports:
        if report.error_message:
            logger.error("%s: %s", report.name, report.error_message)
    return EXIT_OK if all(report.passed for report in reports) else EXIT_FAILURE


def _csv_ints(parser: argparse.ArgumentParser, text: str, flag: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        parser.error(f"{flag} expects a comma-separated list of integers, got '{text}'")


# -- commands --------------------------------------------------------------

def cmd_rotate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if not math.isfinite(args.angle):
        parser.error("--angle must be finite")
    archive = WeightArchive.load(args.input)
    name, kernel = kernel_entry(archive, args.name)
    k = kernel.shape[-1]
    planes = kernel.reshape(1, 1, -1, k, k)
    rotated = rotate_kernel_stack(planes, np.array([math.radians(args.angle)]))
    archive[name] = rotated.reshape(kernel.shape).astype(kernel.dtype, copy=False)
    archive.save(args.out)
    logger.info("rotated '%s' %s by %g degrees -> %s", name, kernel.shape, args.angle, args.out)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    targets = TARGETS if args.target == "all" else (args.target,)
    reports = [GradientCheck(target, seed=args.seed, eps=args.eps, tolerance=args.tol).execute()
               for target in targets]
    for report in reports:
        worst = report.details.get("worst", "")
        print(f"{report.name}: worst rel err {report.metric:.3e} ({worst or 'n/a'})", file=sys.stderr)
    return write_check_reports(reports, args.out)


def cmd_equiv(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    dtypes = [DType.BINARY64, DType.BINARY32] if args.dtype == "all" else [DType(args.dtype)]
    reports = [EquivalenceCheck(dtype=dtype, seed=args.seed).execute() for dtype in dtypes]
    return write_check_reports(reports, args.out)


def cmd_estimate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.n < 1:
        parser.error("--n must be >= 1")
    if args.hw < 1:
        parser.error("--hw must be >= 1")
    try:
        if args.preset == "resnet50":
            stages = _csv_ints(parser, "2,3,4" if args.stages is None else args.stages, "--stages")
            descriptor = resnet50_descriptor(stages, args.n, args.include_strided)
        else:
            stages_text = "A,B,C" if args.stages is None else args.stages
            config = TrainConfig(mode=TrainMode.ARC if stages_text else TrainMode.STATIC, n=args.n,
                                 stages=stages_text)
            descriptor = smallnet_descriptor(config.mode, config.n, config.stages)
    except (ConfigurationError, ValidationError) as exc:
        parser.error(str(exc))

    estimate = estimate_cost(descriptor, args.hw)
    with open_output(args.out) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(ESTIMATE_CSV_HEADER)
        for kind in estimate.kinds():
            item = estimate.by_kind(kind)
            writer.writerow([kind, item.params, item.flops])
        writer.writerow(["total", estimate.params, estimate.flops])
    print(f"{descriptor.name}: {estimate.params / 1e6:.3f} M params, "
          f"{estimate.flops / 1e9:.3f} GFLOPs at {args.hw}x{args.hw}", file=sys.stderr)

    if args.scaling and args.preset == "resnet50":
        summary = kernel_scaling_summary(stages, args.include_strided, input_hw=args.hw)
        writer = csv.writer(sys.stderr, lineterminator="\n")
        writer.writerow(KERNEL_SCALING_CSV_HEADER)
        for row in summary.rows:
            writer.writerow([row.n, row.params, row.flops, row.conv_flops])
        print(f"delta per added kernel: {summary.param_delta_per_kernel / 1e6:.3f} M params; "
              f"FLOP growth n={summary.rows[0].n}->{summary.rows[-1].n}: {summary.flop_growth:.4%}",
              file=sys.stderr)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    defaults = get_bench_defaults()
    trials = defaults["trials"] if args.trials is None else args.trials
    warmup = defaults["warmup"] if args.warmup is None else args.warmup
    if trials < 5 or warmup < 2:
        parser.error("bench needs --trials >= 5 and --warmup >= 2")
    try:
        config = ArcLayerConfig(n=args.n, k=args.k, c_in=args.channels, c_out=args.channels)
    except ValidationError as exc:
        parser.error(str(exc))
    shape = (args.batch, args.channels, args.hw, args.hw)
    check = BenchmarkCheck(config, shape, trials=trials, warmup=warmup, seed=args.seed)
    report = check.execute()
    if check.report is None:
        logger.error("benchmark failed: %s", report.error_message)
        return EXIT_FAILURE
    bench = check.report
    with open_output(args.out) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(BENCH_CSV_HEADER)
        writer.writerow([bench.fingerprint, "x".join(str(d) for d in bench.input_shape),
                         f"{bench.static_ms:.4f}", f"{bench.combined_ms:.4f}", f"{bench.naive_ms:.4f}",
                         f"{bench.naive_over_combined:.4f}", f"{bench.combined_over_static:.4f}",
                         report.status.value])
    return EXIT_OK if report.passed else EXIT_FAILURE


def _train_values(args: argparse.Namespace) -> Dict[str, Any]:
    if args.config:
        values = RunConfigFile.load(args.config).model_dump()
    else:
        values = get_training_defaults()
    for field in TRAIN_FIELDS:
        value = getattr(args, field, None)
        if value is not None:
            values[field] = value
    return values


def _train_config(args: argparse.Namespace, parser: argparse.ArgumentParser, **overrides) -> TrainConfig:
    values = _train_values(args)
    values.update(overrides)
    try:
        return TrainConfig.model_validate(values)
    except ValidationError as exc:
        parser.error(str(exc))


def cmd_train(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    config = _train_config(args, parser)
    if args.save_config:
        RunConfigFile.save(config, args.save_config)
        logger.info("wrote run config to %s", args.save_config)

    model = build_smallnet(config=config)
    train_set, test_set = prepare_data(config)
    weights = args.weights or (str(Path(args.out).with_suffix(".arcw")) if args.out else None)

    with open_output(args.out) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(METRICS_CSV_HEADER)

        def on_epoch(metrics: EpochMetrics) -> None:
            writer.writerows(metrics.csv_rows())
            handle.flush()

        try:
            train(model, train_set, test_set, config, on_epoch=on_epoch)
        except TrainingDivergenceError as exc:
            handle.flush()
            logger.error("training diverged: %s (last finite metrics: %s)", exc, exc.last_metrics)
            return EXIT_DIVERGED

    if weights:
        WeightArchive(model.state_dict()).save(weights)
        logger.info("saved %d tensors to %s", len(model.state_dict()), weights)
    return EXIT_OK


def cmd_datagen(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.count < 1:
        parser.error("--count must be >= 1")
    if args.seed < 0:
        parser.error("--seed must be >= 0")
    try:
        scale = args.image_size / 32.0
        config = make_dataset_config(image_size=args.image_size, bar_length=20.0 * scale,
                                     bar_width=4.0 * scale, jitter=2.0 * scale, bins=args.bins,
                                     seed=args.seed)
    except ConfigurationError as exc:
        parser.error(str(exc))
    manifest = export_dataset(generate(config, args.count), Path(args.out), pgm=args.pgm)
    print(f"wrote {args.count} samples, manifest {manifest}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    result = VerificationOrchestrator(seed=args.seed, include_bench=args.bench).run_suite()
    if result["status"] == "error":
        logger.error("%s: %s", result["error_type"], result["message"])
        return EXIT_FAILURE
    code = write_check_reports(result["reports"], args.out)
    print(f"{len(result['reports']) - len(result['failed'])}/{len(result['reports'])} checks passed "
          f"in {result['execution_time']:.1f}s", file=sys.stderr)
    return code


def cmd_ablation(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    seeds = _csv_ints(parser, args.seeds, "--seeds")
    if not seeds:
        parser.error("--seeds needs at least one seed")
    base = _train_config(args, parser, mode=TrainMode.ARC, stages=[Stage.A, Stage.B, Stage.C])
    rows = ablation(base, seeds=seeds)
    with open_output(args.out) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(ABLATION_CSV_HEADER)
        for row in rows:
            writer.writerow(row.csv_row())

    means = {row.stages: row.mean_accuracy for row in rows}
    ordered = [means[key] for key in ("C", "B,C", "A,B,C")]
    if any(later < earlier for earlier, later in zip(ordered, ordered[1:])):
        logger.warning("replacement-order inversion within the sweep: %s", ordered)
    if means["A,B,C"] < means["static"]:
        logger.error("ARC on all stages (%.3f) fell below the static baseline (%.3f)",
                     means["A,B,C"], means["static"])
        return EXIT_FAILURE
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def _add_train_flags(sub: argparse.ArgumentParser, with_mode: bool = True) -> None:
    if with_mode:
        sub.add_argument("--mode", choices=[m.value for m in TrainMode])
        sub.add_argument("--stages", help="comma-separated subset of A,B,C")
    sub.add_argument("--n", type=int, help="experts per ARC layer")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--coeff", dest="coeff_deg", type=float, help="angle range coefficient in degrees")
    sub.add_argument("--no-adaptive-combination", dest="adaptive_combination", action="store_const",
                     const=False, help="fix lambda to 1/n")
    sub.add_argument("--no-adaptive-rotation", dest="adaptive_rotation", action="store_const", const=False,
                     help="fix theta to 0 (mixture of upright experts)")
    sub.add_argument("--no-spatial-encoding", dest="spatial_encoding", action="store_const", const=False,
                     help="route from the pooled input directly")
    sub.add_argument("--backbone-lr-scale", type=float)
    sub.add_argument("--train-count", type=int)
    sub.add_argument("--test-count", type=int)
    sub.add_argument("--image-size", type=int)
    sub.add_argument("--batch-size", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--momentum", type=float)
    sub.add_argument("--dtype", choices=[d.value for d in DType])
    sub.add_argument("--config", help="RunConfigFile to start from (flags override it)")
    sub.add_argument("--out", help="CSV output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=settings.app_name,
                                     description="Adaptive rotated convolution toolkit")
    parser.add_argument("--log-level", default=None, help=f"default {settings.log_level}")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.app_version}")
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("rotate", help="rotate the kernel entry of a weight archive")
    sub.add_argument("--in", dest="input", required=True)
    sub.add_argument("--angle", type=float, required=True, help="degrees, counter-clockwise")
    sub.add_argument("--out", required=True)
    sub.add_argument("--name", help="entry to rotate (default: the unique kernel-shaped entry)")
    sub.set_defaults(handler=cmd_rotate)

    sub = commands.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    sub.add_argument("--target", choices=TARGETS + ("all",), default="all")
    sub.add_argument("--seed", type=int, default=settings.default_seed)
    sub.add_argument("--eps", type=float, default=1e-5)
    sub.add_argument("--tol", type=float, default=1e-5)
    sub.add_argument("--out")
    sub.set_defaults(handler=cmd_gradcheck)

    sub = commands.add_parser("equiv", help="combine-then-convolve vs convolve-then-sum")
    sub.add_argument("--dtype", choices=[d.value for d in DType] + ["all"], default="all")
    sub.add_argument("--seed", type=int, default=settings.default_seed)
    sub.add_argument("--out")
    sub.set_defaults(handler=cmd_equiv)

    sub = commands.add_parser("estimate", help="parameter and FLOP counts")
    sub.add_argument("--preset", choices=["resnet50", "smallnet"], default="resnet50")
    sub.add_argument("--stages", default=None, help="resnet50: 2,3,4 subset; smallnet: A,B,C subset")
    sub.add_argument("--n", type=int, default=1)
    sub.add_argument("--include-strided", action=argparse.BooleanOptionalAction, default=True)
    sub.add_argument("--hw", type=int, default=1024)
    sub.add_argument("--scaling", action="store_true", help="also print the n=1,2,4,6 table to stderr")
    sub.add_argument("--out")
    sub.set_defaults(handler=cmd_estimate)

    sub = commands.add_parser("bench", help="time static, combined and naive paths")
    sub.add_argument("--n", type=int, required=True)
    sub.add_argument("--k", type=int, default=3)
    sub.add_argument("--channels", type=int, default=64)
    sub.add_argument("--hw", type=int, default=56)
    sub.add_argument("--batch", type=int, default=8)
    sub.add_argument("--trials", type=int)
    sub.add_argument("--warmup", type=int)
    sub.add_argument("--seed", type=int, default=settings.default_seed)
    sub.add_argument("--out")
    sub.set_defaults(handler=cmd_bench)

    sub = commands.add_parser("train", help="train the toy network on oriented bars")
    _add_train_flags(sub)
    sub.add_argument("--weights", help="weight archive path (default: --out with .arcw suffix)")
    sub.add_argument("--save-config", help="write the effective RunConfigFile here")
    sub.set_defaults(handler=cmd_train)

    sub = commands.add_parser("datagen", help="generate the oriented-bar dataset")
    sub.add_argument("--count", type=int, required=True)
    sub.add_argument("--seed", type=int, default=settings.default_seed)
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--pgm", action="store_true", help="also write P5 images")
    sub.add_argument("--image-size", type=int, default=32)
    sub.add_argument("--bins", type=int, default=8)
    sub.set_defaults(handler=cmd_datagen)

    sub = commands.add_parser("verify", help="run the whole check suite")
    sub.add_argument("--seed", type=int, default=settings.default_seed)
    sub.add_argument("--bench", action="store_true", help="include the timing checks")
    sub.add_argument("--out")
    sub.set_defaults(handler=cmd_verify)

    sub = commands.add_parser("ablation", help="replaced-stage sweep over seeds")
    _add_train_flags(sub, with_mode=False)
    sub.add_argument("--seeds", default="0,1,2")
    sub.set_defaults(handler=cmd_ablation)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args, parser)
    except TrainingDivergenceError as exc:
        logger.error("%s", exc)
        return EXIT_DIVERGED
    except (ArcError, OSError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

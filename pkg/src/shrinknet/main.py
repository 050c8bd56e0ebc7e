"""Entry point for the shrinknet command-line harness.

Subcommands:
    train      train one network, write per-epoch metrics CSV
    compare    full-data baseline vs shrinking variant, same seed, sequential
    gradcheck  backprop vs central finite differences
    lemma1     correlation of per-sample loss with per-sample gradient norm
    synth      write a synthetic blob dataset as CSV or IDX

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import statistics
import sys
from dataclasses import replace
from pathlib import Path

from shrinknet import data, report
from shrinknet.data import Dataset, DatasetError
from shrinknet.model import (
    Activation,
    Loss,
    ModelError,
    OutputUnit,
    init_params,
    parse_arch,
)
from shrinknet.shrinkage import Mode, RecallPolicy, Selection, ShrinkConfig
from shrinknet.trainer import (
    TrainConfig,
    baseline_config,
    improvement,
    median_speedup,
    speedup,
    train,
)
from shrinknet.verify import (
    MIN_LEMMA_SAMPLES,
    grad_check,
    gradcheck_fixture,
    lemma1_correlation,
)

logger = logging.getLogger(__name__)

MODES = {"full": Mode.FULL, "sdl": Mode.SHRINK, "sdlr": Mode.SHRINK_RECALL}

COMPARE_EPILOG = (
    "Reference values at full MNIST scale (784-1000-10, 60K training samples, "
    "s=0.2, t=0.2): speedup=2.05, imp=+0.163. These are not reproducible at "
    "desk scale; expect a smaller speedup on subsets."
)


def _configure_logging() -> None:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("LOG_LEVEL", "INFO").upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        datefmt="%H:%M:%S",
    )


# ---------------------------------------------------------------------------
# Argument types
# ---------------------------------------------------------------------------


def _arch_arg(text: str) -> tuple[int, ...]:
    try:
        return tuple(parse_arch(text))
    except ModelError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _synth_arg(text: str) -> tuple[int, int, int, float]:
    try:
        return data.parse_synth_spec(text)
    except DatasetError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _fraction_arg(low_open: bool, high_open: bool):
    def parse(text: str) -> float:
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
        low_ok = value > 0.0 if low_open else value >= 0.0
        high_ok = value < 1.0 if high_open else value <= 1.0
        if not (low_ok and high_ok):
            lo = "(0" if low_open else "[0"
            hi = "1)" if high_open else "1]"
            raise argparse.ArgumentTypeError(f"{value} is outside {lo}, {hi}")
        return value

    return parse


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} must be >= 1")
    return value


def _sample_cap(text: str) -> int:
    value = _positive_int(text)
    if value < MIN_LEMMA_SAMPLES:
        raise argparse.ArgumentTypeError(f"{value} must be >= {MIN_LEMMA_SAMPLES}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"{value} must be > 0")
    return value


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_data_args(p: argparse.ArgumentParser, with_test: bool = True) -> None:
    g = p.add_argument_group("training data (exactly one source)")
    g.add_argument("--mnist-images", help="IDX images file")
    g.add_argument("--mnist-labels", help="IDX labels file")
    g.add_argument("--csv", help="numeric CSV, targets in the last columns")
    g.add_argument("--target-cols", type=_positive_int, default=1, help="CSV target columns")
    g.add_argument("--header", action="store_true", help="CSV files have a header line")
    g.add_argument("--synth", type=_synth_arg, metavar="N,P,C,SPREAD", help="synthetic blobs")
    g.add_argument(
        "--train-limit", type=_positive_int, default=None, help="use the first N samples"
    )
    if not with_test:
        return
    g = p.add_argument_group("test data (optional; defaults to the training data)")
    g.add_argument("--test-mnist-images", help="IDX images file")
    g.add_argument("--test-mnist-labels", help="IDX labels file")
    g.add_argument("--test-csv", help="numeric CSV, same layout as --csv")
    g.add_argument(
        "--test-synth", type=_synth_arg, metavar="N,P,C,SPREAD", help="synthetic blobs (seed+1)"
    )
    g.add_argument("--test-limit", type=_positive_int, default=None, help="use the first N samples")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--net", type=_arch_arg, required=True, help="architecture, e.g. 784-1000-10")
    p.add_argument("--activation", choices=["tanh", "sigmoid"], default="tanh")
    p.add_argument(
        "--output",
        choices=["sigmoid", "softmax"],
        default=None,
        help="output unit (default: sigmoid for --loss sse, softmax for --loss softmax)",
    )
    p.add_argument("--loss", choices=["sse", "softmax"], default="sse")
    p.add_argument("--seed", type=int, default=0)


def _add_train_args(p: argparse.ArgumentParser, default_mode: str) -> None:
    _add_model_args(p)
    p.add_argument("--mode", choices=list(MODES), default=default_mode)
    p.add_argument("--selection", choices=["global", "batchwise"], default="global")
    p.add_argument("--recall", choices=["repeating", "sticky"], default="repeating")
    p.add_argument("--s", type=_fraction_arg(False, True), default=0.2, help="elimination rate")
    p.add_argument(
        "--t", type=_fraction_arg(True, False), default=0.2, help="stop threshold, fraction of n"
    )
    p.add_argument(
        "--alpha", type=_fraction_arg(False, True), default=0.5, help="threshold smoothing"
    )
    p.add_argument("--lr", type=_positive_float, default=1.0)
    p.add_argument("--batch", type=_positive_int, default=100)
    p.add_argument("--epochs", type=_positive_int, default=30)
    p.add_argument("--shuffle", choices=["on", "off"], default="on")
    p.add_argument("--summary", default=None, help="also write a YAML run summary here")
    _add_data_args(p)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="shrinknet",
        description="MLP training with shrinking active sets and recall.",
        formatter_class=fmt,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train one network", formatter_class=fmt)
    _add_train_args(p, default_mode="full")
    p.add_argument("--out", default="metrics.csv", help="metrics CSV path")
    p.add_argument("--thresholds-out", default=None, help="batchwise threshold trace CSV")
    p.add_argument("--save-params", default=None, help="write trained parameters (.npz)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser(
        "compare",
        help="baseline (full) vs variant, same seed",
        formatter_class=fmt,
        epilog=COMPARE_EPILOG,
    )
    _add_train_args(p, default_mode="sdlr")
    p.add_argument(
        "--out",
        default="compare.csv",
        help="metrics path stem; writes <stem>.baseline.csv and <stem>.variant.csv",
    )
    p.add_argument("--repeat", type=_positive_int, default=1, help="seeds seed..seed+N-1")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("gradcheck", help="backprop vs finite differences", formatter_class=fmt)
    _add_model_args(p)
    p.set_defaults(seed=1)
    p.add_argument("--batch", type=_positive_int, default=1, help="random samples in the batch")
    p.add_argument("--h", type=_positive_float, default=1e-5, help="finite-difference step")
    p.add_argument("--tol", type=_positive_float, default=1e-6, help="max relative error")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser(
        "lemma1", help="loss vs gradient-norm correlation", formatter_class=fmt
    )
    _add_model_args(p)
    p.add_argument(
        "--samples",
        type=_sample_cap,
        default=200,
        help=f"samples to evaluate (>= {MIN_LEMMA_SAMPLES})",
    )
    _add_data_args(p, with_test=False)
    p.set_defaults(handler=cmd_lemma1)

    p = sub.add_parser("synth", help="write a synthetic dataset", formatter_class=fmt)
    p.add_argument("--spec", type=_synth_arg, required=True, metavar="N,P,C,SPREAD")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--format",
        choices=["csv", "idx"],
        default="csv",
        help="idx min-max rescales features into [0, 1] before quantising",
    )
    p.add_argument("--header", action="store_true", help="CSV header line")
    p.add_argument(
        "--out",
        default="synth.csv",
        help="CSV path, or IDX stem (<stem>-images-idx3-ubyte, <stem>-labels-idx1-ubyte)",
    )
    p.set_defaults(handler=cmd_synth)
    return parser


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _model_kinds(
    args: argparse.Namespace, parser: argparse.ArgumentParser
) -> tuple[Activation, OutputUnit, Loss]:
    loss = Loss(args.loss)
    output = args.output or ("softmax" if loss is Loss.SOFTMAX_CROSS_ENTROPY else "sigmoid")
    unit = OutputUnit(output)
    if (loss is Loss.SOFTMAX_CROSS_ENTROPY) != (unit is OutputUnit.SOFTMAX):
        parser.error(f"--loss {args.loss} cannot be combined with --output {output}")
    return Activation(args.activation), unit, loss


def _load_train(args: argparse.Namespace, parser: argparse.ArgumentParser) -> Dataset:
    sources = [
        args.mnist_images is not None or args.mnist_labels is not None,
        args.csv is not None,
        args.synth is not None,
    ]
    if sum(sources) != 1:
        parser.error("give exactly one of --mnist-images/--mnist-labels, --csv, --synth")
    if args.synth is not None:
        n, p, c, spread = args.synth
        ds = data.synth_blobs(n, p, c, spread, args.seed)
    elif args.csv is not None:
        ds = data.load_csv(args.csv, args.target_cols, header=args.header)
    else:
        if args.mnist_images is None or args.mnist_labels is None:
            parser.error("--mnist-images and --mnist-labels go together")
        ds = data.load_idx(args.mnist_images, args.mnist_labels)
    return data.take(ds, args.train_limit)


def _load_test(
    args: argparse.Namespace, parser: argparse.ArgumentParser, ds_train: Dataset
) -> Dataset:
    sources = [
        args.test_mnist_images is not None or args.test_mnist_labels is not None,
        args.test_csv is not None,
        args.test_synth is not None,
    ]
    if sum(sources) > 1:
        parser.error("give at most one test source")
    if args.test_synth is not None:
        n, p, c, spread = args.test_synth
        ds = data.synth_blobs(n, p, c, spread, args.seed + 1)
    elif args.test_csv is not None:
        ds = data.load_csv(args.test_csv, args.target_cols, header=args.header)
    elif sources[0]:
        if args.test_mnist_images is None or args.test_mnist_labels is None:
            parser.error("--test-mnist-images and --test-mnist-labels go together")
        # encode over the training alphabet so both sets share output columns
        if args.mnist_labels is not None:
            classes = data.idx_label_values(args.mnist_labels)
        else:
            classes = range(ds_train.c)
        ds = data.load_idx(args.test_mnist_images, args.test_mnist_labels, classes=classes)
    else:
        logger.warning("No test set given; test_err is measured on the training data")
        return ds_train
    return data.take(ds, args.test_limit)


def _train_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> TrainConfig:
    activation, unit, loss = _model_kinds(args, parser)
    shrink = ShrinkConfig(
        s=args.s,
        t_frac=args.t,
        alpha=args.alpha,
        mode=MODES[args.mode],
        selection=Selection(args.selection),
        recall_policy=RecallPolicy(args.recall),
    )
    return TrainConfig(
        arch=args.net,
        activation=activation,
        output_unit=unit,
        loss=loss,
        eta=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        shrink=shrink,
        shuffle=args.shuffle == "on",
    )


def _sibling(path: str, tag: str) -> Path:
    """compare.csv + 'baseline' -> compare.baseline.csv"""
    p = Path(path)
    suffix = p.suffix or ".csv"
    return p.with_name(f"{p.stem}.{tag}{suffix}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    cfg = _train_config(args, parser)
    ds_train = _load_train(args, parser)
    ds_test = _load_test(args, parser, ds_train)

    params, summary = train(ds_train, ds_test, cfg)
    report.write_metrics_csv(summary.records, args.out)
    if args.thresholds_out:
        report.write_thresholds_csv(summary.records, args.thresholds_out)
    if args.save_params:
        report.save_params(params, args.save_params)
    if args.summary:
        report.write_summary(
            {"config": report.config_dict(cfg), "run": report.summary_dict(summary)},
            args.summary,
        )

    print(f"final_train_err={summary.final_train_error:.4f}")
    print(f"final_test_err={summary.final_test_error:.4f}")
    print(f"total_train_ms={summary.total_train_ms:.1f}")
    return 0


def _format_imp(base_err: float, variant_err: float) -> str:
    if base_err <= 0:
        return "n/a"
    return f"{improvement(base_err, variant_err):+.3f}"


def cmd_compare(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    variant_cfg = _train_config(args, parser)
    ds_train = _load_train(args, parser)
    ds_test = _load_test(args, parser, ds_train)

    pairs = []
    base_errs: list[float] = []
    variant_errs: list[float] = []
    runs = []
    for r in range(args.repeat):
        seed = args.seed + r
        cfg = replace(variant_cfg, seed=seed)
        # sequential by contract: timings must not overlap
        _, base = train(ds_train, ds_test, baseline_config(cfg))
        _, variant = train(ds_train, ds_test, cfg)

        stem = args.out if args.repeat == 1 else str(_sibling(args.out, f"seed{seed}"))
        report.write_metrics_csv(base.records, _sibling(stem, "baseline"))
        report.write_metrics_csv(variant.records, _sibling(stem, "variant"))

        pairs.append((base, variant))
        ratio = speedup(base, variant)
        base_errs.append(base.final_test_error)
        variant_errs.append(variant.final_test_error)
        runs.append(
            {
                "seed": seed,
                "speedup": round(ratio, 4),
                "baseline": report.summary_dict(base),
                "variant": report.summary_dict(variant),
            }
        )
        if args.repeat > 1:
            imp = _format_imp(base.final_test_error, variant.final_test_error)
            print(f"seed={seed} speedup={ratio:.2f} imp={imp}")

    median = median_speedup(pairs)
    base_mean = statistics.fmean(base_errs)
    variant_mean = statistics.fmean(variant_errs)
    print(f"speedup={median:.2f}")
    print(f"imp={_format_imp(base_mean, variant_mean)}")
    print(f"baseline_test_err={base_mean:.4f} variant_test_err={variant_mean:.4f}")

    if args.summary:
        report.write_summary(
            {
                "config": report.config_dict(variant_cfg),
                "speedup": round(median, 4),
                "imp": None if base_mean <= 0 else round(improvement(base_mean, variant_mean), 4),
                "runs": runs,
            },
            args.summary,
        )
    return 0


def cmd_gradcheck(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    activation, unit, loss = _model_kinds(args, parser)
    params, batch = gradcheck_fixture(args.net, activation, unit, loss, args.seed, args.batch)
    result = grad_check(params, batch, h=args.h, tolerance=args.tol)
    layer, row, col = result.worst_param
    where = f"layer {layer} bias[{row}]" if col is None else f"layer {layer} w[{row},{col}]"
    print(f"max_rel_error={result.max_rel_error:.3e}")
    print(f"worst_param={where}")
    print(f"passed={'yes' if result.passed else 'no'} (tolerance {result.tolerance:g})")
    return 0 if result.passed else 1


def cmd_lemma1(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    activation, unit, loss = _model_kinds(args, parser)
    ds = _load_train(args, parser)
    params = init_params(args.net, activation, unit, loss, args.seed)
    result = lemma1_correlation(params, ds, args.samples)
    if result.degenerate:
        print(f"degenerate=yes n_samples={result.n_samples}")
        return 1
    print(f"pearson={result.pearson:.4f}")
    print(f"spearman={result.spearman:.4f}")
    print(f"n_samples={result.n_samples}")
    return 0 if result.spearman > 0 else 1


def cmd_synth(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    n, p, c, spread = args.spec
    ds = data.synth_blobs(n, p, c, spread, args.seed)
    if args.format == "csv":
        data.write_csv(ds, args.out, header=args.header)
        print(f"wrote {ds.n} rows to {args.out}")
    else:
        images = f"{args.out}-images-idx3-ubyte"
        labels = f"{args.out}-labels-idx1-ubyte"
        data.write_idx(data.rescale_unit(ds), images, labels)
        print(f"wrote {ds.n} samples to {images} and {labels}")
    return 0


# ---------------------------------------------------------------------------
# Entry
# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging()
    try:
        return args.handler(args, parser)
    except (ValueError, OSError) as e:
        logger.debug("Command failed", exc_info=True)
        logger.error("%s: %s", type(e).__name__, e)
        return 1


def cli() -> None:
    """Console-script entry point."""
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    cli()

"""Command-line entry point.

Subcommands: ``generate``, ``train``, ``eval``, ``gradcheck``.

Exit codes: 0 success, 1 check failure, 2 usage, 3 configuration/shape,
4 I/O or file format.

Any subcommand accepts ``--config FILE`` with flat ``key=value`` lines
(keys are flag names without the leading dashes). Flags given on the
command line win over the file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import gradcheck, parallel
from .baseline import build_cnn
from .data import CLASS_NAMES, GeneratorConfig, generate, load_dataset, save_dataset, split
from .errors import ConfigurationError, FormatError
from .network import QuantumConvLayer, build_qcnn
from .training import TrainConfig, evaluate, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4

METRICS_HEADER = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]

log = logging.getLogger("qcnn")


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file supplying default flag values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive, default=1, help="worker threads for circuit evaluation")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=["qcnn", "cnn"], default="qcnn")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--filter1", type=_positive, default=3)
    p.add_argument("--filter2", type=_positive, default=2)
    p.add_argument("--stride1", type=_positive, default=1)
    p.add_argument("--stride2", type=_positive, default=2)
    p.add_argument("--pad1", type=int, default=0)
    p.add_argument("--pad2", type=int, default=0)
    p.add_argument("--depth", type=_positive, default=2, help="variational blocks per quantum filter")
    p.add_argument("--cnn-channels", type=_int_list, default=[4, 2])
    p.add_argument("--cnn-filter", type=_positive, default=5)
    p.add_argument("--cnn-padding", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcnn", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic particle-image dataset")
    _add_common(g)
    g.add_argument("--classes", default="track_mip,shower", help=f"comma-separated subset of {','.join(CLASS_NAMES)}")
    g.add_argument("--size", type=_positive, default=30)
    g.add_argument("--per-class", type=_positive, default=100)
    g.add_argument("--noise", type=float, default=0.02)
    g.add_argument("--wiggle", type=float, default=0.12)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a QCNN or the classical baseline")
    _add_common(t)
    _add_model_flags(t)
    t.add_argument("--data")
    t.add_argument("--out", default="run")
    t.add_argument("--epochs", type=_positive, default=30)
    t.add_argument("--train-frac", type=float, default=0.8)
    t.add_argument("--size", type=_positive, default=30, help="image size for --inspect-only without --data")
    t.add_argument("--inspect-only", action="store_true", help="print the parameter layout and exit")

    e = sub.add_parser("eval", help="evaluate a checkpoint on both splits")
    _add_common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--train-frac", type=float, default=0.8)

    c = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    _add_common(c)
    c.add_argument("--tolerance", type=float, help="override both kernel (1e-6) and end-to-end (1e-4) tolerances")
    c.add_argument("--filter-sizes", type=_int_list, default=[1, 2, 3])
    c.add_argument("--depths", type=_int_list, default=[1, 2])
    c.add_argument("--instances", type=_positive, default=20)
    c.add_argument("--qcnn-size", type=_positive, default=6)
    c.add_argument("--cnn-size", type=_positive, default=10)
    return parser


def _read_config_file(path: str) -> list[str]:
    args = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            args.append(flag)
        elif value.lower() not in ("false", "no", "off"):
            args += [flag, value]
    return args


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        extra = _read_config_file(args.config)
        # File values go first so explicit flags, parsed later, take precedence.
        args = parser.parse_args([argv[0], *extra, *argv[1:]])
    return args


# --- model construction ----------------------------------------------------


def build_model(args, image_shape, num_classes: int):
    if args.model == "qcnn":
        return build_qcnn(
            image_shape,
            filters=(args.filter1, args.filter2),
            strides=(args.stride1, args.stride2),
            depths=(args.depth, args.depth),
            paddings=(args.pad1, args.pad2),
            num_classes=num_classes,
            dropout=args.dropout,
        )
    return build_cnn(
        image_shape,
        channels=args.cnn_channels,
        filter_size=args.cnn_filter,
        padding=args.cnn_padding,
        num_classes=num_classes,
        dropout=args.dropout,
    )


def describe_layers(network) -> list[str]:
    lines = []
    for layer, shape in zip(network.layers, network.shapes[1:]):
        name = type(layer).__name__
        extra = ""
        if isinstance(layer, QuantumConvLayer):
            extra = f" filter={layer.filter_size} stride={layer.stride} padding={layer.padding} depth={layer.config.depth}"
        lines.append(f"layer={name}{extra} output={'x'.join(map(str, shape))} params={layer.params.size}")
    return lines


# --- subcommands -----------------------------------------------------------


def cmd_generate(args) -> int:
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    try:
        config = GeneratorConfig(
            height=args.size,
            width=args.size,
            classes=classes,
            samples_per_class=args.per_class,
            noise_level=args.noise,
            wiggle=args.wiggle,
            seed=args.seed,
        )
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    dataset = generate(config)
    try:
        save_dataset(dataset, args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    for name, count in dataset.class_counts().items():
        print(f"class={name} count={count}")
    return EXIT_OK


def _fmt(value: float) -> str:
    return repr(float(value))


def cmd_train(args) -> int:
    dataset = None
    if args.data:
        try:
            dataset = load_dataset(args.data)
        except (OSError, FormatError) as exc:
            print(f"error: cannot load dataset {args.data}: {exc}", file=sys.stderr)
            return EXIT_IO
    image_shape = tuple(dataset.image_shape) if dataset is not None else (args.size, args.size)
    num_classes = len(dataset.class_names) if dataset is not None else 2
    try:
        network = build_model(args, image_shape, num_classes)
    except ConfigurationError as exc:
        print(f"error: invalid architecture: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.inspect_only:
        print(f"model={args.model} input={image_shape[0]}x{image_shape[1]}")
        for line in describe_layers(network):
            print(line)
        print(f"param_count={network.param_count()}")
        return EXIT_OK

    if dataset is None:
        print("error: --data is required unless --inspect-only is given", file=sys.stderr)
        return EXIT_USAGE
    if not 0.0 < args.train_frac < 1.0:
        print("error: --train-frac must be in (0, 1)", file=sys.stderr)
        return EXIT_USAGE
    try:
        train_set, test_set = split(dataset, args.train_frac, args.seed)
        config = TrainConfig(epochs=args.epochs, seed=args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        metrics_file = (out / "metrics.csv").open("w", newline="")
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc}", file=sys.stderr)
        return EXIT_IO

    network.init_params(np.random.default_rng([args.seed, 1]))
    best = {"acc": -1.0}
    with metrics_file:
        writer = csv.writer(metrics_file, lineterminator="\n")
        writer.writerow(METRICS_HEADER)

        def on_epoch(m, net, optimizer):
            writer.writerow([m.epoch, _fmt(m.train_loss), _fmt(m.train_accuracy), _fmt(m.test_loss), _fmt(m.test_accuracy)])
            metrics_file.flush()
            if m.test_accuracy > best["acc"]:
                best["acc"] = m.test_accuracy
                ckpt_io.save_checkpoint(ckpt_io.from_network(net, optimizer, m.epoch), out / "best.ckpt")
            state["optimizer"] = optimizer
            state["epoch"] = m.epoch

        state = {}
        train(network, train_set, test_set, config, on_epoch=on_epoch)
    ckpt_io.save_checkpoint(ckpt_io.from_network(network, state["optimizer"], state["epoch"]), out / "final.ckpt")
    print(f"best_test_acc={_fmt(best['acc'])} epochs={args.epochs} out={out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        ckpt = ckpt_io.load_checkpoint(args.checkpoint)
        dataset = load_dataset(args.data)
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        network = ckpt_io.to_network(ckpt)
    except ConfigurationError as exc:
        print(f"error: checkpoint architecture is invalid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if tuple(network.input_shape) != tuple(dataset.image_shape):
        print(
            f"error: checkpoint expects {network.input_shape} images, dataset has {dataset.image_shape}",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    if network.num_classes != len(dataset.class_names):
        print("error: checkpoint class count does not match the dataset", file=sys.stderr)
        return EXIT_CONFIG
    try:
        train_set, test_set = split(dataset, args.train_frac, args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for name, part in (("train", train_set), ("test", test_set)):
        loss, acc = evaluate(network, part)
        print(f"split={name} loss={_fmt(loss)} accuracy={_fmt(acc)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    tol_kernel = gradcheck.KERNEL_TOLERANCE if args.tolerance is None else args.tolerance
    tol_net = gradcheck.NETWORK_TOLERANCE if args.tolerance is None else args.tolerance
    try:
        results = gradcheck.run_all(
            seed=args.seed,
            filter_sizes=args.filter_sizes,
            depths=args.depths,
            instances=args.instances,
            qcnn_size=args.qcnn_size,
            cnn_size=args.cnn_size,
            kernel_tolerance=tol_kernel,
            network_tolerance=tol_net,
        )
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    failed = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"check={r.name.replace(' ', ',')} max_dev={r.error:.3e} tolerance={r.tolerance:.1e} status={status}")
        if not r.passed:
            failed.append(r)
    if failed:
        worst = max(failed, key=lambda r: r.error / r.tolerance)
        print(f"worst: {worst.name} parameter index {worst.worst_index} deviation {worst.error:.3e}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    parallel.set_threads(args.threads)
    try:
        return COMMANDS[args.command](args)
    finally:
        parallel.set_threads(1)


if __name__ == "__main__":
    sys.exit(main())

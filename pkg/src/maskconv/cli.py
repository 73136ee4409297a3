"""Command line front end.

Subcommands: ``train``, ``eval``, ``bench``, ``count-ops``,
``export-masks``.  Exit codes: 0 success, 1 runtime failure (unreadable
data, malformed files), 2 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from maskconv.accounting import (
    NetSpecError,
    compare_table,
    load_netspec,
    network_records,
    network_table,
)
from maskconv.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from maskconv.config import ConfigError, RunConfig, load_config
from maskconv.convref import ShapeError
from maskconv.fastinfer import CountMismatchError, LayerSpec, measure_vs_predict
from maskconv.idx import IdxFormatError, load_dataset_dir
from maskconv.masks import write_mask_records
from maskconv.network import MaskedConv, build_small_cnn
from maskconv.training import TrainConfig, TrainingDiverged, evaluate, fit

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _build_model(config: RunConfig, seed: int):
    variant = config.get("model.variant")
    kwargs = {}
    if variant == "channel":
        kwargs = dict(c_hat=config.get("model.chat"), g=config.get("model.g"))
    return build_small_cnn(
        variant=variant,
        strategy=config.get("model.strategy") if variant == "learnable" else None,
        s=config.get("model.s"),
        conv1_maps=config.get("model.conv1_maps"),
        conv2_maps=config.get("model.conv2_maps"),
        hidden=config.get("model.hidden"),
        lam=config.get("train.lambda"),
        seed=seed,
        **kwargs,
    )


def _train_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=config.get("train.lr"),
        lam=config.get("train.lambda"),
        epochs=config.get("train.epochs"),
        batch=config.get("train.batch"),
        seed=config.get("train.seed"),
        loss=config.get("train.loss"),
        determinism=config.get("determinism"),
    )


def _run_one_training(config: RunConfig, out):
    data_root = Path(config.require("data.path"))
    images, labels = load_dataset_dir(data_root, "train")
    model = _build_model(config, seed=config.get("train.seed"))
    tc = _train_config(config)

    log_path = config.get("out.log")
    log_lines: list[str] = []
    fit(model, images, labels, tc, log=log_lines.append)
    if log_path:
        Path(log_path).write_text("\n".join(log_lines) + "\n")
    else:
        for line in log_lines:
            out(line)

    accuracy = None
    if (data_root / "test-images.idx").exists():
        test_images, test_labels = load_dataset_dir(data_root, "test")
        accuracy = evaluate(model, test_images, test_labels)
        out(f"test accuracy={accuracy:.4f}")
    save_checkpoint(model, config.get("out.checkpoint"))
    out(f"checkpoint written to {config.get('out.checkpoint')}")
    return accuracy


def cmd_train(args, out) -> int:
    config = load_config(args.config, args.set)
    for line in config.resolved_lines():
        out(f"config {line}")
    if args.sweep:
        if "=" not in args.sweep:
            raise ConfigError(f"--sweep needs key=v1,v2,... got {args.sweep!r}")
        key, values = args.sweep.split("=", 1)
        base_ckpt = config.get("out.checkpoint")
        for value in values.split(","):
            config.set(key.strip(), value.strip())
            config.set("out.checkpoint", f"{base_ckpt}.{key.strip()}_{value.strip()}")
            accuracy = _run_one_training(config, out)
            out(f"sweep {key.strip()}={value.strip()} accuracy={accuracy if accuracy is not None else float('nan'):.4f}")
        return 0
    _run_one_training(config, out)
    return 0


def cmd_eval(args, out) -> int:
    model = load_checkpoint(args.checkpoint)
    images, labels = load_dataset_dir(args.data, args.split)
    accuracy = evaluate(model, images, labels)
    out(f"eval split={args.split} examples={len(labels)} accuracy={accuracy:.4f}")
    return 0


_BENCH_SPECS = [
    LayerSpec("standard", d=3, c=8, k=8),
    LayerSpec("spatial", d=5, c=4, k=2),
    LayerSpec("channel", d=3, c=16, k=2, c_hat=8, g=8),
    LayerSpec("learnable", d=3, c=16, k=2, s=4, strategy="shared"),
    LayerSpec("learnable", d=3, c=16, k=2, s=4, strategy="separate"),
    LayerSpec("learnable", d=3, c=16, k=4, s=2, strategy="random-fixed"),
]


def cmd_bench(args, out) -> int:
    out(f"bench trials={args.trials} seed={args.seed} hw={args.hw}")
    for spec in _BENCH_SPECS:
        report = measure_vs_predict(spec, trials=args.trials, seed=args.seed, hw=args.hw)
        predicted = report["predicted"]
        measured = report["measured"][0]
        tag = spec.variant if spec.strategy is None else f"{spec.variant}/{spec.strategy}"
        out(
            f"spec variant={tag} d={spec.d} c={spec.c} n={spec.n_secondary}"
            f" mul_fp32={measured.mul_fp32} mask_ops={measured.mask_ops}"
            f" combined_mul={measured.combined_mul:.2f}"
            f" add_fp32={measured.add_fp32} add_expected={predicted.add_fp32} ok=1"
        )
    return 0


def cmd_count_ops(args, out) -> int:
    net = load_netspec(args.netspec)
    if args.compare:
        other = load_netspec(args.compare)
        out(compare_table(net, other))
        return 0
    out(network_table(net))
    for record in network_records(net):
        out(record)
    return 0


def cmd_export_masks(args, out) -> int:
    model = load_checkpoint(args.checkpoint)
    convs = [l for l in model.layers if isinstance(l, MaskedConv) and l.masks is not None]
    if args.layer is not None:
        if not 0 <= args.layer < len(convs):
            raise ConfigError(f"--layer {args.layer} out of range (0..{len(convs) - 1})")
        convs = [convs[args.layer]]
    with open(args.out, "wb") as f:
        for conv in convs:
            write_mask_records(conv.masks, f)
    total = sum(c.masks.n_masks for c in convs)
    out(f"wrote {total} mask records from {len(convs)} layers to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskconv", description="masked convolution filter banks"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train the small CNN on an IDX dataset")
    p_train.add_argument("--config", type=Path, default=None, help="key=value config file")
    p_train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p_train.add_argument("--sweep", default=None, metavar="KEY=V1,V2,...")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on an IDX dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--split", default="test")
    p_eval.set_defaults(fn=cmd_eval)

    p_bench = sub.add_parser("bench", help="verify cached-kernel op counts")
    p_bench.add_argument("--trials", type=int, default=3)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--hw", type=int, default=10)
    p_bench.set_defaults(fn=cmd_bench)

    p_count = sub.add_parser("count-ops", help="closed-form network accounting")
    p_count.add_argument("netspec")
    p_count.add_argument("--compare", default=None)
    p_count.set_defaults(fn=cmd_count_ops)

    p_export = sub.add_parser("export-masks", help="dump bit-packed mask records")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--out", required=True)
    p_export.add_argument("--layer", type=int, default=None)
    p_export.set_defaults(fn=cmd_export_masks)
    return parser


def main(argv: list[str] | None = None, out=print) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses exit code 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.fn(args, out)
    except ConfigError as exc:
        out(f"config error: {exc}")
        return USAGE_ERROR
    except (
        IdxFormatError,
        CheckpointError,
        NetSpecError,
        CountMismatchError,
        TrainingDiverged,
        ShapeError,
        OSError,
    ) as exc:
        out(f"error: {exc}")
        return RUNTIME_ERROR


def entry() -> None:
    sys.exit(main())

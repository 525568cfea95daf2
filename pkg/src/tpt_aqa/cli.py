"""Command-line entry point: ``tpt-aqa <subcommand> [options]``."""

import argparse
import logging
import os
import sys

from .data import SPLITS, generate_dataset, load_split, save_split, write_manifest
from .errors import ConfigError
from .harness import (
    VARIANTS,
    RunConfig,
    ablate,
    evaluate,
    evaluate_checkpoint,
    export_attention,
    gradcheck,
    load_model,
    tiny_config,
    train,
)

log = logging.getLogger("tpt_aqa")


def load_config(args):
    text = ""
    if getattr(args, "config", None):
        with open(args.config) as fh:
            text = fh.read()
    return RunConfig.from_text(text, args.set or []).validate()


def load_data(directory):
    data = {}
    for split in SPLITS:
        path = os.path.join(directory, f"{split}.npz")
        if os.path.exists(path):
            data[split], _ = load_split(path)
    if "train" not in data:
        raise ConfigError(f"no train.npz under {directory}")
    return data


def cmd_gen_data(args):
    config = load_config(args)
    data = generate_dataset(config.generator)
    os.makedirs(args.out, exist_ok=True)
    for split, videos in data.items():
        save_split(os.path.join(args.out, f"{split}.npz"), videos, config.generator, split)
    write_manifest(os.path.join(args.out, "manifest.csv"), data)
    print(f"wrote {sum(len(v) for v in data.values())} videos to {args.out}")


def cmd_train(args):
    config = load_config(args)
    if config.output_dir is None:
        config.output_dir = args.out
    data = load_data(args.data) if args.data else generate_dataset(config.generator)
    run = train(config, data, log_every=args.log_every)
    print(f"run directory: {run.run_dir}")
    print(f"best epoch {run.best_epoch}, val spearman {run.reports[run.best_epoch].spearman:.4f}")
    if data.get("test"):
        report = evaluate(run.model, data["test"], data["train"], config)
        print(report.to_json())


def cmd_eval(args):
    data = load_data(args.data) if args.data else None
    report = evaluate_checkpoint(args.checkpoint, args.split, data=data, seed=args.seed)
    print(report.to_json())


def cmd_ablate(args):
    config = load_config(args)
    variants = [v for v in args.variants.split(",") if v] if args.variants is not None else list(VARIANTS)
    rows = ablate(config, variants, path=args.out)
    for r in rows:
        print(f"{r['variant']:<26} spearman {r['spearman']:.4f}  relative_l2 x100 {100 * r['relative_l2']:.4f}")
    print(f"table written to {args.out}")


def cmd_gradcheck(args):
    config = tiny_config()
    config.apply_overrides(args.set or [])
    report = gradcheck(config, step=args.step, tolerance=args.tolerance)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def cmd_export_attention(args):
    model, config = load_model(args.checkpoint)
    data = load_data(args.data) if args.data else generate_dataset(config.generator)
    videos = data[args.split][: args.count]
    stems = export_attention(model, videos, args.out)
    print(f"wrote {len(stems)} attention maps to {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="tpt-aqa", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def configurable(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. --set tpt.K=3 (repeatable)")

    p = sub.add_parser("gen-data", help="generate and save the synthetic splits")
    configurable(p)
    p.add_argument("--out", default="data")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a run directory")
    configurable(p)
    p.add_argument("--data", help="directory written by gen-data (default: generate in memory)")
    p.add_argument("--out", default="runs", help="parent of the run directory")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("checkpoint")
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--data")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train each variant and write a comparison table")
    configurable(p)
    p.add_argument("--variants", help=f"comma list (default: all of {', '.join(VARIANTS)})")
    p.add_argument("--out", default="ablation.csv")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter on a tiny model")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-attention", help="dump cross-attention maps as CSV and PGM")
    p.add_argument("checkpoint")
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--data")
    p.add_argument("--out", default="attention")
    p.set_defaults(func=cmd_export_attention)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args) or 0
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

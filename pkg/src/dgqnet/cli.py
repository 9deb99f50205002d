"""Command-line surface: data generation, training, adaptation,
evaluation, comparison, and report rendering.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import VARIANT_NAMES, build_variant, run_comparison
from .checkpoint import load_checkpoint, save_checkpoint
from .config import dgq_kwargs, load_config
from .domainshift import shift_to_domain
from .errors import ConfigError, DGQError
from .metrics import bootstrap_ci, confusion_matrix, predict_scores, roc_curve
from .report import ROC_HEADER, emit_report
from .synthgen import generate_clean, load_dataset, save_dataset
from .trainer import fit
from .tta import adapt as run_adapt
from .tta import image_batches

logger = logging.getLogger(__name__)

_DOMAIN_CHOICES = ("clean", "0", "1", "2", "3")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _int_list(text: str):
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")


def _variant_list(text: str):
    names = [part for part in text.split(",") if part != ""]
    unknown = [n for n in names if n not in VARIANT_NAMES]
    if unknown:
        raise argparse.ArgumentTypeError(
            f"unknown variants {unknown}; choose from {', '.join(VARIANT_NAMES)}"
        )
    return names


def _check_threads():
    raw = os.environ.get("DGQ_THREADS")
    if raw is None:
        return
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"DGQ_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"DGQ_THREADS must be >= 1, got {value}")


def _add_config_args(parser):
    parser.add_argument("--config", default=None, metavar="PATH",
               help="TOML config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
               metavar="SECTION.KEY=VALUE", help="override a config value")


def _spec_for(tag: str, domains):
    return {str(spec.domain): spec for spec in domains.all_specs()}[tag]


def _load_model(args, config):
    model, _ = build_variant(args.variant, config.train, config.data.image_size,
                             dgq_kwargs(config.model))
    model.load_arrays(load_checkpoint(args.checkpoint))
    return model


def _dataset_root(path) -> Path:
    path = Path(path)
    return path.parent if path.suffix == ".csv" else path


def build_parser() -> _Parser:
    parser = _Parser(prog="dgqnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--pos-fraction", type=float, default=0.5)
    p.add_argument("--domain", choices=_DOMAIN_CHOICES, default="clean",
                   help="render through a domain shift instead of clean")
    p.add_argument("--shift-seed", type=int, default=None,
                   help="rng seed for the shift parameters (default: --seed)")
    _add_config_args(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model variant")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="training log CSV path")
    p.add_argument("--variant", choices=VARIANT_NAMES, default="dgq_full")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="test-time adapt BN statistics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target-manifest", required=True,
                   help="manifest.csv (or its directory) of unlabeled target data")
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--out", required=True, help="adapted checkpoint path")
    p.add_argument("--variant", choices=VARIANT_NAMES, default="dgq_full")
    _add_config_args(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("evaluate", help="metrics on a labeled dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True,
                   help="manifest.csv (or its directory) of the eval set")
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--roc", default=None, help="also write the ROC CSV here")
    p.add_argument("--name", default=None, help="label in reports")
    p.add_argument("--variant", choices=VARIANT_NAMES, default="dgq_full")
    _add_config_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="multi-seed variant comparison")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--variants", type=_variant_list,
                   default=list(VARIANT_NAMES))
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    _add_config_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="render SVG plots and a summary")
    p.add_argument("metrics", nargs="+", help="metrics JSON files")
    p.add_argument("--roc", action="append", default=[],
                   help="ROC CSV file (repeatable)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def cmd_gen_data(args) -> int:
    config = load_config(args.config, args.overrides)
    samples = generate_clean(args.count, args.pos_fraction, args.seed, args.size)
    if args.domain != "clean":
        shift_seed = args.seed if args.shift_seed is None else args.shift_seed
        rng = np.random.default_rng([shift_seed, int(args.domain)])
        samples = shift_to_domain(samples, _spec_for(args.domain, config.domains),
                                  rng)
    manifest = save_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {manifest}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config, args.overrides)
    samples = load_dataset(_dataset_root(args.data))
    model, train_config = build_variant(args.variant, config.train,
                                        config.data.image_size,
                                        dgq_kwargs(config.model))
    rows = fit(model, train_config, samples, config.domains.train_specs(),
               log_path=args.log, checkpoint_path=args.out)
    final_acc = rows[-1]["train_acc"] if rows else float("nan")
    print(f"trained {args.variant} for {len(rows)} steps "
          f"(final batch accuracy {final_acc:.4f}), checkpoint {args.out}")
    return 0


def cmd_adapt(args) -> int:
    config = load_config(args.config, args.overrides)
    model = _load_model(args, config)
    samples = load_dataset(_dataset_root(args.target_manifest))
    batches = image_batches([s.image for s in samples], config.tta.batch_size)
    adapted = run_adapt(model, batches, eta=args.eta, passes=args.passes)
    save_checkpoint(args.out, adapted.named_arrays())
    print(f"adapted on {len(samples)} unlabeled samples "
          f"(eta={args.eta}, passes={args.passes}), checkpoint {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    config = load_config(args.config, args.overrides)
    model = _load_model(args, config)
    samples = load_dataset(_dataset_root(args.manifest))
    labels = np.array([s.label for s in samples], dtype=np.int64)
    scores = predict_scores(model, [s.image for s in samples])
    boot = bootstrap_ci(labels, scores, n_boot=config.eval.n_boot,
                        seed=config.eval.seed)
    cm = confusion_matrix(labels, (scores >= 0.5).astype(np.int64))
    name = args.name if args.name is not None else Path(args.checkpoint).stem
    payload = dict(name=name, **boot.point.as_dict())
    payload["ci"] = {k: [boot.lower[k], boot.upper[k]] for k in sorted(boot.lower)}
    payload["confusion"] = cm.as_dict()
    payload["n_boot"] = boot.n_boot
    payload["count"] = int(labels.size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    if args.roc is not None:
        points = roc_curve(labels, scores)
        with open(args.roc, "w", encoding="utf-8", newline="") as f:
            f.write(",".join(ROC_HEADER) + "\n")
            for fpr, tpr, threshold in points:
                f.write(f"{fpr:.12g},{tpr:.12g},{threshold:.12g}\n")
    print(f"evaluated {len(samples)} samples: accuracy "
          f"{boot.point.accuracy:.4f}, metrics in {args.out}")
    return 0


def cmd_compare(args) -> int:
    config = load_config(args.config, args.overrides)
    rows = run_comparison(
        args.variants, args.seeds, config.train, args.out,
        train_count=config.data.train_count, test_count=config.data.test_count,
        image_size=config.data.image_size, data_seed=config.data.seed,
        pos_fraction=config.data.pos_fraction, n_boot=config.eval.n_boot,
        eval_seed=config.eval.seed, tta_eta=config.tta.eta,
        tta_passes=config.tta.passes, tta_batch=config.tta.batch_size,
        model_kwargs=dgq_kwargs(config.model),
        train_domains=config.domains.train_specs(), unseen=config.domains.d3)
    for row in rows:
        flat = row.as_flat()
        auc = "n/a" if flat["auc"] is None else f"{flat['auc']:.4f}"
        print(f"{row.variant} seed={row.seed} tta={int(row.tta)} "
              f"accuracy={flat['accuracy']:.4f} auc={auc} "
              f"domain_var={flat['domain_variance']:.6f}")
    print(f"comparison written to {args.out}")
    return 0


def cmd_report(args) -> int:
    outputs = emit_report(args.metrics, args.roc, args.out)
    written = [str(path) for path in outputs.values() if path is not None]
    print("wrote " + ", ".join(written))
    return 0


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(message)s")
    parser = build_parser()
    try:
        _check_threads()
        if not argv:
            parser.print_usage(sys.stderr)
            return 1
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:
        return 0 if exc.code in (None, 0) else 1
    except DGQError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

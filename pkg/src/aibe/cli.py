"""Command-line entry point: ``gen``, ``train``, ``eval`` and ``gradcheck``.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 numeric failure.
Settings come from defaults, then ``--config``, then flags.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import evalkit, gradcheck, pipeline
from .align import AlignmentError
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, apply_overrides, parse_config
from .datakit import DataError, SynthSpec, gen_synthetic, load_dataset, save_dataset
from .numkit import NumericError, ShapeError, make_rng

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3

ABLATION_KEYS = {"uvc": "uvc", "usa": "usa", "embed": "embed_kind", "embed_kind": "embed_kind"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _pairs(items: list[str], flag: str) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"{flag} expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--out", help="output directory")

    parser = _Parser(prog="aibe", description="Transductive zero-shot learning on pre-extracted features.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="write a synthetic dataset directory")
    g.add_argument("--classes-seen", type=int, default=6)
    g.add_argument("--classes-unseen", type=int, default=3)
    g.add_argument("--attrs", type=int, default=SynthSpec.n_attributes)
    g.add_argument("--dim", type=int, default=SynthSpec.feature_dim)
    g.add_argument("--per-class", type=int, default=SynthSpec.per_class)
    g.add_argument("--seen-test-per-class", type=int, default=SynthSpec.seen_test_per_class)
    g.add_argument("--sigma", type=float, default=SynthSpec.sigma)
    g.add_argument("--mixing-seed", type=int, default=SynthSpec.mixing_seed)

    t = sub.add_parser("train", parents=[common], help="run both training stages")
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--ablation", action="append", metavar="KEY=VALUE",
                   help="uvc=on|off, usa=on|off, embed=AGAE|GAE|FCE; repeatable")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key; repeatable")

    e = sub.add_parser("eval", parents=[common], help="evaluate a trained run")
    e.add_argument("--data", required=True, help="dataset directory with unseen_labels.csv")
    e.add_argument("--setting", choices=("czsl", "gzsl"), default="czsl")
    e.add_argument("--report", help="report CSV path (default OUT/report_SETTING.csv)")
    e.add_argument("--export", help="also write unseen embeddings to this CSV")

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all gradients")
    c.add_argument("--instances", type=int, default=20)
    c.add_argument("--corrupt", choices=gradcheck.OBJECTIVES, help=argparse.SUPPRESS)
    return parser


def _run_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    flags = {}
    if args.seed is not None:
        flags["seed"] = str(args.seed)
    if args.out:
        flags["out_dir"] = args.out
    if getattr(args, "data", None):
        flags["data_dir"] = args.data
    for key, value in _pairs(getattr(args, "ablation", None), "--ablation").items():
        if key not in ABLATION_KEYS:
            raise UsageError(f"unknown ablation {key!r}; choose from uvc, usa, embed")
        flags[ABLATION_KEYS[key]] = value.upper() if ABLATION_KEYS[key] == "embed_kind" else value
    flags.update(_pairs(getattr(args, "set", None), "--set"))
    return apply_overrides(cfg, flags)


def cmd_gen(args) -> int:
    if not args.out:
        raise UsageError("gen: --out is required")
    spec = SynthSpec(n_seen=args.classes_seen, n_unseen=args.classes_unseen, n_attributes=args.attrs,
                     feature_dim=args.dim, per_class=args.per_class, seen_test_per_class=args.seen_test_per_class,
                     sigma=args.sigma, mixing_seed=args.mixing_seed)
    seed = 0 if args.seed is None else args.seed
    ds = gen_synthetic(spec, make_rng(seed))
    save_dataset(ds, args.out)
    print(f"wrote {ds.n_classes} classes ({len(ds.seen_class_ids)} seen, {len(ds.unseen_class_ids)} unseen) "
          f"to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if not cfg.data_dir or not cfg.out_dir:
        raise UsageError("train: needs a dataset (--data or data_dir) and an output dir (--out or out_dir)")
    ds = load_dataset(cfg.data_dir)  # never opens unseen_labels.csv
    result = pipeline.train(ds, cfg)
    pipeline.save_run(result, cfg, cfg.out_dir)
    last = {k: v for row in result.log for k, v in row.items()}
    print(f"trained {cfg.embed_kind}: l_svc {last.get('l_svc', float('nan')):.4f} "
          f"l_ssa {last.get('l_ssa', float('nan')):.4f} -> {cfg.out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.out:
        raise UsageError("eval: --out must name the trained run directory")
    state, semantic = pipeline.load_run(args.out)
    ds = load_dataset(args.data, heldout=True)
    if ds.unseen_labels_heldout is None:
        raise evalkit.EvaluationError(f"{args.data}: unseen_labels.csv is required for evaluation")
    if args.setting == "czsl":
        report = evalkit.eval_conventional(state, semantic, ds)
    else:
        report = evalkit.eval_generalized(state, semantic, ds)
    path = Path(args.report) if args.report else Path(args.out) / f"report_{args.setting}.csv"
    path.write_text(evalkit.format_report(report), encoding="utf-8")
    if args.export:
        evalkit.export_embeddings(state, semantic, ds, args.export)
    for line in evalkit.summary_lines(report):
        print(line)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.instances < 1:
        raise UsageError("gradcheck: --instances must be >= 1")
    seed = 0 if args.seed is None else args.seed
    result = gradcheck.run_suite(seed, args.instances, corrupt=args.corrupt)
    for line in gradcheck.report_lines(result):
        print(line)
    failing = result.failing()
    print(f"{len(result.errors)} objectives, {result.seconds:.1f}s")
    if failing:
        print("gradient check failed: " + ", ".join(failing), file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, CheckpointError, AlignmentError, ShapeError,
            evalkit.EvaluationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``reciperec {gen-synth,train,eval,selfcheck,export-embeddings}``.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure, 3 selfcheck failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, SyntheticSpec, TrainConfig
from .graph import GraphLoadError, SamplingError
from .runner import eval_checkpoint, export_embeddings, train_from_dir
from .selfcheck import run_selfcheck
from .synth import write_synthetic
from .tensor import ContractError, DimensionError
from .training import TrainingDiverged

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_SELFCHECK = 0, 1, 2, 3

log = logging.getLogger("reciperec")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# CLI flag -> config field
OVERRIDES = {"lr": float, "epochs": int, "lambda": float, "tau": float, "heads": int,
             "hidden": int, "seed": int, "predictor": str}
_FIELD = {"lambda": "lam"}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    p = _Parser(prog="reciperec", description="Heterogeneous-graph recipe recommender.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help)

    g = command("gen-synth", "write a planted-cluster synthetic dataset")
    g.add_argument("--out", required=True, type=Path)
    d = SyntheticSpec()
    g.add_argument("--users", type=int, default=d.n_users)
    g.add_argument("--recipes", type=int, default=d.n_recipes)
    g.add_argument("--ingredients", type=int, default=d.n_ingredients)
    g.add_argument("--clusters", type=int, default=d.n_clusters)
    g.add_argument("--p-intra", type=float, default=d.p_intra)
    g.add_argument("--p-inter", type=float, default=d.p_inter)
    g.add_argument("--ingredients-per-recipe", type=int, nargs=2, metavar=("LO", "HI"),
                   default=list(d.ingredients_per_recipe))
    g.add_argument("--seed", type=int, default=d.seed)

    t = command("train", "train a model and evaluate it")
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--config", type=Path, help="JSON config; omitted keys keep their defaults")
    t.add_argument("--resume", type=Path, help="checkpoint to continue from")
    for flag, typ in OVERRIDES.items():
        t.add_argument(f"--{flag}", type=typ, dest=f"ov_{flag}")

    e = command("eval", "evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--split", required=True, type=Path)
    e.add_argument("--out", type=Path)

    s = command("selfcheck", "run the built-in correctness checks")
    s.add_argument("--full", action="store_true", help="finite-difference every model parameter entry")
    s.add_argument("--corrupt-op", help=argparse.SUPPRESS)

    x = command("export-embeddings", "write node embeddings as CSV")
    x.add_argument("--checkpoint", required=True, type=Path)
    x.add_argument("--data", required=True, type=Path)
    x.add_argument("--out", required=True, type=Path)
    return p


def resolve_config(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    changes = {_FIELD.get(flag, flag): getattr(args, f"ov_{flag}") for flag in OVERRIDES
               if getattr(args, f"ov_{flag}") is not None}
    return cfg.replace(**changes) if changes else cfg


def cmd_gen_synth(args) -> int:
    spec = SyntheticSpec(n_users=args.users, n_recipes=args.recipes, n_ingredients=args.ingredients,
                         n_clusters=args.clusters, p_intra=args.p_intra, p_inter=args.p_inter,
                         ingredients_per_recipe=tuple(args.ingredients_per_recipe), seed=args.seed)
    spec.validate()
    g = write_synthetic(spec, args.out)
    print(f"wrote {args.out}: {g.summary()}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    res = train_from_dir(cfg, args.data, args.out, resume=args.resume)
    print(res.report.to_text())
    print(f"artifacts in {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = eval_checkpoint(args.checkpoint, args.data, args.split, args.out)
    print(report.to_text())
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    report = run_selfcheck(full_gradients=args.full, corrupt=args.corrupt_op)
    print(report.to_text())
    return EXIT_OK if report.passed else EXIT_SELFCHECK


def cmd_export(args) -> int:
    n = export_embeddings(args.checkpoint, args.data, args.out)
    print(f"wrote {n} embeddings to {args.out}")
    return EXIT_OK


COMMANDS = {"gen-synth": cmd_gen_synth, "train": cmd_train, "eval": cmd_eval,
            "selfcheck": cmd_selfcheck, "export-embeddings": cmd_export}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphLoadError, ContractError, DimensionError, SamplingError, TrainingDiverged,
            OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Exit codes: 0 fair / no witness, 1 witness found, 2 unknown or timeout,
3 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .driver import (
    Budget,
    InstanceOutcome,
    Mode,
    Outcome,
    bias_estimate,
    check_dataset,
    check_instance,
    verify_fairness,
)
from .dual import DualModelSpec, build_dual, dump_dual, load_any
from .formats import SCHEMA_VERSION, emit_report, parse_dataset, parse_vector
from .model import ModelError, ModelSpec, canonical_json

EXIT_FAIR, EXIT_WITNESS, EXIT_UNKNOWN, EXIT_USAGE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class InputError(Exception):
    pass


def _load_model(path: str) -> ModelSpec:
    try:
        model = load_any(Path(path).read_bytes())
    except OSError as exc:
        raise InputError(f"cannot read model: {exc}") from None
    except ModelError as exc:
        raise InputError(f"{path}: {exc}") from None
    # a dual document stands for its base model
    return model.base if isinstance(model, DualModelSpec) else model


def _resolve_pa(model: ModelSpec, text: str | None) -> list[int]:
    if not text:
        if not model.protected:
            raise InputError("no protected attributes: pass --pa or list them in the model")
        return list(model.protected)
    names = {a.name: i for i, a in enumerate(model.attributes)}
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if tok in names:
            out.append(names[tok])
        elif tok.isdigit() and int(tok) < model.n_attributes:
            out.append(int(tok))
        else:
            raise InputError(f"unknown protected attribute {tok!r}")
    return out


def _load_rows(path: str, model: ModelSpec):
    try:
        return parse_dataset(Path(path).read_bytes(), model).rows
    except OSError as exc:
        raise InputError(f"cannot read dataset: {exc}") from None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def _budget(args) -> Budget:
    return Budget(args.timeout_s, args.max_dequeues, args.solve_timeout_s)


def _config(args, **extra) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "report", "out", "verbose")}
    cfg.update(extra)
    return json.loads(json.dumps(cfg, default=str))


def cmd_check(args) -> int:
    model = _load_model(args.model)
    pa = _resolve_pa(model, args.pa)
    rows = _load_rows(args.data, model)
    res = check_dataset(
        model,
        rows,
        pa,
        _budget(args),
        args.jobs,
        deterministic=args.deterministic,
        strategy=args.strategy,
        backend=args.backend,
    )
    for i, err in sorted(res.errors.items()):
        print(f"instance {i}: {err}", file=sys.stderr)
    emit_report(
        res.report,
        res.outcome,
        res.witness,
        args.report,
        config=_config(args, pa=pa, instance_index=res.instance_index),
        deterministic=args.deterministic,
    )
    return {"witness": EXIT_WITNESS, "none": EXIT_FAIR}.get(res.outcome, EXIT_UNKNOWN)


def cmd_verify(args) -> int:
    model = _load_model(args.model)
    pa = _resolve_pa(model, args.pa)
    seed_input = parse_vector(args.seed_input) if args.seed_input else None
    res = verify_fairness(
        model,
        pa,
        seed_input,
        _budget(args),
        args.mode,
        rng_seed=args.seed,
        strategy=args.strategy,
        backend=args.backend,
    )
    v = res.verdict
    emit_report(
        res.report,
        v.outcome.value,
        v.witness,
        args.report,
        certificate=v.certificate,
        config=_config(args, pa=pa),
        deterministic=args.deterministic,
    )
    return {Outcome.UNFAIR: EXIT_WITNESS, Outcome.FAIR: EXIT_FAIR}.get(v.outcome, EXIT_UNKNOWN)


def cmd_dual(args) -> int:
    model = _load_model(args.model)
    text = dump_dual(build_dual(model, _resolve_pa(model, args.pa)))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_FAIR


def cmd_bias(args) -> int:
    model = _load_model(args.model)
    pa = _resolve_pa(model, args.pa)
    rows = _load_rows(args.data, model)
    try:
        pct = bias_estimate(model, rows, pa, args.rounds, args.per_round, args.rng_seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    print(f"{pct:.2f}")
    return EXIT_FAIR


def cmd_trace(args) -> int:
    model = _load_model(args.model)
    pa = _resolve_pa(model, args.pa)
    values = parse_vector(args.input) if args.input else None
    if args.fairness:
        res = verify_fairness(model, pa, values, _budget(args), args.mode, rng_seed=args.seed, strategy=args.strategy, backend=args.backend)
        names = {i: a.name for i, a in enumerate(build_dual(model, pa).attributes)}
        code = {Outcome.UNFAIR: EXIT_WITNESS, Outcome.FAIR: EXIT_FAIR}.get(res.verdict.outcome, EXIT_UNKNOWN)
        outcome = res.verdict.outcome.value
    else:
        if values is None:
            raise InputError("--input is required for instance traces")
        res = check_instance(model, values, pa, _budget(args), strategy=args.strategy, backend=args.backend)
        names = {i: a.name for i, a in enumerate(model.attributes)}
        code = {InstanceOutcome.WITNESS: EXIT_WITNESS, InstanceOutcome.EXHAUSTED: EXIT_FAIR}.get(res.outcome, EXIT_UNKNOWN)
        outcome = res.outcome.value
    doc = {"schema_version": SCHEMA_VERSION, "outcome": outcome, "tree": res.tree.to_document(names)}
    text = canonical_json(doc)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return code


def _search_options(p, *, jobs=False):
    p.add_argument("--model", required=True, help="model document (JSON)")
    p.add_argument("--pa", help="protected attributes, comma-separated names or indices")
    p.add_argument("--timeout-s", type=float, default=1800.0, help="wall-clock budget in seconds")
    p.add_argument("--solve-timeout-s", type=float, default=60.0, help="per-query solver budget")
    p.add_argument("--max-dequeues", type=int, default=None)
    p.add_argument("--strategy", choices=["fifo", "lifo"], default="fifo")
    p.add_argument(
        "--backend",
        default="internal",
        help="internal | smtlib=<solver command> (smtlib alone uses $FAIRCERT_SMT_SOLVER)",
    )
    if jobs:
        p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="faircert", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"faircert {__version__} (report schema {SCHEMA_VERSION})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check", help="look for discriminatory instances in a dataset")
    _search_options(p, jobs=True)
    p.add_argument("--data", required=True, help="CSV with a header row of attribute names")
    p.add_argument("--deterministic", action="store_true", help="dataset-order results and timing-free reports")
    p.add_argument("--report", help="write the report document here")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("verify", help="verify fairness over the whole attribute box")
    _search_options(p)
    p.add_argument("--seed", type=int, default=0, help="RNG seed for the random starting input")
    p.add_argument("--seed-input", help="explicit starting input (base or dual), comma-separated")
    p.add_argument("--mode", choices=["path", "region-query"], default="region-query")
    p.add_argument("--deterministic", action="store_true", help="timing-free report document")
    p.add_argument("--report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("dual", help="emit the dual model document")
    p.add_argument("--model", required=True)
    p.add_argument("--pa")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dual)

    p = sub.add_parser("bias", help="sampling estimate of the discriminatory-instance rate")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pa")
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--per-round", type=int, default=100)
    p.add_argument("--rng-seed", type=int, default=0)
    p.set_defaults(func=cmd_bias)

    p = sub.add_parser("trace", help="dump the execution tree of one run")
    _search_options(p)
    p.add_argument("--input", help="instance (or dual input with --fairness), comma-separated")
    p.add_argument("--fairness", action="store_true", help="trace a fairness verification run")
    p.add_argument("--mode", choices=["path", "region-query"], default="region-query")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ValueError) as exc:
        print(f"faircert: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

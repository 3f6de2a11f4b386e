"""Command line entry point: ``multiplexnet <command> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import nets
from .dnf import to_dnf
from .layerc import compile_formula, describe
from .logic import LogicError, make_vars, parse, to_text
from .bench import data, train


def _vars(text: str) -> list[str]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    if not names:
        raise argparse.ArgumentTypeError("need at least one variable name")
    return names


def _read_formula(args) -> str:
    if args.formula_file:
        with open(args.formula_file) as fh:
            return fh.read()
    if args.formula is None:
        raise SystemExit("error: give a formula or --formula-file")
    return args.formula


def cmd_show_dnf(args) -> int:
    f = parse(_read_formula(args), args.vars)
    dnf = to_dnf(f)
    print(f"{len(dnf)} term(s)")
    for i, term in enumerate(dnf.terms):
        print(f"[{i}] {to_text(term.as_formula())}")
    return 0


def cmd_compile(args) -> int:
    order = make_vars(args.vars)
    head = compile_formula(parse(_read_formula(args), order), order)
    print(f"{head.k} branch(es), {head.dropped} infeasible term(s) dropped")
    for i, p in enumerate(head.programs):
        print(f"[{i}] {describe(p)}")
    return 0


def _config(args, experiment: str) -> train.ExperimentConfig:
    if args.config:
        cfg = train.ExperimentConfig.load(args.config)
    else:
        cfg = train.ExperimentConfig.default(experiment)
    if cfg.experiment != experiment:
        raise SystemExit(f"error: config is for {cfg.experiment!r}, not {experiment!r}")
    return cfg.override(seed=args.seed, epochs=args.epochs, n=args.n)


def _summary(report: train.RunReport) -> str:
    parts = [f"{report.model} seed={report.seed}"]
    for k, v in report.final.items():
        if isinstance(v, float):
            parts.append(f"{k}={v:.4f}")
    return " ".join(parts)


def cmd_train_synthetic(args) -> int:
    cfg = _config(args, "synthetic")
    for model in cfg.models:
        for seed in cfg.seeds:
            out = os.path.join(args.out, model, f"seed_{seed}")
            print(_summary(train.train_synthetic(cfg, seed, model, out)), flush=True)
    return 0


def cmd_train_structsum(args) -> int:
    cfg = _config(args, "structsum")
    result = train.train_structsum(cfg, args.out)
    final = result["report"].final
    print(f"best seed {final['best_seed']} val_neg_elbo={final['val_neg_elbo']:.4f} "
          f"label_accuracy={final['label_accuracy']:.4f} "
          f"tuple_accuracy={final['tuple_accuracy']:.4f}")
    return 0


def cmd_train_hierarchy(args) -> int:
    cfg = _config(args, "hierarchy")
    for mode in cfg.models:
        for seed in cfg.seeds:
            out = os.path.join(args.out, mode, f"seed_{seed}")
            print(_summary(train.train_hierarchy(cfg, seed, mode, out)), flush=True)
    return 0


def cmd_sample(args) -> int:
    model, meta = nets.load_checkpoint(args.checkpoint)
    if not isinstance(model, nets.VaeModel):
        raise SystemExit("error: sampling needs a VAE checkpoint")
    samples, _ = nets.sample_prior(model, args.n, np.random.default_rng(args.seed))
    names = meta.get("var_order") or [f"x{i}" for i in range(model.n_vars)]
    if args.output:
        train.write_samples(args.output, samples, names)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(names)
        for row in samples:
            w.writerow([repr(float(v)) for v in row])
    return 0


def cmd_check(args) -> int:
    with open(args.csv, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SystemExit("error: empty csv")
    names, body = rows[0], rows[1:]
    f = parse(_read_formula(args), names)
    x = np.array([[float(v) for v in r] for r in body], dtype=np.float64).reshape(-1, len(names))
    rate = data.satisfaction_rate(x, f, names)
    print(json.dumps({"rows": len(x), "satisfied": int(round(rate * len(x))) if len(x) else 0,
                      "satisfaction": rate}))
    return 0 if len(x) and rate == 1.0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multiplexnet",
                                description="Compile linear constraints into output layers "
                                            "and run the benchmark experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def formula_args(sp, vars_required=True):
        sp.add_argument("formula", nargs="?", help="formula text")
        sp.add_argument("--formula-file", help="read the formula from a file")
        if vars_required:
            sp.add_argument("--vars", type=_vars, required=True,
                            help="comma separated variable order, e.g. x,y")

    sp = sub.add_parser("show-dnf", help="print the disjunctive normal form")
    formula_args(sp)
    sp.set_defaults(func=cmd_show_dnf)

    sp = sub.add_parser("compile", help="print the transform for every DNF term")
    formula_args(sp)
    sp.set_defaults(func=cmd_compile)

    for name, func in (("train-synthetic", cmd_train_synthetic),
                       ("train-structsum", cmd_train_structsum),
                       ("train-hierarchy", cmd_train_hierarchy)):
        sp = sub.add_parser(name, help=f"run the {name[6:]} experiment")
        sp.add_argument("--config", help="JSON config (defaults to the shipped one)")
        sp.add_argument("--seed", type=int, help="run a single seed")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--n", type=int, help="training set size")
        sp.add_argument("--out", default="runs", help="output directory")
        sp.set_defaults(func=func)

    sp = sub.add_parser("sample", help="draw prior samples from a VAE checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", help="write CSV here instead of stdout")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("check", help="exact satisfaction rate of CSV rows")
    sp.add_argument("--formula")
    sp.add_argument("--formula-file")
    sp.add_argument("--csv", required=True, help="header row gives the variable order")
    sp.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LogicError, train.ConfigError, data.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

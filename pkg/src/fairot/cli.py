"""Command-line entry point: ``fairot {audit,train,synth,ot,dcfr}``.

Exit codes: 0 success, 2 invalid input (bad flags, files, schemas or
configs), 3 numeric failure (non-finite values, unconverged Sinkhorn,
diverged training).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import Schema, load_csv, read_config, split
from .dcfr import MAX_BRUTE_CELLS, DiscreteJoint, bin_outputs, dcfr_closed_form, dcfr_sup_bruteforce
from .disparity import AuditConfig, audit
from .errors import FairOTError, InvalidInput, NotConverged, NumericFailure
from .fairtrain.checkpoint import atomic_write_text, load_model, save_model
from .fairtrain.regularizers import KINDS, Regularizer
from .fairtrain.train import TrainConfig, predict, train
from .otcore import SinkhornConfig, brute_force_ot, exact_ot, sinkhorn
from .synth import (
    DEFAULT_DELTA_GRID,
    DEFAULT_RM_GRID,
    loan_sweep,
    write_income_table_csv,
    write_income_table_schema,
    write_sweep_csv,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

LAMBDA_GRID_BIT = tuple(float(v) for v in np.logspace(-4, 2, 10))
LAMBDA_GRID_LEAP = tuple(float(v) for v in np.logspace(-4, 1, 10))

log = logging.getLogger("fairot")


def lambda_grid(kind):
    """The default 10-point penalty grid of a regularizer kind."""
    return LAMBDA_GRID_LEAP if kind.startswith("fairleap") else LAMBDA_GRID_BIT


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _require_file(path, what):
    if path is None:
        raise InvalidInput(f"missing {what}")
    if not Path(path).is_file():
        raise InvalidInput(f"{what} not found: {path}")
    return Path(path)


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise InvalidInput(f"output directory is not writable: {p}")
    return p


def _parse_floats(text, what):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise InvalidInput(f"{what} must be comma-separated numbers, got {text!r}") from None


def _load_config(args):
    return read_config(_require_file(args.config, "config file")) if args.config else {}


def _schema(args, cfg):
    if getattr(args, "schema", None):
        return Schema.from_file(_require_file(args.schema, "schema file"))
    if "columns" in cfg:
        return Schema.from_dict(cfg)
    raise InvalidInput("no schema: pass --schema or put a [columns] table in --config")


def _read_matrix(path):
    try:
        rows = []
        with open(path, encoding="utf-8", newline="") as fh:
            for k, rec in enumerate(csv.reader(fh), 1):
                if not rec or all(not v.strip() for v in rec):
                    continue
                try:
                    rows.append([float(v) for v in rec])
                except ValueError:
                    if k == 1 and not rows:
                        continue  # header
                    raise InvalidInput(f"{path}: line {k} is not numeric") from None
    except FileNotFoundError:
        raise InvalidInput(f"file not found: {path}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise InvalidInput(f"{path}: expected a non-empty rectangular numeric table")
    return np.asarray(rows, dtype=float)


def _read_vector(path):
    m = _read_matrix(path)
    if m.shape[0] != 1 and m.shape[1] != 1:
        raise InvalidInput(f"{path}: expected a single row or column")
    return m.ravel()


def _read_outputs(path, column, n):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidInput(f"{path}: empty file") from None
        recs = [r for r in reader if r]
    if column is None:
        column = "output" if "output" in header else (header[0] if len(header) == 1 else None)
        if column is None:
            raise InvalidInput(f"{path}: several columns; choose one with --output-column")
    if column not in header:
        raise InvalidInput(f"{path}: column {column!r} not found")
    j = header.index(column)
    try:
        y = np.array([float(r[j]) for r in recs])
    except (ValueError, IndexError):
        raise InvalidInput(f"{path}: column {column!r} is not numeric") from None
    if y.size != n:
        raise InvalidInput(f"{path}: {y.size} outputs for {n} dataset rows")
    return y


def _audit_config(args):
    exact = not getattr(args, "sinkhorn", False)
    kw = {"use_exact_oracles": exact, "drop_unshared_levels": getattr(args, "drop_unshared_levels", False)}
    if args.p is not None:
        kw["p_wass"] = args.p
    if args.bcd_c is not None:
        kw["C"] = args.bcd_c
    if args.epsilon is not None:
        kw["epsilon"] = args.epsilon
    if getattr(args, "dcfr_bins", None) is not None:
        kw["dcfr_bins"] = args.dcfr_bins
    return AuditConfig(**kw)


def _write_report(report, out: Path, stem="report"):
    atomic_write_text(out / f"{stem}.json", report.to_json() + "\n")
    atomic_write_text(out / f"{stem}.csv", report.to_csv())


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_audit(args):
    cfg = _load_config(args)
    data = _require_file(args.data, "dataset (--data)")
    if (args.outputs is None) == (args.model is None):
        raise InvalidInput("pass exactly one of --outputs and --model")
    src = _require_file(args.outputs or args.model, "outputs file" if args.outputs else "model checkpoint")
    out = _out_dir(args.out)
    schema = _schema(args, cfg)
    ds = load_csv(data, schema)
    if args.outputs:
        y = _read_outputs(src, args.output_column, len(ds))
    else:
        y = predict(load_model(src), ds)
    report = audit(ds, y, _audit_config(args))
    _write_report(report, out)
    print(report.to_json())
    return EXIT_OK


def _train_settings(args, cfg):
    t = dict(cfg.get("train", {}))
    kinds = args.regularizer or t.get("regularizer", "none")
    kinds = [kinds] if isinstance(kinds, str) else list(kinds)
    if args.lam is not None:
        lam_arg = args.lam
    else:
        lam_arg = t.get("lambda", 0.0)
    seeds = [args.seed] if args.seed is not None else list(t.get("seeds", [t.get("seed", 0)]))
    jobs = []
    for kind in kinds:
        if isinstance(lam_arg, str) and lam_arg.strip().lower() == "grid":
            lams = lambda_grid(kind)
        elif isinstance(lam_arg, (list, tuple)):
            lams = [float(v) for v in lam_arg]
        else:
            lams = _parse_floats(lam_arg, "lambda")
        for lam in lams:
            for seed in seeds:
                jobs.append((kind, lam, int(seed)))
    eps = args.epsilon if args.epsilon is not None else t.get("epsilon", 0.01)
    C = args.bcd_c if args.bcd_c is not None else t.get("C", 1.0)
    p = args.p if args.p is not None else t.get("p")
    common = {
        "task": t.get("task", "classification"),
        "lr": float(t.get("lr", 1e-3)),
        "epochs": int(args.epochs if args.epochs is not None else t.get("epochs", 500)),
        "patience": int(t.get("patience", 50)),
        "batch_size": int(t.get("batch_size", 256)),
        "hidden": tuple(t.get("hidden", (50, 20))),
        "features": t.get("features", "all"),
    }
    fractions = tuple(t.get("split", (0.6, 0.2, 0.2)))
    configs = []
    for kind, lam, seed in jobs:
        reg = Regularizer(kind, p=p, epsilon=float(eps), C=float(C))
        configs.append((kind, lam, seed, TrainConfig(regularizer=reg, lam=lam, seed=seed, **common)))
    return configs, fractions, int(t.get("split_seed", 0))


SWEEP_HEADER = (
    "method",
    "lambda",
    "seed",
    "best_epoch",
    "val_task_loss",
    "val_metric",
    "cdd_wass",
    "cdd_wass_normalized",
    "cdd_lp_uniform",
    "cdd_lp_pl",
    "cdd_lp_avg",
    "dd",
    "dcfr",
)


def cmd_train(args):
    cfg = _load_config(args)
    data = _require_file(args.data, "dataset (--data)")
    out = _out_dir(args.out)
    schema = _schema(args, cfg)
    runs, fractions, split_seed = _train_settings(args, cfg)
    ds = load_csv(data, schema)
    tr, va, te = split(ds, fractions, split_seed)
    if len(te) == 0:
        te = va
    acfg = _audit_config(args)
    rows = []
    for kind, lam, seed, tcfg in runs:
        model, hist = train(tr, tcfg, validation=va, test=te, audit_cfg=acfg)
        run_dir = out if len(runs) == 1 else _out_dir(out / f"{kind}_lam{lam:.6g}_seed{seed}")
        save_model(model, run_dir / "model.json")
        atomic_write_text(run_dir / "history.csv", hist.to_csv())
        _write_report(hist.report, run_dir)
        best = hist.epochs[hist.best_epoch]
        rep = hist.report
        rows.append(
            [kind, repr(lam), seed, hist.best_epoch, repr(best["val_task_loss"]), repr(best["val_metric"])]
            + [repr(getattr(rep, f)) for f in SWEEP_HEADER[6:]]
        )
        log.info("%s lambda=%g seed=%d: cdd_lp_uniform=%.4g", kind, lam, seed, rep.cdd_lp_uniform)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    w.writerows(rows)
    atomic_write_text(out / "sweep.csv", buf.getvalue())
    print(buf.getvalue(), end="")
    return EXIT_OK


def cmd_synth(args):
    if args.income_table_out:
        path = Path(args.income_table_out)
        write_income_table_csv(path)
        write_income_table_schema(path.with_suffix(".schema.json"))
        return EXIT_OK
    rm = _parse_floats(args.rm_grid, "--rm-grid") if args.rm_grid else list(DEFAULT_RM_GRID)
    dg = _parse_floats(args.delta_grid, "--delta-grid") if args.delta_grid else list(DEFAULT_DELTA_GRID)
    seed = args.seed if args.seed is not None else 0
    rows = loan_sweep(rm, dg, n=args.n, seed=seed, p=args.p or 1, n_jobs=args.jobs)
    buf = io.StringIO()
    write_sweep_csv(rows, buf)
    if args.out:
        out = Path(args.out)
        if out.parent and not out.parent.exists():
            raise InvalidInput(f"output directory does not exist: {out.parent}")
        atomic_write_text(out, buf.getvalue())
    else:
        print(buf.getvalue(), end="")
    return EXIT_OK


def cmd_ot(args):
    C = _read_matrix(_require_file(args.cost, "cost matrix"))
    a = _read_vector(_require_file(args.a, "row marginal"))
    b = _read_vector(_require_file(args.b, "column marginal"))
    if args.exact:
        if C.size <= 64:
            value = brute_force_ot(C, a, b)
            _, plan = exact_ot(C, a, b)
        else:
            value, plan = exact_ot(C, a, b)
        P = plan.entries
        result = {"value": value, "method": "exact"}
    else:
        res = sinkhorn(C, a, b, SinkhornConfig(epsilon=args.epsilon))
        if not res.converged:
            raise NotConverged(f"Sinkhorn did not converge (violation {res.plan.marginal_violation:.3g})")
        P = res.plan.entries
        result = {
            "value": res.transport_cost,
            "regularized_objective": res.regularized_objective,
            "epsilon": res.epsilon,
            "iterations": res.n_iter,
            "method": "sinkhorn",
        }
    if args.out:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows([[repr(float(v)) for v in row] for row in P])
        atomic_write_text(args.out, buf.getvalue())
    print(json.dumps(result))
    return EXIT_OK


def cmd_dcfr(args):
    cfg = _load_config(args)
    data = _require_file(args.data, "dataset (--data)")
    if (args.outputs is None) == (args.model is None):
        raise InvalidInput("pass exactly one of --outputs and --model")
    src = _require_file(args.outputs or args.model, "outputs file" if args.outputs else "model checkpoint")
    ds = load_csv(data, _schema(args, cfg))
    y = _read_outputs(src, args.output_column, len(ds)) if args.outputs else predict(load_model(src), ds)
    z = bin_outputs(y, args.dcfr_bins or 10)
    j = DiscreteJoint.from_samples(z, ds.levels, ds.sensitive)
    result = {"r_dcfr": dcfr_closed_form(j), "cells": j.n_cells}
    if j.n_cells <= MAX_BRUTE_CELLS:
        result["r_dcfr_bruteforce"] = dcfr_sup_bruteforce(j)
    print(json.dumps(result))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common(p, out_help="output directory"):
    p.add_argument("--config", help="JSON or TOML config file (flags override it)")
    p.add_argument("--out", help=out_help)
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--epsilon", type=float, help="entropic regularization in cost units")
    p.add_argument("--bcd-c", dest="bcd_c", type=float, help="level-mismatch penalty C of the bi-causal distance")
    p.add_argument("--p", type=int, choices=(1, 2), help="transport order")


def _data_args(p):
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--schema", help="schema config (JSON/TOML); defaults to --config")
    p.add_argument("--outputs", help="CSV of model outputs, one row per dataset row")
    p.add_argument("--output-column", help="column of --outputs to use")
    p.add_argument("--model", help="model checkpoint to score the dataset with")
    p.add_argument("--dcfr-bins", type=int, help="equal-frequency bins for the DCFR quantity (default 10)")


EPILOG = """\
environment:
  FAIROT_THREADS        cap on worker threads for sweeps and level pairs (default 1)
  FAIROT_DISABLE_NUMBA  set to 1 to run the pure-numpy kernels

exit codes:
  0  success
  2  invalid input: flags, files, schemas, configs
  3  numeric failure: non-finite values, Sinkhorn not converged, diverged training
"""


def build_parser():
    parser = _Parser(
        prog="fairot",
        description=__doc__.splitlines()[0],
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"fairot {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("audit", help="disparity report for a dataset and model outputs")
    _common(p)
    _data_args(p)
    p.add_argument("--sinkhorn", action="store_true", help="use entropic solvers instead of exact ones")
    p.add_argument("--drop-unshared-levels", action="store_true", help="drop levels seen in one group only")
    p.set_defaults(func=cmd_audit, out=".")

    p = sub.add_parser("train", help="train one model or a lambda sweep")
    _common(p)
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--schema", help="schema config (JSON/TOML); defaults to --config")
    p.add_argument("--lambda", dest="lam", help="penalty weight, comma-separated list, or 'grid'")
    p.add_argument("--regularizer", choices=KINDS, help="penalty kind")
    p.add_argument("--epochs", type=int, help="maximum epochs")
    p.add_argument("--sinkhorn", action="store_true", help="use entropic solvers in the final audit")
    p.set_defaults(func=cmd_train, out=".", dcfr_bins=None)

    p = sub.add_parser("synth", help="two-group loan sweep as CSV")
    _common(p, "CSV path (default: stdout)")
    p.add_argument("--rm-grid", help="male shares, comma-separated (default 0.5,0.7,0.9)")
    p.add_argument("--delta-grid", help="approval gaps, comma-separated (default 0.05..0.4)")
    p.add_argument("--n", type=int, default=10_000, help="applicants per cell")
    p.add_argument("--jobs", type=int, help="worker threads (capped by FAIROT_THREADS)")
    p.add_argument("--income-table-out", help="write the income table CSV (and a .schema.json beside it) and exit")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ot", help="solve one transport problem from CSV files")
    _common(p, "CSV path for the plan")
    p.add_argument("cost", help="cost matrix CSV")
    p.add_argument("a", help="row marginal CSV")
    p.add_argument("b", help="column marginal CSV")
    p.add_argument("--exact", action="store_true", help="exact solver instead of Sinkhorn")
    p.set_defaults(func=cmd_ot)

    p = sub.add_parser("dcfr", help="DCFR quantity of model outputs")
    _common(p)
    _data_args(p)
    p.set_defaults(func=cmd_dcfr)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidInput, OSError) as exc:
        print(f"fairot: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericFailure, NotConverged) as exc:
        print(f"fairot: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FairOTError as exc:  # pragma: no cover - every subclass is mapped above
        print(f"fairot: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

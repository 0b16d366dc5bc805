"""Command-line interface: ``metagam {fit,strip,meta,simulate,plot}``.

Exit codes: 0 success, 2 bad input (parse errors, missing columns, unknown
terms, bad flags), 3 rank-deficient design, 4 invalid model file, 5 failed
simulation replication.
"""
from __future__ import annotations

import argparse
import itertools
import json
import re
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from . import strip as strip_mod
from .exceptions import (
    FormulaError,
    MetaGamError,
    MissingColumn,
    PrivacyViolation,
    RankDeficientDesign,
    ReplicationError,
    SchemaViolation,
    VersionMismatch,
)
from .gam import fit_gam, fit_summary, predict_term
from .meta import PVALUE_METHODS, cochran_q, dominance, meta_pvalue, pool_pointwise
from .plotting import PALETTE, Figure, dominance_figure, heterogeneity_figure, meta_figure, panel

EXIT_OK, EXIT_INPUT, EXIT_RANK, EXIT_SCHEMA, EXIT_SIMULATION = 0, 2, 3, 4, 5
CSV_FLOAT = "%.17g"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def parse_grid(spec: str) -> pd.DataFrame:
    """Grid from ``"Age=20:90:0.1,PSQI=1,Sex=Female"``.

    ``from:to:step`` gives an inclusive sequence, any other value is held
    fixed (numeric when it parses as a number). Several sequences expand to
    their Cartesian product.
    """
    columns = {}
    for item in filter(None, (p.strip() for p in spec.split(","))):
        if "=" not in item:
            raise CliError(f"grid entry {item!r} is not of the form name=value")
        name, value = (s.strip() for s in item.split("=", 1))
        if not name:
            raise CliError(f"grid entry {item!r} has no variable name")
        if value.count(":") == 2:
            try:
                lo, hi, step = (float(v) for v in value.split(":"))
            except ValueError:
                raise CliError(f"grid range {value!r} for {name} is not numeric") from None
            if step <= 0 or hi < lo:
                raise CliError(f"grid range {value!r} for {name} needs step > 0 and to >= from")
            count = int(np.floor((hi - lo) / step + 1e-9)) + 1
            columns[name] = np.round(lo + step * np.arange(count), 12)
        else:
            try:
                columns[name] = np.array([float(value)])
            except ValueError:
                columns[name] = np.array([value], dtype=object)
    if not columns:
        raise CliError("empty grid specification")
    rows = list(itertools.product(*columns.values()))
    return pd.DataFrame(rows, columns=list(columns))


def parse_knots(items: Sequence[str]) -> dict:
    """``["x=0,0.25,0.5,0.75,1"]`` -> ``{"x": (0, 0.25, 0.5, 0.75, 1)}`` (boundary first and last)."""
    out = {}
    for item in items or ():
        name, _, values = item.partition("=")
        try:
            knots = tuple(float(v) for v in values.split(","))
        except ValueError:
            raise CliError(f"bad --knots value {item!r}") from None
        if len(knots) < 2 or any(b <= a for a, b in zip(knots, knots[1:])):
            raise CliError(f"--knots for {name} must be increasing and include both boundaries")
        out[name.strip()] = knots
    return out


def _slug(term: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", term).strip("_") or "term"


def _read_csv(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except FileNotFoundError:
        raise CliError(f"{path}: no such file") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise CliError(f"{path}: cannot parse CSV: {exc}") from None


def _load_stripped(paths) -> list:
    models = []
    for path in paths:
        try:
            models.append(strip_mod.load(path))
        except FileNotFoundError:
            raise CliError(f"{path}: no such file") from None
        except (SchemaViolation, VersionMismatch) as exc:
            raise CliError(f"{path}: invalid model file: {exc}", EXIT_SCHEMA) from None
    return models


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def cmd_fit(args) -> int:
    data = _read_csv(args.csv)
    model = fit_gam(data, args.formula, knots=parse_knots(args.knots), knot_rule=args.knot_rule,
                    refine=args.refine, cohort_label=args.cohort_label or Path(args.csv).stem)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    strip_mod.save_full(model, out)
    summary = json.dumps(fit_summary(model), indent=2, sort_keys=True) + "\n"
    summary_path = out.with_name(out.name.replace(strip_mod.FULL_SUFFIX, "") + ".summary.json")
    _write(summary_path, summary)
    if args.strip_out:
        stripped = strip_mod.strip_rawdata(model)
        strip_mod.audit_privacy(stripped)
        strip_mod.save(stripped, args.strip_out)
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_strip(args) -> int:
    try:
        model = strip_mod.load_full(args.model)
    except FileNotFoundError:
        raise CliError(f"{args.model}: no such file") from None
    except (SchemaViolation, VersionMismatch) as exc:
        raise CliError(f"{args.model}: invalid model file: {exc}", EXIT_SCHEMA) from None
    stripped = strip_mod.strip_rawdata(model)
    strip_mod.audit_privacy(stripped)
    out = args.out or str(args.model).replace(strip_mod.FULL_SUFFIX, "") + strip_mod.SUFFIX
    strip_mod.save(stripped, out)
    print(out)
    return EXIT_OK


def _predictions(models, grid, term, intercept):
    return [predict_term(m, term, grid, include_intercept=intercept) for m in models]


def cmd_meta(args) -> int:
    if len(args.models) < 2:
        raise CliError("meta needs at least two model files")
    models = _load_stripped(args.models)
    grid = parse_grid(args.grid)
    preds = _predictions(models, grid, args.term, args.intercept)
    meta = pool_pointwise(preds, args.method.upper(), args.range_restrict)
    het = cochran_q(preds, range_restrict=args.range_restrict, alpha=args.alpha)
    dom = dominance(meta)
    out = Path(args.out_dir)
    slug = _slug(args.term)
    written = [
        _write(out / f"meta_{slug}.csv",
               meta.to_frame(args.alpha).to_csv(index=False, float_format=CSV_FLOAT, lineterminator="\n")),
        _write(out / f"meta_{slug}.svg", meta_figure(meta, args.alpha).to_svg()),
        _write(out / f"dominance_{slug}.csv",
               dom.to_frame().to_csv(index=False, float_format=CSV_FLOAT, lineterminator="\n")),
        _write(out / f"dominance_{slug}.svg", dominance_figure(dom).to_svg()),
        _write(out / f"heterogeneity_{slug}.csv",
               het.to_frame().to_csv(index=False, float_format=CSV_FLOAT, lineterminator="\n")),
        _write(out / f"heterogeneity_{slug}.svg", heterogeneity_figure(het).to_svg()),
    ]
    if args.combine:
        try:
            p = meta_pvalue(models, args.term, args.combine)
        except KeyError:
            raise CliError(f"no p-value stored for {args.term!r}") from None
        written.append(_write(out / f"pvalue_{slug}.json",
                              json.dumps({"term": args.term, "method": args.combine, "p": p},
                                         sort_keys=True) + "\n"))
    for path in written:
        print(path)
    return EXIT_OK


def cmd_plot(args) -> int:
    models = _load_stripped(args.models)
    grid = parse_grid(args.grid)
    preds = _predictions(models, grid, args.term, args.intercept)
    from scipy import stats

    z = stats.norm.ppf(1 - args.alpha / 2)
    figs, overlay = [], Figure(title=args.term, xlabel="", ylabel="estimate")
    name = next((c for c in grid.columns if grid[c].nunique() > 1), grid.columns[0])
    x = grid[name].to_numpy(dtype=float) if grid[name].dtype.kind in "fiu" else np.arange(len(grid))
    overlay.xlabel = name
    for i, p in enumerate(preds):
        color = PALETTE[i % len(PALETTE)]
        fig = Figure(title=p.cohort_label, xlabel=name, ylabel=args.term, width=360, height=260)
        fig.band(x, p.fit - z * p.se, p.fit + z * p.se, color=color)
        fig.line(x, p.fit, color=color)
        figs.append(fig)
        overlay.line(x, np.where(p.in_range, p.fit, np.nan), label=p.cohort_label, color=color)
    out = Path(args.out_dir)
    slug = _slug(args.term)
    for path in (_write(out / f"cohorts_{slug}.svg", panel(figs, ncol=3)),
                 _write(out / f"overlay_{slug}.svg", overlay.to_svg())):
        print(path)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from dataclasses import replace

    from .sim import load_scenario, run_scenario

    try:
        scenario = load_scenario(args.config)
    except FileNotFoundError:
        raise CliError(f"{args.config}: no such file") from None
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise CliError(f"{args.config}: bad scenario config: {exc}") from None
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    if args.replications is not None:
        scenario = replace(scenario, replications=args.replications)
    try:
        report = run_scenario(scenario)
    except ReplicationError as exc:
        raise CliError(str(exc), EXIT_SIMULATION) from None
    for path in report.write(args.out_dir):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metagam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to one cohort's CSV data")
    p.add_argument("csv")
    p.add_argument("--formula", required=True)
    p.add_argument("--out", required=True, help="full model file (local only), e.g. cohort.gam.json")
    p.add_argument("--strip-out", help="also write the shareable stripped model here")
    p.add_argument("--knots", action="append", metavar="VAR=b0,k1,...,bN",
                   help="explicit knots (boundaries first and last); repeatable")
    p.add_argument("--knot-rule", choices=("quantile", "uniform"), default="quantile")
    p.add_argument("--refine", action="store_true", help="continuous GCV refinement")
    p.add_argument("--cohort-label")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("strip", help="remove individual-level data from a fitted model")
    p.add_argument("model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_strip)

    for name, func, help_ in (("meta", cmd_meta, "pointwise meta-analysis of stripped models"),
                              ("plot", cmd_plot, "plot one term from each stripped model")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("models", nargs="+")
        p.add_argument("--grid", required=True, help='e.g. "Age=20:90:0.1,PSQI=1,Sex=Female"')
        p.add_argument("--term", required=True)
        p.add_argument("--intercept", action="store_true")
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--out-dir", default=".")
        if name == "meta":
            p.add_argument("--method", choices=("fe", "dl", "FE", "DL"), default="fe")
            p.add_argument("--range-restrict", action="store_true")
            p.add_argument("--combine", choices=PVALUE_METHODS,
                           help="also combine the cohorts' p-values for the term")
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", help="run a simulation scenario from a JSON config")
    p.add_argument("config")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "alpha", 0.5) is not None and not 0 < getattr(args, "alpha", 0.5) < 1:
        print("metagam: error: --alpha must lie in (0, 1)", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except CliError as exc:
        print(f"metagam: error: {exc}", file=sys.stderr)
        return exc.code
    except RankDeficientDesign as exc:
        print(f"metagam: error: rank-deficient design: {exc}", file=sys.stderr)
        return EXIT_RANK
    except MissingColumn as exc:
        print(f"metagam: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FormulaError, MetaGamError, ValueError) as exc:
        if isinstance(exc, PrivacyViolation):
            print(f"metagam: error: privacy audit failed: {exc}", file=sys.stderr)
            return EXIT_SCHEMA
        print(f"metagam: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Experiment reports: tables, CSV output and summary figures."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd

from ..plotting import PALETTE, Figure, panel

FLOAT_FORMAT = "%.10g"


@dataclass
class ExperimentReport:
    """Outcome of a simulation run.

    ``tables`` hold everything needed for the figures. ``runtime_seconds``
    is kept out of the CSV files so that reruns with the same seed write
    identical bytes.
    """

    kind: str
    config: dict
    tables: Dict[str, pd.DataFrame]
    runtime_seconds: float = field(default=0.0, compare=False)

    def __eq__(self, other):
        if not isinstance(other, ExperimentReport):
            return NotImplemented
        return (self.kind == other.kind and self.config == other.config
                and self.tables.keys() == other.tables.keys()
                and all(self.tables[k].equals(other.tables[k]) for k in self.tables))

    def csv_text(self, name: str) -> str:
        return self.tables[name].to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    def figures(self) -> Dict[str, str]:
        if self.kind == "estimation":
            return {"estimation_fits.svg": estimation_figure(self)}
        return {"power_qq.svg": qq_figure(self), "power_curves.svg": power_curve_figure(self)}

    def write(self, out_dir) -> List[Path]:
        """Write ``<kind>_<table>.csv`` files, the figures, the config echo and run info."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name in sorted(self.tables):
            path = out / f"{self.kind}_{name}.csv"
            path.write_text(self.csv_text(name), encoding="utf-8")
            written.append(path)
        for name, svg in self.figures().items():
            path = out / name
            path.write_text(svg, encoding="utf-8")
            written.append(path)
        path = out / f"{self.kind}_config.json"
        path.write_text(json.dumps(self.config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
        path = out / f"{self.kind}_run_info.json"
        path.write_text(json.dumps({"runtime_seconds": round(self.runtime_seconds, 3)}) + "\n",
                        encoding="utf-8")
        written.append(path)
        return written


def estimation_figure(report: ExperimentReport) -> str:
    """Mean fitted curves per scheme over the true function, one panel per noise level and term."""
    fits = report.tables["mean_fits"]
    figs = []
    for (sigma, term), g in fits.groupby(["sigma", "term"], sort=False):
        fig = Figure(title=f"{term}, sigma = {sigma:g}", xlabel="x", ylabel=term, width=360, height=260)
        first = g[g.scheme == g.scheme.iloc[0]]
        fig.line(first.x, first.truth, label="truth", color="#000000", dash=True)
        for i, (scheme, gs) in enumerate(g.groupby("scheme", sort=False)):
            fig.line(gs.x, gs.mean_fit, label=scheme, color=PALETTE[i % len(PALETTE)], width=1.2)
        figs.append(fig)
    return panel(figs, ncol=4)


def qq_figure(report: ExperimentReport) -> str:
    """Uniform QQ plots of the p-values, one panel per setting."""
    pv = report.tables["pvalues"]
    figs = []
    for (n, sigma), g in pv.groupby(["n_total", "sigma"], sort=False):
        fig = Figure(title=f"n = {n}, sigma = {sigma:g}", xlabel="uniform quantile",
                     ylabel="p-value quantile", xlim=(0.0, 1.0), ylim=(0.0, 1.0))
        expected = (np.arange(len(g)) + 0.5) / len(g)
        fig.line([0, 1], [0, 1], color="#999999")
        for i, method in enumerate(("mega", "single", "stouffer", "tippett")):
            fig.line(expected, np.sort(g[method].to_numpy()), label=method, color=PALETTE[i])
        figs.append(fig)
    return panel(figs, ncol=2)


def power_curve_figure(report: ExperimentReport) -> str:
    """Rejection rate against noise level (and against sample size when it varies)."""
    rej = report.tables["rejection"]
    figs = []
    for axis, other in (("sigma", "n_total"), ("n_total", "sigma")):
        if rej[axis].nunique() < 2 and figs:
            continue
        for value, g in rej.groupby(other, sort=False):
            fig = Figure(title=f"{other} = {value:g}", xlabel=axis, ylabel="rejection rate",
                         ylim=(0.0, 1.0))
            for i, (method, gm) in enumerate(g.groupby("method", sort=False)):
                gm = gm.sort_values(axis)
                fig.line(gm[axis], gm.rejection_rate, label=method, color=PALETTE[i % len(PALETTE)])
                fig.points(gm[axis], gm.rejection_rate, color=PALETTE[i % len(PALETTE)])
            figs.append(fig)
    return panel(figs, ncol=2)

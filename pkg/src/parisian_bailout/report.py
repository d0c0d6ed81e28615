"""Value tables and plain-text summaries."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

VALUE_COLUMNS = ("x", "state", "V", "dV", "above_barrier")


def _rows_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in row])


def aux_table(sol, n_points: int):
    b = sol.b_star
    x = np.linspace(0.0, b + 10.0 / sol.problem.up.phi_q, n_points)
    v, dv = sol.value.value(x), sol.value.derivative(x)
    return [(float(xi), 0, float(vi), float(di), int(xi > b)) for xi, vi, di in zip(x, v, dv)]


def regime_table(sol):
    grid = sol.V.grid
    rows = []
    for i in range(sol.V.values.shape[0]):
        vals = sol.V.values[i]
        dv = np.gradient(vals, grid)
        for xi, vi, di in zip(grid, vals, dv):
            rows.append((float(xi), i, float(vi), float(di), int(xi > sol.b_star[i])))
    return rows


def aux_summary(sol) -> str:
    p = sol.problem
    lines = [
        "auxiliary problem",
        f"  q = {p.q!r}, lambda = {p.lam!r}, theta = {p.theta!r}, r = {p.r!r}, beta = {p.beta!r}",
        f"  b* = {sol.b_star!r}",
        f"  asymptotic slope = {p.asymptotic_slope()!r}",
    ]
    for k, v in sol.diagnostics.items():
        lines.append(f"  {k} = {v!r}")
    return "\n".join(lines) + "\n"


def regime_summary(m, sol) -> str:
    lines = [
        "regime-switching problem",
        f"  states = {m.n_states}, r = {m.r!r}, beta = {m.beta!r}",
        f"  K = {sol.K!r}",
        f"  iterations = {sol.iterations}",
        f"  error bound (a priori) = {sol.error_bound!r}",
        f"  error bound (last step) = {sol.posterior_bound!r}",
    ]
    for i, b in enumerate(sol.b_star):
        lines.append(f"  b*[{i}] = {float(b)!r}")
    return "\n".join(lines) + "\n"


def emit_report(sol, out_dir, model=None, n_points: int = 201) -> list[Path]:
    """Write values.csv and summary.txt; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table, summary = out / "values.csv", out / "summary.txt"
    if model is None:
        _rows_csv(table, VALUE_COLUMNS, aux_table(sol, n_points))
        summary.write_text(aux_summary(sol))
    else:
        _rows_csv(table, VALUE_COLUMNS, regime_table(sol))
        summary.write_text(regime_summary(model, sol))
    return [table, summary]

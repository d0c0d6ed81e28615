"""Command-line entry point.

    parisian-bailout solve-aux    --config F [--out DIR]
    parisian-bailout solve-regime --config F [--out DIR]
    parisian-bailout simulate     --config F --quantity Q [--out DIR]
    parisian-bailout verify       --config F [--fast] [--out DIR]

Exit status: 0 success, 2 configuration error, 3 no convergence,
4 verification failure, 1 anything else (I/O errors are shown verbatim).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from . import fluctuation as fl
from . import mc_oracle as mc
from .aux_solver import resolvent_g, resolvent_g_tilde, solve
from .config import ConfigError, RunConfig, load_config
from .regime_solver import ConvergenceError, T_b_apply, norm_D, solve_fixed_point
from .report import emit_report

log = logging.getLogger("parisian_bailout")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_VERIFY = 0, 2, 3, 4
Z_FAIL, Z_WARN = 4.0, 3.0

AUX_QUANTITIES = (
    "npv",
    "resolvent_g",
    "resolvent_g_tilde",
    "fpt_laplace",
    "two_sided",
    "parisian_ruin",
    "reflected_resolvent",
    "reflected_resolvent_inf",
)
REGIME_QUANTITIES = ("regime_value", "dpp")


@dataclass
class Check:
    name: str
    status: str  # PASS, WARN or FAIL
    detail: str

    def line(self) -> str:
        return f"{self.status:4s}  {self.name}: {self.detail}"


def _tol_check(name, err, tol) -> Check:
    return Check(name, "PASS" if err <= tol else "FAIL", f"{err:.3e} (tolerance {tol:.1e})")


def _z_check(row) -> Check:
    z = abs(row["z_score"])
    status = "FAIL" if z > Z_FAIL else "WARN" if z > Z_WARN else "PASS"
    name = f"{row['quantity']}(x0={row['x0']:.4g}, state={row['state']})"
    return Check(name, status, f"mc {row['mean']:.6g} ± {row['std_error']:.2g} vs {row['formula_value']:.6g}, z = {row['z_score']:+.2f}")


# ---------------------------------------------------------------------------
# single-quantity simulation
# ---------------------------------------------------------------------------

def _aux_points(cfg: RunConfig, b: float) -> list[float]:
    if cfg.oracle.points is not None:
        return list(cfg.oracle.points)
    return [0.0, 0.5 * b, b, b + 1.0] if b > 0 else [0.0, 0.5, 1.0]


def _simulate_aux(cfg: RunConfig, quantity: str, sol, pc, points=None) -> list[dict]:
    p, b = sol.problem, sol.b_star
    model, q, r = p.model, p.q, p.r
    h = cfg.oracle.test_function.function()
    pts = _aux_points(cfg, b) if points is None else points
    rows = []
    for x in pts:
        if quantity == "npv":
            est, ref = mc.estimate_npv(p, b, x, pc), sol.value.value(x)
        elif quantity == "resolvent_g":
            est, ref = mc.estimate_resolvent_g(model, q, r, b, x, h, pc), resolvent_g(model, q, r, b, x, h)
        elif quantity == "resolvent_g_tilde":
            if x < 0:
                continue
            est, ref = mc.estimate_resolvent_g_tilde(model, q, r, b, x, h, pc), resolvent_g_tilde(model, q, r, b, x, h)
        elif quantity == "fpt_laplace":
            if x < 0:
                continue
            est, ref = mc.estimate_fpt_laplace(model, q, x, pc), fl.fpt_laplace(model, q, x)
        elif quantity == "two_sided":
            top = max(b, 1.0)
            if not 0 <= x <= top:
                continue
            est, ref = mc.estimate_two_sided(model, q, x, top, pc), fl.two_sided_exit(model, q, x, top)
        elif quantity == "parisian_ruin":
            est, ref = mc.estimate_parisian_ruin(model, q, r, b, x, pc), fl.parisian_ruin(model, q, r, b, x)
        elif quantity == "reflected_resolvent":
            top = max(b, 1.0) + 1.0
            if not 0 <= x <= top:
                continue
            est = mc.estimate_reflected_resolvent(model, q, top, x, h, pc)
            ref = fl.reflected_resolvent(model, q, top, x, h)
        elif quantity == "reflected_resolvent_inf":
            if x < 0:
                continue
            est = mc.estimate_reflected_resolvent(model, q, math.inf, x, h, pc)
            ref = fl.reflected_resolvent(model, q, math.inf, x, h)
        else:
            raise ConfigError([f"quantity {quantity!r} is not available for an aux problem"])
        rows.append(mc.estimate_row(quantity, x, 0, est, float(ref)))
    return rows


def _regime_points(cfg: RunConfig, b: float) -> list[float]:
    if cfg.oracle.points is not None:
        return list(cfg.oracle.points)
    return [0.0, 0.5 * b, b, b + 0.5, b + 2.0]


def _simulate_regime(cfg: RunConfig, quantity: str, m, sol, pc, points_per_state=None) -> list[dict]:
    if quantity not in REGIME_QUANTITIES:
        raise ConfigError([f"quantity {quantity!r} is not available for a regime problem"])
    rows = []
    for i in range(m.n_states):
        b = float(sol.b_star[i])
        pts = _regime_points(cfg, b) if points_per_state is None else points_per_state(b)
        for x in pts:
            if quantity == "regime_value":
                est = mc.estimate_regime_value(m, sol.b_star, x, i, pc)
            else:
                est = mc.estimate_dpp(m, sol.b_star, sol.V, x, i, pc)
            rows.append(mc.estimate_row(quantity, x, i, est, float(sol.V(x, i))))
    return rows


def _solve_regime(cfg: RunConfig, m):
    s = cfg.solver
    grid = None
    if s.x_max is not None:
        grid = np.linspace(0.0, s.x_max, s.grid_points)
    return solve_fixed_point(m, tol=s.tol, max_iter=s.max_iter, grid=grid, n_points=s.grid_points)


# ---------------------------------------------------------------------------
# verification suite
# ---------------------------------------------------------------------------

def _verify_aux(cfg: RunConfig, fast: bool) -> tuple[list[Check], list[dict]]:
    p = cfg.build()
    sol = solve(p)
    ctx = p.ctx
    checks = []
    clos = max(abs(v) for v in ctx.closure_errors().values())
    checks.append(_tol_check("scale-function sum rules", clos, 1e-10))
    worst = 0.0
    for th in ctx.phi_q + np.array([0.2, 1.0, 3.0]):
        val = quad(lambda x: math.exp(-th * x) * ctx.W(x), 0, 50.0 / (th - ctx.phi_q), limit=400, epsabs=0, epsrel=1e-12)[0]
        ref = 1.0 / (float(p.model.psi(th)) - ctx.q)
        worst = max(worst, abs(val / ref - 1))
    checks.append(_tol_check("Laplace transform of W", worst, 1e-7))
    xs = np.linspace(0.0, 3.0, 7)
    diff = np.max(np.abs(ctx.Z_phi(xs, p.r) - ctx.Z_phi_first_form(xs, p.r)) / np.maximum(1, np.abs(ctx.Z_phi(xs, p.r))))
    checks.append(_tol_check("two forms of the shifted Z", float(diff), 1e-8))
    d = sol.diagnostics
    b = sol.b_star
    if b > 0:
        checks.append(_tol_check("smooth fit v'(b*) = 1", abs(d["v'(b*)"] - 1.0), 1e-6))
    else:
        slope0 = d["v'(b*)"]
        ok = slope0 <= 1 + 1e-8
        checks.append(Check("zero barrier: v'(0) ≤ 1", "PASS" if ok else "FAIL", f"v'(0) = {slope0:.6g}"))
    lo_ok = d["slope_min_below"] is None or (d["slope_min_below"] >= 1 - 1e-8 and d["slope_max_below"] <= p.beta + 1e-8)
    hi_ok = d["slope_min_above"] >= -1e-8 and d["slope_max_above"] <= 1 + 1e-8
    checks.append(Check("slope bounds", "PASS" if lo_ok and hi_ok else "FAIL",
                        f"below [{d['slope_min_below']}, {d['slope_max_below']}], above [{d['slope_min_above']:.6g}, {d['slope_max_above']:.6g}]"))
    checks.append(_tol_check("growing-mode residual", d["growing_mode_residual"], 1e-8))
    if "hjb_residual_sup" in d:
        scale = p.theta * max(1.0, abs(float(sol.value.value(b + 10.0 / p.up.phi_q))))
        checks.append(_tol_check("HJB residual / (θ·scale)", d["hjb_residual_sup"] / scale, 1e-4))
    else:
        checks.append(Check("HJB residual", "FAIL", d.get("hjb_residual_error", "not computed")))

    n = 20_000 if fast else cfg.oracle.n_paths
    pc = cfg.oracle.path_config(n_paths=n)
    qty = ("npv", "resolvent_g", "parisian_ruin") if fast else AUX_QUANTITIES
    pts = [b] if fast else None
    rows = []
    for name in qty:
        rows += _simulate_aux(cfg, name, sol, pc, pts)
    checks += [_z_check(r) for r in rows]
    return checks, rows


def _verify_regime(cfg: RunConfig, fast: bool) -> tuple[list[Check], list[dict]]:
    m = cfg.build()
    sol = _solve_regime(cfg, m)
    checks = []
    rat = sol.ratios[1:]
    worst = max(rat) if rat else 0.0
    checks.append(Check("contraction ratios ≤ K + 1e-3", "PASS" if worst <= sol.K + 1e-3 else "FAIL", f"max {worst:.6f}, K = {sol.K:.6f}"))
    T = T_b_apply(m, sol.V, sol.b_star)
    checks.append(_tol_check("fixed point V = T_b* V", norm_D(T, sol.V), max(cfg.solver.tol, 1e-9)))
    dv = np.diff(sol.V.values, axis=1)
    dx = np.diff(sol.V.grid)[None, :]
    lip = max(float(-dv.min()), float((dv - m.beta * dx).max()), 0.0)
    checks.append(_tol_check("Lipschitz 0 ≤ ΔV ≤ βΔx", lip, 1e-8))
    n = 20_000 if fast else cfg.oracle.n_paths
    pc = cfg.oracle.path_config(n_paths=n)
    per_state = (lambda b: [b]) if fast else None
    rows = _simulate_regime(cfg, "regime_value", m, sol, pc, per_state)
    rows += _simulate_regime(cfg, "dpp", m, sol, pc, lambda b: [0.0, b])
    checks += [_z_check(r) for r in rows]
    return checks, rows


# ---------------------------------------------------------------------------

def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve_aux(args, cfg: RunConfig) -> int:
    if cfg.problem != "aux":
        raise ConfigError(["solve-aux needs problem: aux"])
    sol = solve(cfg.build())
    paths = emit_report(sol, _out_dir(args, cfg), n_points=cfg.solver.table_points)
    print(paths[1].read_text(), end="")
    return EXIT_OK


def cmd_solve_regime(args, cfg: RunConfig) -> int:
    if cfg.problem != "regime":
        raise ConfigError(["solve-regime needs problem: regime"])
    m = cfg.build()
    sol = _solve_regime(cfg, m)
    paths = emit_report(sol, _out_dir(args, cfg), model=m)
    print(paths[1].read_text(), end="")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    pc = cfg.oracle.path_config()
    if cfg.problem == "aux":
        rows = _simulate_aux(cfg, args.quantity, solve(cfg.build()), pc)
    else:
        m = cfg.build()
        rows = _simulate_regime(cfg, args.quantity, m, _solve_regime(cfg, m), pc)
    path = _out_dir(args, cfg) / f"simulate_{args.quantity}.csv"
    mc.write_csv(rows, path)
    for r in rows:
        print(_z_check(r).line())
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify(args, cfg: RunConfig) -> int:
    checks, rows = (_verify_aux if cfg.problem == "aux" else _verify_regime)(cfg, args.fast)
    out = _out_dir(args, cfg)
    mc.write_csv(rows, out / "verify_mc.csv")
    for c in checks:
        print(c.line())
    n_fail = sum(c.status == "FAIL" for c in checks)
    n_warn = sum(c.status == "WARN" for c in checks)
    print(f"{len(checks) - n_fail - n_warn} passed, {n_warn} warnings, {n_fail} failed")
    return EXIT_VERIFY if n_fail else EXIT_OK


COMMANDS = {
    "solve-aux": cmd_solve_aux,
    "solve-regime": cmd_solve_regime,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parisian-bailout", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=None)
        if name == "simulate":
            sp.add_argument("--quantity", required=True, choices=AUX_QUANTITIES + REGIME_QUANTITIES)
        if name == "verify":
            sp.add_argument("--fast", action="store_true", help="20k paths and fewer points")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence failure: {exc} (error bound {exc.error_bound:.3e})", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

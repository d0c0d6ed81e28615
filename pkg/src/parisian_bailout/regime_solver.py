"""Markov-modulated problem solved by value iteration on the Γ operator.

Each Γ step solves one auxiliary single-regime problem per state with the
terminal payoff f̂(·, i), the expected value just after a regime switch.
The iteration contracts with constant K = max_i λ_i/θ_i in the sup norm.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from .aux_solver import AuxProblem
from .levy_model import LevyModel, mean_drift
from .piecewise import PayoffFn, PiecewiseLinear, forward_filter

log = logging.getLogger(__name__)

__all__ = [
    "SwitchJump",
    "RegimeModel",
    "ValueIterate",
    "RegimeSolution",
    "ConvergenceError",
    "DomainViolation",
    "hat_transform",
    "T_b_apply",
    "gamma_apply",
    "solve_fixed_point",
    "norm_D",
    "norm_growth",
    "stationary_slopes",
]

WORKERS_ENV = "PARISIAN_BAILOUT_WORKERS"


class ConvergenceError(RuntimeError):
    def __init__(self, msg, error_bound=math.inf, iterate=None):
        super().__init__(msg)
        self.error_bound = error_bound
        self.iterate = iterate


class DomainViolation(ValueError):
    """An iterate left the admissible class (concave, slopes in range)."""


# ---------------------------------------------------------------------------
# switch jumps: distributions of J_ij on (−∞, 0], stored as magnitudes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SwitchJump:
    kind: str = "zero"  # "zero", "exponential" or "discrete"
    rate: float | None = None
    sizes: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "zero":
            return
        if self.kind == "exponential":
            if self.rate is None or not self.rate > 0:
                raise ValueError("exponential switch jump needs a positive rate")
            return
        if self.kind == "discrete":
            s, p = np.asarray(self.sizes, float), np.asarray(self.probs, float)
            if s.size == 0 or s.shape != p.shape:
                raise ValueError("discrete switch jump needs sizes and probs of equal length")
            if np.any(s < 0) or np.any(p <= 0) or abs(p.sum() - 1) > 1e-12:
                raise ValueError("discrete switch jump: sizes ≥ 0, probs > 0 summing to 1")
            object.__setattr__(self, "sizes", tuple(map(float, s)))
            object.__setattr__(self, "probs", tuple(map(float, p)))
            return
        raise ValueError(f"unknown switch jump kind {self.kind!r}")

    def mean_size(self) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "exponential":
            return 1.0 / self.rate
        return float(np.dot(self.sizes, self.probs))

    def expect(self, f: PiecewiseLinear, beta: float, x) -> np.ndarray:
        """E[f^e(x + J)] with f^e(z) = f(0) + βz for z < 0."""
        x = np.asarray(x, dtype=float)
        f0 = float(f(0.0))
        if self.kind == "zero":
            return f(x)
        if self.kind == "exponential":
            mu = self.rate
            head = mu * forward_filter(f, -mu, 0.0, x)
            return head + np.exp(-mu * x) * (f0 - beta / mu)
        out = np.zeros_like(x)
        for y, pr in zip(self.sizes, self.probs):
            z = x - y
            out += pr * np.where(z >= 0, f(np.maximum(z, 0.0)), f0 + beta * z)
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(n)
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, n)
        idx = rng.choice(len(self.sizes), size=n, p=self.probs)
        return np.asarray(self.sizes)[idx]


@dataclass(frozen=True)
class RegimeModel:
    generator: np.ndarray
    models: tuple[LevyModel, ...]
    discounts: tuple[float, ...]
    r: float
    beta: float
    switch_jumps: dict = field(default_factory=dict)  # (i, j) -> SwitchJump

    def __post_init__(self):
        Q = np.asarray(self.generator, dtype=float)
        object.__setattr__(self, "generator", Q)
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise ValueError("generator must be square")
        if len(self.models) != n or len(self.discounts) != n:
            raise ValueError("need one model and one discount per state")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0):
            raise ValueError("generator off-diagonal rates must be nonnegative")
        rows = Q.sum(axis=1)
        if np.any(np.abs(rows) > 1e-10 * (1 + np.abs(Q).sum(axis=1))):
            bad = int(np.argmax(np.abs(rows)))
            raise ValueError(f"generator row {bad} sums to {rows[bad]:.3g}, not 0")
        if n >= 2 and np.any(off.sum(axis=1) <= 0):
            raise ValueError("every state needs a positive switching rate")
        if any(not q > 0 for q in self.discounts):
            raise ValueError("discount rates must be positive")
        if not self.r > 0:
            raise ValueError("decision rate r must be positive")
        if not self.beta > 1:
            raise ValueError("β must exceed 1")
        for m in self.models:
            if not math.isfinite(mean_drift(m)):
                raise ValueError("ψ'(0+) must be finite in every state")
        jumps = {}
        for (i, j), jmp in dict(self.switch_jumps).items():
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ValueError(f"switch jump for invalid pair ({i}, {j})")
            if not isinstance(jmp, SwitchJump):
                jmp = SwitchJump(**jmp)
            if not math.isfinite(jmp.mean_size()):
                raise ValueError("switch jumps must have finite mean")
            jumps[(int(i), int(j))] = jmp
        object.__setattr__(self, "switch_jumps", jumps)

    @property
    def n_states(self) -> int:
        return self.generator.shape[0]

    def rate_out(self, i: int) -> float:
        return float(-self.generator[i, i])

    def rate(self, i, j) -> float:
        return float(self.generator[i, j])

    def theta(self, i: int) -> float:
        return self.discounts[i] + self.rate_out(i)

    def jump(self, i, j) -> SwitchJump:
        return self.switch_jumps.get((i, j), SwitchJump())

    @property
    def K(self) -> float:
        return max(self.rate_out(i) / self.theta(i) for i in range(self.n_states))

    def aux_problem(self, i: int, w: PayoffFn) -> AuxProblem:
        return AuxProblem(self.models[i], self.discounts[i], self.rate_out(i), self.r, self.beta, w)


# ---------------------------------------------------------------------------
# iterates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValueIterate:
    grid: np.ndarray
    values: np.ndarray  # (N, G)
    slopes: np.ndarray  # terminal slope per state
    barriers: np.ndarray | None = None
    index: int = 0

    def slice(self, i: int) -> PiecewiseLinear:
        return PiecewiseLinear.from_points(self.grid, self.values[i], float(self.slopes[i]))

    def __call__(self, x, i: int):
        return self.slice(i)(x)

    def check_domain(self, beta: float, tol: float = 1e-7) -> None:
        for i, v in enumerate(self.values):
            d = np.diff(v) / np.diff(self.grid)
            d = np.append(d, self.slopes[i])
            scale = 1.0 + np.abs(d)
            if np.any(np.diff(d) > tol * scale[1:]):
                raise DomainViolation(f"state {i}: iterate not concave")
            if d[0] > beta + tol or np.any(d < -tol):
                raise DomainViolation(f"state {i}: slopes leave [0, β]")
            if not -tol <= self.slopes[i] <= 1 + tol:
                raise DomainViolation(f"state {i}: terminal slope {self.slopes[i]} outside [0, 1]")


def norm_D(f: ValueIterate, g: ValueIterate) -> float:
    """max_i sup_x |f − g|; infinite when terminal slopes differ."""
    if f.grid.shape != g.grid.shape or np.any(f.grid != g.grid):
        raise ValueError("iterates live on different grids")
    if np.any(np.abs(f.slopes - g.slopes) > 1e-12):
        return math.inf
    return float(np.max(np.abs(f.values - g.values)))


def norm_growth(f: ValueIterate) -> float:
    """max_i sup_x |f(x, i)|/(1 + x), including the affine tail."""
    on_grid = np.max(np.abs(f.values) / (1.0 + f.grid[None, :]))
    return float(max(on_grid, np.max(np.abs(f.slopes))))


def stationary_slopes(m: RegimeModel) -> np.ndarray:
    """Solve (θ_i + r) s_i = r + Σ_{j≠i} λ_ij s_j (the terminal slopes of V)."""
    n = m.n_states
    M = np.zeros((n, n))
    for i in range(n):
        M[i, i] = m.theta(i) + m.r
        for j in range(n):
            if j != i:
                M[i, j] -= m.rate(i, j)
    return np.linalg.solve(M, np.full(n, m.r))


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def _concave_fix(x, y, slope_end, tol=1e-10, abort=1e-7):
    d = np.diff(y) / np.diff(x)
    d = np.append(d, slope_end)
    rise = np.diff(d)
    worst = float(rise.max()) if rise.size else 0.0
    if worst <= tol:
        return y
    if worst > abort:
        raise DomainViolation(f"f̂ concavity violated by {worst:.3g}")
    w = np.append(np.diff(x), 1e12)  # keep the terminal slope fixed
    res = isotonic_regression(d, weights=w, increasing=False)
    d2 = res.x
    return np.concatenate([[y[0]], y[0] + np.cumsum(d2[:-1] * np.diff(x))])


def hat_transform(m: RegimeModel, f: ValueIterate, i: int) -> PayoffFn:
    """f̂(·, i) sampled on the grid (exact at every grid point)."""
    n = m.n_states
    if not 0 <= i < n:
        raise IndexError(f"state {i} out of range")
    lam_i = m.rate_out(i)
    x = f.grid
    vals = np.zeros_like(x)
    slope = 0.0
    for j in range(n):
        if j == i or m.rate(i, j) == 0:
            continue
        wgt = m.rate(i, j) / lam_i
        vals += wgt * m.jump(i, j).expect(f.slice(j), m.beta, x)
        slope += wgt * f.slopes[j]
    vals = _concave_fix(x, vals, slope)
    return PayoffFn(x, vals, terminal_slope=slope, beta=m.beta, tol=1e-7)


def _workers(n_jobs: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    k = int(env) if env else 1
    return max(1, min(k, n_jobs))


def _per_state(fn, n, workers):
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(n)))


def _apply(m: RegimeModel, f: ValueIterate, b=None, workers=None):
    n = m.n_states

    def one(i):
        w = hat_transform(m, f, i)
        p = m.aux_problem(i, w)
        bi = p.optimal_barrier() if b is None else float(b[i])
        bv = p.at(bi)
        return bi, bv.value(f.grid), p.asymptotic_slope()

    out = _per_state(one, n, workers or _workers(n))
    bars = np.array([o[0] for o in out])
    vals = np.vstack([o[1] for o in out])
    slopes = np.array([o[2] for o in out])
    return ValueIterate(f.grid, vals, slopes, bars, f.index + 1)


def T_b_apply(m: RegimeModel, f: ValueIterate, b, workers=None) -> ValueIterate:
    b = np.asarray(b, dtype=float)
    if b.shape != (m.n_states,) or np.any(b < 0):
        raise ValueError("need one nonnegative barrier per state")
    return _apply(m, f, b, workers)


def gamma_apply(m: RegimeModel, f: ValueIterate, workers=None):
    g = _apply(m, f, None, workers)
    return g, g.barriers


# ---------------------------------------------------------------------------

@dataclass
class RegimeSolution:
    b_star: np.ndarray
    V: ValueIterate
    error_bound: float
    iterations: int
    K: float
    posterior_bound: float = math.inf
    differences: list = field(default_factory=list)
    barrier_history: list = field(default_factory=list)

    @property
    def ratios(self) -> list[float]:
        d = self.differences
        return [d[k + 1] / d[k] for k in range(len(d) - 1) if d[k] > 0]


def linear_iterate(m: RegimeModel, grid: np.ndarray) -> ValueIterate:
    s = stationary_slopes(m)
    return ValueIterate(grid, s[:, None] * grid[None, :], s.copy())


def default_grid(m: RegimeModel, n_points: int = 2000, x_max: float | None = None) -> np.ndarray:
    if x_max is None:
        phis = [AuxProblem(m.models[i], m.discounts[i], m.rate_out(i), m.r, m.beta).up.phi_q
                for i in range(m.n_states)]
        tail = 60.0 / min(phis)
        probe = linear_iterate(m, np.linspace(0.0, tail, max(200, n_points // 4)))
        _, bars = gamma_apply(m, probe)
        x_max = float(np.max(bars)) + tail
    return np.linspace(0.0, x_max, n_points)


def solve_fixed_point(
    m: RegimeModel,
    tol: float = 1e-8,
    max_iter: int = 500,
    grid: np.ndarray | None = None,
    n_points: int = 2000,
    workers: int | None = None,
    check_domain: bool = True,
) -> RegimeSolution:
    """Iterate v_{n+1} = Γ v_n until the contraction tail bound is below tol."""
    if m.n_states == 1:
        return _single_state(m, grid, n_points)
    K = m.K
    grid = default_grid(m, n_points) if grid is None else np.asarray(grid, float)
    v = linear_iterate(m, grid)
    first = None
    diffs, bars_hist = [], []
    stop = tol * (1 - K) / K
    for n in range(1, max_iter + 1):
        nxt, bars = gamma_apply(m, v, workers)
        if check_domain:
            nxt.check_domain(m.beta)
        d = norm_D(nxt, v)
        diffs.append(d)
        bars_hist.append(bars)
        if first is None:
            first = d
        log.debug("iteration %d: |Δ| = %.3e, b = %s", n, d, bars)
        v = nxt
        if d < stop:
            bound = K**n / (1 - K) * first
            return RegimeSolution(bars, v, bound, n, K, K / (1 - K) * d, diffs, bars_hist)
    raise ConvergenceError(
        f"no convergence in {max_iter} iterations (last |Δ| = {diffs[-1]:.3e})",
        error_bound=K / (1 - K) * diffs[-1],
        iterate=v,
    )


def _single_state(m: RegimeModel, grid, n_points) -> RegimeSolution:
    p = AuxProblem(m.models[0], m.discounts[0], 0.0, m.r, m.beta)
    b = p.optimal_barrier()
    if grid is None:
        grid = np.linspace(0.0, b + 60.0 / p.up.phi_q, n_points)
    vals = p.at(b).value(grid)[None, :]
    V = ValueIterate(grid, vals, np.array([p.asymptotic_slope()]), np.array([b]), 1)
    return RegimeSolution(np.array([b]), V, 0.0, 1, 0.0, 0.0)


def dpp_check(m: RegimeModel, sol: RegimeSolution, samples, cfg=None):
    """Monte-Carlo check of V(x, i) against the one-switch localized value.

    ``samples`` is an iterable of (x, i).  Returns a list of rows with the
    estimate, the grid value and the z-score.
    """
    from . import mc_oracle

    rows = []
    for x, i in samples:
        est = mc_oracle.estimate_dpp(m, sol.b_star, sol.V, float(x), int(i), cfg)
        ref = float(sol.V(x, int(i)))
        rows.append({"x0": float(x), "state": int(i), "estimate": est, "value": ref, "z": est.z(ref)})
    return rows

"""Monte-Carlo oracle for the controlled processes.

Paths are simulated event by event.  Between events the Lévy process is a
drifted Brownian motion, and its endpoint and running minimum over an
exponential holding time are drawn jointly and exactly, so classical
reflection at 0 carries no discretization error.  Discounting at rate q is
replaced by killing at an independent Exp(q) time, which makes every
estimator an unbiased plain average.

Only identities that stop at an upper level (two-sided exit, the reflected
resolvent with finite b) need sub-steps of length ``dt``; there the upper
crossing inside a sub-step is detected with the Brownian-bridge maximum
probability.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .levy_model import LevyModel

__all__ = [
    "PathConfig",
    "Estimate",
    "simulate_controlled",
    "estimate_npv",
    "estimate_resolvent_g",
    "estimate_resolvent_g_tilde",
    "estimate_fpt_laplace",
    "estimate_two_sided",
    "estimate_parisian_ruin",
    "estimate_reflected_resolvent",
    "estimate_regime_value",
    "estimate_dpp",
    "dt_halving",
    "write_csv",
    "CSV_COLUMNS",
]

SHARD = 20_000
WORKERS_ENV = "PARISIAN_BAILOUT_WORKERS"
CSV_COLUMNS = ("quantity", "x0", "state", "mean", "std_error", "n_paths", "formula_value", "z_score")


@dataclass(frozen=True)
class PathConfig:
    n_paths: int = 200_000
    seed: int = 20240611
    dt: float | None = None  # None → 1e-3/(q + r) for the sub-stepped identities
    antithetic: bool = False
    workers: int | None = None

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("need at least two paths")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    def step(self, rate: float) -> float:
        return self.dt if self.dt is not None else 1e-3 / rate


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    n: int

    def z(self, ref: float) -> float:
        diff = self.mean - ref
        if self.std_error == 0:
            return 0.0 if abs(diff) < 1e-12 * (1 + abs(ref)) else math.copysign(math.inf, diff)
        return diff / self.std_error

    def within(self, ref: float, k: float = 3.0) -> bool:
        return abs(self.z(ref)) <= k


# ---------------------------------------------------------------------------
# sharded averaging with a deterministic merge
# ---------------------------------------------------------------------------

def _moments(x):
    x = np.asarray(x, dtype=float)
    mu = x.mean(axis=0)
    return x.shape[0], mu, ((x - mu) ** 2).sum(axis=0)


def _merge(a, b):
    na, ma, sa = a
    nb, mb, sb = b
    n = na + nb
    d = mb - ma
    return n, ma + d * nb / n, sa + sb + d * d * na * nb / n


def _tree(parts):
    while len(parts) > 1:
        nxt = [_merge(parts[k], parts[k + 1]) for k in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _run(sampler, cfg: PathConfig) -> Estimate:
    return _run_columns(sampler, cfg)[0]


def _run_columns(sampler, cfg: PathConfig) -> list[Estimate]:
    """Average ``sampler(rng, n, antithetic)`` over fixed-size shards.

    Shard k always gets the k-th spawned substream and the same size, so the
    result does not depend on the worker count.
    """
    sizes = [SHARD] * (cfg.n_paths // SHARD)
    if cfg.n_paths % SHARD:
        sizes.append(cfg.n_paths % SHARD)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes))

    def shard(k):
        rng = np.random.default_rng(seeds[k])
        n = sizes[k]
        if cfg.antithetic:
            n -= n % 2
            s = sampler(rng, n, True)
            m = n // 2
            s = 0.5 * (s[:m] + s[m:])
        else:
            s = sampler(rng, n, False)
        return _moments(s)

    workers = cfg.workers or int(os.environ.get(WORKERS_ENV, "1") or 1)
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(shard, range(len(sizes))))
    else:
        parts = [shard(k) for k in range(len(sizes))]
    n, mu, ss = _tree(parts)
    mu, ss = np.atleast_1d(mu), np.atleast_1d(ss)
    return [Estimate(float(m), math.sqrt(float(v) / (n - 1) / n), n) for m, v in zip(mu, ss)]


class _Draws:
    """Random numbers, optionally shared between the two halves of a batch."""

    def __init__(self, rng, anti):
        self.rng, self.anti = rng, anti

    def _pair(self, fn, k, neg=False):
        if not self.anti:
            return fn(k)
        h = fn(k // 2)
        return np.concatenate([h, -h if neg else h])

    def uniform(self, k):
        return self._pair(self.rng.random, k)

    def exponential(self, k):
        return self._pair(self.rng.standard_exponential, k)

    def normal(self, k):
        return self._pair(self.rng.standard_normal, k, neg=True)


# ---------------------------------------------------------------------------
# the event-driven engine
# ---------------------------------------------------------------------------

def _bm_segment(draw: _Draws, drift, vol, t):
    """Endpoint and running minimum of drift·s + vol·B_s over [0, t]."""
    k = t.size
    if np.all(vol == 0):
        end = drift * t
        return end, np.minimum(end, 0.0)
    end = drift * t + vol * np.sqrt(t) * draw.normal(k)
    e = draw.exponential(k)  # −log U
    low = 0.5 * (end - np.sqrt(end * end + 2.0 * vol * vol * t * e))
    return end, np.minimum(low, np.minimum(end, 0.0))


def _sample_jumps(draw: _Draws, weights, rates, k):
    weights = np.asarray(weights, float)
    rates = np.asarray(rates, float)
    e = draw.exponential(k)
    if weights.size == 1:
        return e / rates[0]
    u = draw.uniform(k)
    idx = np.minimum(np.searchsorted(np.cumsum(weights), u, side="right"), weights.size - 1)
    return e / rates[idx]


@dataclass
class _Regimes:
    """Per-state arrays for the engine (a single state is N = 1)."""

    drift: np.ndarray
    vol: np.ndarray
    jump_rate: np.ndarray
    jump_weights: list
    jump_rates: list
    switch_rate: np.ndarray  # λ_i
    switch_cdf: np.ndarray  # (N, N) cumulative target probabilities
    switch_jumps: dict  # (i, j) -> SwitchJump

    @classmethod
    def single(cls, model: LevyModel):
        return cls(
            np.array([model.drift]),
            np.array([model.volatility]),
            np.array([model.jump_rate]),
            [model.jump_weights],
            [model.jump_rates],
            np.zeros(1),
            np.ones((1, 1)),
            {},
        )

    @classmethod
    def from_regime(cls, m):
        n = m.n_states
        rates = np.array([m.rate_out(i) for i in range(n)])
        P = np.array(m.generator, dtype=float)
        np.fill_diagonal(P, 0.0)
        P = P / np.where(rates > 0, rates, 1.0)[:, None]
        return cls(
            np.array([md.drift for md in m.models]),
            np.array([md.volatility for md in m.models]),
            np.array([md.jump_rate for md in m.models]),
            [md.jump_weights for md in m.models],
            [md.jump_rates for md in m.models],
            rates,
            np.cumsum(P, axis=1),
            dict(m.switch_jumps),
        )


def simulate_controlled(
    regimes,
    kill,
    barrier,
    x0,
    state0,
    n,
    rng,
    *,
    r: float = 0.0,
    reflect: bool = True,
    switching: str = "none",
    antithetic: bool = False,
    beta_ext: float | None = None,
):
    """Run ``n`` paths until killing, ruin (when ``reflect`` is False) or a switch.

    ``kill`` and ``barrier`` are per-state arrays; an infinite barrier or r = 0
    disables dividends.  ``switching`` is "none", "full" or "first" (stop at the
    first switch, recording the post-jump position and the new state).

    Returns a dict of per-path arrays: dividends, injections, x (state at the
    end), state, status (0 killed, 1 ruined, 2 switched).
    """
    if not isinstance(regimes, _Regimes):
        regimes = _Regimes.single(regimes)
    kill = np.atleast_1d(np.asarray(kill, float))
    barrier = np.atleast_1d(np.asarray(barrier, float))
    draw = _Draws(rng, antithetic)
    x = np.full(n, float(x0))
    st = np.full(n, int(state0))
    div = np.zeros(n)
    inj = np.zeros(n)
    status = np.full(n, -1)
    if reflect:
        neg = x < 0
        inj[neg] = -x[neg]
        x[neg] = 0.0
    elif x0 < 0:
        status[:] = 1
    pay_rate = np.where(np.isfinite(barrier), r, 0.0)
    sw = regimes.switch_rate if switching != "none" else np.zeros_like(regimes.switch_rate)
    active = np.flatnonzero(status < 0)
    while active.size:
        s = st[active]
        k = active.size
        tot = kill[s] + pay_rate[s] + regimes.jump_rate[s] + sw[s]
        t = draw.exponential(k) / tot
        end, low = _bm_segment(draw, regimes.drift[s], regimes.vol[s], t)
        xa = x[active]
        if reflect:
            push = np.maximum(0.0, -(xa + low))
            inj[active] += push
            xa = xa + end + push
        else:
            ruined = xa + low < 0
            status[active[ruined]] = 1
            xa = xa + end
        u = draw.uniform(k) * tot
        c1 = kill[s]
        c2 = c1 + pay_rate[s]
        c3 = c2 + regimes.jump_rate[s]
        ev_kill = u < c1
        ev_pay = (u >= c1) & (u < c2)
        ev_jump = (u >= c2) & (u < c3)
        ev_sw = u >= c3
        alive = status[active] < 0
        # dividends from the pre-epoch state
        excess = np.where(ev_pay & alive, np.maximum(xa - barrier[s], 0.0), 0.0)
        div[active] += excess
        xa = xa - excess
        # claims
        if ev_jump.any():
            for i in np.unique(s[ev_jump]):
                sel = ev_jump & (s == i)
                xa[sel] -= _sample_jumps(draw, regimes.jump_weights[i], regimes.jump_rates[i], int(sel.sum()))
        # regime switches
        new_s = s
        if ev_sw.any():
            uu = draw.uniform(k)
            tgt = (uu[:, None] >= regimes.switch_cdf[s]).sum(axis=1)
            tgt = np.minimum(tgt, regimes.switch_cdf.shape[0] - 1)
            for (i, j), jmp in regimes.switch_jumps.items():
                sel = ev_sw & (s == i) & (tgt == j)
                if sel.any():
                    xa[sel] -= jmp.sample(rng, int(sel.sum()))
            new_s = np.where(ev_sw, tgt, s)
        below = xa < 0
        if switching == "first":
            status[active[ev_sw & (status[active] < 0)]] = 2
        if reflect:
            fix = below & ~(ev_sw & (switching == "first"))
            inj[active[fix]] += -xa[fix]
            xa = np.where(fix, 0.0, xa)
        else:
            hit = below & (status[active] < 0)
            status[active[hit]] = 1
        upd = status[active] < 0
        status[active[ev_kill & upd]] = 0
        x[active] = xa
        st[active] = new_s
        active = np.flatnonzero(status < 0)
    return {"dividends": div, "injections": inj, "x": x, "state": st, "status": status}


# ---------------------------------------------------------------------------
# single-regime estimators
# ---------------------------------------------------------------------------

def _cfg(cfg):
    return cfg if cfg is not None else PathConfig()


def estimate_npv(p, b: float, x0: float, cfg: PathConfig | None = None) -> Estimate:
    """v_b(x0) for an :class:`AuxProblem`, killed at θ = q + λ."""
    theta = p.theta
    reg = _Regimes.single(p.model)
    b = math.inf if b is None else b

    def sampler(rng, n, anti):
        out = simulate_controlled(reg, [theta], [b], x0, 0, n, rng, r=p.r, antithetic=anti)
        val = out["dividends"] - p.beta * out["injections"]
        if p.lam > 0:
            val = val + p.lam / theta * p.w(out["x"])
        return val

    return _run(sampler, _cfg(cfg))


def estimate_resolvent_g(model, q, r, b, x0, h, cfg=None) -> Estimate:
    """E_x ∫ e^{−qt} h(U(t)) dt for the periodic-classical reflected process."""
    reg = _Regimes.single(model)

    def sampler(rng, n, anti):
        out = simulate_controlled(reg, [q], [b], x0, 0, n, rng, r=r, antithetic=anti)
        return h(out["x"]) / q

    return _run(sampler, _cfg(cfg))


def estimate_resolvent_g_tilde(model, q, r, b, x0, h, cfg=None) -> Estimate:
    """Same functional as above but killed on going below 0 instead of reflected."""
    reg = _Regimes.single(model)

    def sampler(rng, n, anti):
        out = simulate_controlled(reg, [q], [b], x0, 0, n, rng, r=r, reflect=False)
        return np.where(out["status"] == 0, h(out["x"]), 0.0) / q

    return _run(sampler, _cfg(cfg))


def estimate_fpt_laplace(model, q, x0, cfg=None) -> Estimate:
    """E_x[e^{−q τ_0^−}; τ_0^− < ∞]."""
    if x0 < 0:
        raise ValueError("x0 must be nonnegative")
    reg = _Regimes.single(model)

    def sampler(rng, n, anti):
        out = simulate_controlled(reg, [q], [math.inf], x0, 0, n, rng, reflect=False)
        return (out["status"] == 1).astype(float)

    return _run(sampler, _cfg(cfg))


def estimate_parisian_ruin(model, q, r, b, x0, cfg=None) -> Estimate:
    """E_x[e^{−q τ_0^−(r)}] with Parisian reflection at b and no injections."""
    reg = _Regimes.single(model)

    def sampler(rng, n, anti):
        out = simulate_controlled(reg, [q], [b], x0, 0, n, rng, r=r, reflect=False)
        return (out["status"] == 1).astype(float)

    return _run(sampler, _cfg(cfg))


def _bridge_max_cross(rng, y0, y1, level, var):
    """P(max of a Brownian bridge from y0 to y1 exceeds level), as a draw."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        pr = np.where(var > 0, np.exp(-2.0 * (level - y0) * (level - y1) / var), 0.0)
    pr = np.where((y0 >= level) | (y1 >= level), 1.0, pr)
    return rng.random(y0.size) < pr


def _half_step(rng, gam, eta, s):
    end = gam * s + eta * np.sqrt(s) * rng.standard_normal(s.size)
    low = 0.5 * (end - np.sqrt(end * end + 2.0 * eta * eta * s * rng.standard_exponential(s.size)))
    return end, np.minimum(low, np.minimum(end, 0.0))


def _substepped(model: LevyModel, q, x0, b, dt, n, rng, reflect, paired=False):
    """Paths stopped at the first passage above b, with sub-steps of at most dt.

    Status codes: 0 killed, 1 ruined, 3 crossed b.  With ``paired`` every step
    is split in two halves and the same path is judged twice: with one bridge
    test over the whole step (the dt scheme) and with one per half (the dt/2
    scheme).  Only the upper-crossing decisions differ between the two, so the
    difference of the estimates isolates the step-size effect.

    Returns (status at dt, status at dt/2 or None, position at the end).
    """
    x = np.full(n, float(x0))
    coarse = np.full(n, -1)
    if x0 >= b and (model.volatility > 0 or x0 > b):
        coarse[:] = 3
    fine = coarse.copy() if paired else None
    out_rate = q + model.jump_rate
    rem = rng.standard_exponential(n) / out_rate
    gam, eta = model.drift, model.volatility

    def alive():
        return (coarse < 0) | (fine < 0) if paired else coarse < 0

    active = np.flatnonzero(alive())
    while active.size:
        k = active.size
        r_a = rem[active]
        xa = x[active]
        s = np.minimum(r_a, dt) if eta > 0 else r_a
        if eta == 0:
            y = xa + gam * s
            ruined = np.zeros(k, bool) if reflect else y < 0
            y = np.maximum(y, 0.0) if reflect else y
            cross_c = cross_f = ~ruined & (y >= b)
        elif not paired:
            end, low = _half_step(rng, gam, eta, s)
            if reflect:
                push = np.maximum(0.0, -(xa + low))
                y = xa + end + push
                start = np.where(push > 0, 0.0, xa)
                ruined = np.zeros(k, bool)
            else:
                ruined = xa + low < 0
                y, start = xa + end, xa
            cross_c = ~ruined & _bridge_max_cross(rng, start, y, b, eta * eta * s)
            cross_f = cross_c
        else:
            h = 0.5 * s
            e1, l1 = _half_step(rng, gam, eta, h)
            e2, l2 = _half_step(rng, gam, eta, h)
            if reflect:
                p1 = np.maximum(0.0, -(xa + l1))
                mid = xa + e1 + p1
                p2 = np.maximum(0.0, -(mid + l2))
                y = mid + e2 + p2
                s1 = np.where(p1 > 0, 0.0, xa)
                s2 = np.where(p2 > 0, 0.0, mid)
                sc = np.where(p1 + p2 > 0, 0.0, xa)
                ruined = np.zeros(k, bool)
            else:
                mid = xa + e1
                y = mid + e2
                ruined = np.minimum(xa + l1, mid + l2) < 0
                s1, s2, sc = xa, mid, xa
            var = eta * eta * h
            cross_c = ~ruined & _bridge_max_cross(rng, sc, y, b, 2.0 * var)
            first = _bridge_max_cross(rng, s1, mid, b, var)
            second = _bridge_max_cross(rng, s2, y, b, var)
            cross_f = ~ruined & (first | second)
        stc = coarse[active]
        stc[(stc < 0) & ruined] = 1
        stc[(stc < 0) & cross_c] = 3
        if paired:
            stf = fine[active]
            stf[(stf < 0) & ruined] = 1
            stf[(stf < 0) & cross_f] = 3
        r_a = r_a - s
        event = r_a <= 0
        if event.any():
            is_kill = rng.random(k) * out_rate < q
            jump_now = event & ~is_kill
            if jump_now.any():
                y[jump_now] -= _sample_jumps(
                    _Draws(rng, False), model.jump_weights, model.jump_rates, int(jump_now.sum())
                )
            below = jump_now & (y < 0)
            if reflect:
                y[below] = 0.0
            for st in (stc, stf) if paired else (stc,):
                st[(st < 0) & event & is_kill] = 0
                if not reflect:
                    st[(st < 0) & below] = 1
            r_a = np.where(event, rng.standard_exponential(k) / out_rate, r_a)
        x[active] = y
        rem[active] = r_a
        coarse[active] = stc
        if paired:
            fine[active] = stf
        active = np.flatnonzero(alive())
    return coarse, fine, x


def _substep_functional(kind, h, q):
    if kind == "two_sided":
        return lambda st, x: (st == 3).astype(float)
    if kind == "reflected_resolvent":
        return lambda st, x: np.where(st == 0, h(x), 0.0) / q
    raise ValueError(f"no sub-stepped estimator for {kind!r}")


def estimate_two_sided(model, q, x0, b, cfg=None) -> Estimate:
    """E_x[e^{−q τ_b^+}; τ_b^+ < τ_0^−] for 0 ≤ x0 ≤ b."""
    if not 0 <= x0 <= b:
        raise ValueError("need 0 ≤ x0 ≤ b")
    cfg = _cfg(cfg)
    dt = cfg.step(q)
    f = _substep_functional("two_sided", None, q)

    def sampler(rng, n, anti):
        st, _, x = _substepped(model, q, x0, b, dt, n, rng, reflect=False)
        return f(st, x)

    return _run(sampler, cfg)


def estimate_reflected_resolvent(model, q, b, x0, h, cfg=None) -> Estimate:
    """E_x ∫_0^{κ_b^+} e^{−qt} h(Y_t) dt, Y reflected at 0 (b may be inf)."""
    cfg = _cfg(cfg)
    if math.isinf(b):
        reg = _Regimes.single(model)

        def sampler(rng, n, anti):
            out = simulate_controlled(reg, [q], [math.inf], x0, 0, n, rng, antithetic=anti)
            return h(out["x"]) / q

        return _run(sampler, cfg)
    dt = cfg.step(q)
    f = _substep_functional("reflected_resolvent", h, q)

    def sampler(rng, n, anti):
        st, _, x = _substepped(model, q, x0, b, dt, n, rng, reflect=True)
        return f(st, x)

    return _run(sampler, cfg)


def dt_halving(kind: str, model, q, x0, b, h=None, cfg=None) -> dict:
    """Estimates at dt and dt/2 on shared paths, plus their difference.

    ``kind`` is "two_sided" or "reflected_resolvent".  Returns a dict with
    Estimates under keys "coarse", "fine" and "shift" (fine − coarse).
    """
    cfg = _cfg(cfg)
    dt = cfg.step(q)
    f = _substep_functional(kind, h, q)
    reflect = kind == "reflected_resolvent"

    def sampler(rng, n, anti):
        st_c, st_f, x = _substepped(model, q, x0, b, dt, n, rng, reflect=reflect, paired=True)
        a, c = f(st_c, x), f(st_f, x)
        return np.column_stack([a, c, c - a])

    coarse, fine, shift = _run_columns(sampler, cfg)
    return {"coarse": coarse, "fine": fine, "shift": shift}


# ---------------------------------------------------------------------------
# regime-switching estimators
# ---------------------------------------------------------------------------

def estimate_regime_value(m, b, x0, state, cfg=None) -> Estimate:
    """V_{π^{0,b}}(x0, state) under Markov-modulated periodic-classical barriers."""
    reg = _Regimes.from_regime(m)
    kill = np.array(m.discounts, float)
    b = np.asarray(b, float)

    def sampler(rng, n, anti):
        out = simulate_controlled(reg, kill, b, x0, state, n, rng, r=m.r, switching="full", antithetic=anti)
        return out["dividends"] - m.beta * out["injections"]

    return _run(sampler, _cfg(cfg))


def estimate_dpp(m, b, V, x0, state, cfg=None) -> Estimate:
    """Value localized at the first switch: payoffs before it plus V^e after it."""
    reg = _Regimes.from_regime(m)
    kill = np.array(m.discounts, float)
    b = np.asarray(b, float)
    slices = [V.slice(j) for j in range(m.n_states)]

    def sampler(rng, n, anti):
        out = simulate_controlled(reg, kill, b, x0, state, n, rng, r=m.r, switching="first", antithetic=anti)
        val = out["dividends"] - m.beta * out["injections"]
        sw = out["status"] == 2
        cont = np.zeros(n)
        for j in range(m.n_states):
            sel = sw & (out["state"] == j)
            if sel.any():
                y = out["x"][sel]
                cont[sel] = np.where(y >= 0, slices[j](np.maximum(y, 0.0)), slices[j](0.0) + m.beta * y)
        return val + cont

    return _run(sampler, _cfg(cfg))


# ---------------------------------------------------------------------------

def write_csv(rows, path) -> None:
    """Write estimate rows with the standard column set."""
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        wr.writeheader()
        for row in rows:
            wr.writerow({k: _fmt(row.get(k, "")) for k in CSV_COLUMNS})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def estimate_row(quantity, x0, state, est: Estimate, formula) -> dict:
    return {
        "quantity": quantity,
        "x0": float(x0),
        "state": int(state),
        "mean": est.mean,
        "std_error": est.std_error,
        "n_paths": est.n,
        "formula_value": float(formula),
        "z_score": est.z(float(formula)),
    }

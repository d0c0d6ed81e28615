"""Single-regime problem: periodic dividends at rate-r Poisson epochs, classical
capital injection at 0, discount q and an independent exponential terminal
time of rate λ paying w(U).

The NPV of a barrier b, its derivatives and both resolvents are assembled
from two :class:`~parisian_bailout.modal.ModalForm` pieces, one on [0, b] in
the modes of ψ = θ and one on [b, ∞) in the modes of ψ = θ + r.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import bisect

from .levy_model import LevyModel, mean_drift
from .modal import ModalForm
from .piecewise import PayoffFn, PiecewiseLinear
from .scale_fn import ScaleContext

log = logging.getLogger(__name__)

__all__ = [
    "AuxProblem",
    "AuxSolution",
    "BarrierValue",
    "UnsupportedOperation",
    "resolvent_g",
    "resolvent_g_tilde",
    "solve",
]

BISECTION_TOL = 1e-10


class UnsupportedOperation(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# building blocks on either side of the barrier
# ---------------------------------------------------------------------------

def _upper_zero(up: ScaleContext, b: float) -> ModalForm:
    return ModalForm(b, up.roots, np.zeros_like(up.roots), drop=0)


def _up_Wbar(up, b):
    return ModalForm(b, up.roots, up.coefs / up.roots, const=-1.0 / up.q, drop=0)


def _up_Wbarbar(up, b):
    mu, B = up.roots, up.coefs
    return ModalForm(b, mu, B / mu**2, const=-up.mean_drift / up.q**2, lin=-1.0 / up.q, drop=0)


def _up_conv(up, b):
    return ModalForm(b, up.roots, np.zeros_like(up.roots), conv=up.coefs, drop=0)


def _up_composite(ctx: ScaleContext, r, b, at_b, const=0.0):
    up = ctx.shifted(r)
    gam, c0 = ctx.composite_weights(r, b, at_b, const)
    return ModalForm(b, up.roots, gam, const=c0, drop=0)


def _low(ctx: ScaleContext, gam, const=0.0, conv=None):
    return ModalForm(0.0, ctx.roots, gam, const=const, conv=conv)


@dataclass(frozen=True)
class _Resolvent:
    """Both pieces of x ↦ g(x; h) (or g̃) for one barrier, plus its constants."""

    b: float
    h: PiecewiseLinear
    lower: ModalForm
    upper: ModalForm
    coef: float  # (C + ρ_b(b)) / Z(b)  or  (C̃ + ρ_b(b)) / W(b)
    C: float
    killed_below_zero: bool

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xc = np.maximum(x, 0.0)
        out = np.where(xc <= self.b, self.lower(xc, self.h), self.upper(xc, self.h))
        if self.killed_below_zero:
            out = np.where(x < 0, 0.0, out)
        return out if out.ndim else float(out)


def _resolvent(ctx: ScaleContext, r: float, b: float, h: PiecewiseLinear, killed: bool) -> _Resolvent:
    p = ctx.q
    up = ctx.shifted(r)
    a = up.phi_q
    A, lam = ctx.coefs, ctx.roots
    m = ctx.rho_moments(b, h)
    rho_b = float(np.sum(A * m))
    xi = ctx.Omega(b, h, r) + r * float(np.sum(A * m / (a - lam)))
    if killed:
        coef = (a * xi - r * rho_b) / float(ctx.Z_phi_prime(b, r))
        C = coef * float(ctx.W(b)) - rho_b
        lower = _low(ctx, coef * A, conv=-A)
        head = coef * _up_composite(ctx, r, b, A * np.exp(lam * b))
    else:
        coef = (a * xi - r * rho_b) / (p * float(ctx.Z_phi(b, r)))
        C = coef * float(ctx.Z(b)) - rho_b
        lower = _low(ctx, coef * p * A / lam, conv=-A)
        head = coef * _up_composite(ctx, r, b, p * A / lam * np.exp(lam * b))
    rho_r = _up_composite(ctx, r, b, A * m)
    upper = head - rho_r - (r * C) * _up_Wbar(up, b) - _up_conv(up, b)
    return _Resolvent(b, h, lower, upper, coef, C, killed)


def resolvent_g(model: LevyModel, q: float, r: float, b: float, x, h: PiecewiseLinear):
    """E_x ∫_0^∞ e^{−qt} h(U(t)) dt for the periodic-classical reflected process."""
    return _resolvent(ScaleContext(model, q), r, b, h, killed=False)(x)


def resolvent_g_tilde(model: LevyModel, q: float, r: float, b: float, x, h: PiecewiseLinear):
    """E_x ∫_0^{τ_0^-(r)} e^{−qt} h(U(t)) dt, periodic reflection only."""
    return _resolvent(ScaleContext(model, q), r, b, h, killed=True)(x)


# ---------------------------------------------------------------------------
# problem and barrier evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuxProblem:
    model: LevyModel
    q: float
    lam: float
    r: float
    beta: float
    w: PayoffFn = field(default_factory=PayoffFn.zero)

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError("discount rate q must be positive")
        if not self.lam >= 0:
            raise ValueError("terminal rate λ must be nonnegative")
        if not self.r > 0:
            raise ValueError("decision rate r must be positive")
        if not self.beta > 1:
            raise ValueError("β must exceed 1")
        w = self.w
        if not isinstance(w, PayoffFn):
            w = PayoffFn.from_pl(w, beta=self.beta)
            object.__setattr__(self, "w", w)
        if w.slopes[0] > self.beta + 1e-10:
            raise ValueError("payoff violates w'_+(0+) ≤ β")
        if not math.isfinite(mean_drift(self.model)):
            raise ValueError("ψ'(0+) must be finite")

    @property
    def theta(self) -> float:
        return self.q + self.lam

    @cached_property
    def ctx(self) -> ScaleContext:
        return ScaleContext(self.model, self.theta)

    @property
    def up(self) -> ScaleContext:
        return self.ctx.shifted(self.r)

    @cached_property
    def w_slope(self) -> PiecewiseLinear:
        return self.w.derivative()

    def c1(self, b: float) -> float:
        ctx, a = self.ctx, self.up.phi_q
        return self.r * (self.beta * ctx.Z(b) - 1) / (self.theta * a * ctx.Z_phi(b, self.r)) + self.beta / a

    def at(self, b: float) -> "BarrierValue":
        return BarrierValue(self, float(b))

    def G(self, b: float) -> float:
        """Root function; nonincreasing in b, b* is its first nonpositive point."""
        ctx, r, beta = self.ctx, self.r, self.beta
        Ct = _resolvent(ctx, r, b, self.w_slope, killed=True).C if self.lam else 0.0
        ratio = ctx.Z_phi(b, r) / ctx.Z_phi_prime(b, r)
        return beta * ctx.Z(b) - 1 + self.lam * Ct - beta * self.theta * ctx.W(b) * ratio

    def G_at_zero(self) -> float:
        """Closed limit G(0+): β − 1 with Gaussian part, explicit otherwise."""
        if self.model.volatility > 0:
            return self.beta - 1
        a, r, c = self.up.phi_q, self.r, self.model.drift
        omega = self.ctx.Omega(0.0, self.w_slope, r)
        return self.beta - 1 - (1 / c) / (a - r / c) * (self.theta * self.beta - self.lam * a * omega)

    def zero_barrier_threshold(self) -> float | None:
        """For bounded variation, the right side of the b* = 0 criterion (β − 1 ≤ this)."""
        if self.model.volatility > 0:
            return None
        return self.beta - 1 - self.G_at_zero()

    def optimal_barrier(self) -> float:
        if self.G_at_zero() <= 0:
            return 0.0
        hi = 50.0 / self.up.phi_q
        for _ in range(60):
            if self.G(hi) < 0:
                break
            hi *= 2
        else:
            raise ArithmeticError("could not bracket the optimal barrier")
        if self.G(0.0) <= 0:  # can only happen through round-off near the limit
            return 0.0
        return float(bisect(self.G, 0.0, hi, xtol=BISECTION_TOL, maxiter=500))

    def asymptotic_slope(self) -> float:
        return (self.r + self.lam * self.w.terminal_slope) / (self.theta + self.r)


class BarrierValue:
    """v_b and its pieces for one barrier b."""

    def __init__(self, p: AuxProblem, b: float):
        if b < 0:
            raise ValueError("barrier must be nonnegative")
        self.p, self.b = p, b
        ctx, up, r, beta, th = p.ctx, p.up, p.r, p.beta, p.theta
        A, lam = ctx.coefs, ctx.roots
        psi0 = ctx.mean_drift
        C1 = p.c1(b)
        self.C1 = C1
        Zb, Zbar_b = float(ctx.Z(b)), float(ctx.Zbar(b))

        # v^{LR}
        lo_Z = _low(ctx, th * A / lam)
        lo_Zbar_shift = _low(ctx, th * A / lam**2)  # Z̄ + ψ'(0)/θ
        self.lr_lower = (-C1) * lo_Z + beta * lo_Zbar_shift
        Wbar = _up_Wbar(up, b)
        Zqr = _up_composite(ctx, r, b, th * A / lam * np.exp(lam * b))
        Zbarqr = _up_composite(ctx, r, b, th * A / lam**2 * np.exp(lam * b), const=-psi0 / th)
        const_shift = ModalForm(b, up.roots, np.zeros_like(up.roots), const=psi0 / th, drop=0)
        self.lr_upper = (
            (-C1) * (Zqr - (r * Zb) * Wbar)
            - r * _up_Wbarbar(up, b)
            + beta * (Zbarqr + const_shift - (r * Zbar_b) * Wbar)
        )
        # λ v^w, v^w = g^{(θ)}(x; w)
        self.res_w = _resolvent(ctx, r, b, p.w, killed=False)
        self.lower = self.lr_lower + p.lam * self.res_w.lower
        self.upper = self.lr_upper + p.lam * self.res_w.upper
        self._d_lower = self.lower.derivative()
        self._d_upper = self.upper.derivative()
        self._dd_lower = self._d_lower.derivative()
        self._dd_upper = self._d_upper.derivative()

    # ------------------------------------------------------------------
    def _eval(self, lower, upper, x):
        x = np.asarray(x, dtype=float)
        w = self.p.w
        lo = np.minimum(x, self.b)
        out = np.where(x <= self.b, lower(np.maximum(lo, 0.0), w), upper(np.maximum(x, self.b), w))
        return out

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = self._eval(self.lower, self.upper, x)
        v0 = self._eval(self.lower, self.upper, 0.0)
        out = np.where(x < 0, v0 + self.p.beta * x, out)
        return out if out.ndim else float(out)

    __call__ = value

    def value_lr(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(
            x <= self.b,
            self.lr_lower(np.clip(x, 0.0, self.b)),
            self.lr_upper(np.maximum(x, self.b)),
        )
        v0 = float(self.lr_lower(0.0))
        out = np.where(x < 0, v0 + self.p.beta * x, out)
        return out if out.ndim else float(out)

    def derivative(self, x):
        """v_b'(x); at x = b the one-sided values agree (C¹ at the barrier)."""
        x = np.asarray(x, dtype=float)
        out = self._eval(self._d_lower, self._d_upper, x)
        out = np.where(x < 0, self.p.beta, out)
        return out if out.ndim else float(out)

    def second_derivative(self, x):
        if self.p.model.volatility == 0:
            raise UnsupportedOperation("v_b'' exists only with a Gaussian component")
        x = np.asarray(x, dtype=float)
        out = self._eval(self._dd_lower, self._dd_upper, x)
        out = np.where(x < 0, 0.0, out)
        return out if out.ndim else float(out)

    def growing_residual(self) -> float:
        """Relative size of the projected-out e^{Φ(θ+r)(x−b)} coefficient."""
        res = self.upper.growing_residual(self.p.w)
        return abs(res) / max(self.upper.scale(), 1.0)

    def hjb_residual(self, x, rel_step: float = 1e-3):
        """(𝓛 − θ)v_b(x) + r·(dividend term) + λ w(x), ≈ 0 for x ∉ {0, b}.

        Local part by fourth-order central differences, or the exact right
        derivative when there is no Gaussian part (v' has kinks at the knots
        of w there, which a stencil would smear).  Jump part by composite
        Gauss-Legendre against the mixture density, split where v(x − z) has kinks.
        """
        dv = self.derivative if self.p.model.volatility == 0 else None
        return hjb_residual_of(self.value, self.p, self.b, x, rel_step, dv)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(40)


def _jump_nodes(x, rate, kinks):
    """Composite Gauss-Legendre nodes on [0, x], split at the kinks of v(x − ·)."""
    cuts = np.unique(np.clip([0.0, x, *kinks], 0.0, x))
    piece = min(1.0, 2.0 / rate)
    zs, ws = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo <= 0:
            continue
        sub = np.linspace(lo, hi, int(math.ceil((hi - lo) / piece)) + 1)
        for a, c in zip(sub[:-1], sub[1:]):
            zs.append(0.5 * (c - a) * _GL_NODES + 0.5 * (c + a))
            ws.append(0.5 * (c - a) * _GL_WEIGHTS)
    if not zs:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(zs), np.concatenate(ws)


def hjb_residual_of(v, p: AuxProblem, b: float, x, rel_step: float = 1e-3, dv=None):
    m = p.model
    x = np.atleast_1d(np.asarray(x, dtype=float))
    f0 = v(x)
    if dv is not None and m.volatility == 0:
        gen = m.drift * dv(x)
    else:
        h = rel_step * np.maximum(1.0, np.abs(x))
        fp1, fm1, fp2, fm2 = v(x + h), v(x - h), v(x + 2 * h), v(x - 2 * h)
        d1 = (8 * (fp1 - fm1) - (fp2 - fm2)) / (12 * h)
        d2 = (16 * (fp1 + fm1) - (fp2 + fm2) - 30 * f0) / (12 * h * h)
        gen = m.drift * d1 + 0.5 * m.volatility**2 * d2
    if m.has_jumps:
        v0 = float(v(0.0))
        jump = np.empty_like(x)
        for i, xi in enumerate(x):
            total = 0.0
            for wgt, rate in zip(m.jump_weights, m.jump_rates):
                z, wz = _jump_nodes(xi, rate, [xi - b, *(xi - p.w.knots)])
                head = float(np.dot(wz, (v(xi - z) - f0[i]) * rate * np.exp(-rate * z)))
                # below zero v is affine: v(0) + β(x − z)
                tail = math.exp(-rate * xi) * (v0 - f0[i] + p.beta * (xi - (xi + 1.0 / rate)))
                total += wgt * (head + tail)
            jump[i] = m.jump_rate * total
        gen = gen + jump
    vb = float(v(b))
    div = np.where(x > b, (x - b) + vb - f0, 0.0)
    return gen - p.theta * f0 + p.r * div + p.lam * p.w(x)


# ---------------------------------------------------------------------------

@dataclass
class AuxSolution:
    problem: AuxProblem
    b_star: float
    value: BarrierValue
    diagnostics: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.value.value(x)

    def derivative(self, x):
        return self.value.derivative(x)


def _away_from(x, points, gap):
    """Mask of x farther than gap·max(1, |x|) from every point (stencil kinks)."""
    if len(points) == 0:
        return np.ones(x.shape, bool)
    dist = np.min(np.abs(x[:, None] - np.asarray(points)[None, :]), axis=1)
    return dist > gap * np.maximum(1.0, np.abs(x))


def solve(p: AuxProblem, n_check: int = 200) -> AuxSolution:
    """b*, the value function v_{b*}, and verification diagnostics."""
    b = p.optimal_barrier()
    bv = p.at(b)
    length = b + 20.0 / p.up.phi_q
    grid = np.linspace(0.0, length, n_check + 1)[1:]
    diag: dict = {"G(b*)": p.G(b), "G(0+)": p.G_at_zero(), "growing_mode_residual": bv.growing_residual()}
    diag["v'(b*)"] = float(bv.derivative(b))
    d = bv.derivative(grid)
    below, above = grid < b, grid > b
    diag["slope_min_below"] = float(d[below].min()) if below.any() else None
    diag["slope_max_below"] = float(d[below].max()) if below.any() else None
    diag["slope_min_above"] = float(d[above].min()) if above.any() else None
    diag["slope_max_above"] = float(d[above].max()) if above.any() else None
    step = 1e-3
    interior = grid[(grid > 5 * step) & (np.abs(grid - b) > 5 * step * max(1.0, b))]
    interior = interior[_away_from(interior, p.w.knots, 5 * step)]
    try:
        res = bv.hjb_residual(interior[:: max(1, interior.size // 40)])
        diag["hjb_residual_sup"] = float(np.max(np.abs(res)))
    except Exception as exc:  # diagnostics are reported, not raised
        diag["hjb_residual_error"] = repr(exc)
    return AuxSolution(p, b, bv, diag)

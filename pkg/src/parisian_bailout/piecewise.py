"""Piecewise-linear functions on [0, ∞) and exact exponential filters.

Everything the solvers integrate against a scale function is piecewise
linear (payoffs, their right derivatives, sampled value iterates), so the
convolutions reduce to closed-form integrals of ``(v + s z) e^{κ z}`` per
piece, chained by a linear recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import exprel

__all__ = ["PiecewiseLinear", "PayoffFn", "forward_filter", "tail_filter", "segment_integral"]


def _phi2(t):
    """∫_0^1 s e^{t s} ds = (e^t (t − 1) + 1) / t², stable near 0."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = np.abs(t) < 0.05
    ts = t[small]
    # Σ t^n / (n! (n+2))
    acc = np.zeros_like(ts)
    term = np.ones_like(ts)
    for n in range(12):
        acc += term / (n + 2)
        term = term * ts / (n + 1)
    out[small] = acc
    tb = t[~small]
    with np.errstate(over="ignore", invalid="ignore"):
        out[~small] = (np.exp(tb) * (tb - 1.0) + 1.0) / tb**2
    return out


def segment_integral(value, slope, length, kappa):
    """∫_0^L e^{κ (L − z)} (v + s z) dz, elementwise."""
    L = np.asarray(length, dtype=float)
    t = kappa * L
    e1 = exprel(t)
    return (value + slope * L) * L * e1 - slope * L * L * _phi2(t)


def _tail_segment(value, slope, length, rate):
    """∫_0^L e^{−a z} (v + s z) dz."""
    L = np.asarray(length, dtype=float)
    t = -rate * L
    return value * L * exprel(t) + slope * L * L * _phi2(t)


@dataclass(frozen=True)
class PiecewiseLinear:
    """f(x) = values[i] + slopes[i] (x − knots[i]) on [knots[i], knots[i+1]).

    The last piece extends to +∞.  Jumps between pieces are allowed, which
    covers step functions such as w'_+ and indicators.  Below ``knots[0]`` the
    function is the constant ``left_value`` (0 unless given).
    """

    knots: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    left_value: float = 0.0

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        s = np.asarray(self.slopes, dtype=float)
        if k.ndim != 1 or k.size == 0 or v.shape != k.shape or s.shape != k.shape:
            raise ValueError("knots, values and slopes must be 1-d arrays of equal length")
        if np.any(np.diff(k) <= 0):
            raise ValueError("knots must be strictly increasing")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(v)) and np.all(np.isfinite(s))):
            raise ValueError("non-finite entries in a piecewise-linear function")
        for name, arr in (("knots", k), ("values", v), ("slopes", s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # constructors -------------------------------------------------------------
    @classmethod
    def from_points(cls, x, y, terminal_slope: float, left_value: float | None = None):
        """Continuous interpolant of (x, y) with the given slope past x[-1]."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        slopes = np.empty_like(x)
        slopes[:-1] = np.diff(y) / np.diff(x)
        slopes[-1] = terminal_slope
        return cls(x, y, slopes, y[0] if left_value is None else left_value)

    @classmethod
    def constant(cls, c: float, start: float = 0.0):
        return cls(np.array([start]), np.array([c]), np.array([0.0]), 0.0)

    @classmethod
    def indicator(cls, lo: float, hi: float):
        """1 on [lo, hi), 0 elsewhere (right-continuous)."""
        knots = [lo, hi] if lo > 0 else [0.0, hi]
        vals = [1.0, 0.0]
        if lo > 0:
            knots = [0.0, lo, hi]
            vals = [0.0, 1.0, 0.0]
        return cls(np.array(knots), np.array(vals), np.zeros(len(knots)))

    # evaluation ----------------------------------------------------------------
    @property
    def terminal_slope(self) -> float:
        return float(self.slopes[-1])

    def _piece(self, x):
        return np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, None)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        i = self._piece(x)
        out = self.values[i] + self.slopes[i] * (x - self.knots[i])
        out = np.where(x < self.knots[0], self.left_value, out)
        return out if out.ndim else float(out)

    def right_derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x < self.knots[0], 0.0, self.slopes[self._piece(x)])
        return out if out.ndim else float(out)

    def derivative(self) -> "PiecewiseLinear":
        """The right derivative as a piecewise-constant function."""
        return PiecewiseLinear(self.knots, self.slopes.copy(), np.zeros_like(self.slopes))

    def shifted_values(self, c: float) -> "PiecewiseLinear":
        return PiecewiseLinear(self.knots, self.values + c, self.slopes, self.left_value + c)

    def truncated(self, end: float) -> "PiecewiseLinear":
        """Same function on [knots[0], end), zero afterwards."""
        keep = self.knots < end
        k = np.append(self.knots[keep], end)
        v = np.append(self.values[keep], 0.0)
        s = np.append(self.slopes[keep], 0.0)
        return PiecewiseLinear(k, v, s, self.left_value)

    def piece_ends(self):
        """(starts, lengths, values, slopes) of the finite pieces."""
        return self.knots[:-1], np.diff(self.knots), self.values[:-1], self.slopes[:-1]

    def is_continuous(self, tol: float = 1e-12) -> bool:
        s, L, v, sl = self.piece_ends()
        end_vals = v + sl * L
        return bool(np.all(np.abs(end_vals - self.values[1:]) <= tol * (1 + np.abs(end_vals))))


class PayoffFn(PiecewiseLinear):
    """Concave, continuous, piecewise-linear payoff on [0, ∞).

    Enforces w'_+(0+) ≤ β (when ``beta`` is given) and a terminal slope in
    [0, 1].  Slopes must be nonincreasing.
    """

    def __init__(self, knots, values, slopes=None, *, terminal_slope=None, beta=None, tol=1e-10):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if slopes is None:
            if terminal_slope is None:
                raise ValueError("give either slopes or terminal_slope")
            sl = np.empty_like(knots)
            sl[:-1] = np.diff(values) / np.diff(knots)
            sl[-1] = terminal_slope
        else:
            sl = np.asarray(slopes, dtype=float)
        super().__init__(knots, values, sl, float(values[0]))
        if knots[0] != 0.0:
            raise ValueError("a payoff must start at x = 0")
        if not self.is_continuous(1e-9):
            raise ValueError("payoff must be continuous")
        if np.any(np.diff(sl) > tol * (1 + np.abs(sl[1:]))):
            raise ValueError("payoff must be concave (nonincreasing slopes)")
        if not -tol <= sl[-1] <= 1 + tol:
            raise ValueError(f"terminal slope {sl[-1]} outside [0, 1]")
        if beta is not None and sl[0] > beta + tol:
            raise ValueError(f"payoff slope at 0+ ({sl[0]}) exceeds β = {beta}")

    @classmethod
    def zero(cls):
        return cls([0.0], [0.0], [0.0])

    @classmethod
    def capped(cls, cap: float, slope: float = 1.0):
        """w(x) = slope·min(x, cap)."""
        return cls([0.0, cap], [0.0, slope * cap], [slope, 0.0])

    @classmethod
    def from_pl(cls, f: PiecewiseLinear, beta=None):
        return cls(f.knots, f.values, f.slopes, beta=beta)


# ---------------------------------------------------------------------------
# exponential filters
# ---------------------------------------------------------------------------

def _linear_recursion(decay_log, seg):
    """F[0] = 0, F[i+1] = exp(decay_log[i]) F[i] + seg[i]; returns F (len n+1).

    Solved blockwise with cumulative sums; blocks keep |Σ decay_log| below a
    few hundred so the rescaling never overflows.
    """
    n = seg.size
    F = np.zeros(n + 1)
    if n == 0:
        return F
    cum = np.concatenate([[0.0], np.cumsum(decay_log)])
    # block boundaries where the exponent range would exceed the budget
    start = 0
    carry = 0.0
    budget = 300.0
    while start < n:
        base = cum[start]
        rel = cum[start:] - base
        over = np.nonzero(np.abs(rel) > budget)[0]
        if over.size and over[0] <= 1:
            # one long step: apply it directly
            F[start + 1] = np.exp(decay_log[start]) * carry + seg[start]
            carry = F[start + 1]
            start += 1
            continue
        stop = start + (over[0] - 1 if over.size else n - start)
        e = cum[start : stop + 1] - base  # exponents relative to block start
        # F[start+m] = e^{e_m} (carry + Σ_{i<m} seg[start+i] e^{-e_{i+1}})
        terms = seg[start:stop] * np.exp(-e[1:])
        acc = np.concatenate([[0.0], np.cumsum(terms)])
        F[start : stop + 1] = np.exp(e) * (carry + acc)
        carry = F[stop]
        start = stop
    return F


def forward_filter(h: PiecewiseLinear, kappa: float, origin: float, x):
    """∫_origin^x e^{κ (x − y)} h(y) dy for each x ≥ origin (0 below origin)."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    end = max(float(np.max(x)), origin) if x.size else origin
    # breakpoints: origin plus the knots of h inside (origin, end)
    inner = h.knots[(h.knots > origin) & (h.knots < end)]
    pts = np.concatenate([[origin], inner])
    vals = h(pts)
    slopes = h.right_derivative(pts)
    L = np.diff(pts)
    seg = segment_integral(vals[:-1], slopes[:-1], L, kappa)
    F = _linear_recursion(kappa * L, seg)
    i = np.clip(np.searchsorted(pts, x, side="right") - 1, 0, pts.size - 1)
    dx = np.maximum(x - pts[i], 0.0)
    out = np.exp(kappa * dx) * F[i] + segment_integral(vals[i], slopes[i], dx, kappa)
    out = np.where(x <= origin, 0.0, out)
    return float(out[0]) if scalar else out


def tail_filter(h: PiecewiseLinear, rate: float, x):
    """∫_x^∞ e^{−a (y − x)} h(y) dy, a > 0, for x ≥ knots[0]."""
    if rate <= 0:
        raise ValueError("tail filter needs a positive rate")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    lo = min(float(np.min(x)), float(h.knots[-1])) if x.size else float(h.knots[-1])
    inner = h.knots[h.knots > lo]
    pts = np.concatenate([[lo], inner]) if (inner.size == 0 or inner[0] > lo) else inner
    if pts[0] > lo:
        pts = np.concatenate([[lo], pts])
    vals = h(pts)
    slopes = h.right_derivative(pts)
    last = vals[-1] / rate + slopes[-1] / rate**2
    L = np.diff(pts)
    seg = _tail_segment(vals[:-1], slopes[:-1], L, rate)
    # backward: T[i] = e^{−a L_i} T[i+1] + seg[i]
    T_rev = _linear_recursion(-rate * L[::-1], seg[::-1])
    T = T_rev[::-1] + last * np.exp(-rate * (pts[-1] - pts))
    i = np.clip(np.searchsorted(pts, x, side="right") - 1, 0, pts.size - 1)
    nxt = np.minimum(i + 1, pts.size - 1)
    on_last = i == pts.size - 1
    gap = np.where(on_last, 0.0, pts[nxt] - x)
    hx = h(x)
    sx = h.right_derivative(x)
    head = _tail_segment(hx, sx, gap, rate)
    out = np.where(
        on_last,
        hx / rate + sx / rate**2,
        head + np.exp(-rate * gap) * T[nxt],
    )
    return float(out[0]) if scalar else out

"""Exponential-mode expressions on a half-line [s, ∞).

An expression is

    f(x) = Σ_k γ_k e^{κ_k u} + c + ℓ u + Σ_k e_k ∫_0^u e^{κ_k (u − z)} h(s + z) dz
           + p h(x) + p' h'(x),                                     u = x − s,

for one fixed piecewise-linear ``h``.  Above a barrier the mode with the
positive rate would grow like e^{Φ(q+r) u}; its total coefficient vanishes
analytically, and evaluating the other terms directly avoids the
catastrophic cancellation.  The cancelled coefficient is kept as a
diagnostic (:attr:`ModalForm.growing_residual`).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .piecewise import PiecewiseLinear, forward_filter, tail_filter


@dataclass(frozen=True)
class ModalForm:
    origin: float
    rates: np.ndarray
    gam: np.ndarray
    const: float = 0.0
    lin: float = 0.0
    conv: np.ndarray | None = None
    point: float = 0.0
    point_slope: float = 0.0
    drop: int | None = None  # index of the growing mode to project out

    def __post_init__(self):
        object.__setattr__(self, "rates", np.asarray(self.rates, dtype=float))
        object.__setattr__(self, "gam", np.asarray(self.gam, dtype=float))
        conv = np.zeros_like(self.rates) if self.conv is None else np.asarray(self.conv, float)
        object.__setattr__(self, "conv", conv)

    # algebra ----------------------------------------------------------------
    def _check(self, other):
        if other.origin != self.origin or other.rates.shape != self.rates.shape:
            raise ValueError("incompatible modal forms")

    def __add__(self, other: "ModalForm") -> "ModalForm":
        self._check(other)
        return replace(
            self,
            gam=self.gam + other.gam,
            const=self.const + other.const,
            lin=self.lin + other.lin,
            conv=self.conv + other.conv,
            point=self.point + other.point,
            point_slope=self.point_slope + other.point_slope,
        )

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, c: float) -> "ModalForm":
        c = float(c)
        return replace(
            self,
            gam=c * self.gam,
            const=c * self.const,
            lin=c * self.lin,
            conv=c * self.conv,
            point=c * self.point,
            point_slope=c * self.point_slope,
        )

    def derivative(self) -> "ModalForm":
        """d/dx, treating h as piecewise linear (h'' = 0 between knots)."""
        return replace(
            self,
            gam=self.rates * self.gam,
            const=self.lin,
            lin=0.0,
            conv=self.rates * self.conv,
            point=float(np.sum(self.conv)),
            point_slope=self.point,
        )

    def growing_residual(self, h: PiecewiseLinear) -> float:
        """Coefficient of the dropped mode, which should be ~0."""
        if self.drop is None:
            return 0.0
        k = self.drop
        return float(self.gam[k] + self.conv[k] * tail_filter(h, self.rates[k], self.origin))

    def scale(self) -> float:
        """Magnitude of the terms, used to judge the residual above."""
        return float(np.max(np.abs(self.gam)) + abs(self.const) + abs(self.lin) + np.max(np.abs(self.conv)))

    # evaluation -------------------------------------------------------------
    def __call__(self, x, h: PiecewiseLinear | None = None):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        u = x - self.origin
        out = self.const + self.lin * u
        for k, (rate, g, e) in enumerate(zip(self.rates, self.gam, self.conv)):
            if k == self.drop:
                if e != 0.0:
                    out = out - e * tail_filter(h, rate, x)
                continue
            out = out + g * np.exp(rate * u)
            if e != 0.0:
                out = out + e * forward_filter(h, rate, self.origin, x)
        if self.point:
            out = out + self.point * h(x)
        if self.point_slope:
            out = out + self.point_slope * h.right_derivative(x)
        return float(out[0]) if scalar else out

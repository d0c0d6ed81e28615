"""Spectrally negative Lévy models with hyperexponential downward jumps.

The surplus process is

    X(t) = x + γ t + η B(t) − Σ_{k ≤ N(t)} J_k,

with N a Poisson process of rate ``jump_rate`` and J_k drawn from a finite
mixture of exponential laws.  Its Laplace exponent

    ψ(θ) = γ θ + η² θ² / 2 + η_J (Σ_k p_k α_k / (α_k + θ) − 1)

is rational in θ, which is what makes every scale function a finite sum of
exponentials (see :mod:`parisian_bailout.scale_fn`).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LevyModel",
    "PathKind",
    "PathClass",
    "ModelError",
    "laplace_exponent",
    "phi",
    "mean_drift",
    "path_class",
]


class ModelError(ValueError):
    """Raised when a model violates the standing assumptions."""


class PathKind(enum.Enum):
    BOUNDED_VARIATION = "bounded_variation"
    UNBOUNDED_VARIATION = "unbounded_variation"


@dataclass(frozen=True)
class PathClass:
    kind: PathKind
    drift: float | None = None  # the drift c, only for bounded variation

    @property
    def bounded(self) -> bool:
        return self.kind is PathKind.BOUNDED_VARIATION


@dataclass(frozen=True)
class LevyModel:
    """Drift, Gaussian volatility and a hyperexponential jump part.

    Parameters
    ----------
    drift : float
        Linear drift γ.  With ``volatility == 0`` this is the drift ``c`` of
        the bounded-variation decomposition and must be positive.
    volatility : float
        Gaussian coefficient η ≥ 0.
    jump_rate : float
        Arrival rate η_J ≥ 0 of downward jumps.
    jump_weights, jump_rates : tuple of float
        Mixture weights p_k (positive, summing to one) and exponential rates
        α_k > 0 of the jump sizes.
    """

    drift: float
    volatility: float = 0.0
    jump_rate: float = 0.0
    jump_weights: tuple[float, ...] = ()
    jump_rates: tuple[float, ...] = ()
    _poles: tuple[np.ndarray, np.ndarray] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = tuple(float(v) for v in self.jump_weights)
        a = tuple(float(v) for v in self.jump_rates)
        object.__setattr__(self, "jump_weights", w)
        object.__setattr__(self, "jump_rates", a)
        for name in ("drift", "volatility", "jump_rate"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ModelError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, v)
        if self.volatility < 0:
            raise ModelError("volatility must be nonnegative")
        if self.jump_rate < 0:
            raise ModelError("jump_rate must be nonnegative")
        if len(w) != len(a):
            raise ModelError("jump_weights and jump_rates must have equal length")
        if self.jump_rate > 0 and not w:
            raise ModelError("a positive jump_rate needs a jump distribution")
        if any(p <= 0 for p in w) or any(r <= 0 or not math.isfinite(r) for r in a):
            raise ModelError("mixture weights and rates must be positive")
        if w and abs(sum(w) - 1.0) > 1e-12:
            raise ModelError(f"mixture weights sum to {sum(w)!r}, expected 1")
        scale = max(1.0, abs(self.drift), self.jump_rate)
        if 0 < self.volatility < 1e-6 * scale or 0 < self.jump_rate < 1e-10 * scale:
            raise ModelError(
                "numerically degenerate model: set tiny volatility or jump_rate to exactly 0"
            )
        if self.volatility == 0:
            if self.drift <= 0:
                raise ModelError(
                    "monotone paths: with zero volatility the drift c must be positive"
                )
            if self.jump_rate == 0:
                raise ModelError("monotone paths: pure drift is not a valid surplus model")
        object.__setattr__(self, "_poles", _merge_poles(w, a, self.jump_rate))

    # convenience -------------------------------------------------------------
    @property
    def has_jumps(self) -> bool:
        return self.jump_rate > 0

    @property
    def unbounded_variation(self) -> bool:
        return self.volatility > 0

    @property
    def poles(self) -> np.ndarray:
        """Distinct jump rates α, ascending (ψ has poles at −α)."""
        return self._poles[0]

    @property
    def pole_weights(self) -> np.ndarray:
        """η_J p α per distinct pole, so that the jump part is Σ c/(α+θ) − η_J."""
        return self._poles[1]

    def mean_jump(self) -> float:
        return float(sum(p / a for p, a in zip(self.jump_weights, self.jump_rates)))

    def psi(self, theta):
        return laplace_exponent(self, theta, check=False)

    def psi_prime(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = self.drift + self.volatility**2 * theta
        if self.has_jumps:
            a, c = self.poles, self.pole_weights
            out = out - np.sum(c / (a + theta[..., None]) ** 2, axis=-1)
        return out if out.ndim else float(out)


def _merge_poles(weights, rates, jump_rate):
    if not weights or jump_rate == 0:
        return np.empty(0), np.empty(0)
    order = np.argsort(rates)
    a = np.asarray(rates)[order]
    c = jump_rate * np.asarray(weights)[order] * a
    poles, coefs = [a[0]], [c[0]]
    for ak, ck in zip(a[1:], c[1:]):
        if abs(ak - poles[-1]) <= 1e-12 * ak:
            coefs[-1] += ck
        else:
            poles.append(ak)
            coefs.append(ck)
    return np.array(poles), np.array(coefs)


def laplace_exponent(model: LevyModel, theta, *, check: bool = True):
    """ψ(θ); accepts scalars or arrays.  Negative θ is a domain error unless
    ``check=False`` (the root finders evaluate ψ on the negative axis)."""
    theta = np.asarray(theta, dtype=float)
    if check and np.any(theta < 0):
        raise ValueError("laplace_exponent is defined here for θ ≥ 0")
    out = model.drift * theta + 0.5 * model.volatility**2 * theta**2
    if model.has_jumps:
        a, c = model.poles, model.pole_weights
        out = out + np.sum(c / (a + theta[..., None]), axis=-1) - model.jump_rate
    return out if out.ndim else float(out)


def mean_drift(model: LevyModel) -> float:
    """ψ'(0+) = γ − η_J E|J|."""
    return model.drift - model.jump_rate * model.mean_jump()


def path_class(model: LevyModel) -> PathClass:
    if model.volatility > 0:
        return PathClass(PathKind.UNBOUNDED_VARIATION)
    return PathClass(PathKind.BOUNDED_VARIATION, drift=model.drift)


def phi(model: LevyModel, q: float, tol: float = 1e-12) -> float:
    """Largest root of ψ(λ) = q on [0, ∞).

    Newton from the right is monotone for a convex function, so we start from
    a point with ψ ≥ q and iterate; bisection takes over if Newton stalls.
    """
    q = float(q)
    if q < 0 or not math.isfinite(q):
        raise ValueError("phi needs q ≥ 0")
    mu = mean_drift(model)
    if q == 0 and mu >= 0:
        return 0.0

    def f(lam):
        return laplace_exponent(model, lam, check=False) - q

    if model.volatility > 0:
        hi = max(math.sqrt(2 * q) / model.volatility, 1e-8)
    else:
        hi = max(q / model.drift, 1e-8)
    hi = max(hi, 2 * abs(mu) / model.volatility**2 if model.volatility > 0 else 0.0)
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e300:
            raise ArithmeticError("could not bracket Φ(q)")
    lo = 0.0
    lam = hi
    scale = max(1.0, q)
    for _ in range(200):
        val = f(lam)
        if abs(val) <= tol * scale:
            return _polish(f, model.psi_prime, lam)
        if val > 0:
            hi = lam
        else:
            lo = lam
        d = model.psi_prime(lam)
        new = lam - val / d if d > 0 else 0.5 * (lo + hi)
        if not lo <= new <= hi:
            new = 0.5 * (lo + hi)
        if new == lam:
            break
        lam = new
    # bisection fallback
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return float(hi if abs(f(hi)) < abs(f(lo)) else lo)


def _polish(f, fprime, lam):
    """A few extra Newton steps, kept only while |f| shrinks."""
    best, fbest = lam, abs(f(lam))
    for _ in range(3):
        d = fprime(best)
        if d <= 0:
            break
        cand = best - f(best) / d
        fc = abs(f(cand))
        if fc >= fbest:
            break
        best, fbest = cand, fc
    return float(best)

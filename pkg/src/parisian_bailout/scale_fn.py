"""Scale functions as finite exponential sums.

For the supported model family ψ(s) − q is a rational function with simple
real zeros λ_0 = Φ(q) > 0 > λ_1 > … , so that

    W^{(q)}(x) = Σ_j A_j e^{λ_j x},   A_j = 1/ψ'(λ_j),   x ≥ 0.

Two identities used throughout: Σ_j A_j/λ_j = 1/q and Σ_j A_j/λ_j² =
ψ'(0+)/q², which give Z, W̄, W̄̄ and Z̄ without additive constants to track.

Composites glued at a barrier b use a second context at rate q + r with
roots μ_k and weights B_k.  Convolving W^{(q+r)} with any Σ c_j e^{λ_j y}
leaves only μ-modes because Σ_k B_k/(μ_k − λ_j) = 1/r for every root λ_j.
"""

from __future__ import annotations

import math
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .levy_model import LevyModel, mean_drift, phi
from .piecewise import PiecewiseLinear, forward_filter, tail_filter

__all__ = ["ScaleContext", "exponent_roots"]


def exponent_roots(model: LevyModel, q: float) -> np.ndarray:
    """All real roots of ψ(s) = q, descending (the first one is Φ(q))."""
    if q <= 0:
        raise ValueError("exponent roots are computed for q > 0")
    big = phi(model, q)
    if not model.has_jumps:
        eta2 = model.volatility**2
        disc = math.sqrt(model.drift**2 + 2 * eta2 * q)
        return np.array([big, (-model.drift - disc) / eta2])

    def f(s):
        return model.psi(s) - q

    roots = [big]
    poles = -model.poles  # descending: −α_1 > −α_2 > …
    # one root in (−α_1, 0)
    roots.append(_bracketed(f, poles[0], 0.0, hi_pole=False))
    # one between consecutive poles
    for hi_pole, lo_pole in zip(poles[:-1], poles[1:]):
        roots.append(_bracketed(f, lo_pole, hi_pole))
    if model.volatility > 0:
        hi = poles[-1]
        step = max(1.0, abs(hi))
        lo = hi - step
        while f(lo) <= 0:
            step *= 2
            lo = hi - step
        roots.append(_bracketed(f, lo, hi, lo_pole=False))
    return np.array(roots)


def _bracketed(f, lo, hi, lo_pole=True, hi_pole=True):
    """brentq on (lo, hi) with f > 0 at the left end and f < 0 at the right.

    Ends flagged as poles are approached from inside until the sign shows.
    """
    width = hi - lo

    def inside(x0, direction, want_positive):
        eps = 1e-14 * max(1.0, abs(x0))
        while eps < 0.5 * width:
            x = x0 + direction * eps
            v = f(x)
            if np.isfinite(v) and ((v > 0) == want_positive) and v != 0:
                return x
            eps *= 4
        return x0 + direction * 0.5 * width

    a = inside(lo, +1, True) if lo_pole else lo
    b = inside(hi, -1, False) if hi_pole else hi
    return brentq(f, a, b, xtol=1e-15, rtol=1e-15, maxiter=500)


class ScaleContext:
    """A (model, q) pair with the exponential-sum data of W^{(q)}.

    All evaluators accept scalars or arrays and are pure.
    """

    def __init__(self, model: LevyModel, q: float):
        if not q > 0:
            raise ValueError("scale functions need q > 0")
        self.model = model
        self.q = float(q)
        self.roots = exponent_roots(model, self.q)
        self.coefs = 1.0 / np.asarray(model.psi_prime(self.roots))
        self.phi_q = float(self.roots[0])
        self.mean_drift = mean_drift(model)
        self._composites: dict[float, "ScaleContext"] = {}

    # -- basic sanity ----------------------------------------------------------
    @property
    def w_at_zero(self) -> float:
        return float(np.sum(self.coefs))

    def closure_errors(self) -> dict[str, float]:
        """Residuals of the exact sum rules (diagnostic)."""
        A, lam = self.coefs, self.roots
        w0 = 0.0 if self.model.volatility > 0 else 1.0 / self.model.drift
        return {
            "W(0)": float(np.sum(A) - w0),
            "sum A/λ": float(np.sum(A / lam) * self.q - 1.0),
            "sum A/λ²": float(np.sum(A / lam**2) * self.q**2 - self.mean_drift),
        }

    def shifted(self, r: float) -> "ScaleContext":
        """Context at rate q + r (cached)."""
        r = float(r)
        if r not in self._composites:
            self._composites[r] = ScaleContext(self.model, self.q + r)
        return self._composites[r]

    # -- exponential sums -------------------------------------------------------
    def _expsum(self, weights, x, const=0.0, lin=0.0, below=0.0, below_lin=0.0):
        x = np.asarray(x, dtype=float)
        xs = np.where(x > 0, x, 0.0)
        with np.errstate(over="ignore"):
            val = np.exp(np.multiply.outer(xs, self.roots)) @ weights + const + lin * xs
        out = np.where(x >= 0, val, below + below_lin * x)
        return out if out.ndim else float(out)

    def W(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x >= 0, self._expsum(self.coefs, x), 0.0)
        return out if out.ndim else float(out)

    def W_scaled(self, x):
        """e^{−Φ(q) x} W^{(q)}(x), finite for every x (W itself overflows near x ≈ 700/Φ)."""
        x = np.asarray(x, dtype=float)
        xs = np.where(x > 0, x, 0.0)
        val = np.exp(np.multiply.outer(xs, self.roots - self.phi_q)) @ self.coefs
        out = np.where(x >= 0, val, 0.0)
        return out if out.ndim else float(out)

    def W_prime(self, x):
        """W^{(q)}'(x) for x > 0."""
        return self._expsum(self.coefs * self.roots, x)

    def W_second(self, x):
        return self._expsum(self.coefs * self.roots**2, x)

    def Wbar(self, x):
        return self._expsum(self.coefs / self.roots, x, const=-1.0 / self.q)

    def Wbarbar(self, x):
        A, lam = self.coefs, self.roots
        return self._expsum(A / lam**2, x, const=-self.mean_drift / self.q**2, lin=-1.0 / self.q)

    def Z(self, x):
        return self._expsum(self.q * self.coefs / self.roots, x, below=1.0)

    def Zbar(self, x):
        A, lam = self.coefs, self.roots
        return self._expsum(self.q * A / lam**2, x, const=-self.mean_drift / self.q, below_lin=1.0)

    # -- the shifted function Z^{(q)}(x, Φ(q+r)) ---------------------------------
    def Z_phi(self, x, r: float):
        """Z^{(q)}(x, Φ(q+r)) = r Σ_j A_j e^{λ_j x}/(a − λ_j), a = Φ(q+r)."""
        a = self.shifted(r).phi_q
        x = np.asarray(x, dtype=float)
        pos = self._expsum(r * self.coefs / (a - self.roots), x)
        out = np.where(x >= 0, pos, np.exp(a * np.minimum(x, 0.0)))
        return out if out.ndim else float(out)

    def Z_phi_prime(self, x, r: float):
        a = self.shifted(r).phi_q
        return a * self.Z_phi(x, r) - r * self.W(x)

    def Z_phi_first_form(self, x, r: float):
        """e^{a x}(1 − r ∫_0^x e^{−a z} W(z) dz), evaluated in closed form."""
        a = self.shifted(r).phi_q
        A, lam = self.coefs, self.roots
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        # ∫_0^x e^{(λ−a) z} dz = x exprel((λ−a) x)
        from scipy.special import exprel

        t = np.multiply.outer(xp, lam - a)
        integral = (xp[..., None] * exprel(t)) @ A
        return np.exp(a * x) * (1.0 - r * integral)

    # -- composites at a barrier ------------------------------------------------
    def composite_weights(self, r: float, b: float, at_b, const=0.0):
        """μ-mode weights of f + r ∫_b^x W^{(q+r)}(x−y) f(y) dy for x ≥ b.

        ``at_b`` holds c_j e^{λ_j b} for f(y) = Σ c_j e^{λ_j y} + const.
        Returns (weights over μ_k, constant term).
        """
        up = self.shifted(r)
        mu, B = up.roots, up.coefs
        s = (np.asarray(at_b)[None, :] / (mu[:, None] - self.roots[None, :])).sum(axis=1)
        gam = B * r * (s + const / mu)
        return gam, const * self.q / (self.q + r)

    def _composite_eval(self, r, b, x, below_fn, at_b, const=0.0):
        up = self.shifted(r)
        x = np.asarray(x, dtype=float)
        gam, c0 = self.composite_weights(r, b, at_b, const)
        u = np.maximum(x - b, 0.0)
        with np.errstate(over="ignore"):
            above = np.exp(np.multiply.outer(u, up.roots)) @ gam + c0
        out = np.where(x > b, above, below_fn(x))
        return out if out.ndim else float(out)

    def W_qr(self, b, x, r):
        A, lam = self.coefs, self.roots
        if b == 0:
            return self.shifted(r).W(x)
        return self._composite_eval(r, b, x, self.W, A * np.exp(lam * b))

    def Z_qr(self, b, x, r):
        A, lam = self.coefs, self.roots
        if b == 0:
            return self.shifted(r).Z(x)
        return self._composite_eval(r, b, x, self.Z, self.q * A / lam * np.exp(lam * b))

    def Zbar_qr(self, b, x, r):
        A, lam = self.coefs, self.roots
        at_b = self.q * A / lam**2 * np.exp(lam * b)
        return self._composite_eval(r, b, x, self.Zbar, at_b, const=-self.mean_drift / self.q)

    # -- functionals of h ----------------------------------------------------------
    def rho_moments(self, b: float, h: PiecewiseLinear) -> np.ndarray:
        """m_j(b) = ∫_0^b e^{λ_j (b − z)} h(z) dz for every root."""
        if b <= 0:
            return np.zeros_like(self.roots)
        return np.array([forward_filter(h, lam, 0.0, b) for lam in self.roots])

    def rho(self, b, x, h: PiecewiseLinear):
        """ρ_b^{(q)}(x; h) = ∫_0^b W(x − y) h(y) dy."""
        x = np.asarray(x, dtype=float)
        A, lam = self.coefs, self.roots
        out = np.zeros_like(x)
        inside = (x > 0) & (x <= b)
        if np.any(inside):
            xi = x[inside]
            acc = np.zeros_like(xi)
            for Aj, lj in zip(A, lam):
                acc += Aj * forward_filter(h, lj, 0.0, xi)
            out[inside] = acc
        above = x > b
        if np.any(above) and b > 0:
            m = self.rho_moments(b, h)
            out[above] = np.exp(np.multiply.outer(x[above] - b, lam)) @ (A * m)
        return out if out.ndim else float(out)

    def rho_r(self, b, x, h: PiecewiseLinear, r: float):
        """ρ_b^{(q,r)}(x; h)."""
        x = np.asarray(x, dtype=float)
        if b <= 0:
            out = np.zeros_like(x)
            return out if out.ndim else 0.0
        m = self.rho_moments(b, h)
        return self._composite_eval(r, b, x, lambda y: self.rho(b, y, h), self.coefs * m)

    def Omega(self, b: float, h: PiecewiseLinear, r: float) -> float:
        """∫_0^∞ h(b + y) e^{−Φ(q+r) y} dy."""
        return float(tail_filter(h, self.shifted(r).phi_q, b))

    def Xi(self, b: float, h: PiecewiseLinear, r: float) -> float:
        """Ξ^{(q,r)}(b; h)."""
        a = self.shifted(r).phi_q
        m = self.rho_moments(b, h)
        return self.Omega(b, h, r) + r * float(np.sum(self.coefs * m / (a - self.roots)))

    @cached_property
    def characteristic_length(self) -> float:
        return 1.0 / self.phi_q

"""Closed-form exit and resolvent identities built on :class:`ScaleContext`."""

from __future__ import annotations

import math

import numpy as np

from .levy_model import LevyModel
from .piecewise import PiecewiseLinear, forward_filter, tail_filter
from .scale_fn import ScaleContext


def _ctx(model, q):
    return model if isinstance(model, ScaleContext) else ScaleContext(model, q)


def fpt_laplace(model: LevyModel, q: float, x):
    """E_x[e^{−q τ_0^−}; τ_0^− < ∞]."""
    c = _ctx(model, q)
    return c.Z(x) - c.q / c.phi_q * c.W(x)


def two_sided_exit(model: LevyModel, q: float, x, b: float):
    """E_x[e^{−q τ_b^+}; τ_b^+ < τ_0^−] for 0 ≤ x ≤ b."""
    c = _ctx(model, q)
    x = np.asarray(x, dtype=float)
    out = c.W_scaled(x) / c.W_scaled(b) * np.exp(c.phi_q * (x - b))
    return out if np.ndim(out) else float(out)


def reflected_upper_laplace(model: LevyModel, q: float, x, b: float):
    """E_x[e^{−q κ_b^+}] for the process reflected at 0."""
    c = _ctx(model, q)
    return c.Z(x) / c.Z(b)


def reflected_resolvent(model: LevyModel, q: float, b: float, x, h: PiecewiseLinear):
    """E_x ∫_0^{κ_b^+} e^{−qt} h(Y_t) dt, Y reflected at 0; ``b = inf`` drops the exit."""
    c = _ctx(model, q)
    x = np.asarray(x, dtype=float)
    if math.isinf(b):
        conv = sum(A * forward_filter(h, lam, 0.0, x) for A, lam in zip(c.coefs, c.roots))
        conv = np.where(x > 0, conv, 0.0)
        out = c.Z(x) * c.phi_q / c.q * float(tail_filter(h, c.phi_q, 0.0)) - conv
    else:
        out = c.Z(x) / c.Z(b) * c.rho(b, b, h) - c.rho(b, x, h)
    return out if np.ndim(out) else float(out)


def parisian_ruin(model: LevyModel, q: float, r: float, b: float, x):
    """E_x[e^{−q τ_0^−(r)}] with Parisian reflection from above at b."""
    c = _ctx(model, q)
    up = c.shifted(r)
    x = np.asarray(x, dtype=float)
    ratio = c.Z_phi(b, r) / c.Z_phi_prime(b, r)
    tail = r * up.Wbar(x - b)
    out = c.Z_qr(b, x, r) - tail * c.Z(b) - c.q * ratio * (c.W_qr(b, x, r) - tail * c.W(b))
    return out if np.ndim(out) else float(out)


def parisian_ruin_at_barrier(model: LevyModel, q: float, r: float, b: float) -> float:
    c = _ctx(model, q)
    return float(c.Z(b) - c.q * c.Z_phi(b, r) / c.Z_phi_prime(b, r) * c.W(b))

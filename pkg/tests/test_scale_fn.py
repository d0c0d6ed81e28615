import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from parisian_bailout import LevyModel, PiecewiseLinear, ScaleContext

from conftest import BROWNIAN, CRAMER_LUNDBERG, JUMP_DIFFUSION, MODELS


@pytest.fixture(params=list(MODELS), ids=list(MODELS))
def ctx(request):
    return ScaleContext(MODELS[request.param], 0.3)


def test_zero_on_negative_half_line(ctx):
    assert ctx.W(-1.0) == 0.0
    assert ctx.Z(-3.0) == 1.0
    assert ctx.Zbar(-3.0) == pytest.approx(-3.0)
    assert ctx.Wbar(-3.0) == 0.0
    assert ctx.Wbarbar(-3.0) == 0.0


def test_value_at_zero():
    assert ScaleContext(CRAMER_LUNDBERG, 0.4).W(0.0) == pytest.approx(1 / 1.5, rel=1e-13)
    assert ScaleContext(BROWNIAN, 0.4).W(0.0) == pytest.approx(0.0, abs=1e-14)


def test_scaled_w(ctx):
    x = np.array([0.0, 0.7, 3.0])
    assert np.allclose(ctx.W_scaled(x), np.exp(-ctx.phi_q * x) * ctx.W(x), rtol=1e-13)
    assert np.isfinite(ctx.W_scaled(5000.0))


def test_sum_rules(ctx):
    assert all(abs(v) < 1e-12 for v in ctx.closure_errors().values())


def test_brownian_matches_talbot_inversion():
    m = LevyModel(0.0, math.sqrt(2.0))
    ctx = ScaleContext(m, 0.05)
    ref = float(mpmath.invertlaplace(lambda s: 1 / (s**2 - 0.05), 2.0, method="talbot"))
    assert ctx.W(2.0) == pytest.approx(ref, rel=1e-8)


def test_jump_model_matches_talbot_inversion():
    ctx = ScaleContext(JUMP_DIFFUSION, 0.2)
    m = JUMP_DIFFUSION

    def lap(s):
        psi = m.drift * s + 0.5 * m.volatility**2 * s**2 + m.jump_rate * (
            sum(p * a / (a + s) for p, a in zip(m.jump_weights, m.jump_rates)) - 1
        )
        return 1 / (psi - 0.2)

    for x in (0.5, 1.5):
        ref = float(mpmath.invertlaplace(lap, x, method="talbot"))
        assert ctx.W(x) == pytest.approx(ref, rel=1e-8)


def test_brownian_two_exponential_form():
    q, g, e = 0.3, 0.1, 1.0
    disc = math.sqrt(g * g + 2 * e * e * q)
    hi, lo = (-g + disc) / e**2, (-g - disc) / e**2
    x = np.linspace(0.1, 5, 9)
    ref = 2 / (e * e * (hi - lo)) * (np.exp(hi * x) - np.exp(lo * x))
    assert np.allclose(ScaleContext(BROWNIAN, q).W(x), ref, rtol=1e-13)


def test_antiderivatives_against_quadrature(ctx):
    for x in (0.4, 1.7):
        wbar = quad(ctx.W, 0, x, epsabs=0, epsrel=1e-12)[0]
        assert ctx.Wbar(x) == pytest.approx(wbar, rel=1e-10)
        assert ctx.Z(x) == pytest.approx(1 + ctx.q * wbar, rel=1e-10)
        assert ctx.Wbarbar(x) == pytest.approx(quad(ctx.Wbar, 0, x, epsabs=0, epsrel=1e-12)[0], rel=1e-10)
        assert ctx.Zbar(x) == pytest.approx(quad(ctx.Z, 0, x, epsabs=0, epsrel=1e-12)[0], rel=1e-10)


def test_brownian_unit_rate_z_against_quadrature():
    ctx = ScaleContext(LevyModel(0.0, math.sqrt(2.0)), 1.0)
    ref = 1 + quad(ctx.W, 0, 1.0, epsabs=0, epsrel=1e-13)[0]
    assert ctx.Z(1.0) == pytest.approx(ref, rel=1e-10)


def test_derivatives_by_finite_differences(ctx):
    x, h = 1.3, 1e-5
    assert ctx.W_prime(x) == pytest.approx((ctx.W(x + h) - ctx.W(x - h)) / (2 * h), rel=1e-7)
    assert ctx.W_second(x) == pytest.approx((ctx.W_prime(x + h) - ctx.W_prime(x - h)) / (2 * h), rel=1e-7)


def test_w_strictly_increasing(ctx):
    x = np.linspace(1e-3, 10, 2000)
    assert np.all(np.diff(ctx.W(x)) > 0)


@given(
    drift=st.floats(0.05, 2.0),
    vol=st.one_of(st.just(0.0), st.floats(1e-3, 1.5)),
    jump_rate=st.one_of(st.just(0.0), st.floats(1e-3, 2.0)),
    alpha=st.floats(0.5, 4.0),
    q=st.floats(0.01, 2.0),
    gap=st.floats(0.1, 5.0),
)
@settings(max_examples=50, deadline=None)
def test_laplace_transform_identity(drift, vol, jump_rate, alpha, q, gap):
    if vol == 0 and jump_rate == 0:
        vol = 0.5
    m = LevyModel(drift, vol, jump_rate, (1.0,) if jump_rate else (), (alpha,) if jump_rate else ())
    ctx = ScaleContext(m, q)
    th = ctx.phi_q + gap
    # small volatility gives W a boundary layer of width ~1/|λ_min| at 0
    layer = min(1.0, 30.0 / abs(ctx.roots[-1]))
    f = lambda x: math.exp(-gap * x) * ctx.W_scaled(x)
    val = sum(
        quad(f, lo, hi, epsabs=0, epsrel=1e-12, limit=400)[0]
        for lo, hi in ((0.0, layer), (layer, layer + 45.0 / gap))
    )
    assert val == pytest.approx(1 / (m.psi(th) - q), rel=1e-7)


def test_convolution_identity(ctx):
    up = ctx.shifted(0.7)
    for x in (0.3, 1.1, 2.5):
        conv = quad(lambda u: up.W(u) * ctx.W(x - u), 0, x, epsabs=0, epsrel=1e-12)[0]
        assert up.W(x) - ctx.W(x) == pytest.approx(0.7 * conv, rel=1e-8, abs=1e-12)


def test_shifted_z_representations(ctx):
    r = 0.7
    a = ctx.shifted(r).phi_q
    assert ctx.Z_phi(0.0, r) == pytest.approx(1.0)
    x = 1.5
    first = math.exp(a * x) * (1 - r * quad(lambda z: math.exp(-a * z) * ctx.W(z), 0, x, epsabs=0, epsrel=1e-13)[0])
    second = r * quad(lambda z: math.exp(-a * z) * ctx.W(z + x), 0, 60 / a, epsabs=0, epsrel=1e-13, limit=300)[0]
    assert ctx.Z_phi(x, r) == pytest.approx(first, rel=1e-8)
    assert ctx.Z_phi(x, r) == pytest.approx(second, rel=1e-8)
    assert ctx.Z_phi_first_form(x, r) == pytest.approx(first, rel=1e-8)
    h = 1e-5
    fd = (ctx.Z_phi(1 + h, r) - ctx.Z_phi(1 - h, r)) / (2 * h)
    assert ctx.Z_phi_prime(1.0, r) == pytest.approx(fd, rel=1e-7)


def test_composites_below_barrier_reduce(ctx):
    x = np.array([0.0, 0.4, 1.0])
    assert np.allclose(ctx.W_qr(1.0, x, 0.5), ctx.W(x))
    assert np.allclose(ctx.Z_qr(1.0, x, 0.5), ctx.Z(x))
    assert np.allclose(ctx.Zbar_qr(1.0, x, 0.5), ctx.Zbar(x))


def test_composites_at_zero_barrier(ctx):
    up = ctx.shifted(0.5)
    x = np.array([0.3, 2.0])
    assert np.allclose(ctx.W_qr(0.0, x, 0.5), up.W(x), rtol=1e-12)
    assert np.allclose(ctx.Z_qr(0.0, x, 0.5), up.Z(x), rtol=1e-12)


def test_composites_against_quadrature(ctx):
    b, r = 1.0, 0.5
    up = ctx.shifted(r)
    for x in (1.0 + 1e-9, 2.0, 3.5):
        for comp, base in ((ctx.W_qr, ctx.W), (ctx.Z_qr, ctx.Z), (ctx.Zbar_qr, ctx.Zbar)):
            ref = base(x) + r * quad(lambda y: up.W(x - y) * base(y), b, x, epsabs=1e-14, epsrel=1e-11, limit=200)[0]
            assert comp(b, x, r) == pytest.approx(ref, rel=1e-8)


def test_rho_functionals(ctx):
    b = 1.0
    one = PiecewiseLinear.constant(1.0)
    for x in (0.5, 1.8, 3.0):
        assert ctx.rho(b, x, one) == pytest.approx(ctx.Wbar(x) - ctx.Wbar(x - b), rel=1e-10)
    assert ctx.rho(b, -0.5, one) == 0.0
    w = PiecewiseLinear.from_points([0.0, 0.6, 2.0], [0.0, 0.9, 1.3], 0.1)
    xs, wts = np.polynomial.legendre.leggauss(60)
    pieces = [(0.0, 0.6), (0.6, 1.0)]
    ref = sum(
        0.5 * (hi - lo) * np.sum(wts * ctx.W(1.8 - (0.5 * (hi - lo) * xs + 0.5 * (hi + lo))) * w(0.5 * (hi - lo) * xs + 0.5 * (hi + lo)))
        for lo, hi in pieces
    )
    assert ctx.rho(b, 1.8, w) == pytest.approx(ref, rel=1e-8)


def test_xi_against_quadrature(ctx):
    b, r = 1.0, 0.6
    h = PiecewiseLinear.from_points([0.0, 0.6, 2.0], [0.0, 0.9, 1.3], 0.1)
    a = ctx.shifted(r).phi_q
    # Ξ = Ω(b) + r ∫_b^∞ e^{−a(y−b)} ρ_b(y; h) dy
    tail = quad(lambda y: math.exp(-a * (y - b)) * ctx.rho(b, y, h), b, b + 40 / a, epsabs=0, epsrel=1e-11, limit=300)[0]
    omega = quad(lambda y: math.exp(-a * y) * h(b + y), 0, 40 / a, epsabs=0, epsrel=1e-11, limit=300)[0]
    assert ctx.Xi(b, h, r) == pytest.approx(omega + r * tail, rel=1e-8)


def test_rho_r_continuity_and_quadrature(ctx):
    b, r = 1.0, 0.5
    h = PiecewiseLinear.from_points([0.0, 0.6, 2.0], [0.0, 0.9, 1.3], 0.1)
    up = ctx.shifted(r)
    assert ctx.rho_r(b, b, h, r) == pytest.approx(ctx.rho(b, b, h), rel=1e-12)
    x = 2.2
    ref = ctx.rho(b, x, h) + r * quad(lambda y: up.W(x - y) * ctx.rho(b, y, h), b, x, epsabs=0, epsrel=1e-12)[0]
    assert ctx.rho_r(b, x, h, r) == pytest.approx(ref, rel=1e-8)


def test_composites_continuous_at_barrier(ctx):
    b, r, eps = 0.8, 0.5, 1e-9
    for f in (ctx.W_qr, ctx.Z_qr, ctx.Zbar_qr):
        assert f(b, b + eps, r) == pytest.approx(f(b, b - eps, r), abs=1e-7)

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiorder.errors import DomainError, PreconditionError
from hiorder.oscquad import (
    OscillatoryIntegrand,
    ProbeGrid,
    certify_decay,
    decay_bound,
    evaluate,
    mu_b,
    mu_b_identity,
    power_amplitude,
    stationary_point,
    stationary_window,
)
from hiorder.resolvent import smooth_step

from .oracles import composite_gauss_legendre, graded_composite, ray_tail


def _indicator():
    return OscillatoryIntegrand(lambda lam: np.ones_like(lam), 0.0, "high", 1.0, support=(1.0, 2.0), check=False)


def test_indicator_against_brute_force():
    # 50000 panels x 20 nodes = 1e6 nodes
    ref = composite_gauss_legendre(lambda lam: np.exp(10j * lam ** 4), 1.0, 2.0, 50_000)
    got = evaluate(_indicator(), 10.0, 0.0, 2)
    assert got.converged
    assert abs(got.value - ref) < 1e-8
    assert abs(got.value - ref) <= got.error + 1e-14


def test_zero_amplitude_is_exactly_zero():
    zero = OscillatoryIntegrand(lambda lam: np.zeros_like(lam), 0.0, "high", 1.0, check=False)
    for t, x in ((1.0, 0.0), (3.0, -2.0), (-0.5, 4.0)):
        got = evaluate(zero, t, x, 2)
        assert got.value == 0 and got.converged


def test_linearity():
    p1 = power_amplitude(0.0, 1.0, "high")
    p2 = power_amplitude(1.0, 1.0, "high")
    both = OscillatoryIntegrand(lambda lam: p1.psi(lam) + 2 * p2.psi(lam), 1.0, "high", 1.0, tail_start=2.0,
                                breakpoints=(2.0,))
    for t, x in ((1.0, 0.5), (4.0, -3.0)):
        a, b, c = (evaluate(p, t, x, 2) for p in (p1, p2, both))
        assert abs(c.value - (a.value + 2 * b.value)) <= a.error + 2 * b.error + c.error


@pytest.mark.parametrize("m", [2, 3])
@pytest.mark.parametrize("b", [0.0, 0.5, 1.0, 2.0])
@pytest.mark.parametrize("t,x", [(1.0, 0.0), (5.0, 2.0), (0.3, -1.5), (-2.0, 1.0), (0.05, 0.4)])
def test_tail_against_rotated_contour(m, b, t, x):
    amp = power_amplitude(b, 1.0, "high")
    head = composite_gauss_legendre(lambda lam: amp.psi(lam) * np.exp(1j * (t * lam ** (2 * m) + lam * x)),
                                    1.0, 2.0, 2000)
    ref = head + ray_tail(b, 2.0, t, x, m)
    got = evaluate(amp, t, x, m)
    assert got.converged
    assert abs(got.value - ref) < 1e-9


def _random_integrand(rng, m):
    """Smooth compactly supported amplitude with a brute-force-feasible phase range."""
    domain = rng.choice(["low", "high"])
    coeffs = rng.normal(size=3) + 1j * rng.normal(size=3)
    if domain == "low":
        lam0 = rng.uniform(0.3, 0.9)
        b = float(rng.choice([0.0, 0.5, 1.0, 1.5]))
        ramp = rng.uniform(0.2, 0.8)

        def amp(lam):
            poly = coeffs[0] + coeffs[1] * lam + coeffs[2] * lam ** 2
            return lam ** b * poly * (1 - smooth_step((lam - ramp * lam0) / ((1 - ramp) * lam0)))

        return OscillatoryIntegrand(amp, b, "low", lam0), (0.0, lam0)
    lam0 = rng.uniform(0.5, 1.5)
    top = lam0 * rng.uniform(1.5, 3.0)

    def amp(lam):
        poly = coeffs[0] + coeffs[1] * lam + coeffs[2] * np.sin(lam)
        return poly * smooth_step((lam - lam0) / 0.3) * (1 - smooth_step((lam - top) / 0.4))

    return OscillatoryIntegrand(amp, 0.0, "high", lam0, support=(lam0, top + 0.4), check=False), (lam0, top + 0.4)


def test_randomized_against_brute_force():
    rng = np.random.default_rng(20260)
    checked = 0
    for _ in range(100):
        m = int(rng.choice([2, 3]))
        integrand, (a, b) = _random_integrand(rng, m)
        t = float(rng.uniform(0.1, 10.0) * rng.choice([-1, 1]))
        if abs(t) * b ** (2 * m) >= 1e4:
            t = math.copysign(1e4 / b ** (2 * m) / 2, t)
        x = float(rng.uniform(-20, 20))

        def f(lam):
            return integrand.psi(lam) * np.exp(1j * (t * lam ** (2 * m) + lam * x))

        if integrand.domain == "low":
            ref = graded_composite(f, b, 4000)
        else:
            ref = composite_gauss_legendre(f, a, b, 4000)
        got = evaluate(integrand, t, x, m, tol=1e-10)
        assert got.converged
        assert abs(got.value - ref) < 1e-10, (integrand.domain, t, x, m)
        checked += 1
    assert checked == 100


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 20), st.floats(-10, 10), st.sampled_from([0.0, 0.5, 1.0]), st.sampled_from(["low", "high"]))
def test_phase_conjugation(t, x, b, domain):
    amp = power_amplitude(b, 0.5 if domain == "low" else 1.0, domain)
    plus = evaluate(amp, t, x, 2)
    minus = evaluate(amp, -t, -x, 2)
    assert abs(minus.value - np.conj(plus.value)) <= plus.error + minus.error + 1e-13


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.integers(2, 4), st.sampled_from([1, -1]))
def test_stationary_point_identity(t, x, m, sign):
    star = stationary_point(sign * t, -sign * x, m)
    assert abs(2 * m * sign * t * star ** (2 * m - 1) + (-sign * x)) <= 1e-13 * x
    assert stationary_point(sign * t, sign * x, m) is None
    lo, hi = stationary_window(sign * t, -sign * x, m)
    for edge in (lo, hi):
        # window edges sit exactly on |2m lam^{2m-1} + x/t| = |x/t|/2
        gap = abs(2 * m * edge ** (2 * m - 1) + (-sign * x) / (sign * t))
        assert gap == pytest.approx(0.5 * x / t, rel=1e-12)


def test_mu_b_arithmetic():
    assert mu_b(2, Fraction(1)) == 0
    assert mu_b(3, 0) == Fraction(2, 5)
    for m in (2, 3, 4):
        values = [mu_b(m, Fraction(k, 4)) for k in range(-2, 4 * (2 * m - 1))]
        assert all(a > b for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("m", [2, 3, 4])
def test_mu_b_identity_exact(m):
    for n in range(1, 2 * m + 1):
        lhs, rhs = mu_b_identity(m, n)
        assert isinstance(lhs, Fraction) and lhs == rhs


def test_bound_reduces_to_one_over_t():
    # m = 2, b = (n-1)/2 with n = 3: mu_b = 0, so the growth law is |t|^{-(1+b)/2m} = |t|^{-1/2}
    for t, x in ((2.0, 10.0), (16.0, 40.0)):
        assert decay_bound("high", 1.0, 2, t, x) == pytest.approx(abs(t) ** -0.5, rel=1e-15)


@pytest.mark.parametrize("m", [2, 3])
@pytest.mark.parametrize("b", [0.0, 1.0, 2.0])
@pytest.mark.parametrize("domain", ["low", "high"])
def test_certificate_passes(m, b, domain):
    amp = power_amplitude(b, 0.5 if domain == "low" else 1.0, domain)
    ts = (1.0, 4.0, 16.0, 64.0, 256.0) if domain == "low" else (0.0625, 0.25, 1.0, 4.0, 16.0)
    cert = certify_decay(amp, m, 1, ProbeGrid(ts, (0.0, 0.5, 2.0, 8.0)), workers=4)
    assert cert.passed, cert
    assert cert.mu_b == mu_b(m, Fraction(b))
    assert max(cert.sups) < 3 * cert.sups[0]


def test_certificate_oracle_probes():
    # the certifier's own evaluations against brute force at 20 random probes
    rng = np.random.default_rng(7)
    amp = power_amplitude(0.0, 0.5, "low")
    for _ in range(20):
        t = float(rng.uniform(1, 256))
        x = float(rng.uniform(-8, 8) * t ** 0.25)
        ref = graded_composite(lambda lam: amp.psi(lam) * np.exp(1j * (t * lam ** 4 + lam * x)), 0.5, 4000)
        assert abs(evaluate(amp, t, x, 2).value - ref) < 1e-10


def test_certificate_fails_for_wrong_b():
    # psi ~ lam^{-1/2} near 0 declared as b = 6.5 (allowed with k = 2): |I| / bound
    # grows like t^{7/4}, far outside the factor-3 window over two extensions
    real = power_amplitude(-0.5, 0.5, "low")
    lying = OscillatoryIntegrand(real.amplitude, 6.5, "low", 0.5, check=False)
    cert = certify_decay(lying, 2, 2, ProbeGrid((256.0, 1024.0, 4096.0), (0.0, 0.5)))
    assert not cert.passed
    assert cert.sups[2] > 3 * cert.sups[0]


def test_certificate_detection_limit():
    # growth slower than t^{log2(3)/2} per extension stays within the factor-3 window
    amp = power_amplitude(2.0, 1.0, "high")
    lying = OscillatoryIntegrand(amp.amplitude, 0.0, "high", 1.0, tail_start=2.0, derivative=amp.derivative,
                                 breakpoints=(2.0,), check=False)
    cert = certify_decay(lying, 2, 1, ProbeGrid((0.25, 1.0, 4.0), (0.0, 2.0)))
    assert cert.sups[0] < cert.sups[1] < cert.sups[2] < 3 * cert.sups[0]


def test_symbol_gate():
    with pytest.raises(DomainError):
        OscillatoryIntegrand(lambda lam: lam ** 2, 0.0, "high", 1.0)
    with pytest.raises(DomainError):
        OscillatoryIntegrand(lambda lam: lam ** -0.5, 0.5, "low", 0.5)
    ok = OscillatoryIntegrand(lambda lam: lam ** 2, 2.0, "high", 1.0)
    assert ok.gate["ok"]


def test_certify_preconditions():
    amp = power_amplitude(3.5, 1.0, "high")
    with pytest.raises(PreconditionError):
        certify_decay(amp, 2, 1, ProbeGrid((1.0,), (2.0,)))
    low = OscillatoryIntegrand(lambda lam: lam ** -0.7, -0.7, "low", 0.5)
    with pytest.raises(PreconditionError):
        certify_decay(low, 2, 1, ProbeGrid((1.0,), (2.0,)))
    certify_decay(low, 2, 1, ProbeGrid((1.0, 2.0), (0.5,)))


def test_budget_exhaustion_is_flagged():
    amp = power_amplitude(0.0, 0.5, "low")
    got = evaluate(amp, 1e6, 3.0, 2, max_panels=10)
    assert not got.converged
    assert "tolerance not reached" in got.notes
    ref = evaluate(amp, 1e6, 3.0, 2)
    assert abs(got.value - ref.value) <= got.error + ref.error


def test_domain_errors():
    amp = power_amplitude(0.0, 1.0, "high")
    with pytest.raises(DomainError):
        evaluate(amp, 0.0, 1.0, 2)
    with pytest.raises(DomainError):
        OscillatoryIntegrand(lambda lam: lam, 0.0, "middle", 1.0, check=False)
    with pytest.raises(DomainError):
        OscillatoryIntegrand(lambda lam: lam, -1.0, "low", 1.0, check=False)

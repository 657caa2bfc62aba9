import json
import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import IntegrationWarning, dblquad

from hiorder.errors import DomainError, PreconditionError
from hiorder.harness import (
    DecayReport,
    LpqPoint,
    SlopeFit,
    _u_grid,
    distance_moment,
    exponent_fit,
    kernel_lq_norm,
    lpq_scaling_check,
    moment_bound_check,
    pointwise_bound,
    pointwise_report,
    region_membership,
    region_vertices,
    tau,
)
from hiorder.profiles import GaussianTerm, Profile
from hiorder.spectral import OperatorSpec

GAUSS = OperatorSpec(2, 1, (Profile.gaussian(1),), (1.0,))
# isotropic, zero mass: e^{-|y|^2} - 2^{-3/2} e^{-|y|^2/2}
ZERO_MASS_3D = Profile([GaussianTerm(1.0, (0, 0, 0), 1.0, (0.0, 0.0, 0.0)),
                        GaussianTerm(-2 ** -1.5, (0, 0, 0), math.sqrt(2), (0.0, 0.0, 0.0))], normalize=False)


# ------------------------------------------------------------------ bound

@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.floats(1e-3, 1e3), st.floats(0, 1e3), st.floats(1.01, 10))
def test_bound_monotone(m, n, t, d, factor):
    b = pointwise_bound(m, n, t, d)
    assert pointwise_bound(m, n, t * factor, d) < b
    assert pointwise_bound(m, n, -t, d) == b
    if m > 1:
        assert pointwise_bound(m, n, t, d * factor + 1e-3) < b
    else:
        assert pointwise_bound(m, n, t, d * factor + 1e-3) == b


def test_bound_exponents():
    # m = 2, n = 1: t^{-1/4} (1 + u)^{-1/3}
    assert pointwise_bound(2, 1, 16.0, 14.0) == pytest.approx(0.5 * 8.0 ** (-1 / 3), rel=1e-15)


def test_slope_fit_exact_line():
    xs = np.linspace(0, 3, 10)
    fit = SlopeFit.of(xs, -0.25 * xs + 1.5)
    assert fit.slope == pytest.approx(-0.25, abs=1e-14)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-14)
    assert fit.ci95[0] <= fit.slope <= fit.ci95[1]


# ------------------------------------------------------------------ region

def test_tau_values():
    assert tau(2) == 3
    assert tau(3) == Fraction(5, 2)
    with pytest.raises(DomainError):
        tau(1)


@pytest.mark.parametrize("m", [2, 3, 4])
def test_vertices_are_members(m):
    v = region_vertices(m)
    assert v["B"] == (1, 1 / tau(m)) and v["D"] == (1 - 1 / tau(m), 0)
    for point in v.values():
        assert LpqPoint(1 / point[0] if point[0] else math.inf, 1 / point[1] if point[1] else math.inf, m).member


def test_named_points():
    assert region_membership(1, "inf", 2)
    assert region_membership(2, 2, 2)
    assert region_membership(1, 3, 2)
    assert not region_membership("inf", 1, 2)
    assert not region_membership(4, 2, 2)
    # just past B along the p = 1 edge
    assert not region_membership(1, Fraction(29, 10), 2)
    with pytest.raises(DomainError):
        region_membership(Fraction(1, 2), 2, 2)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 5), st.lists(st.integers(0, 50), min_size=4, max_size=4).filter(lambda w: sum(w) > 0))
def test_convex_combinations_are_members(m, weights):
    v = list(region_vertices(m).values())
    total = sum(weights)
    point = tuple(sum(Fraction(w, total) * p[k] for w, p in zip(weights, v)) for k in range(2))
    inv = tuple(1 / c if c else math.inf for c in point)
    assert LpqPoint(*inv, m).member


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 5), st.fractions(0, 1, max_denominator=40), st.fractions(0, 1, max_denominator=40))
def test_membership_matches_half_planes(m, a, b):
    # independent description: q-side bounds and the two slanted edges
    tm = tau(m)
    half = Fraction(1, 2)
    inside = (a <= 1 and b >= 0
              and b <= half - (a - half) * (half - 1 / tm) / half  # below A-B
              and b >= half - (a - half) * half / (half - 1 / tm))  # right of D-A
    inv = (1 / a if a else math.inf, 1 / b if b else math.inf)
    if a == 0:
        return
    assert LpqPoint(*inv, m).member == inside


def test_rate():
    assert LpqPoint(1, math.inf, 2).rate(1) == Fraction(-1, 4)
    assert LpqPoint(1, 4, 2).rate(1) == Fraction(-3, 16)
    assert LpqPoint(2, 2, 3).rate(1) == 0


# ------------------------------------------------------------------ L^q norms

def test_lq_norm_gaussian_profile():
    us = _u_grid(60.0)
    value, share = kernel_lq_norm(us, np.exp(-us ** 2), 2.0, 1.0, 1.0)
    assert value == pytest.approx((math.pi / 2) ** 0.25, rel=1e-12)
    assert share == 0.0


def test_lq_norm_power_tail():
    # int (1 + |u|)^{-2} du = 2; trapezoid on the geometric outer grid costs ~4e-4
    us = _u_grid(60.0)
    value, share = kernel_lq_norm(us, (1 + np.abs(us)) ** -0.5, 4.0, 1.0, 0.5)
    assert value == pytest.approx(2 ** 0.25, rel=1e-3)
    assert 0 < share < 0.05
    scaled, _ = kernel_lq_norm(us, (1 + np.abs(us)) ** -0.5, 4.0, 16.0, 0.5)
    assert scaled == pytest.approx(2 * value, rel=1e-14)
    assert kernel_lq_norm(us, (1 + np.abs(us)) ** -0.5, math.inf, 1.0, 0.5)[0] == 1.0


def test_lq_norm_refuses_divergent_tail():
    us = _u_grid(60.0)
    with pytest.raises(PreconditionError):
        kernel_lq_norm(us, (1 + np.abs(us)) ** -0.25, 4.0, 1.0, 0.25)


def test_lpq_unitary_row_is_flat():
    report = lpq_scaling_check(GAUSS, (2, 2))
    assert abs(report.slopes["lpq"]["slope"]) < 1e-10
    assert report.verdict == "pass"
    assert all(abs(s["norm"] - 1) < 1e-10 for s in report.shells)


def test_lpq_refusals():
    with pytest.raises(DomainError):
        lpq_scaling_check(GAUSS, (1, 3))  # endpoint B
    with pytest.raises(DomainError):
        lpq_scaling_check(GAUSS, (4, 2))  # outside
    with pytest.raises(DomainError):
        lpq_scaling_check(GAUSS, (Fraction(4, 3), 4))  # inside, not computable from the kernel
    with pytest.raises(DomainError):
        lpq_scaling_check(OperatorSpec(2, 3), (1, "inf"))


def test_lpq_free_sup_row():
    report = lpq_scaling_check(OperatorSpec(2, 1), (1, "inf"), t_range=(0.25, 16.0))
    assert report.slopes["lpq"]["slope"] == pytest.approx(-0.25, abs=1e-6)
    assert report.verdict == "pass"


# ------------------------------------------------------------------ pointwise and exponents

def test_pointwise_m1_ratio_constant():
    report = pointwise_report(OperatorSpec(1, 1), t_range=(0.25, 4.0), per_shell=1)
    sups = [s["sup_ratio"] for s in report.shells]
    assert max(sups) / min(sups) < 1 + 1e-6
    assert sups[0] == pytest.approx((4 * math.pi) ** -0.5, rel=1e-6)
    assert report.verdict == "pass"


def test_pointwise_free_m2_stable():
    report = pointwise_report(OperatorSpec(2, 1), t_range=(2.0 ** -3, 2.0 ** 3), per_shell=1)
    sups = [s["sup_ratio"] for s in report.shells]
    # free kernel is scale invariant in the scaled sampling: same supremum in every shell
    assert max(sups) / min(sups) < 1 + 1e-6
    assert report.verdict == "pass"


def test_exponent_fit_free():
    report = exponent_fit(OperatorSpec(2, 1))
    assert report.slopes["time"]["slope"] == pytest.approx(-0.25, abs=1e-6)
    assert abs(report.slopes["space"]["slope"] + 1 / 3) < 0.05
    assert report.verdict == "pass"


def test_exponent_fit_gaussian():
    report = exponent_fit(GAUSS)
    assert abs(report.slopes["time"]["slope"] + 0.25) < 0.02
    assert abs(report.slopes["space"]["slope"] + 1 / 3) < 0.05
    assert report.verdicts == {"time": "pass", "space": "pass"}


def test_report_json_fields():
    report = exponent_fit(OperatorSpec(2, 1), t_range=(64.0, 256.0), samples=40)
    doc = json.loads(report.to_json())
    assert set(doc) == {"kind", "spec_digest", "grids", "shells", "slopes", "verdicts", "notes", "verdict"}
    assert doc["spec_digest"] == OperatorSpec(2, 1).digest()
    assert len(doc["slopes"]["time"]["ci95"]) == 2
    assert doc["verdict"] == report.verdict


def test_report_verdict_combination():
    r = DecayReport("x", "d", {})
    r.verdicts = {"a": "pass", "b": "inconclusive"}
    assert r.verdict == "inconclusive"
    r.verdicts["c"] = "fail"
    assert r.verdict == "fail"


# ------------------------------------------------------------------ moments

def test_zero_mass_profile_layout():
    x = np.array([1.0, 0.0, 0.0])
    assert ZERO_MASS_3D(x) == pytest.approx(math.exp(-1) - 2 ** -1.5 * math.exp(-0.5), rel=1e-14)


def _cylindrical_moment(X):
    # int |x - y| phi(y) dy in cylindrical coordinates about the x axis
    f = lambda rho, z: 2 * math.pi * rho * math.hypot(rho, X - z) * float(
        ZERO_MASS_3D(np.array([rho, 0.0, z])))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        return dblquad(f, -12, 12, 0, 12, epsabs=1e-12, epsrel=1e-12)[0]


@pytest.mark.parametrize("X", [0.7, 3.0, 20.0])
def test_radial_distance_moment_vs_cylindrical(X):
    ours = distance_moment(ZERO_MASS_3D, 1, np.array([X, 0.0, 0.0]))
    assert abs(ours - _cylindrical_moment(X)) < 1e-7


@pytest.mark.parametrize("X", [10.0, 40.0, 100.0])
def test_radial_distance_moment_closed_form(X):
    # for X beyond the support: (4 pi / 3X) int s^4 f(s) ds = -pi^{3/2} / (2X)
    ours = distance_moment(ZERO_MASS_3D, 1, np.array([0.0, X, 0.0]))
    assert ours == pytest.approx(-math.pi ** 1.5 / (2 * X), rel=1e-9)


def test_moment_power_law():
    report = moment_bound_check(ZERO_MASS_3D, 1, 2)
    assert report.regime == "power-law"
    assert abs(report.slope + 1) < 0.1
    assert report.verdict == "pass"


def test_moment_exact_zero_regime():
    odd = Profile.monomial((1,))
    report = moment_bound_check(odd, 0, 1)
    assert report.regime == "exact-zero" and report.slope is None and report.verdict == "pass"
    assert abs(distance_moment(odd, 0, 5.0)) < 1e-14
    # even r = 0 against a mean-zero profile in 3-d: also identically zero
    assert abs(distance_moment(ZERO_MASS_3D, 0, np.array([4.0, 0.0, 0.0]))) < 1e-12


def test_moment_one_dim_odd_r_not_power_law():
    # n = 1, r = 1: |x - y| is linear in y outside the support, so the value is exponentially small
    report = moment_bound_check(Profile.with_vanishing_moments(2), 1, 2)
    assert report.regime != "power-law"
    assert max(abs(v) for v in report.values[len(report.values) // 2:]) < 1e-12


def test_moment_preconditions():
    with pytest.raises(PreconditionError):
        moment_bound_check(Profile.gaussian(1), 0, 0)
    with pytest.raises(PreconditionError):
        moment_bound_check(Profile.gaussian(1), 0, 1)  # mean is not zero
    with pytest.raises(PreconditionError):
        moment_bound_check(Profile.monomial((1,)), 1, 1)  # r > k0 - 1
    with pytest.raises(PreconditionError):
        moment_bound_check(ZERO_MASS_3D, -2, 2)  # r < -(n - 1)/2

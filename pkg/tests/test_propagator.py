import cmath
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hiorder.errors import DomainError, PreconditionError, RefusalError
from hiorder.profiles import Profile
from hiorder.propagator import (
    EnergySplit,
    GridOracle,
    KernelSample,
    PerturbationEngine,
    engine_for,
    free_kernel,
    free_kernel_m1,
    kernel_sample,
    kernel_sweep,
    oracle_perturbation,
    perturbation_kernel,
    read_csv,
    write_csv,
    write_jsonl,
)
from hiorder.spectral import OperatorSpec, borel_matrix, critical_alpha, rzero_phi_fourier

from .oracles import rotated_free_kernel


def _gauss(m=2, alpha=1.0):
    return OperatorSpec(m, 1, (Profile.gaussian(1),), (alpha,))


def _pair(m=2):
    return OperatorSpec(m, 1, (Profile.gaussian(1), Profile.monomial((1,))), (1.0, 2.0))


# ------------------------------------------------------------------ free kernel

@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("t", [0.3, -1.0, 4.0])
def test_m1_reduces_to_heat_kernel_form(n, t):
    for r in (0.0, 0.5, 2.0):
        exact = (4j * math.pi * t) ** (-n / 2) * cmath.exp(1j * r * r / (4 * t))
        assert abs(free_kernel_m1(n, t, r) - exact) <= 1e-12 * abs(exact)


def test_m1_modulus():
    for t in (0.1, 1.0, 7.0):
        assert abs(abs(free_kernel_m1(1, t, 1.3)) - (4 * math.pi * t) ** -0.5) < 1e-9


def test_m2_origin_closed_form():
    exact = math.gamma(1.25) * cmath.exp(-1j * math.pi / 8) / math.pi
    assert abs(free_kernel(2, 1, 1.0, 0.0) - exact) < 1e-10


@pytest.mark.parametrize("m,n", [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2), (3, 3)])
@pytest.mark.parametrize("t,r", [(0.5, 0.0), (1.0, 0.7), (-2.0, 3.0), (5.0, 8.0)])
def test_free_kernel_against_rotated_contour(m, n, t, r):
    ref = rotated_free_kernel(m, n, t, r)
    assert abs(free_kernel(m, n, t, r) - ref) < 1e-9


@given(st.sampled_from([2, 3]), st.sampled_from([1, 2, 3]),
       st.floats(0.2, 5.0), st.floats(0.0, 6.0))
@settings(max_examples=15, deadline=None)
def test_free_time_reversal(m, n, t, r):
    assert abs(free_kernel(m, n, -t, r) - np.conj(free_kernel(m, n, t, r))) < 1e-10


def test_free_kernel_rejects_t_zero():
    with pytest.raises(DomainError):
        free_kernel(2, 1, 0.0, 1.0)


# ------------------------------------------------------------------ perturbation

def test_no_profiles_means_no_correction():
    spec = OperatorSpec(2, 1)
    s = kernel_sample(spec, 1.0, 0.5, -0.5)
    assert s.K_pert == 0
    assert s.K_total == s.K_free


@given(st.floats(0.3, 5.0), st.floats(-4.0, 4.0), st.floats(-4.0, 4.0))
@settings(max_examples=10, deadline=None)
def test_perturbation_symmetric_in_x_y(t, x, y):
    spec = _gauss()
    a = perturbation_kernel(spec, None, t, x, y, tol=1e-8)
    b = perturbation_kernel(spec, None, t, y, x, tol=1e-8)
    assert abs(a - b) < 1e-7


@given(st.floats(0.3, 5.0), st.floats(-4.0, 4.0), st.floats(-4.0, 4.0))
@settings(max_examples=10, deadline=None)
def test_perturbation_time_reversal(t, x, y):
    spec = _pair()
    a = perturbation_kernel(spec, None, -t, x, y, tol=1e-8)
    b = perturbation_kernel(spec, None, t, x, y, tol=1e-8)
    assert abs(a - np.conj(b)) < 1e-7


@pytest.mark.parametrize("m", [2, 3])
def test_energy_split_does_not_change_the_kernel(m):
    spec = _gauss(m)
    for t, x, y in ((0.5, 0.0, 0.0), (2.0, 1.5, -3.0), (5.0, 6.0, 2.0)):
        values = [perturbation_kernel(spec, EnergySplit(lam0), t, x, y, tol=1e-10) for lam0 in (0.3, 0.5, 0.8)]
        assert max(abs(v - values[0]) for v in values) < 1e-8
        free = [free_kernel(m, 1, t, abs(x - y), EnergySplit(lam0)) for lam0 in (0.3, 0.5, 0.8)]
        assert max(abs(v - free[0]) for v in free) < 1e-9


def test_line_f_matrix_matches_fourier_route():
    spec = _pair()
    engine = engine_for(spec)
    assert engine.route == "line"
    lam = np.array([0.05, 0.4, 1.0, 2.5])
    got = engine.f_matrix(lam)
    for k, value in enumerate(lam):
        assert np.max(np.abs(got[k] - borel_matrix(spec, float(value)))) < 1e-10


def test_radial_route_matches_fourier_route():
    spec = OperatorSpec(2, 3, (Profile.gaussian(3),), (1.0,))
    engine = engine_for(spec)
    assert engine.route == "radial"
    lam = np.array([0.3, 1.0, 2.0])
    for x in (np.array([0.4, -0.2, 0.7]), np.array([2.0, 0.0, 1.0])):
        ref = np.array([complex(rzero_phi_fourier(spec, 0, float(v), x).value) for v in lam])
        assert np.max(np.abs(engine.rzero(0, lam, x) - ref)) < 1e-9
    f_ref = np.array([borel_matrix(spec, float(v))[0, 0] for v in lam])
    assert np.max(np.abs(engine.f_matrix(lam)[:, 0, 0] - f_ref)) < 1e-10


def test_radial_integrand_matches_fourier_integrand():
    # whole kernels through the Fourier route take minutes; the lam-integrand is the whole difference
    spec = OperatorSpec(2, 3, (Profile.gaussian(3),), (1.0,))
    fast = PerturbationEngine(spec)
    slow = PerturbationEngine(spec)
    slow.route = "fourier"
    lam = np.array([0.1, 0.45, 0.9, 1.7])
    x, y = np.array([0.4, -0.2, 0.7]), np.array([0.0, 0.5, 0.0])
    assert np.max(np.abs(fast.s_plus(lam, x, y) - slow.s_plus(lam, x, y))) < 1e-9


def test_two_dimensional_sample_runs_on_the_fourier_route():
    spec = OperatorSpec(2, 2, (Profile.gaussian(2),), (1.0,))
    s = kernel_sample(spec, 1.0, [0.3, 0.1], [0.0, 0.5], tol=1e-5)
    assert "route:fourier" in s.flags
    assert not any("unconverged" in f for f in s.flags)
    assert s.error_estimate < 1e-5


def test_refusal_at_critical_alpha():
    base = engine_for(_gauss())
    lam0 = base.split.lam0
    grid = np.concatenate([np.geomspace(1e-3 * lam0, lam0, 100), np.linspace(lam0, base.lam_max, 400)[1:]])
    ac = critical_alpha(_gauss(), grid)
    at = PerturbationEngine(_gauss(alpha=ac), floor=0.0)
    assert abs(at.condition[0] - 0.1) < 1e-8
    with pytest.raises(RefusalError):
        PerturbationEngine(_gauss(alpha=ac), floor=0.1 + 1e-6)
    assert PerturbationEngine(_gauss(alpha=0.9 * ac)).condition[0] > 0.1


def test_sweep_refuses_before_any_sample():
    spec = _gauss(alpha=60.0)
    with pytest.raises(RefusalError):
        next(kernel_sweep(spec, [1.0], [(0.0, 0.0)]))


def test_dimension_mismatch():
    with pytest.raises(DomainError):
        kernel_sample(_gauss(), 1.0, [0.0, 1.0], 0.0)
    with pytest.raises(DomainError):
        engine_for(OperatorSpec(2, 4, (Profile.gaussian(4),), (1.0,)))


# ------------------------------------------------------------------ grid oracle

def test_oracle_alpha_zero_is_the_torus_mode_sum():
    L, M = 40 * math.pi, 512
    g = GridOracle(OperatorSpec(2, 1), L, M)
    k = 2 * math.pi * np.arange(-M // 2 + 1, M // 2) / (2 * L)
    nyq = math.pi * M / (2 * L)
    for t, x, y in ((0.8, 0.37, -1.21), (-2.0, 3.3, 2.9), (5.0, 0.0, 0.0)):
        exact = (np.sum(np.exp(1j * k * (x - y) - 1j * t * k ** 4))
                 + math.cos(nyq * x) * math.cos(nyq * y) * np.exp(-1j * t * nyq ** 4)) / (2 * L)
        assert abs(g.kernel(t, x, y) - exact) < 1e-12


def test_oracle_unitary_and_resolvent():
    g = GridOracle(_pair(), 40 * math.pi, 1024)
    f = np.exp(-(g.grid - 1.0) ** 2) * (1 + 0.3j * g.grid)
    for t in (0.5, 3.0, -7.0):
        assert abs(g.norm(g.evolve(f, t)) - g.norm(f)) < 1e-10 * g.norm(f)
    for z in (1 + 0.5j, -2 + 1j, 0.3 - 0.2j):
        assert g.resolvent_residual(z, f) < 1e-8


def test_oracle_preconditions():
    wide = OperatorSpec(2, 1, (Profile.gaussian(1, width=80.0),), (1.0,))
    with pytest.raises(PreconditionError):
        GridOracle(wide, 40 * math.pi, 512)
    with pytest.raises(DomainError):
        GridOracle(OperatorSpec(2, 2), 40 * math.pi, 512)
    with pytest.raises(DomainError):
        GridOracle(OperatorSpec(2, 1), 40 * math.pi, 511)


def test_perturbation_against_oracle_at_origin():
    spec = _gauss()
    ref = oracle_perturbation(spec, 1.0, [0.0], [0.0])[0]
    got = perturbation_kernel(spec, None, 1.0, 0.0, 0.0, tol=1e-10)
    assert abs(got - ref) < 1e-3 * abs(ref)


@pytest.mark.parametrize("spec", [_gauss(), _pair()], ids=["gaussian", "gaussian+odd"])
def test_perturbation_against_oracle(spec):
    xs = np.array([0.0, 1.0, -2.5, 4.0, 6.0])
    ys = np.array([0.0, -1.0, 1.5, 4.0, -3.0])
    for t in (0.5, 2.0, 5.0):
        ref = oracle_perturbation(spec, t, xs, ys, L=160 * math.pi)
        got = np.array([perturbation_kernel(spec, None, t, x, y, tol=1e-8) for x, y in zip(xs, ys)])
        assert np.max(np.abs(got - ref)) < 1e-4


# ------------------------------------------------------------------ sweeps and output

def test_single_point_sweep_equals_sample():
    spec = _gauss()
    (s,) = list(kernel_sweep(spec, [1.5], [(0.5, -1.0)], tol=1e-8))
    assert s == kernel_sample(spec, 1.5, 0.5, -1.0, tol=1e-8)


def test_sweep_order_and_reproducibility():
    spec = _gauss()
    ts, xy = [0.5, 2.0], [(0.0, 0.0), (1.0, -1.0), (3.0, 2.0)]
    one = list(kernel_sweep(spec, ts, xy, tol=1e-6))
    two = list(kernel_sweep(spec, ts, xy, tol=1e-6, workers=3))
    assert [(s.t, s.x, s.y) for s in one] == [(t, (x,), (y,)) for t in ts for x, y in xy]
    assert one == two


def test_csv_and_jsonl_layout():
    spec = _gauss()
    samples = list(kernel_sweep(spec, [1.0], [(0.0, 1.0), (2.0, -2.0)], tol=1e-6))
    buf = io.StringIO()
    assert write_csv(samples, buf, {"m": 2, "seed": 0}) == 2
    text = buf.getvalue()
    assert text.splitlines()[0] == "# m: 2"
    assert text.splitlines()[2] == ",".join(KernelSample.FIELDS)
    rows = read_csv(text)
    assert complex(float(rows[1]["re_pert"]), float(rows[1]["im_pert"])) == samples[1].K_pert
    buf = io.StringIO()
    write_jsonl(samples, buf, {"m": 2})
    lines = buf.getvalue().splitlines()
    assert json.loads(lines[0]) == {"provenance": {"m": 2}}
    assert list(json.loads(lines[1])) == list(KernelSample.FIELDS)

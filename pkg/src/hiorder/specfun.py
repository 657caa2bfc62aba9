"""Hankel functions and Laplacian resolvent kernels.

Only what the higher-order splitting needs is covered: integer and
half-integer orders nu >= -1/2 and arguments in the closed upper half-plane.
All functions broadcast over numpy arrays; scalar input gives scalar output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import roots_genlaguerre

from .errors import DomainError, OverflowGuardError, SingularityError

SERIES_RADIUS = 12.0
OVERLAP_BAND = (10.0, 14.0)
# exp(700) is close to the largest finite double
OVERFLOW_IMAG = 700.0
LAGUERRE_IMAG = 2.0
_LAGUERRE_NODES = 48
_SERIES_TERMS = 80
_ASYMPTOTIC_TERMS = 40
_EULER_GAMMA = 0.57721566490153286061


@dataclass(frozen=True)
class RayPoint:
    """The point lam * exp(i k pi / m) used by the splitting identity."""

    lam: float
    k: int
    m: int

    @property
    def value(self) -> complex:
        return self.lam * complex(np.exp(1j * math.pi * self.k / self.m))

    @property
    def omega(self) -> complex:
        """Root of unity exp(2 pi i k / m) = value**2 / lam**2."""
        return complex(np.exp(2j * math.pi * self.k / self.m))


def order_from_dimension(n: int) -> Fraction:
    """Hankel order n/2 - 1 attached to dimension n."""
    if n < 1:
        raise DomainError(f"dimension must be >= 1, got {n}")
    return Fraction(n, 2) - 1


def _check_order(nu) -> Fraction:
    frac = Fraction(nu).limit_denominator(2)
    if abs(float(frac) - float(nu)) > 1e-12 or frac.denominator not in (1, 2):
        raise DomainError(f"order must be an integer or half-integer, got {nu}")
    if frac < Fraction(-1, 2):
        raise DomainError(f"order must be >= -1/2, got {nu}")
    return frac


def _kind_index(kind) -> int:
    if kind in (1, "1", "first"):
        return 1
    if kind in (2, "2", "second"):
        return 2
    raise DomainError(f"kind must be first or second, got {kind!r}")


def _prepare(z) -> tuple[np.ndarray, bool]:
    arr = np.asarray(z, dtype=complex)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr == 0):
        raise DomainError("Hankel functions are singular at z = 0")
    if np.any(arr.imag < -1e-14 * np.maximum(1.0, np.abs(arr))):
        raise DomainError("argument must lie in the closed upper half-plane")
    return arr, scalar


def _finish(out: np.ndarray, scalar: bool):
    return complex(out[0]) if scalar else out


def _half_integer_hankel(ell: int, z: np.ndarray, kind: int) -> np.ndarray:
    """Closed form through the spherical Hankel polynomial; ell = nu - 1/2."""
    pref = np.sqrt(2.0 / (math.pi * z))
    if ell < 0:  # nu = -1/2
        return pref * np.exp(1j * z) if kind == 1 else pref * np.exp(-1j * z)
    sign = 1j if kind == 1 else -1j
    total = np.zeros_like(z)
    for k in range(ell + 1):
        coeff = math.factorial(ell + k) / (math.factorial(k) * math.factorial(ell - k))
        total = total + coeff * (sign / (2.0 * z)) ** k
    phase = np.exp(sign * z) * (-sign) ** (ell + 1)
    return pref * phase * total


def _bessel_series(nu: int, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Power series for J_nu and Y_nu (integer nu >= 0)."""
    half = z / 2.0
    q = -half * half
    jsum = np.zeros_like(z)
    ysum = np.zeros_like(z)
    term = np.ones_like(z) / math.factorial(nu)  # q**k / (k! (k+nu)!)
    harmonic_k = 0.0
    harmonic_kn = sum(1.0 / j for j in range(1, nu + 1))
    for k in range(_SERIES_TERMS):
        if k > 0:
            term = term * q / (k * (k + nu))
            harmonic_k += 1.0 / k
            harmonic_kn += 1.0 / (k + nu)
        jsum = jsum + term
        psi_sum = -2.0 * _EULER_GAMMA + harmonic_k + harmonic_kn
        ysum = ysum + psi_sum * term
    halfpow = half ** nu
    jv = halfpow * jsum
    yv = (2.0 / math.pi) * jv * (np.log(z) - math.log(2.0)) - halfpow * ysum / math.pi
    if nu > 0:
        finite = np.zeros_like(z)
        for k in range(nu):
            finite = finite + (math.factorial(nu - k - 1) / math.factorial(k)) * half ** (2 * k - nu)
        yv = yv - finite / math.pi
    return jv, yv


def _asymptotic_hankel(nu: int, z: np.ndarray, kind: int) -> np.ndarray:
    """Large-|z| expansion truncated at its smallest term."""
    mu = 4.0 * nu * nu
    sign = 1j if kind == 1 else -1j
    terms = np.empty((_ASYMPTOTIC_TERMS,) + z.shape, dtype=complex)
    coeff = 1.0
    for k in range(_ASYMPTOTIC_TERMS):
        if k > 0:
            coeff *= (mu - (2 * k - 1) ** 2) / (k * 8.0)
        terms[k] = coeff * (sign / z) ** k
    mags = np.abs(terms)
    stop = np.argmin(mags, axis=0)
    keep = np.arange(_ASYMPTOTIC_TERMS).reshape((-1,) + (1,) * z.ndim) < stop
    total = np.sum(np.where(keep, terms, 0.0), axis=0)
    omega = z - nu * math.pi / 2.0 - math.pi / 4.0
    return np.sqrt(2.0 / (math.pi * z)) * np.exp(sign * omega) * total


def _laguerre_hankel_first(nu: int, z: np.ndarray) -> np.ndarray:
    """H^(1)_nu from its Laplace-type integral, by generalized Gauss-Laguerre.

    The series J + iY cancels catastrophically when Im z is large because
    H^(1) decays like exp(-Im z) while J and Y grow; this route has no
    cancellation there.
    """
    a = nu - 0.5
    nodes, weights = roots_genlaguerre(_LAGUERRE_NODES, a)
    factor = (1.0 + 1j * nodes[:, None] / (2.0 * z[None, :])) ** a
    integral = weights @ factor
    omega = z - nu * math.pi / 2.0 - math.pi / 4.0
    return np.sqrt(2.0 / (math.pi * z)) * np.exp(1j * omega) * integral / math.gamma(nu + 0.5)


def hankel(nu, z, kind="first"):
    """Hankel function H^(1)_nu(z) or H^(2)_nu(z) for Im z >= 0.

    Half-integer orders use the finite closed form.  Integer orders use the
    power series for |z| <= 12 and the asymptotic expansion beyond; inside
    the disc, H^(1) with Im z > 2 comes from a Laguerre quadrature instead.
    """
    order = _check_order(nu)
    kind_i = _kind_index(kind)
    arr, scalar = _prepare(z)
    if kind_i == 2 and np.any(arr.imag > OVERFLOW_IMAG):
        raise OverflowGuardError("H^(2) grows like exp(Im z); Im z too large")
    if order.denominator == 2:
        return _finish(_half_integer_hankel(int(order - Fraction(1, 2)), arr, kind_i), scalar)
    nu_i = int(order)
    out = np.empty_like(arr)
    small = np.abs(arr) <= SERIES_RADIUS
    damped = small & (arr.imag > LAGUERRE_IMAG) if kind_i == 1 else np.zeros_like(small)
    series = small & ~damped
    if np.any(damped):
        out[damped] = _laguerre_hankel_first(nu_i, arr[damped])
    if np.any(series):
        out[series] = hankel_series(nu_i, arr[series], kind_i)
    far = ~small
    # near arg z = pi the H^(2) expansion crosses a Stokes line; rebuild it
    # from J by the reflection J(z) = (-1)^nu conj(J(-conj z))
    mirrored = far & (arr.real < 0) if kind_i == 2 else np.zeros_like(far)
    direct = far & ~mirrored
    if np.any(direct):
        out[direct] = _asymptotic_hankel(nu_i, arr[direct], kind_i)
    if np.any(mirrored):
        z = arr[mirrored]
        w = -np.conj(z)
        j_w = 0.5 * (_asymptotic_hankel(nu_i, w, 1) + _asymptotic_hankel(nu_i, w, 2))
        out[mirrored] = 2.0 * (-1) ** nu_i * np.conj(j_w) - _asymptotic_hankel(nu_i, z, 1)
    return _finish(out, scalar)


def hankel_series(nu: int, z, kind="first"):
    """Integer-order Hankel function from the J/Y power series only."""
    kind_i = _kind_index(kind)
    arr, scalar = _prepare(z)
    jv, yv = _bessel_series(int(nu), arr)
    out = jv + 1j * yv if kind_i == 1 else jv - 1j * yv
    return _finish(out, scalar)


def hankel_asymptotic(nu: int, z, kind="first"):
    """Integer-order Hankel function from the large-argument expansion only."""
    kind_i = _kind_index(kind)
    arr, scalar = _prepare(z)
    return _finish(_asymptotic_hankel(int(nu), arr, kind_i), scalar)


def bessel_jy(nu: int, x):
    """J_nu and Y_nu for integer nu built from the two Hankel functions."""
    h1 = np.asarray(hankel(nu, x, "first"))
    h2 = np.asarray(hankel(nu, x, "second"))
    return (h1 + h2) / 2.0, (h1 - h2) / 2j


def bessel_jy_derivatives(nu: int, x):
    """Derivatives J'_nu and Y'_nu via C'_nu = C_{nu-1} - (nu/x) C_nu."""
    x = np.asarray(x, dtype=complex)
    j_nu, y_nu = bessel_jy(nu, x)
    if nu == 0:
        j_one, y_one = bessel_jy(1, x)
        return -j_one, -y_one
    j_prev, y_prev = bessel_jy(nu - 1, x)
    return j_prev - nu / x * j_nu, y_prev - nu / x * y_nu


def _check_branch(branch) -> int:
    if branch in ("+", 1, "plus"):
        return 1
    if branch in ("-", -1, "minus"):
        return -1
    raise DomainError(f"branch must be '+' or '-', got {branch!r}")


def _prepare_kernel_args(n: int, lam, r):
    if int(n) != n or n < 1:
        raise DomainError(f"dimension must be a positive integer, got {n}")
    lam_arr = np.asarray(lam, dtype=complex)
    r_arr = np.asarray(r, dtype=float)
    if np.any(lam_arr == 0):
        raise DomainError("lam must be nonzero")
    if np.any(lam_arr.imag < -1e-14 * np.maximum(1.0, np.abs(lam_arr))):
        raise DomainError("lam must lie in the closed upper half-plane")
    if np.any(r_arr < 0):
        raise DomainError("distance r must be nonnegative")
    if n >= 2 and np.any(r_arr == 0):
        raise SingularityError(f"kernel is singular at r = 0 in dimension {n}")
    scalar = lam_arr.ndim == 0 and r_arr.ndim == 0
    return lam_arr, r_arr, scalar


def _apply_branch(value, lam_arr, sign: int):
    if sign == 1:
        return value
    real_axis = (lam_arr.imag == 0) & (lam_arr.real > 0)
    return np.where(real_axis, np.conj(value), value)


def odd_dimension_coefficients(n: int) -> list[float]:
    """Polynomial coefficients (n-3-l)! / (l! ((n-3)/2-l)!) of the odd-n closed form."""
    half = (n - 3) // 2
    return [math.factorial(n - 3 - l) / (math.factorial(l) * math.factorial(half - l))
            for l in range(half + 1)]


def odd_dimension_constant(n: int) -> float:
    """Normalisation (4 pi)^{-(n-1)/2}; equals 1/(4 pi) at n = 3."""
    return (4.0 * math.pi) ** (-(n - 1) / 2.0)


def laplace_resolvent_kernel(n: int, lam, r, branch="+"):
    """Kernel of (-Delta - lam^2 -/+ i0)^{-1} at distance r in dimension n.

    The branch only matters for lam on the positive real axis, where the
    minus branch is the complex conjugate of the plus branch.
    """
    sign = _check_branch(branch)
    lam_arr, r_arr, scalar = _prepare_kernel_args(n, lam, r)
    if n == 1:
        value = 0.5j / lam_arr * np.exp(1j * lam_arr * r_arr)
    elif n % 2 == 1:
        z = lam_arr * r_arr
        poly = np.zeros(np.broadcast(z).shape, dtype=complex)
        for l, c in enumerate(odd_dimension_coefficients(n)):
            poly = poly + c * (-2j * z) ** l
        value = odd_dimension_constant(n) * np.exp(1j * z) / r_arr ** (n - 2) * poly
    else:
        value = _hankel_form(n, lam_arr, r_arr)
    value = _apply_branch(value, lam_arr, sign)
    return complex(value) if scalar else value


def _hankel_form(n: int, lam_arr, r_arr):
    nu = order_from_dimension(n)
    z = lam_arr * r_arr
    shape = np.broadcast(z).shape
    h = np.asarray(hankel(nu, np.broadcast_to(z, shape).copy(), "first")).reshape(shape)
    if nu == 0:
        return 0.25j * h
    return 0.25j * (lam_arr / (2.0 * math.pi * r_arr)) ** float(nu) * h


def laplace_resolvent_kernel_hankel(n: int, lam, r, branch="+"):
    """Hankel-function form of the same kernel, valid for every n >= 2."""
    if n < 2:
        raise DomainError("Hankel form requires n >= 2")
    sign = _check_branch(branch)
    lam_arr, r_arr, scalar = _prepare_kernel_args(n, lam, r)
    value = _apply_branch(_hankel_form(n, lam_arr, r_arr), lam_arr, sign)
    return complex(value) if scalar else value

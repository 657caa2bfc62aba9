"""Free resolvent of (-Delta)^m and its low/high energy structure.

The kernel of ((-Delta)^m - lam^{2m} -/+ i0)^{-1} is assembled from m
Laplacian resolvents evaluated on the rays lam * exp(i k pi / m).
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.integrate import quad

from .errors import DomainError, SingularityError
from .specfun import (
    _check_branch,
    hankel,
    laplace_resolvent_kernel,
    odd_dimension_coefficients,
    odd_dimension_constant,
    order_from_dimension,
)

_EULER_GAMMA = 0.57721566490153286061


def _check_mn(m: int, n: int, allow_m1: bool = True) -> None:
    if int(m) != m or m < (1 if allow_m1 else 2):
        raise DomainError(f"dispersion order m must be an integer >= {1 if allow_m1 else 2}, got {m}")
    if int(n) != n or n < 1:
        raise DomainError(f"dimension n must be a positive integer, got {n}")


def ray_indices(m: int, branch) -> range:
    """Root indices of the splitting sum: 0..m-1 for '+', 1..m for '-'."""
    return range(0, m) if _check_branch(branch) == 1 else range(1, m + 1)


@dataclass(frozen=True)
class ResolventQuery:
    m: int
    n: int
    lam: float
    r: float
    branch: str = "+"

    def evaluate(self) -> complex:
        return free_resolvent(self.m, self.n, self.lam, self.r, self.branch)


def free_resolvent(m: int, n: int, lam, r, branch="+"):
    """R_0^{+/-}(lam^{2m})(r) through the splitting identity.

    The boundary branch only enters the real-axis ray (k=0 for '+', k=m for
    '-'); the interior rays lie strictly in the upper half-plane.  For n >= 2
    and lam r < 1 the rays cancel against each other, so the ray sum is
    replaced there by its exact power series.
    """
    _check_mn(m, n)
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr <= 0):
        raise DomainError("lam must be positive")
    total = 0.0
    for k in ray_indices(m, branch):
        omega = cmath.exp(2j * math.pi * k / m)
        if k == 0:
            term = laplace_resolvent_kernel(n, lam_arr, r, "+")
        elif k == m:
            term = laplace_resolvent_kernel(n, lam_arr, r, "-")
        else:
            term = laplace_resolvent_kernel(n, lam_arr * cmath.exp(1j * math.pi * k / m), r)
        total = total + omega * np.asarray(term)
    out = total / (m * lam_arr ** (2 * m - 2))
    if n >= 2 and m >= 2:
        lam_b, r_b = np.broadcast_arrays(lam_arr, np.asarray(r, dtype=float))
        z = lam_b * r_b
        near = z < SMALL_Z_SERIES
        if np.any(near):
            out = np.array(np.broadcast_to(out, z.shape), dtype=complex)
            out[near] = small_z_series(m, n, lam_b[near], r_b[near], branch)
    return complex(out) if np.ndim(out) == 0 else out


SMALL_Z_SERIES = 1.0
_SERIES_ORDER = 40


@lru_cache(maxsize=None)
def _series_table(m: int, n: int, sign: int) -> tuple[tuple[int, complex, complex], ...]:
    """(power of z, coefficient, log z coefficient) triples of the ray sum.

    Root-of-unity sums that vanish are set to exactly zero so that the
    divergent small-z terms cancel identically.
    """
    indices = range(0, m) if sign == 1 else range(1, m + 1)
    rows = []
    if n % 2 == 1:
        for p in range(_SERIES_ORDER):
            if (p + 2) % 2 == 0 and ((p + 2) // 2) % m != 0:
                continue
            root = _root_sum(m, p + 2, indices) if (p + 2) % 2 else m
            rows.append((p + 2 - n, _odd_series_coefficient(n, p) * root / m, 0.0))
    else:
        nu = n // 2 - 1
        pref = 0.25j * (2 * math.pi) ** (-nu) / m
        for q in range(_SERIES_ORDER // 2):
            plain, log_coeff = _even_series(nu, q)
            t_sum = m if (q + 1) % m == 0 else 0.0
            u_sum = sum(cmath.exp(2j * math.pi * k * (q + 1) / m) * (1j * math.pi * k / m) for k in indices)
            rows.append((2 * q + 2 - n, pref * (plain * t_sum + log_coeff * u_sum), pref * log_coeff * t_sum))
    return tuple(rows)


def small_z_series(m: int, n: int, lam, r, branch="+"):
    """Power series of R_0^{+/-}(lam^{2m})(r) in z = lam r; accurate for z <= 1."""
    _check_mn(m, n)
    lam = np.asarray(lam, dtype=float)
    z = lam * np.asarray(r, dtype=float)
    if np.any(z <= 0):
        raise SingularityError("series needs lam r > 0")
    log_z = np.log(z)
    total = np.zeros(z.shape, dtype=complex)
    for power, coeff, log_coeff in _series_table(m, n, _check_branch(branch)):
        if coeff == 0 and log_coeff == 0:
            continue
        total = total + (coeff + log_coeff * log_z) * z ** float(power)
    return total * lam ** float(n - 2 * m)


def resolvent_at_minus_one(m: int, n: int, r):
    """Kernel of ((-Delta)^m + 1)^{-1}; every ray sits inside the upper half-plane."""
    _check_mn(m, n)
    mu = cmath.exp(1j * math.pi / (2 * m))
    total = 0.0
    for k in range(m):
        ray = cmath.exp(1j * math.pi * (2 * k + 1) / (2 * m))
        total = total + cmath.exp(2j * math.pi * k / m) * np.asarray(laplace_resolvent_kernel(n, ray, r))
    value = np.asarray(total / (m * mu ** (2 * m - 2)))
    scale = np.maximum(1.0, np.abs(value.real))
    if np.any(np.abs(value.imag) > 1e-10 * scale):
        raise ArithmeticError("imaginary residue above 1e-10 in a real kernel")
    return float(value.real) if value.ndim == 0 else value.real


def resolvent_difference(m: int, n: int, lam, r):
    """R_0^+ - R_0^- at (lam, r)."""
    return np.asarray(free_resolvent(m, n, lam, r, "+")) - np.asarray(free_resolvent(m, n, lam, r, "-"))


def spectral_density_kernel(m: int, n: int, lam, r):
    """(2 pi)^{-n} int e^{i xi.x} delta(|xi|^{2m} - lam^{2m}) d xi at |x| = r.

    The sphere integral is evaluated in closed form: 2 cos(lam r) for n=1,
    (2 pi)^{n/2} (lam r)^{1-n/2} J_{n/2-1}(lam r) otherwise.
    """
    _check_mn(m, n)
    lam = np.asarray(lam, dtype=float)
    r = np.asarray(r, dtype=float)
    z = lam * r
    if n == 1:
        sphere = 2.0 * np.cos(z)
    else:
        nu = order_from_dimension(n)
        zz = np.where(z == 0, 1.0, z)
        zz_b = np.broadcast_to(zz, np.broadcast(zz).shape).copy()
        jv = (np.asarray(hankel(nu, zz_b, "first")) + np.asarray(hankel(nu, zz_b, "second"))).real / 2.0
        sphere = (2 * math.pi) ** (n / 2) * zz_b ** (1 - n / 2) * jv
        small_limit = 2 * math.pi ** (n / 2) / math.gamma(n / 2)  # sphere area at z = 0
        sphere = np.where(z == 0, small_limit, sphere)
    out = (2 * math.pi) ** (-n) * lam ** (n - 1) / (2 * m * lam ** (2 * m - 1)) * sphere
    return float(out) if np.ndim(out) == 0 else out


def u0_factor(m: int, n: int, z, branch="+"):
    """U_0^{+/-}(z) = e^{-/+ i z} lam^{2m-n} R_0^{+/-}; depends on z = lam r only."""
    sign = _check_branch(branch)
    z = np.asarray(z, dtype=float)
    out = np.exp(-1j * sign * z) * np.asarray(free_resolvent(m, n, 1.0, z, branch))
    return complex(out) if out.ndim == 0 else out


def smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1, built from exp(-1/t) pieces."""
    u = np.asarray(u, dtype=float)
    a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    v = 1.0 - u
    b = np.where(v > 0, np.exp(-1.0 / np.where(v > 0, v, 1.0)), 0.0)
    out = a / (a + b)
    return float(out) if out.ndim == 0 else out


def near_bump(z):
    """Partition function equal to 1 on [0, 1/2] and 0 on [1, inf)."""
    return 1.0 - smooth_step(2.0 * np.asarray(z, dtype=float) - 1.0)


@dataclass(frozen=True)
class HighEnergyFactors:
    u1: complex
    w0: complex | None = None
    w1: complex | None = None


def high_energy_factors(m: int, n: int, lam: float, r: float, branch="+") -> HighEnergyFactors:
    """Scale-free factors of R_0^{+/-}(lam^{2m})(r) at z = lam r.

    U_1 = e^{-/+iz} r^{(n-1)/2} lam^{2m-(n+1)/2} R_0; for n > 2m the kernel is
    further split as e^{+/-iz} r^{2m-n} W_0 + lam^{(n+1)/2-2m} r^{-(n-1)/2} e^{+/-iz} W_1.
    """
    sign = _check_branch(branch)
    _check_mn(m, n)
    if r <= 0:
        raise DomainError("high-energy factors need r > 0")
    z = lam * r
    scaled = complex(free_resolvent(m, n, 1.0, z, branch))  # = lam^{2m-n} R_0(lam, r)
    u1 = cmath.exp(-1j * sign * z) * z ** ((n - 1) / 2) * scaled
    if n <= 2 * m:
        return HighEnergyFactors(u1=u1)
    near = float(near_bump(z))
    w0 = near * cmath.exp(-1j * sign * z) * z ** (n - 2 * m) * scaled
    w1 = (1.0 - near) * u1
    return HighEnergyFactors(u1=u1, w0=w0, w1=w1)


def reconstruct_from_factors(m: int, n: int, lam: float, r: float, factors: HighEnergyFactors, branch="+") -> complex:
    """Inverse of high_energy_factors; used to check the partition of unity."""
    sign = _check_branch(branch)
    z = lam * r
    phase = cmath.exp(1j * sign * z)
    far = lam ** ((n + 1) / 2 - 2 * m) * r ** (-(n - 1) / 2) * phase
    if factors.w0 is None:
        return far * factors.u1
    return phase * r ** (2 * m - n) * factors.w0 + far * factors.w1


# ---------------------------------------------------------------------------
# low-energy expansion


@dataclass(frozen=True)
class ExpansionTable:
    m: int
    n: int
    a_plus: tuple[complex, ...]
    a_minus: tuple[complex, ...]
    b0: float
    parity: str

    def a(self, branch) -> tuple[complex, ...]:
        return self.a_plus if _check_branch(branch) == 1 else self.a_minus

    def truncated(self, lam, r, branch="+"):
        """Sum_j a_j lam^{n-2m+2j} r^{2j} + b0 r^{2m-n} [log(lam r)]."""
        lam = np.asarray(lam, dtype=float)
        r = np.asarray(r, dtype=float)
        total = 0.0
        for j, coeff in enumerate(self.a(branch)):
            total = total + coeff * lam ** (self.n - 2 * self.m + 2 * j) * r ** (2 * j)
        tail = self.b0 * r ** (2 * self.m - self.n)
        if self.parity == "even":
            tail = tail * np.log(lam * r)
        return total + tail


def _root_sum(m: int, exponent: int, indices) -> complex:
    return sum(cmath.exp(1j * math.pi * k * exponent / m) for k in indices)


def _odd_series_coefficient(n: int, p: int) -> complex:
    """Coefficient e_p in kernel = r^{2-n} sum_p e_p (lam r)^p, odd n."""
    if n == 1:
        return 0.5j * (1j) ** (p + 1) / math.factorial(p + 1) if p >= -1 else 0.0
    total = 0.0
    for l, c in enumerate(odd_dimension_coefficients(n)):
        if l > p:
            break
        total += c * (-2j) ** l * (1j) ** (p - l) / math.factorial(p - l)
    return odd_dimension_constant(n) * total


def _even_series(nu: int, q: int) -> tuple[complex, complex]:
    """(P_q, L_q): z^nu H^(1)_nu(z) = sum_q (P_q + L_q log z) z^{2q}."""
    jq = 0.0
    y_inf = 0.0
    if q >= nu:
        k = q - nu
        jq = (-1) ** k / (2.0 ** (2 * k + nu) * math.factorial(k) * math.factorial(k + nu))
        psi = -2 * _EULER_GAMMA + sum(1.0 / i for i in range(1, k + 1)) + sum(1.0 / i for i in range(1, k + nu + 1))
        y_inf = -psi * jq / math.pi
    y_fin = 0.0
    if q < nu:
        y_fin = -(math.factorial(nu - q - 1) / math.factorial(q)) * 2.0 ** (nu - 2 * q) / math.pi
    log_coeff = 1j * (2 / math.pi) * jq
    plain = jq - 1j * (2 / math.pi) * math.log(2.0) * jq + 1j * (y_fin + y_inf)
    return plain, log_coeff


def expansion_length(m: int, n: int) -> int:
    """Number of a_j coefficients: m - ceil(n/2) + 1."""
    return m - (n + 1) // 2 + 1


@lru_cache(maxsize=None)
def expansion_coefficients(m: int, n: int) -> ExpansionTable:
    """Coefficients a_j^{+/-} and b0 of the small lam r expansion, 1 <= n <= 2m.

    Each Laplacian kernel of the splitting sum is expanded in powers of
    lam_k r; summing over the roots of unity leaves exactly the powers
    lam^{n-2m+2j} r^{2j}, the r^{2m-n} term and (even n) its log partner.
    """
    _check_mn(m, n)
    if n > 2 * m:
        raise DomainError(f"low-energy expansion needs n <= 2m, got n={n}, m={m}")
    length = expansion_length(m, n)
    tables = {}
    for sign, indices in ((1, range(0, m)), (-1, range(1, m + 1))):
        coeffs = []
        if n % 2 == 1:
            for j in range(length):
                p = n - 2 + 2 * j
                coeffs.append(_odd_series_coefficient(n, p) * _root_sum(m, p + 2, indices) / m)
            b0 = _odd_series_coefficient(n, 2 * m - 2).real
        else:
            nu = n // 2 - 1
            pref = 0.25j * (2 * math.pi) ** (-nu) / m
            for j in range(length):
                q = j + nu
                plain, log_coeff = _even_series(nu, q)
                t_sum = _root_sum(m, 2 * (q + 1), indices)
                u_sum = sum(cmath.exp(2j * math.pi * k * (q + 1) / m) * (1j * math.pi * k / m) for k in indices)
                coeffs.append(pref * (plain * t_sum + log_coeff * u_sum))
            b0 = (pref * m * _even_series(nu, m - 1)[1]).real
        tables[sign] = tuple(complex(c) for c in coeffs)
    return ExpansionTable(m, n, tables[1], tables[-1], float(b0), "odd" if n % 2 else "even")


@dataclass(frozen=True)
class ExpansionFit:
    coefficients: tuple[complex, ...]
    residual: float
    residual_without_log: float | None
    basis: tuple[str, ...]


def fit_expansion(m: int, n: int, branch="+", r: float = 1.0, z_range=(1e-4, 1e-2), samples: int = 40) -> ExpansionFit:
    """Least-squares fit of lam^{2m-n} R_0 on lam r in z_range against the expansion basis.

    Returns the fitted a_j (first entries), the RMS residual and, for even n,
    the residual of the same fit without the log column.
    """
    z = np.geomspace(z_range[0], z_range[1], samples)
    lam = z / r
    y = np.asarray(free_resolvent(m, n, lam, r, branch)) * lam ** (2 * m - n)
    length = expansion_length(m, n)
    cols = [z ** (2 * j) for j in range(length)]
    names = [f"z^{2 * j}" for j in range(length)]
    top = 2 * m - n
    if n % 2 == 1:
        cols += [z ** top, z ** (top + 1)]
        names += [f"z^{top}", f"z^{top + 1}"]
    else:
        cols += [z ** top * np.log(z), z ** (top + 2), z ** (top + 2) * np.log(z)]
        names += [f"z^{top} log z", f"z^{top + 2}", f"z^{top + 2} log z"]

    def solve(columns):
        mat = np.stack(columns, axis=1).astype(complex)
        scale = np.linalg.norm(mat, axis=0)
        sol, *_ = np.linalg.lstsq(mat / scale, y, rcond=None)
        sol = sol / scale
        resid = y - mat @ sol
        return sol, float(np.sqrt(np.mean(np.abs(resid) ** 2)))

    sol, resid = solve(cols)
    without = None
    if n % 2 == 0:
        keep = [c for c, name in zip(cols, names) if "log" not in name]
        _, without = solve(keep)
    return ExpansionFit(tuple(complex(s) for s in sol), resid, without, tuple(names))


def expansion_remainder_constant(m: int, n: int, lam, r: float, branch="+"):
    """|R_0 - truncated| / (lam^{n-2m} (lam r)^{2m-n+1})."""
    table = expansion_coefficients(m, n)
    lam = np.asarray(lam, dtype=float)
    diff = np.abs(np.asarray(free_resolvent(m, n, lam, r, branch)) - table.truncated(lam, r, branch))
    return diff / (lam ** (n - 2 * m) * (lam * r) ** (2 * m - n + 1))


# ---------------------------------------------------------------------------
# zero-energy moment coefficients


def _multi_factorial(alpha) -> int:
    return math.prod(math.factorial(a) for a in alpha)


def sphere_monomial_integral(gamma) -> float:
    """Integral of theta^gamma over the unit sphere S^{n-1} (exact)."""
    if any(g % 2 for g in gamma):
        return 0.0
    n = len(gamma)
    num = 2.0 * math.prod(math.gamma((g + 1) / 2) for g in gamma)
    return num / math.gamma((sum(gamma) + n) / 2)


def radial_moment(s: int, m: int) -> float:
    """int_0^inf rho^s / (1 + rho^{2m}) d rho by adaptive quadrature."""
    if s + 1 >= 2 * m:
        raise DomainError("radial moment diverges")
    head, _ = quad(lambda x: x ** s / (1 + x ** (2 * m)), 0, 1, epsabs=1e-14, epsrel=1e-13)
    # rho -> 1/rho maps the tail onto (0, 1]
    tail, _ = quad(lambda x: x ** (2 * m - s - 2) / (1 + x ** (2 * m)), 0, 1, epsabs=1e-14, epsrel=1e-13)
    return head + tail


def moment_limit(m: int, n: int) -> int:
    """Largest allowed |alpha|+|beta| for A_{alpha,beta}."""
    return 2 * m - n - 1 if n % 2 else 2 * m - n - 2


def coefficient_A(alpha, beta, m: int, n: int) -> complex:
    """(-1)^{|b|} i^{|a|+|b|} / ((2pi)^n a! b!) int xi^{a+b} / (1+|xi|^{2m}) d xi."""
    alpha = tuple(int(a) for a in alpha)
    beta = tuple(int(b) for b in beta)
    if len(alpha) != n or len(beta) != n:
        raise DomainError("multi-indices must have length n")
    order = sum(alpha) + sum(beta)
    if order >= 2 * m - n or order > moment_limit(m, n):
        raise DomainError(f"|alpha|+|beta| = {order} makes the integral diverge for m={m}, n={n}")
    gamma = tuple(a + b for a, b in zip(alpha, beta))
    if any(g % 2 for g in gamma):
        return 0j
    integral = sphere_monomial_integral(gamma) * radial_moment(order + n - 1, m)
    pref = (-1) ** sum(beta) * (1j) ** order / ((2 * math.pi) ** n * _multi_factorial(alpha) * _multi_factorial(beta))
    return complex(pref * integral)


def distance_power_coefficient(alpha, beta) -> float:
    """C_{alpha,beta} in |x-y|^{2j} = sum C_{alpha,beta} (-1)^{|beta|} x^alpha y^beta."""
    gamma = [a + b for a, b in zip(alpha, beta)]
    if any(g % 2 for g in gamma):
        return 0.0
    k = [g // 2 for g in gamma]
    j = sum(k)
    value = math.factorial(j) / math.prod(math.factorial(x) for x in k)
    for ki, ai in zip(k, alpha):
        value *= math.comb(2 * ki, ai)
    return float(value)


def coefficient_A_from_expansion(alpha, beta, m: int, n: int) -> complex:
    """A_{alpha,beta} rebuilt from a_j^+: continuation lam -> exp(i pi/(2m)) of the expansion."""
    order = sum(alpha) + sum(beta)
    if order % 2:
        return 0j
    table = expansion_coefficients(m, n)
    j = order // 2
    phase = cmath.exp(1j * math.pi * (n - 2 * m + order) / (2 * m))
    return table.a_plus[j] * phase * distance_power_coefficient(alpha, beta) * (-1) ** sum(beta)


def multi_indices(n: int, max_order: int) -> list[tuple[int, ...]]:
    """All multi-indices of length n with |alpha| <= max_order, graded order."""
    out = [a for a in product(range(max_order + 1), repeat=n) if sum(a) <= max_order]
    return sorted(out, key=lambda a: (sum(a), tuple(-x for x in a)))


def gram_index_limit(m: int, n: int) -> int:
    """Largest |alpha| in the Gram matrix: floor((2m-n-1)/2)."""
    return (2 * m - n - 1) // 2


def a_gram_matrix(m: int, n: int) -> tuple[np.ndarray, list[tuple[int, ...]]]:
    """Matrix (A_{alpha,beta}) over 0 <= |alpha|, |beta| <= floor((2m-n-1)/2)."""
    if n > 2 * m - 1:
        raise DomainError("Gram matrix needs n <= 2m-1")
    indices = multi_indices(n, gram_index_limit(m, n))
    mat = np.array([[coefficient_A(a, b, m, n) for b in indices] for a in indices])
    return mat, indices

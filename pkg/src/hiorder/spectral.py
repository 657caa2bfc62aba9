"""Borel transforms of profiles, the spectral condition and the low-energy machinery.

The finite-rank operator is H = (-Delta)^m + sum_j alpha_j <., phi_j> phi_j.
With F_ij(z) = <R_0(z) phi_j, phi_i> and D = diag(alpha) the perturbed
resolvent is R_0 - R_0 Phi D (I + F D)^{-1} Phi^* R_0, so everything below
revolves around the N x N matrix A = I + F D and its inverse G.

Boundary values F^{+/-}(lam^{2m}) are radial principal-value integrals

    (2 pi)^{-n} [ p.v. int_0^inf g(s) / (s^{2m} - lam^{2m}) ds  +/-  i pi g(lam) / (2m lam^{2m-1}) ]

with g(s) = s^{n-1} * (sphere average of phi_i^ conj(phi_j^) at radius s).
"""
from __future__ import annotations

import cmath
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.special import wofz

from .errors import ConditioningError, DomainError, PreconditionError, QuadratureWarning
from .profiles import Profile, multi_indices_of_order
from .resolvent import (
    a_gram_matrix,
    distance_power_coefficient,
    expansion_coefficients,
    ray_indices,
    sphere_monomial_integral,
)
from .specfun import _check_branch

MOMENT_ZERO = 1e-12
LAMBDA0_DEFAULT = 0.5
_GL_HI = np.polynomial.legendre.leggauss(24)
_GL_LO = np.polynomial.legendre.leggauss(16)
_QUAD_RTOL = 1e-9


# ---------------------------------------------------------------- operator spec

@dataclass(frozen=True)
class OperatorSpec:
    """(m, n, alphas, profiles) for H = (-Delta)^m + sum alpha_j <., phi_j> phi_j.

    m = 1 and N = 0 are accepted so the free Laplacian can run through the
    same pipeline as a consistency path.
    """

    m: int
    n: int
    profiles: tuple[Profile, ...] = ()
    alphas: tuple[float, ...] = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise DomainError("m and n must be positive")
        object.__setattr__(self, "profiles", tuple(self.profiles))
        alphas = tuple(float(a) for a in self.alphas) if self.alphas else (1.0,) * len(self.profiles)
        object.__setattr__(self, "alphas", alphas)
        if len(alphas) != len(self.profiles):
            raise DomainError("need one alpha per profile")
        if any(a <= 0 for a in alphas):
            raise DomainError("alphas must be positive")
        for p in self.profiles:
            if p.dim != self.n:
                raise DomainError(f"profile dimension {p.dim} does not match n={self.n}")
        gram = self.profile_gram()
        if len(self.profiles) and np.max(np.abs(gram - np.eye(len(self.profiles)))) > 1e-10:
            raise PreconditionError("profiles must be orthonormal")

    @property
    def N(self) -> int:
        return len(self.profiles)

    def profile_gram(self) -> np.ndarray:
        N = len(self.profiles)
        out = np.empty((N, N))
        for i, j in product(range(N), repeat=2):
            out[i, j] = self.profiles[i].inner(self.profiles[j])
        return out

    def with_alphas(self, alphas) -> "OperatorSpec":
        return OperatorSpec(self.m, self.n, self.profiles, tuple(alphas))

    def pair(self, i: int, j: int) -> "PairDensity":
        key = ("pair", min(i, j), max(i, j))
        if key not in self._cache:
            self._cache[key] = PairDensity(self.profiles[key[1]], self.profiles[key[2]])
        return self._cache[key]

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "alphas": list(self.alphas),
            "profiles": [p.to_dict() for p in self.profiles],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OperatorSpec":
        profiles = tuple(Profile.from_dict(p) for p in data.get("profiles", []))
        return cls(int(data["m"]), int(data["n"]), profiles, tuple(data.get("alphas", ())))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ------------------------------------------------------------ moment classes

@dataclass(frozen=True)
class MomentClass:
    index: int | None
    k0: int | str
    witness: tuple[int, ...] | None

    @property
    def all_vanish(self) -> bool:
        return self.k0 == "all-vanish"


def moment_search_limit(m: int, n: int) -> int:
    """Highest moment order that matters at low energy: m - ceil(n/2)."""
    return m - (n + 1) // 2


def moment_classify(profile: Profile, m: int, n: int, index: int | None = None) -> MomentClass:
    """Smallest |beta| with a non-vanishing moment, up to m - ceil(n/2)."""
    top = max(moment_search_limit(m, n), 0)
    for order in range(top + 1):
        for beta in multi_indices_of_order(profile.dim, order):
            if abs(profile.moment(beta)) > MOMENT_ZERO:
                return MomentClass(index, order, beta)
    return MomentClass(index, "all-vanish", None)


def vanishing_order(profile: Profile, limit: int = 8) -> int:
    """Like moment_classify but searching up to ``limit`` regardless of (m, n)."""
    for order in range(limit + 1):
        for beta in multi_indices_of_order(profile.dim, order):
            if abs(profile.moment(beta)) > MOMENT_ZERO:
                return order
    return limit + 1


# ----------------------------------------------------------- sphere averages

def sphere_rule(n: int, count: int, azimuth: int | None = None, axis=None) -> tuple[np.ndarray, np.ndarray]:
    """Nodes (A, n) and weights (A,) on S^{n-1}, weights summing to its area.

    n = 2: trapezoid with ``count`` nodes.  n = 3: Gauss-Legendre in the
    polar cosine (``count`` nodes) times a trapezoid in azimuth (``azimuth``
    nodes, default 2*count), with the pole along ``axis``.
    """
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if n == 2:
        theta = 2 * math.pi * np.arange(count) / count
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1), np.full(count, 2 * math.pi / count)
    if n == 3:
        azimuth = azimuth or 2 * count
        ct, wt = np.polynomial.legendre.leggauss(count)
        phi = 2 * math.pi * np.arange(azimuth) / azimuth
        st = np.sqrt(1 - ct ** 2)
        nodes = np.stack(
            [np.outer(st, np.cos(phi)).ravel(), np.outer(st, np.sin(phi)).ravel(), np.repeat(ct, azimuth)],
            axis=-1,
        )
        weights = np.repeat(wt, azimuth) * (2 * math.pi / azimuth)
        if axis is not None and np.linalg.norm(axis) > 0:
            nodes = nodes @ _frame_to(np.asarray(axis, dtype=float)).T
        return nodes, weights
    raise DomainError("sphere quadrature is implemented for n <= 3")


def _frame_to(axis: np.ndarray) -> np.ndarray:
    """Rotation matrix whose third column is axis/|axis|."""
    e3 = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(helper, e3)
    e1 /= np.linalg.norm(e1)
    return np.stack([e1, np.cross(e3, e1), e3], axis=-1)


def sphere_average(values, s, n: int, reach: float, degree: int, *, axis=None, axial_reach: float = 0.0,
                   budget: int = 400_000):
    """int_{S^{n-1}} values(s w) dw for each radius in s.

    ``reach`` bounds the angular frequency per unit radius of ``values`` in
    every direction; ``axial_reach`` adds frequency along ``axis`` only (a
    plane wave e^{i s w.x}), which for n = 3 only refines the polar rule.
    Radii are processed in chunks so memory stays near ``budget`` points.
    """
    s = np.asarray(s, dtype=float)
    out = np.empty(s.shape, dtype=complex)
    order = np.argsort(s)[::-1]
    start = 0
    while start < len(order):
        top = s[order[start]]
        polar = int(math.ceil(top * (reach + axial_reach))) + degree + 16
        around = 2 * (int(math.ceil(top * reach)) + degree + 16)
        nodes, weights = sphere_rule(n, polar, around, axis)
        chunk = max(1, budget // len(weights))
        idx = order[start:start + chunk]
        xi = s[idx, None, None] * nodes[None, :, :]
        out[idx] = values(xi) @ weights
        start += len(idx)
    return out


class PairDensity:
    """g(s) = s^{n-1} int_{S^{n-1}} phi_i^(s w) conj(phi_j^(s w)) dw, a real function.

    Three routes: the two-point sphere for n = 1, the closed-form polynomial
    for centered profiles, spherical quadrature otherwise (n <= 3).  Near s=0
    a Taylor series built from exact moments takes over so that vanishing
    moments cancel exactly instead of to rounding.
    """

    def __init__(self, pi: Profile, pj: Profile):
        self.pi, self.pj = pi, pj
        self.n = pi.dim
        self.a_min = (pi.min_width ** 2 + pj.min_width ** 2) / 4.0
        self.degree = pi.degree + pj.degree + self.n - 1
        self.reach = pi.max_center + pj.max_center
        self.closed = pi.centered and pj.centered
        if self.n > 3 and not self.closed:
            raise DomainError("off-center profiles are supported only for n <= 3")
        self._radial = pi.pair_radial_terms(pj) if self.closed and self.n > 1 else None
        radius = max(pi.max_center + pi.max_width, pj.max_center + pj.max_width)
        order, scale = {1: (24, 0.5), 2: (20, 0.3), 3: (16, 0.2)}.get(self.n, (16, 0.2))
        self.taylor_order = order
        self.taylor_radius = scale / radius
        self._taylor = self._taylor_coefficients(order)

    @property
    def s_cut(self) -> float:
        """Radius beyond which g is below ~1e-35 of its scale."""
        a = self.a_min
        s = math.sqrt(80.0 / a)
        for _ in range(4):
            s = math.sqrt((80.0 + self.degree * math.log(max(s, 1.0))) / a)
        return s

    @property
    def step(self) -> float:
        return min(1.0 / math.sqrt(self.a_min), 2.0 / max(self.reach, 1e-300))

    def _taylor_coefficients(self, order: int) -> np.ndarray:
        def moments(p: Profile):
            k0 = vanishing_order(p)
            table = {}
            for k in range(order + 1):
                for beta in multi_indices_of_order(self.n, k):
                    table[beta] = 0.0 if k < k0 else p.moment(beta)
            return table

        mi, mj = moments(self.pi), moments(self.pj)
        coeffs = np.zeros(order + 1)
        for alpha, va in mi.items():
            if va == 0.0:
                continue
            ka = sum(alpha)
            fa = va * (-1) ** ka / math.prod(math.factorial(a) for a in alpha)
            for beta, vb in mj.items():
                kb = sum(beta)
                if vb == 0.0 or ka + kb > order or (ka + kb) % 2:
                    continue
                angular = sphere_monomial_integral(tuple(a + b for a, b in zip(alpha, beta)))
                if angular == 0.0:
                    continue
                # (-i)^ka i^kb = (-1)^ka i^(ka+kb), real since ka+kb is even
                phase = (-1) ** ((ka + kb) // 2)
                coeffs[ka + kb] += fa * vb / math.prod(math.factorial(b) for b in beta) * phase * angular
        return coeffs

    def _rho_taylor(self, s):
        return np.polynomial.polynomial.polyval(s, self._taylor)

    def _rho_direct(self, s):
        if self.n == 1:
            return 2.0 * np.real(self.pi.fourier(s) * np.conj(self.pj.fourier(s)))
        if self._radial is not None:
            out = np.zeros_like(s)
            for c, k, a in self._radial:
                out = out + c * s ** k * np.exp(-a * s * s)
            return out
        def values(xi):
            return self.pi.fourier(xi) * np.conj(self.pj.fourier(xi))

        return np.real(sphere_average(values, s, self.n, self.reach, self.degree))

    def rho(self, s):
        s = np.asarray(s, dtype=float)
        flat = np.atleast_1d(s).ravel()
        out = np.empty_like(flat)
        near = flat < self.taylor_radius
        if np.any(near):
            out[near] = self._rho_taylor(flat[near])
        if np.any(~near):
            out[~near] = self._rho_direct(flat[~near])
        return out.reshape(s.shape) if s.ndim else float(out[0])

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return self.rho(s) * s ** (self.n - 1)


# ------------------------------------------------------ principal values

def _gl_panels(edges: np.ndarray, rule) -> tuple[np.ndarray, np.ndarray]:
    x, w = rule
    left, right = edges[:-1, None], edges[1:, None]
    half = (right - left) / 2
    return (half * x[None, :] + (right + left) / 2).ravel(), (half * w[None, :]).ravel()


def _uniform(a: float, b: float, step: float, minimum: int = 1) -> np.ndarray:
    count = max(minimum, int(math.ceil((b - a) / step)))
    return np.linspace(a, b, count + 1)


def _near_edges(lam: float, s_cut: float, step: float) -> np.ndarray:
    """Panels for [0, 2 lam], with lam itself a panel edge."""
    pieces = []
    for a, b in ((0.0, lam), (lam, 2 * lam)):
        if b <= s_cut:
            pieces.append(_uniform(a, b, step, minimum=2))
        elif a >= s_cut:
            pieces.append(np.geomspace(max(a, 1e-300), b, 5) if a > 0 else _uniform(a, b, step, 2))
        else:
            pieces.append(np.concatenate([_uniform(a, s_cut, step, 2)[:-1], np.geomspace(s_cut, b, 5)]))
    return np.unique(np.concatenate(pieces))


def _far_edges(start: float, s_cut: float, step: float) -> np.ndarray:
    """Graded panels on [start, s_cut]: width min(current position, step)."""
    edges = [start]
    while edges[-1] < s_cut:
        edges.append(min(s_cut, edges[-1] + min(edges[-1], step)))
    return np.array(edges)


def pv_radial_integral(q, lam: float, m: int, s_cut: float, step: float):
    """p.v. int_0^inf q(s)/(s^{2m}-lam^{2m}) ds and the residue q(lam)/(2m lam^{2m-1}).

    Singularity subtraction on the symmetric window [0, 2 lam], where the
    subtracted Cauchy term integrates to log(lam/lam) = 0.  Returns
    (value, residue, error estimate); q may be complex valued.
    """
    if lam <= 0:
        raise DomainError("lam must be positive")
    powers = np.arange(2 * m)

    def reduced(s):
        # (s^{2m} - lam^{2m}) / (s - lam), evaluated without cancellation
        return np.sum(s[:, None] ** powers * lam ** (2 * m - 1 - powers), axis=1)

    q_lam = complex(np.atleast_1d(q(np.array([lam])))[0])
    residue = q_lam / (2 * m * lam ** (2 * m - 1))
    near = _near_edges(lam, s_cut, step)
    far = None
    if 2 * lam < s_cut:
        far = _far_edges(2 * lam, s_cut, step)

    def integrate(rule):
        x, w = _gl_panels(near, rule)
        total = np.sum(w * ((q(x) / reduced(x) - residue) / (x - lam)))
        if far is not None and len(far) > 1:
            x, w = _gl_panels(far, rule)
            total = total + np.sum(w * q(x) / (x ** (2 * m) - lam ** (2 * m)))
        return complex(total)

    hi = integrate(_GL_HI)
    lo = integrate(_GL_LO)
    return hi, residue, abs(hi - lo)


def smooth_radial_integral(q, weight, s_cut: float, step: float, start: float = 0.0):
    """int_start^s_cut q(s) weight(s) ds for a non-singular integrand, with error estimate."""
    edges = _uniform(start, s_cut, step, minimum=4)

    def integrate(rule):
        x, w = _gl_panels(edges, rule)
        return complex(np.sum(w * q(x) * weight(x)))

    hi = integrate(_GL_HI)
    return hi, abs(hi - integrate(_GL_LO))


def _warn_if_inaccurate(value: complex, err: float, what: str):
    if err > _QUAD_RTOL * max(abs(value), 1e-300) and err > 1e-14:
        warnings.warn(f"{what}: error estimate {err:.2e} for value {abs(value):.3e}", QuadratureWarning, stacklevel=3)


# ------------------------------------------------------------- Borel transform

@dataclass(frozen=True)
class BorelValue:
    value: complex
    error: float


def borel_f_estimate(spec: OperatorSpec, i: int, j: int, lam: float, branch="+") -> BorelValue:
    """f_ij^{+/-}(lam^{2m}) = <R_0^{+/-}(lam^{2m}) phi_j, phi_i> with an error estimate."""
    sign = _check_branch(branch)
    if lam <= 0:
        raise DomainError("lam must be positive; use borel_f_at_zero at the threshold")
    pair = spec.pair(i, j)
    pv, residue, err = pv_radial_integral(pair, float(lam), spec.m, pair.s_cut, pair.step)
    scale = (2 * math.pi) ** (-spec.n)
    value = scale * (pv + sign * 1j * math.pi * residue.real)
    return BorelValue(value, scale * err)


def borel_f(spec: OperatorSpec, i: int, j: int, lam: float, branch="+") -> complex:
    out = borel_f_estimate(spec, i, j, lam, branch)
    _warn_if_inaccurate(out.value, out.error, "borel_f")
    return out.value


def borel_matrix(spec: OperatorSpec, lam: float, branch="+") -> np.ndarray:
    """F^{+/-}(lam^{2m}) as an N x N matrix; symmetric (not Hermitian)."""
    N = spec.N
    out = np.empty((N, N), dtype=complex)
    for i in range(N):
        for j in range(i, N):
            out[i, j] = out[j, i] = borel_f(spec, i, j, lam, branch)
    return out


def spectral_density(spec: OperatorSpec, i: int, j: int, lam: float) -> float:
    """(2 pi)^{-n} g_ij(lam) / (2m lam^{2m-1}): density of <E(ds) phi_j, phi_i> at s = lam^{2m}."""
    pair = spec.pair(i, j)
    return float((2 * math.pi) ** (-spec.n) * pair(np.array([lam]))[0] / (2 * spec.m * lam ** (2 * spec.m - 1)))


def borel_f_at_negative(spec: OperatorSpec, i: int, j: int) -> float:
    """<R_0(-1) phi_j, phi_i> = (2 pi)^{-n} int_0^inf g(s)/(s^{2m}+1) ds."""
    pair = spec.pair(i, j)
    m = spec.m
    value, err = smooth_radial_integral(pair, lambda s: 1.0 / (s ** (2 * m) + 1.0), pair.s_cut, pair.step)
    _warn_if_inaccurate(value, err, "borel_f_at_negative")
    return float((2 * math.pi) ** (-spec.n) * value.real)


def borel_f_at_zero(spec: OperatorSpec, i: int, j: int) -> float:
    """<(-Delta)^{-m} phi_j, phi_i>, finite when n + k_i + k_j > 2m."""
    pi, pj = spec.profiles[i], spec.profiles[j]
    if spec.n + vanishing_order(pi) + vanishing_order(pj) <= 2 * spec.m:
        raise DomainError("threshold value diverges: too few vanishing moments")
    pair = spec.pair(i, j)
    m = spec.m
    # g / s^{2m} is bounded at 0 once the moments cancel exactly (Taylor route)
    value, err = smooth_radial_integral(pair, lambda s: s ** (-2.0 * m), pair.s_cut, pair.step)
    _warn_if_inaccurate(value, err, "borel_f_at_zero")
    return float((2 * math.pi) ** (-spec.n) * value.real)


# --------------------------------------------------------- condition and G

def perturbation_matrix(spec: OperatorSpec, lam: float, branch="+") -> np.ndarray:
    """A^{+/-} = I + F^{+/-} D."""
    return np.eye(spec.N) + borel_matrix(spec, lam, branch) * np.asarray(spec.alphas)[None, :]


def spectral_condition(spec: OperatorSpec, lam_grid) -> tuple[float, float]:
    """min over the grid and both branches of |det(I + F D)|, and where it occurs."""
    best, where = math.inf, float("nan")
    for lam in np.asarray(lam_grid, dtype=float):
        for branch in "+-":
            value = abs(np.linalg.det(perturbation_matrix(spec, lam, branch)))
            if value < best:
                best, where = value, float(lam)
    return best, where


def g_matrix(spec: OperatorSpec, lam: float, branch="+", *, tol: float = 1e-10) -> np.ndarray:
    """G^{+/-} = (I + F^{+/-} D)^{-1} by LU; the residual is checked."""
    a = perturbation_matrix(spec, lam, branch)
    return solve_perturbation(a, tol=tol)


def solve_perturbation(a: np.ndarray, *, tol: float = 1e-10) -> np.ndarray:
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > 1e12:
        raise ConditioningError("I + F D is numerically singular", cond)
    g = np.linalg.solve(a, np.eye(a.shape[0]))
    residual = float(np.max(np.abs(a @ g - np.eye(a.shape[0]))))
    if residual > tol:
        raise ConditioningError(f"inverse residual {residual:.2e} exceeds {tol:.0e}", cond)
    return g


# ---------------------------------------------------- R_0 phi in physical space

def _faddeeva_j(mu, X, w: float, pmax: int):
    """J_p = int_{-inf}^X e^{i mu (X-u)} u^p e^{-u^2/w^2} du for p = 0..pmax.

    mu and X broadcast; Im mu >= 0.  J_0 is a Faddeeva function; the
    reflection w(z) = 2 e^{-z^2} - w(-z) keeps it finite below the real axis.
    """
    mu = np.asarray(mu, dtype=complex)
    X = np.asarray(X, dtype=float)
    zeta = mu * w / 2 - 1j * X / w
    gauss = np.exp(-(X / w) ** 2)
    mu, X, zeta, gauss = np.broadcast_arrays(mu, X, zeta, gauss)
    upper = zeta.imag >= 0
    j0 = np.empty(zeta.shape, dtype=complex)
    j0[upper] = gauss[upper] * wofz(zeta[upper])
    dn = ~upper
    if np.any(dn):
        j0[dn] = 2 * np.exp(-(mu[dn] * w) ** 2 / 4 + 1j * mu[dn] * X[dn]) - gauss[dn] * wofz(-zeta[dn])
    out = [(w * math.sqrt(math.pi) / 2) * j0]
    prev = None
    for p in range(pmax):
        nxt = (w * w / 2) * ((p * prev if p else 0) - 1j * mu * out[p] - X ** p * gauss)
        prev = out[p]
        out.append(nxt)
    return out


def _abs_convolution_1d(profile: Profile, mu, x):
    """int e^{i mu |x - y|} phi(y) dy for a 1-d profile; mu and x broadcast."""
    mu = np.asarray(mu, dtype=complex)
    total = 0.0
    for t in profile.terms:
        p = t.powers[0]
        X = np.asarray(x, dtype=float) - t.center[0]
        # left and right halves in one call: X and -X stacked on a leading axis
        Xb, mub = np.broadcast_arrays(X, mu)
        both = _faddeeva_j(mub[None], np.stack([Xb, -Xb]), t.width, p)[p]
        total = total + t.coeff * (both[0] + (-1) ** p * both[1])
    return total


def rzero_phi(spec: OperatorSpec, i: int, lam, x, branch="+"):
    """(R_0^{+/-}(lam^{2m}) phi_i)(x); lam and x broadcast.

    n = 1 sums the splitting identity in physical space, each ray convolved
    with the profile in closed form.  n = 2, 3 use the Fourier route.
    """
    if spec.n != 1:
        raise DomainError("the physical-space route is n = 1 only; use rzero_phi_fourier")
    return resolvent_apply_1d(spec.m, spec.profiles[i], lam, x, branch)


def resolvent_apply_1d(m: int, profile: Profile, lam, x, branch="+"):
    """(R_0^{+/-}(lam^{2m}) f)(x) on the line for any 1-d profile f (normalized or not)."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise DomainError("lam must be positive")
    ks = np.array(list(ray_indices(m, branch)))
    shape = (len(ks),) + (1,) * max(lam.ndim, np.ndim(x))
    rot = np.exp(1j * np.pi * ks / m).reshape(shape)
    mu = lam * rot
    weights = (np.exp(2j * np.pi * ks / m).reshape(shape) * 0.5j) / mu
    total = np.sum(weights * _abs_convolution_1d(profile, mu, x), axis=0)
    out = total / (m * lam ** (2 * m - 2))
    return complex(out) if np.ndim(out) == 0 else out


def rzero_phi_fourier(spec: OperatorSpec, i: int, lam: float, x, branch="+") -> BorelValue:
    """(R_0^{+/-} phi_i)(x) from (2 pi)^{-n} int phi^(xi) e^{i xi.x}/(|xi|^{2m} - lam^{2m} -/+ i0)."""
    sign = _check_branch(branch)
    n = spec.n
    profile = spec.profiles[i]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if n == 1:
        def q(s):
            return profile.fourier(s) * np.exp(1j * s * x[0]) + profile.fourier(-s) * np.exp(-1j * s * x[0])
    else:
        radius = float(np.linalg.norm(x))
        axis = x if (n == 3 and radius > 0) else None

        def q(s):
            def values(xi):
                return profile.fourier(xi) * np.exp(1j * (xi @ x))

            if axis is None:
                return sphere_average(values, s, n, profile.max_center + radius, profile.degree) * s ** (n - 1)
            return sphere_average(values, s, n, profile.max_center, profile.degree,
                                  axis=axis, axial_reach=radius) * s ** (n - 1)

    a = profile.min_width ** 2 / 4
    s_cut = math.sqrt((80.0 + profile.degree * 3.0) / a)
    step = min(1.0 / math.sqrt(a), 2.0 / max(profile.max_center + float(np.linalg.norm(x)), 1e-300))
    pv, residue, err = pv_radial_integral(q, float(lam), spec.m, s_cut, step)
    scale = (2 * math.pi) ** (-n)
    return BorelValue(scale * (pv + sign * 1j * math.pi * residue), scale * err)


def w_factor(spec: OperatorSpec, i: int, lam, x, branch="+"):
    """W(lam, x) = e^{-/+ i lam |x|} (R_0^{+/-} phi_i)(x)."""
    sign = _check_branch(branch)
    lam = np.asarray(lam, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.exp(-sign * 1j * lam * np.abs(x)) * rzero_phi(spec, i, lam, x, branch)


# --------------------------------------------------------- Q decomposition

def q_index_set(m: int, n: int) -> list[Fraction]:
    if n > 2 * m:
        raise DomainError("the Q decomposition needs n <= 2m")
    if n % 2:
        return [Fraction(j) for j in range(m - (n + 1) // 2 + 1)] + [Fraction(2 * m - n, 2)]
    return [Fraction(j) for j in range(m - n // 2 + 2)]


@dataclass(frozen=True)
class QDecomposition:
    index_set: tuple[Fraction, ...]
    assignment: tuple[Fraction, ...]
    classes: tuple[MomentClass, ...]

    def members(self, j) -> list[int]:
        return [i for i, a in enumerate(self.assignment) if a == Fraction(j)]

    @property
    def nonempty(self) -> list[Fraction]:
        return sorted(set(self.assignment))


def q_decomposition(spec: OperatorSpec) -> QDecomposition:
    """Assign each profile to Q_{k0}, or to the top space when its low moments all vanish."""
    index_set = q_index_set(spec.m, spec.n)
    top = index_set[-1]
    classes = tuple(moment_classify(p, spec.m, spec.n, i) for i, p in enumerate(spec.profiles))
    assignment = tuple(top if c.all_vanish else Fraction(c.k0) for c in classes)
    return QDecomposition(tuple(index_set), assignment, classes)


def moment_vector(profile: Profile, order: int) -> np.ndarray:
    return np.array([profile.moment(b) for b in multi_indices_of_order(profile.dim, order)])


@dataclass(frozen=True)
class GramBlocks:
    d_plus: np.ndarray
    d_minus: np.ndarray
    orders: tuple
    b_ranks: dict
    b_full_rank: bool
    a_gram_min_eig: float
    smallest_singular: float
    invertible: bool


def gram_blocks(spec: OperatorSpec, threshold: float = 1e-8) -> GramBlocks:
    """Leading low-energy blocks of I + F D after scaling each row/column by its moment order.

    For profiles with k_i, k_j below the top index,
        F_ij(lam) ~ a_{(k_i+k_j)/2} lam^{n-2m+k_i+k_j} sum_{|a|=k_i,|b|=k_j} C_ab (-1)^|b| M_i(a) M_j(b),
    so d_ij collects those coefficients (zero when k_i + k_j is odd).  Profiles
    in the top space contribute the corner I + F(0) D, with F(0) from
    borel_f_at_zero.
    """
    decomposition = q_decomposition(spec)
    top = decomposition.index_set[-1]
    table = expansion_coefficients(spec.m, spec.n)
    N = spec.N
    alphas = np.asarray(spec.alphas)
    blocks = {}
    for branch in "+-":
        coeffs = table.a(branch)
        d = np.zeros((N, N), dtype=complex)
        for i, j in product(range(N), repeat=2):
            ki, kj = decomposition.assignment[i], decomposition.assignment[j]
            if ki == top and kj == top:
                d[i, j] = (1.0 if i == j else 0.0) + borel_f_at_zero(spec, i, j) * alphas[j]
                continue
            if ki == top or kj == top or (ki + kj) % 2:
                continue
            ki, kj = int(ki), int(kj)
            pairing = 0.0
            for a in multi_indices_of_order(spec.n, ki):
                for b in multi_indices_of_order(spec.n, kj):
                    c = distance_power_coefficient(a, b)
                    if c:
                        pairing += c * (-1) ** kj * spec.profiles[i].moment(a) * spec.profiles[j].moment(b)
            d[i, j] = coeffs[(ki + kj) // 2] * pairing * alphas[j]
        blocks[branch] = d
    b_ranks = {}
    full = True
    for j in decomposition.nonempty:
        if j == top:
            continue
        rows = [moment_vector(spec.profiles[i], int(j)) for i in decomposition.members(j)]
        rank = int(np.linalg.matrix_rank(np.array(rows), tol=1e-10))
        b_ranks[str(j)] = rank
        full = full and rank == len(rows)
    gram, _ = a_gram_matrix(spec.m, spec.n) if spec.n < 2 * spec.m else (np.eye(1), None)
    eig = float(np.linalg.eigvalsh(gram).min())
    smallest = min(float(np.linalg.svd(blocks[b], compute_uv=False).min()) for b in "+-") if N else math.inf
    return GramBlocks(
        blocks["+"], blocks["-"], decomposition.assignment, b_ranks, full, eig, smallest,
        bool(smallest > threshold and eig > 0),
    )


# ------------------------------------------------------ low-energy scaling

@dataclass(frozen=True)
class LowEnergyReport:
    regime: str
    expected: float | None
    slope: float
    r_squared: float
    min_abs: float
    verdict: str
    log_slope: float | None = None


def _fit(xs, ys):
    coef = np.polyfit(xs, ys, 1)
    pred = np.polyval(coef, xs)
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), r2


def low_energy_scaling_check(spec: OperatorSpec, lam_range=(1e-3, 1e-2), samples: int = 12,
                             c0: float = 1e-3) -> LowEnergyReport:
    """Fit log|det(I + F^+ D)| against log lam and compare with the moment-order law.

    Regimes: n > 2m (bounded, slope 0), n < 2m with vanishing orders k_i
    (slope sum_i min(n - 2m + 2 k_i, 0)), all low moments vanishing (slope 0,
    |det| >= 1/2), and n = 2m with non-zero mean (logarithmic growth).
    """
    lo, hi = lam_range
    lam = np.geomspace(lo, hi, samples)
    dets = np.array([np.linalg.det(perturbation_matrix(spec, l, "+")) for l in lam])
    mags = np.abs(dets)
    slope, r2 = _fit(np.log(lam), np.log(mags))
    m, n = spec.m, spec.n
    if n > 2 * m:
        regime, expected = "n>2m", 0.0
        ok = abs(slope) <= 0.05 and mags.min() >= c0
        return LowEnergyReport(regime, expected, slope, r2, float(mags.min()), "pass" if ok else "fail")
    classes = [moment_classify(p, m, n) for p in spec.profiles]
    if n == 2 * m and any(not c.all_vanish and c.k0 == 0 for c in classes):
        # |1 + alpha F| grows like |log lam|: linear in log lam, not in log|.|
        log_slope, log_r2 = _fit(np.log(lam), mags)
        verdict = "pass" if log_r2 >= 0.99 and abs(log_slope) > 0 else "inconclusive"
        return LowEnergyReport("n=2m-log", None, slope, log_r2, float(mags.min()), verdict, log_slope)
    if all(c.all_vanish for c in classes):
        ok = abs(slope) <= 0.1 and mags.min() >= 0.5
        verdict = "pass" if ok else "fail"
        return LowEnergyReport("all-vanish", 0.0, slope, r2, float(mags.min()), verdict)
    expected = float(sum(min(n - 2 * m + 2 * c.k0, 0) for c in classes if not c.all_vanish))
    if r2 < 0.99:
        return LowEnergyReport("n<2m", expected, slope, r2, float(mags.min()), "inconclusive")
    verdict = "pass" if abs(slope - expected) <= 0.1 else "fail"
    return LowEnergyReport("n<2m", expected, slope, r2, float(mags.min()), verdict)


def critical_alpha(spec_one: OperatorSpec, lam_grid, threshold: float = 0.1) -> float:
    """Smallest alpha > 0 (N = 1) for which min over the grid of |1 + alpha F^{+/-}| < threshold.

    At each grid point |1 + alpha F|^2 is a quadratic in alpha, so the set
    where it is below threshold^2 is an interval with closed-form endpoints.
    """
    if spec_one.N != 1:
        raise DomainError("critical_alpha is for rank-one specs")
    if not 0 < threshold < 1:
        raise DomainError("threshold must lie in (0, 1)")
    table = np.array([borel_f(spec_one, 0, 0, l, "+") for l in np.asarray(lam_grid, float)])
    # F^- = conj(F^+) on the real axis, so one branch suffices
    a = np.abs(table) ** 2
    b = np.real(table)
    disc = b * b - a * (1 - threshold ** 2)
    ok = (disc > 0) & (b < 0)
    if not np.any(ok):
        raise PreconditionError("no positive alpha brings |1 + alpha F| below threshold on this grid")
    lower = (-b[ok] - np.sqrt(disc[ok])) / a[ok]
    return float(np.min(lower))

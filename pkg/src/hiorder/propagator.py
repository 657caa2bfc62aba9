"""Kernels K(t, x, y) of e^{-itH} for H = (-Delta)^m + sum_j alpha_j <., phi_j> phi_j.

Stone's formula with E = lam^{2m} turns the kernel into lam-integrals against
e^{-it lam^{2m}}.  The free part is the radial Fourier integral.  For real
profiles the minus branch is the complex conjugate of the plus branch, so the
finite-rank correction collapses to

    K_pert = -(2m/pi) int_0^inf e^{-it lam^{2m}} lam^{2m-1} Im S(lam) dlam,
    S = sum_ij C_ij (R_0^+ phi_i)(x) (R_0^+ phi_j)(y),   C = (D^{-1} + F^+)^{-1}.

Every lam-integral is split by chi into a low and a high part and handed to
``oscquad.evaluate`` with t' = -t.
"""
from __future__ import annotations

import cmath
import csv
import io
import json
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from threading import Lock

import numpy as np
from scipy.integrate import quad

from . import oscquad
from .errors import DomainError, PreconditionError, RefusalError
from .oscquad import OscillatoryIntegrand
from .profiles import GaussianTerm, Profile
from .resolvent import ray_indices, smooth_step
from .specfun import bessel_jy, hankel
from .spectral import (
    LAMBDA0_DEFAULT,
    OperatorSpec,
    _abs_convolution_1d,
    _faddeeva_j,
    borel_matrix,
    resolvent_apply_1d,
    rzero_phi_fourier,
)

SPECTRAL_FLOOR = 0.1
TAIL_MASS = 1e-10


# ------------------------------------------------------------------ energy split

@dataclass(frozen=True)
class EnergySplit:
    """chi = 1 on (0, lam0/2], 0 on [lam0, inf); the high part carries 1 - chi."""

    lam0: float = LAMBDA0_DEFAULT

    def __post_init__(self):
        if not self.lam0 > 0:
            raise DomainError("lam0 must be positive")

    def chi(self, lam):
        return 1.0 - smooth_step(2.0 * np.asarray(lam, dtype=float) / self.lam0 - 1.0)

    def low(self, amplitude, b: float, support=None) -> OscillatoryIntegrand:
        def amp(lam):
            return amplitude(lam) * self.chi(lam)

        return OscillatoryIntegrand(amp, b, "low", self.lam0, support=support, check=False)

    def high(self, amplitude, b: float, support=None, derivative=None) -> OscillatoryIntegrand:
        """``derivative(lam, k)`` of the bare amplitude, used only beyond lam0 where chi = 0."""
        def amp(lam):
            return amplitude(lam) * (1.0 - self.chi(lam))

        return OscillatoryIntegrand(amp, b, "high", self.lam0 / 2, support=support, breakpoints=(self.lam0,),
                                    tail_start=self.lam0, derivative=derivative, check=False)


@dataclass(frozen=True)
class KernelPart:
    value: complex
    error: float
    converged: bool = True
    notes: tuple[str, ...] = ()

    def __add__(self, other: "KernelPart") -> "KernelPart":
        return KernelPart(self.value + other.value, self.error + other.error,
                          self.converged and other.converged, self.notes + other.notes)


_ZERO = KernelPart(0j, 0.0)


def _integrate(pieces, t: float, m: int, tol: float) -> KernelPart:
    """sum coeff * int e^{-it lam^{2m} + i lam X} psi over (coeff, integrand, X) pieces."""
    out = _ZERO
    for coeff, integrand, X in pieces:
        val = oscquad.evaluate(integrand, -t, X, m, tol=tol / max(abs(coeff), 1e-300) / len(pieces))
        out = out + KernelPart(coeff * val.value, abs(coeff) * val.error, val.converged,
                               () if val.converged else (f"unconverged at X={X:.4g}",))
    return out


def _power(b: int):
    def amp(lam):
        return np.asarray(lam, dtype=float) ** b

    def deriv(lam, k):
        return math.prod(b - j for j in range(k)) * lam ** (b - k)

    return amp, deriv


# ------------------------------------------------------------------ free kernel

def _j0_series(z):
    """J_0 by its power series; meant for 0 <= z <= 2."""
    z = np.asarray(z, dtype=float)
    term = np.ones_like(z)
    total = np.ones_like(z)
    q = -(z * z) / 4
    for k in range(1, 30):
        term = term * q / (k * k)
        total = total + term
    return total


def _j0_derivative(z: float, k: int) -> float:
    """k-th derivative of J_0 at z >= 0: the series for z <= 2, else
    J_0^(k) = 2^{-k} sum_j (-1)^j C(k, j) J_{2j-k}."""
    if z <= 2:
        total, q = 0.0, 1.0
        for j in range(30):
            # term (-1)^j (z/2)^{2j} / (j!)^2, differentiated k times in z
            power = 2 * j
            if power >= k:
                coeff = (-1) ** j / (4 ** j * math.factorial(j) ** 2)
                total += coeff * math.perm(power, k) * z ** (power - k)
        return total
    total = 0.0
    for j in range(k + 1):
        nu = 2 * j - k
        value = float(np.real(bessel_jy(abs(nu), z)[0])) * (-1) ** (abs(nu) if nu < 0 else 0)
        total += (-1) ** j * math.comb(k, j) * value
    return total / 2 ** k


def _free_pieces(m: int, n: int, t: float, r: float, split: EnergySplit):
    """(coeff, integrand, X) triples whose oscquad sum is the free kernel.

    For n = 2, 3 the Bessel factor stays in the amplitude below lam = c/r and
    is folded into the phases +-r above it, where the folded halves no longer
    cancel and the amplitudes are symbols.  When c/r lies far beyond the
    oscillation scale the unfolded amplitude is already a symbol there (its
    k-th derivative carries r^k), so it is kept on the whole half-line.
    """
    pieces = []
    if n == 1:
        one, d_one = _power(0)
        for integrand in (split.low(one, 0), split.high(one, 0, derivative=d_one)):
            if r == 0:
                pieces.append((1 / math.pi, integrand, 0.0))
            else:
                pieces += [(1 / (2 * math.pi), integrand, r), (1 / (2 * math.pi), integrand, -r)]
        return pieces
    if n not in (2, 3):
        raise DomainError(f"full kernels are available for n in (1, 2, 3), got n={n}")
    if n == 3:
        c, edge = 1 / (2 * math.pi ** 2), 1.0

        def near(lam):
            lam = np.asarray(lam, dtype=float)
            return lam ** 2 * np.sinc(lam * r / math.pi)

        def near_deriv(lam, k):
            # lam^2 sinc(lam r) = lam sin(lam r) / r
            if r == 0:
                return _power(2)[1](lam, k)
            z = lam * r
            out = lam * r ** k * math.sin(z + k * math.pi / 2)
            if k:
                out += k * r ** (k - 1) * math.sin(z + (k - 1) * math.pi / 2)
            return out / r

        b_near = 2
    else:
        c, edge = 1 / (2 * math.pi), 2.0

        def near(lam):
            lam = np.asarray(lam, dtype=float)
            return lam * _j0_series(lam * r)

        def near_deriv(lam, k):
            out = lam * r ** k * _j0_derivative(lam * r, k)
            if k:
                out += k * r ** (k - 1) * _j0_derivative(lam * r, k - 1)
            return out

        b_near = 1
    cut = edge / r if r else math.inf
    if cut > 4 * max(abs(t) ** (-1.0 / (2 * m)), split.lam0):
        return [(c, split.low(near, b_near), 0.0), (c, split.high(near, b_near, derivative=near_deriv), 0.0)]
    near_support, far_support = (0.0, cut), (cut, math.inf)
    pieces += [(c, split.low(near, b_near, support=near_support), 0.0),
               (c, split.high(near, b_near, support=near_support), 0.0)]
    if n == 3:
        lin, d_lin = _power(1)
        for integrand in (split.low(lin, 1, support=far_support),
                          split.high(lin, 1, support=far_support, derivative=d_lin)):
            pieces += [(c / (2j * r), integrand, r), (-c / (2j * r), integrand, -r)]
        return pieces

    def far(kind, sign):
        # lam e^{-+ i lam r} H^{(1,2)}_0(lam r) / 2
        def amp(lam):
            lam = np.asarray(lam, dtype=float)
            z = (lam * r).astype(complex)
            return 0.5 * lam * np.asarray(hankel(0, z, kind)) * np.exp(-sign * 1j * z)
        return amp

    for make in (split.low, split.high):
        pieces.append((c, make(far("first", 1), 0.5, support=far_support), r))
        pieces.append((c, make(far("second", -1), 0.5, support=far_support), -r))
    return pieces


def free_kernel_value(m: int, n: int, t: float, r: float, split: EnergySplit | None = None,
                      tol: float = 1e-10) -> KernelPart:
    """Free kernel with an error estimate and convergence flag."""
    if t == 0:
        raise DomainError("t must be non-zero")
    if r < 0:
        raise DomainError("r must be non-negative")
    if n not in (1, 2, 3):
        raise DomainError(f"full kernels are available for n in (1, 2, 3), got n={n}")
    split = split or EnergySplit()
    return _integrate(_free_pieces(m, n, float(t), float(r), split), float(t), m, tol)


def free_kernel(m: int, n: int, t: float, r: float, split: EnergySplit | None = None, tol: float = 1e-10) -> complex:
    """K_0(t, r) with r = |x - y|."""
    return free_kernel_value(m, n, t, r, split, tol).value


def free_kernel_m1(n: int, t: float, r: float) -> complex:
    """(4 pi i t)^{-n/2} e^{i r^2 / 4t}, principal branch."""
    if t == 0:
        raise DomainError("t must be non-zero")
    return (4j * math.pi * t) ** (-n / 2) * cmath.exp(1j * r * r / (4 * t))


# ------------------------------------------------------------------ perturbation engine

def _radial_profile(profile: Profile) -> Profile | None:
    """s f(s) as a 1-d profile when profile(x) = f(|x|) term by term, else None."""
    terms = []
    for t in profile.terms:
        if any(t.powers) or any(t.center):
            return None
        terms.append(GaussianTerm(t.coeff, (1,), t.width, (0.0,)))
    return Profile(terms, normalize=False)


def _ray_sum(m: int, lam, per_ray):
    """(1/(m lam^{2m-2})) sum_k omega_k (i / 2 mu_k) per_ray(mu_k) over the plus-branch rays.

    per_ray sees all rays at once, stacked on a leading axis.
    """
    lam = np.asarray(lam, dtype=float)
    ks = np.array(list(ray_indices(m, "+")))
    shape = (len(ks),) + (1,) * lam.ndim
    mu = lam * np.exp(1j * np.pi * ks / m).reshape(shape)
    weights = np.exp(2j * np.pi * ks / m).reshape(shape) * 0.5j / mu
    return np.sum(weights * per_ray(mu), axis=0) / (m * lam ** (2 * m - 2))


def _odd_slope_at_zero(profile: Profile, mu):
    """d/dx int e^{i mu |x-y|} psi(y) dy at x = 0 for an odd psi: -2 i mu int_0^inf e^{i mu y} psi."""
    total = 0.0
    for t in profile.terms:
        p = t.powers[0]
        total = total + t.coeff * (-1) ** p * _faddeeva_j(mu, 0.0, t.width, p)[p]
    return -2j * mu * total


class _LamCache:
    """Small LRU keyed by the bytes of a lam array, so sweeps reuse per-node tables."""

    def __init__(self, size: int = 256):
        self.size = size
        self.data: OrderedDict = OrderedDict()
        self.lock = Lock()

    def get(self, lam: np.ndarray, build):
        key = (lam.shape, lam.tobytes())
        with self.lock:
            if key in self.data:
                self.data.move_to_end(key)
                return self.data[key]
        value = build(lam)
        with self.lock:
            self.data[key] = value
            if len(self.data) > self.size:
                self.data.popitem(last=False)
        return value


class PerturbationEngine:
    """Per-spec tables for the finite-rank correction.

    Routes: ``line`` (n = 1, closed-form rays), ``radial`` (n = 3 with radial
    profiles, reduced to odd 1-d profiles s f(s)), ``fourier`` (anything else
    with n <= 3, scalar principal-value quadrature per lam node; slow).
    """

    def __init__(self, spec: OperatorSpec, split: EnergySplit | None = None, floor: float = SPECTRAL_FLOOR):
        if spec.n > 3:
            raise DomainError(f"full kernels are available for n <= 3, got n={spec.n}")
        self.spec = spec
        self.split = split or EnergySplit()
        self.m = spec.m
        self.alphas = np.asarray(spec.alphas, dtype=float)
        self.route = "line" if spec.n == 1 else "fourier"
        self.reduced: list[Profile] = list(spec.profiles) if spec.n == 1 else []
        if spec.n == 3 and spec.N:
            radial = [_radial_profile(p) for p in spec.profiles]
            if all(r is not None for r in radial):
                self.route, self.reduced = "radial", radial
        self._corr = {}
        if self.route != "fourier":
            for i in range(spec.N):
                for j in range(i, spec.N):
                    self._corr[i, j] = self.reduced[i].correlation(self.reduced[j])
        if spec.N:
            widths = min(p.min_width for p in spec.profiles)
            degree = max(p.degree for p in spec.profiles)
            # |phi^(lam)| <= poly * exp(-w^2 lam^2 / 4); Im S carries one such factor
            self.lam_max = 2.0 * math.sqrt(45.0 + 3.0 * degree) / widths
        else:
            self.lam_max = 0.0
        self._tables = _LamCache()
        self.condition = self.spectral_condition() if spec.N else (math.inf, math.nan)
        if self.condition[0] < floor:
            raise RefusalError(
                f"spectral condition fails: min |det(I + F D)| = {self.condition[0]:.3e} "
                f"< {floor} at lam = {self.condition[1]:.4g}")

    # ---- building blocks
    def f_matrix(self, lam) -> np.ndarray:
        """F^+(lam^{2m}) with shape lam.shape + (N, N)."""
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        N = self.spec.N
        out = np.empty(lam.shape + (N, N), dtype=complex)
        if self.route == "fourier":
            for idx, value in np.ndenumerate(lam):
                out[idx] = borel_matrix(self.spec, float(value), "+")
            return out
        scale = 2 * math.pi if self.route == "radial" else 1.0
        for (i, j), corr in self._corr.items():
            val = scale * _ray_sum(self.m, lam, lambda mu, c=corr: _abs_convolution_1d(c, mu, 0.0))
            out[..., i, j] = val
            out[..., j, i] = val
        return out

    def rzero(self, i: int, lam, x) -> np.ndarray:
        """(R_0^+ phi_i)(x) on an array of lam."""
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        if self.route == "line":
            return np.asarray(resolvent_apply_1d(self.m, self.reduced[i], lam, float(x)), dtype=complex)
        if self.route == "radial":
            r = float(np.linalg.norm(x))
            psi = self.reduced[i]
            slope = _ray_sum(self.m, lam, lambda mu: _odd_slope_at_zero(psi, mu))
            if r >= 1e-3:
                return resolvent_apply_1d(self.m, psi, lam, r) / r
            # R(r)/r = a + c r^2 + O(r^4); c from r0 = 1e-3
            r0 = 1e-3
            c = (resolvent_apply_1d(self.m, psi, lam, r0) / r0 - slope) / r0 ** 2
            return slope + c * r * r
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([rzero_phi_fourier(self.spec, i, float(v), x).value for v in lam.ravel()]).reshape(lam.shape)

    def coupling(self, lam) -> np.ndarray:
        """C = (D^{-1} + F^+)^{-1} = D (I + F^+ D)^{-1}, per lam node (cached)."""
        lam = np.atleast_1d(np.asarray(lam, dtype=float))

        def build(arr):
            f = self.f_matrix(arr)
            return np.linalg.inv(f + np.diag(1.0 / self.alphas))

        return self._tables.get(lam, build)

    def s_plus(self, lam, x, y) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        c = self.coupling(lam)
        rx = [self.rzero(i, lam, x) for i in range(self.spec.N)]
        ry = rx if _same_point(x, y) else [self.rzero(j, lam, y) for j in range(self.spec.N)]
        total = np.zeros(lam.shape, dtype=complex)
        for i in range(self.spec.N):
            for j in range(self.spec.N):
                total += c[..., i, j] * rx[i] * ry[j]
        return total

    def spectral_condition(self, grid=None) -> tuple[float, float]:
        """min over the grid of |det(I + F^+ D)| (the minus branch is its conjugate) and where."""
        if grid is None:
            grid = np.concatenate([np.geomspace(1e-3 * self.split.lam0, self.split.lam0, 100),
                                   np.linspace(self.split.lam0, max(self.lam_max, 2 * self.split.lam0), 400)[1:]])
        grid = np.asarray(grid, dtype=float)
        a = np.eye(self.spec.N) + self.f_matrix(grid) * self.alphas[None, None, :]
        dets = np.abs(np.linalg.det(a))
        k = int(np.argmin(dets))
        return float(dets[k]), float(grid[k])

    # ---- the kernel
    def pieces(self, t: float, x, y):
        m = self.m
        s = _norm(x) + _norm(y)
        pieces = []

        def difference(lam):
            lam = np.asarray(lam, dtype=float)
            return lam ** (2 * m - 1) * self.s_plus(lam, x, y).imag

        coeff = -2 * m / math.pi
        if abs(t) ** (-1.0 / (2 * m)) * s <= 1:
            pieces.append((coeff, self.split.low(difference, 0), 0.0))
        else:
            def folded(sign):
                def amp(lam):
                    lam = np.asarray(lam, dtype=float)
                    a = lam ** (2 * m - 1) * np.exp(-1j * lam * s) * self.s_plus(lam, x, y)
                    return a if sign > 0 else np.conj(a)
                return amp

            c = 1j * m / math.pi
            pieces.append((c, self.split.low(folded(1), 0), s))
            pieces.append((-c, self.split.low(folded(-1), 0), -s))
        # Im S decays like phi^, so the by-parts tail cuts early even when the phase is fast
        pieces.append((coeff, self.split.high(difference, 0), 0.0))
        return pieces

    def kernel(self, t: float, x, y, tol: float = 1e-10) -> KernelPart:
        if t == 0:
            raise DomainError("t must be non-zero")
        if self.spec.N == 0:
            return _ZERO
        part = _integrate(self.pieces(float(t), x, y), float(t), self.m, tol)
        return KernelPart(part.value, part.error, part.converged, part.notes + (f"route:{self.route}",))


def _norm(x) -> float:
    return float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float))))


def _same_point(x, y) -> bool:
    return np.array_equal(np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(y, dtype=float)))


_ENGINES: dict = {}
_ENGINE_LOCK = Lock()


def engine_for(spec: OperatorSpec, split: EnergySplit | None = None, floor: float = SPECTRAL_FLOOR) -> PerturbationEngine:
    split = split or EnergySplit()
    key = (spec.digest(), split.lam0, floor)
    with _ENGINE_LOCK:
        if key not in _ENGINES:
            _ENGINES[key] = PerturbationEngine(spec, split, floor)
        return _ENGINES[key]


def perturbation_kernel(spec: OperatorSpec, split: EnergySplit | None, t: float, x, y, tol: float = 1e-10) -> complex:
    """K_pert(t, x, y); raises RefusalError when the spectral condition fails."""
    if spec.N == 0:
        return 0j
    return engine_for(spec, split).kernel(t, x, y, tol).value


# ------------------------------------------------------------------ samples

@dataclass(frozen=True)
class KernelSample:
    t: float
    x: tuple[float, ...]
    y: tuple[float, ...]
    K_free: complex
    K_pert: complex
    K_total: complex
    error_estimate: float
    flags: tuple[str, ...] = ()

    FIELDS = ("t", "x", "y", "re_free", "im_free", "re_pert", "im_pert", "re_total", "im_total",
              "error_estimate", "flags")

    def row(self) -> list:
        return [repr(self.t), " ".join(repr(v) for v in self.x), " ".join(repr(v) for v in self.y),
                repr(self.K_free.real), repr(self.K_free.imag), repr(self.K_pert.real), repr(self.K_pert.imag),
                repr(self.K_total.real), repr(self.K_total.imag), repr(self.error_estimate), ";".join(self.flags)]

    def to_dict(self) -> dict:
        return {
            "t": self.t, "x": list(self.x), "y": list(self.y),
            "re_free": self.K_free.real, "im_free": self.K_free.imag,
            "re_pert": self.K_pert.real, "im_pert": self.K_pert.imag,
            "re_total": self.K_total.real, "im_total": self.K_total.imag,
            "error_estimate": self.error_estimate, "flags": list(self.flags),
        }


def _point(x) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))


def kernel_sample(spec: OperatorSpec, t: float, x, y, split: EnergySplit | None = None,
                  tol: float = 1e-10) -> KernelSample:
    split = split or EnergySplit()
    xp, yp = _point(x), _point(y)
    if len(xp) != spec.n or len(yp) != spec.n:
        raise DomainError(f"points must have dimension n={spec.n}")
    r = float(np.linalg.norm(np.subtract(xp, yp)))
    free = free_kernel_value(spec.m, spec.n, t, r, split, tol)
    pert = engine_for(spec, split).kernel(t, xp if spec.n > 1 else xp[0], yp if spec.n > 1 else yp[0], tol) \
        if spec.N else _ZERO
    flags = []
    if not free.converged:
        flags.append("free-unconverged")
    if not pert.converged:
        flags.append("pert-unconverged")
    flags += [n for n in pert.notes if n.startswith("route:")]
    return KernelSample(float(t), xp, yp, free.value, pert.value, free.value + pert.value,
                        free.error + pert.error, tuple(flags))


def kernel_sweep(spec: OperatorSpec, ts, xy, split: EnergySplit | None = None, tol: float = 1e-8,
                 workers: int = 1):
    """KernelSample for every t in ``ts`` and (x, y) in ``xy``, in that order (t outer)."""
    split = split or EnergySplit()
    jobs = [(t, x, y) for t in ts for x, y in xy]
    if spec.N:
        engine_for(spec, split)  # refuse before any work is scheduled

    def run(job):
        t, x, y = job
        return kernel_sample(spec, t, x, y, split, tol)

    if workers <= 1:
        for job in jobs:
            yield run(job)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(run, jobs)


def write_csv(samples, stream, header: dict | None = None) -> int:
    """CSV with '# key: value' provenance lines first; returns the number of rows."""
    for key, value in (header or {}).items():
        stream.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(KernelSample.FIELDS)
    count = 0
    for s in samples:
        writer.writerow(s.row())
        count += 1
    return count


def write_jsonl(samples, stream, header: dict | None = None) -> int:
    if header is not None:
        stream.write(json.dumps({"provenance": header}, sort_keys=True) + "\n")
    count = 0
    for s in samples:
        stream.write(json.dumps(s.to_dict()) + "\n")
        count += 1
    return count


def read_csv(text: str) -> list[dict]:
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


# ------------------------------------------------------------------ grid oracle

def _tail_mass(profile: Profile, L: float) -> float:
    out = 0.0
    for lo, hi in ((-math.inf, -L), (L, math.inf)):
        out += quad(lambda v: float(profile(v)) ** 2, lo, hi, epsabs=1e-16, limit=200)[0]
    return out


_EIGEN: dict = {}
_EIGEN_LOCK = Lock()


@dataclass
class GridOracle:
    """Periodic Fourier discretization of H on [-L, L) with M points, diagonalized densely.

    The matrix acts on grid values in the orthonormal basis e_a / sqrt(h);
    off-grid points use the periodic sinc (trigonometric) interpolant, so
    K(t, x, y) = s(x)^T V e^{-it Lambda} V^T s(y) / h.
    """

    spec: OperatorSpec
    L: float = 40 * math.pi
    M: int = 4096
    values: np.ndarray = field(init=False, repr=False)
    vectors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.spec.n != 1:
            raise DomainError("the grid oracle is n = 1 only")
        if self.M % 2 or self.M < 8:
            raise DomainError("M must be an even integer >= 8")
        for k, p in enumerate(self.spec.profiles):
            mass = _tail_mass(p, self.L)
            if mass > TAIL_MASS:
                raise PreconditionError(f"profile {k} has tail mass {mass:.2e} outside [-L, L]")
        self.h = 2 * self.L / self.M
        self.grid = -self.L + self.h * np.arange(self.M)
        key = (self.spec.digest(), float(self.L), self.M)
        with _EIGEN_LOCK:
            if key not in _EIGEN:
                _EIGEN[key] = np.linalg.eigh(self.matrix())
            self.values, self.vectors = _EIGEN[key]

    @property
    def kappa(self) -> np.ndarray:
        return 2 * math.pi * np.fft.fftfreq(self.M, self.h)

    def free_matrix(self) -> np.ndarray:
        col = np.fft.ifft(self.kappa ** (2 * self.spec.m)).real
        idx = (np.arange(self.M)[:, None] - np.arange(self.M)[None, :]) % self.M
        return col[idx]

    def profile_columns(self) -> np.ndarray:
        """sqrt(h) phi_j(grid) as columns: orthonormal-basis coordinates of the profiles."""
        if not self.spec.N:
            return np.zeros((self.M, 0))
        return math.sqrt(self.h) * np.stack([p(self.grid) for p in self.spec.profiles], axis=1)

    def matrix(self) -> np.ndarray:
        phi = self.profile_columns()
        return self.free_matrix() + (phi * np.asarray(self.spec.alphas)[None, :]) @ phi.T

    def cardinal(self, x) -> np.ndarray:
        """Periodic sinc weights S_a(x), shape x.shape + (M,)."""
        u = np.asarray(x, dtype=float)[..., None] - self.grid
        u = (u + self.L) % (2 * self.L) - self.L
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.sin(math.pi * u / self.h) / (self.M * np.tan(math.pi * u / (2 * self.L)))
        return np.where(np.abs(u) < 1e-12 * self.h, 1.0, out)

    def modes(self, x) -> np.ndarray:
        """V^T s(x) / sqrt(h)."""
        return (self.cardinal(x) @ self.vectors) / math.sqrt(self.h)

    def kernel(self, t: float, x, y) -> complex:
        return complex(self.kernels(t, np.atleast_1d(x), np.atleast_1d(y))[0])

    def kernels(self, t: float, xs, ys) -> np.ndarray:
        """K(t, xs[k], ys[k]) for paired arrays of points."""
        if t == 0:
            raise DomainError("t must be non-zero")
        a, b = self.modes(np.asarray(xs)), self.modes(np.asarray(ys))
        return np.einsum("kj,j,kj->k", a, np.exp(-1j * t * self.values), b)

    def evolve(self, f: np.ndarray, t: float) -> np.ndarray:
        """e^{-itH} f for grid values f."""
        return self.vectors @ (np.exp(-1j * t * self.values) * (self.vectors.T @ f))

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(self.h * np.sum(np.abs(f) ** 2)))

    def resolvent(self, z: complex) -> np.ndarray:
        """R(z) assembled from R_0(z) and the finite-rank formula, not from H."""
        kappa = self.kappa
        idx = (np.arange(self.M)[:, None] - np.arange(self.M)[None, :]) % self.M
        r0 = np.fft.ifft(1.0 / (kappa ** (2 * self.spec.m) - z))[idx]
        if not self.spec.N:
            return r0
        phi = self.profile_columns()
        b = r0 @ phi
        f = phi.T @ b
        c = np.linalg.inv(np.diag(1.0 / np.asarray(self.spec.alphas)) + f)
        return r0 - b @ c @ b.T

    def resolvent_residual(self, z: complex, f: np.ndarray) -> float:
        """||(H - z) R(z) f - f|| / ||f||."""
        u = self.resolvent(z) @ f
        res = self.matrix() @ u - z * u - f
        return self.norm(res) / self.norm(f)


def grid_oracle(spec: OperatorSpec, L: float, M: int, t: float, x: float, y: float) -> complex:
    return GridOracle(spec, L, M).kernel(t, x, y)


def free_spec(spec: OperatorSpec) -> OperatorSpec:
    return OperatorSpec(spec.m, spec.n)


def oracle_perturbation(spec: OperatorSpec, t: float, xs, ys, L: float = 40 * math.pi, M: int = 4096) -> np.ndarray:
    """Torus kernel of H minus torus kernel of H_0; the free wrap-around cancels."""
    full = GridOracle(spec, L, M).kernels(t, xs, ys)
    bare = GridOracle(free_spec(spec), L, M).kernels(t, xs, ys)
    return full - bare

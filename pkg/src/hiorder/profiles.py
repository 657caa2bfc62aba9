"""Hermite-Gaussian profiles with closed-form transforms and moments.

A profile is a finite sum of terms

    coeff * prod_d (x_d - c_d)^{p_d} * exp(-|x - c|^2 / w^2)

and every quantity the spectral layer needs (Fourier transform, moments,
inner products, the sphere average of phi_i^ * conj(phi_j^)) is exact up to
rounding.  The Fourier convention is phi^(xi) = int e^{-i x.xi} phi(x) dx.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np
from numpy.polynomial import hermite as _herm
from numpy.polynomial import polynomial as _poly

from .errors import DomainError


@dataclass(frozen=True)
class GaussianTerm:
    coeff: float
    powers: tuple[int, ...]
    width: float
    center: tuple[float, ...]

    def __post_init__(self):
        if self.width <= 0:
            raise DomainError(f"width must be positive, got {self.width}")
        if len(self.powers) != len(self.center):
            raise DomainError("powers and center must have the same dimension")
        if any(p < 0 for p in self.powers):
            raise DomainError("powers must be non-negative")

    @property
    def dim(self) -> int:
        return len(self.powers)

    def scaled(self, factor: float) -> "GaussianTerm":
        return GaussianTerm(self.coeff * factor, self.powers, self.width, self.center)


def _gauss_power_integral(k: int, a: float) -> float:
    """int_R v^k exp(-a v^2) dv."""
    if k % 2:
        return 0.0
    return math.gamma((k + 1) / 2) * a ** (-(k + 1) / 2)


def _shifted_power(p: int, shift: float) -> np.ndarray:
    """Coefficients of (v + shift)^p in increasing powers of v."""
    return np.array([math.comb(p, k) * shift ** (p - k) for k in range(p + 1)], dtype=float)


def _pair_integral_1d(p1, c1, w1, p2, c2, w2) -> float:
    """int (u-c1)^p1 (u-c2)^p2 exp(-(u-c1)^2/w1^2 - (u-c2)^2/w2^2) du."""
    a1, a2 = 1.0 / w1 ** 2, 1.0 / w2 ** 2
    a = a1 + a2
    cbar = (a1 * c1 + a2 * c2) / a
    poly = _poly.polymul(_shifted_power(p1, cbar - c1), _shifted_power(p2, cbar - c2))
    total = sum(coef * _gauss_power_integral(k, a) for k, coef in enumerate(poly))
    return total * math.exp(-(a1 * a2 / a) * (c1 - c2) ** 2)


def _moment_1d(b: int, p: int, c: float, w: float) -> float:
    """int x^b (x-c)^p exp(-(x-c)^2/w^2) dx."""
    a = 1.0 / w ** 2
    return sum(math.comb(b, s) * c ** (b - s) * _gauss_power_integral(s + p, a) for s in range(b + 1))


def _hermite_1d_transform(p: int, w: float, xi):
    """Transform of u^p exp(-u^2/w^2): w sqrt(pi) (-i w/2)^p H_p(w xi/2) exp(-w^2 xi^2/4)."""
    coeffs = np.zeros(p + 1)
    coeffs[p] = 1.0
    arg = w * np.asarray(xi) / 2.0
    return w * math.sqrt(math.pi) * (-0.5j * w) ** p * _herm.hermval(arg, coeffs) * np.exp(-arg * arg)


def _hermite_monomials(p: int, w: float) -> np.ndarray:
    """w sqrt(pi) (-i w/2)^p H_p(w t/2) as coefficients in increasing powers of t."""
    coeffs = np.zeros(p + 1)
    coeffs[p] = 1.0
    power = _herm.herm2poly(coeffs)
    scale = (w / 2.0) ** np.arange(p + 1)
    return w * math.sqrt(math.pi) * (-0.5j * w) ** p * power * scale


class Profile:
    """A real Hermite-Gaussian combination, normalized to unit L2 norm by default."""

    def __init__(self, terms, normalize: bool = True):
        terms = tuple(t if isinstance(t, GaussianTerm) else GaussianTerm(*t) for t in terms)
        if not terms:
            raise DomainError("a profile needs at least one term")
        dims = {t.dim for t in terms}
        if len(dims) != 1:
            raise DomainError("all terms must share one dimension")
        self.terms = terms
        if normalize:
            norm = math.sqrt(self._raw_inner(self))
            if norm == 0:
                raise DomainError("profile has zero norm")
            self.terms = tuple(t.scaled(1.0 / norm) for t in terms)

    @classmethod
    def gaussian(cls, n: int = 1, width: float = 1.0, center=None) -> "Profile":
        center = tuple(center) if center is not None else (0.0,) * n
        return cls([GaussianTerm(1.0, (0,) * n, width, center)])

    @classmethod
    def monomial(cls, powers, width: float = 1.0, center=None) -> "Profile":
        powers = tuple(powers)
        center = tuple(center) if center is not None else (0.0,) * len(powers)
        return cls([GaussianTerm(1.0, powers, width, center)])

    @classmethod
    def with_vanishing_moments(cls, k0: int, width: float = 1.0) -> "Profile":
        """1-d profile sum_{j<=k0} c_j x^j e^{-x^2/w^2} with moments 0..k0-1 zero.

        c_{k0} = 1 and the remaining coefficients solve a k0 x k0 system.
        """
        if k0 < 0:
            raise DomainError("k0 must be non-negative")
        if k0 == 0:
            return cls.gaussian(1, width)
        # row b: sum_j c_j int x^{b+j} e^{-x^2/w^2} = 0, b = 0..k0-1
        a = 1.0 / width ** 2
        mat = np.array([[_gauss_power_integral(b + j, a) for j in range(k0)] for b in range(k0)])
        rhs = -np.array([_gauss_power_integral(b + k0, a) for b in range(k0)])
        coeffs, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
        terms = [GaussianTerm(float(c), (j,), width, (0.0,)) for j, c in enumerate(coeffs) if c != 0.0]
        terms.append(GaussianTerm(1.0, (k0,), width, (0.0,)))
        return cls(terms)

    @property
    def dim(self) -> int:
        return self.terms[0].dim

    @property
    def centered(self) -> bool:
        return all(all(c == 0.0 for c in t.center) for t in self.terms)

    @property
    def max_width(self) -> float:
        return max(t.width for t in self.terms)

    @property
    def min_width(self) -> float:
        return min(t.width for t in self.terms)

    @property
    def max_center(self) -> float:
        return max(math.sqrt(sum(c * c for c in t.center)) for t in self.terms)

    @property
    def degree(self) -> int:
        return max(sum(t.powers) for t in self.terms)

    def _raw_inner(self, other: "Profile") -> float:
        total = 0.0
        for a, b in product(self.terms, other.terms):
            value = a.coeff * b.coeff
            for d in range(self.dim):
                value *= _pair_integral_1d(a.powers[d], a.center[d], a.width, b.powers[d], b.center[d], b.width)
            total += value
        return total

    def inner(self, other: "Profile") -> float:
        if other.dim != self.dim:
            raise DomainError("profiles live in different dimensions")
        return self._raw_inner(other)

    @property
    def norm(self) -> float:
        return math.sqrt(self._raw_inner(self))

    def __call__(self, x):
        """phi(x); x has shape (..., n), or (...) when n = 1."""
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        out = np.zeros(x.shape[:-1])
        for t in self.terms:
            shifted = x - np.asarray(t.center)
            poly = np.prod(shifted ** np.asarray(t.powers), axis=-1)
            out = out + t.coeff * poly * np.exp(-np.sum(shifted ** 2, axis=-1) / t.width ** 2)
        return out

    def fourier(self, xi):
        """phi^(xi) in closed form; xi has shape (..., n), or (...) when n = 1."""
        xi = np.asarray(xi, dtype=float)
        if self.dim == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
            xi = xi[..., None]
        out = np.zeros(xi.shape[:-1], dtype=complex)
        for t in self.terms:
            value = t.coeff * np.exp(-1j * (xi @ np.asarray(t.center, dtype=float)))
            for d in range(self.dim):
                value = value * _hermite_1d_transform(t.powers[d], t.width, xi[..., d])
            out = out + value
        return out

    def moment(self, beta) -> float:
        """int x^beta phi(x) dx, exact."""
        beta = tuple(int(b) for b in beta)
        if len(beta) != self.dim:
            raise DomainError("multi-index has the wrong dimension")
        return self._moments.get(beta) if beta in self._moments else self._moment_uncached(beta)

    def _moment_uncached(self, beta) -> float:
        total = 0.0
        for t in self.terms:
            value = t.coeff
            for d in range(self.dim):
                value *= _moment_1d(beta[d], t.powers[d], t.center[d], t.width)
            total += value
        return total

    @cached_property
    def _moments(self) -> dict:
        # the table only needs to reach 2m for m <= 4
        out = {}
        for order in range(9):
            for beta in _multi_indices_of_order(self.dim, order):
                out[beta] = self._moment_uncached(beta)
        return out

    def pair_radial_terms(self, other: "Profile") -> list[tuple[float, int, float]]:
        """sum over the unit sphere of phi^(s w) conj(other^(s w)) as sum c s^k e^{-a s^2}.

        Exact only for centered profiles; returns triples (c, k, a).
        """
        if not (self.centered and other.centered):
            raise DomainError("closed-form sphere average needs centered profiles")
        from .resolvent import sphere_monomial_integral

        collected: dict[tuple[int, float], float] = {}
        for ta, tb in product(self.terms, other.terms):
            # per-dimension polynomial in t_d = s w_d
            per_dim = []
            for d in range(self.dim):
                pa = _hermite_monomials(ta.powers[d], ta.width)
                pb = np.conj(_hermite_monomials(tb.powers[d], tb.width))
                per_dim.append(_poly.polymul(pa, pb))
            a = (ta.width ** 2 + tb.width ** 2) / 4.0
            for gamma in product(*(range(len(p)) for p in per_dim)):
                angular = sphere_monomial_integral(gamma)
                if angular == 0.0:
                    continue
                coef = ta.coeff * tb.coeff * angular * np.prod([per_dim[d][g] for d, g in enumerate(gamma)])
                key = (sum(gamma), a)
                collected[key] = collected.get(key, 0.0) + coef.real
        return [(c, k, a) for (k, a), c in sorted(collected.items()) if c != 0.0]

    def correlation(self, other: "Profile") -> "Profile":
        """c(u) = int phi(y + u) other(y) dy as an (unnormalized) 1-d profile.

        Each pair of terms gives a polynomial in v = u - (c1 - c2) times
        exp(-v^2 / (w1^2 + w2^2)).
        """
        if self.dim != 1 or other.dim != 1:
            raise DomainError("correlation profiles are 1-d only")
        collected: dict[tuple[int, float, float], float] = {}
        for ta, tb in product(self.terms, other.terms):
            p1, p2 = ta.powers[0], tb.powers[0]
            a1, a2 = 1.0 / ta.width ** 2, 1.0 / tb.width ** 2
            a = a1 + a2
            # (zeta + a2 v / a)^p1 (zeta - a1 v / a)^p2, integrated over zeta
            out = np.zeros(p1 + p2 + 1)
            for k1 in range(p1 + 1):
                for k2 in range(p2 + 1):
                    moment = _gauss_power_integral(k1 + k2, a)
                    if moment == 0.0:
                        continue
                    q = (p1 - k1) + (p2 - k2)
                    out[q] += (math.comb(p1, k1) * math.comb(p2, k2) * moment
                               * (a2 / a) ** (p1 - k1) * (-a1 / a) ** (p2 - k2))
            width = math.sqrt(ta.width ** 2 + tb.width ** 2)
            center = ta.center[0] - tb.center[0]
            for q, value in enumerate(out):
                if value != 0.0:
                    key = (q, width, center)
                    collected[key] = collected.get(key, 0.0) + ta.coeff * tb.coeff * value
        terms = [GaussianTerm(c, (q,), w, (ctr,)) for (q, w, ctr), c in sorted(collected.items()) if c != 0.0]
        if not terms:
            raise DomainError("correlation vanishes identically")
        return Profile(terms, normalize=False)

    def to_dict(self) -> dict:
        return {
            "terms": [
                {"coeff": t.coeff, "powers": list(t.powers), "width": t.width, "center": list(t.center)}
                for t in self.terms
            ]
        }

    @classmethod
    def from_dict(cls, data: dict, normalize: bool = True) -> "Profile":
        terms = []
        for item in data["terms"]:
            powers = tuple(int(p) for p in item["powers"])
            center = tuple(float(c) for c in item.get("center", [0.0] * len(powers)))
            terms.append(GaussianTerm(float(item["coeff"]), powers, float(item["width"]), center))
        return cls(terms, normalize=normalize)

    def __repr__(self) -> str:
        return f"Profile(dim={self.dim}, terms={len(self.terms)})"


def _multi_indices_of_order(n: int, order: int):
    if n == 1:
        yield (order,)
        return
    for first in range(order, -1, -1):
        for rest in _multi_indices_of_order(n - 1, order - first):
            yield (first,) + rest


def multi_indices_of_order(n: int, order: int) -> list[tuple[int, ...]]:
    return list(_multi_indices_of_order(n, order))

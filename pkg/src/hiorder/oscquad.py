"""One-dimensional oscillatory integrals I(t, x) = int_Omega e^{i(t lam^{2m} + lam x)} psi(lam) dlam.

Omega is (0, lam0) ("low") or (lam0, inf) ("high").  The phase
phi(lam) = t lam^{2m} + lam x is monotone between 0, the stationary point and
infinity, so panels are laid out at fixed phase increments on each monotone
piece.  The infinite tail is cut at some Lambda and replaced by repeated
integration by parts against d/dlam e^{i phi} / (i phi'), evaluated with
Taylor jets at Lambda; the dropped remainder is bounded from the last
amplitude with a safety factor.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import DomainError, PreconditionError
from .resolvent import smooth_step

log = logging.getLogger(__name__)

_GL_HI = np.polynomial.legendre.leggauss(24)
_GL_LO = np.polynomial.legendre.leggauss(16)
PHASE_STEP = 4 * math.pi  # two periods per GL24 panel, i.e. 12 nodes per period
SAFETY = 10.0
_CHUNK = 20_000


# ------------------------------------------------------------------ integrands

@dataclass
class OscillatoryIntegrand:
    """psi on Omega plus the metadata the quadrature and certifier need.

    ``amplitude(lam)`` (or ``amplitude(lam, x)`` when ``takes_x``) must accept
    arrays.  ``b`` is the declared symbol order, |d^l psi| <~ lam^{b-l}.
    ``support`` optionally narrows Omega (psi vanishes outside); ``tail_start``
    is where a high-domain amplitude has settled into its symbol behaviour.
    ``derivative(lam, order[, x])``, if given, replaces numerical derivatives
    in the tail.
    """

    amplitude: object
    b: float
    domain: str
    lam0: float
    support: tuple[float, float] | None = None
    breakpoints: tuple[float, ...] = ()
    tail_start: float | None = None
    derivative: object = None
    takes_x: bool = False
    check: bool = True
    gate: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.domain not in ("low", "high"):
            raise DomainError(f"domain must be 'low' or 'high', got {self.domain!r}")
        if not self.lam0 > 0:
            raise DomainError("lam0 must be positive")
        if self.domain == "low" and self.b <= -1:
            raise DomainError("the low domain needs b > -1 for integrability at 0")
        if self.check:
            self.gate = symbol_gate(self)
            if not self.gate["ok"]:
                raise DomainError(f"declared b={self.b} is inconsistent with the amplitude: {self.gate}")

    def psi(self, lam, x: float = 0.0):
        lam = np.asarray(lam, dtype=float)
        out = self.amplitude(lam, x) if self.takes_x else self.amplitude(lam)
        return np.broadcast_to(np.asarray(out, dtype=complex), lam.shape)

    @property
    def interval(self) -> tuple[float, float]:
        lo, hi = (0.0, self.lam0) if self.domain == "low" else (self.lam0, math.inf)
        if self.support is not None:
            lo, hi = max(lo, self.support[0]), min(hi, self.support[1])
        return lo, hi

    def derivatives(self, lam: float, order: int, x: float = 0.0) -> tuple[np.ndarray, float]:
        """[psi(lam), psi'(lam), ..., psi^(order)(lam)] and an absolute error estimate."""
        if self.derivative is not None:
            call = (lambda k: self.derivative(lam, k, x)) if self.takes_x else (lambda k: self.derivative(lam, k))
            return np.array([complex(call(k)) for k in range(order + 1)]), 0.0
        return _chebyshev_derivatives(lambda s: self.psi(s, x), lam, order)

    def derivatives_at(self, lams, order: int, x: float = 0.0) -> list:
        """derivatives() at several points, with one amplitude call for all interpolation nodes."""
        if self.derivative is not None:
            return [self.derivatives(float(lam), order, x) for lam in lams]
        lams = np.asarray(lams, dtype=float)
        half = 0.4
        grids = [_derivative_weights(deg, order) for deg in (40, 30)]
        pts = np.concatenate([(lams[:, None] * (1 + half * nodes)).ravel() for nodes, _ in grids])
        vals = np.asarray(self.psi(pts, x), dtype=complex)
        split = len(lams) * len(grids[0][0])
        out = []
        for k, lam in enumerate(lams):
            scale = (lam * half) ** -np.arange(order + 1, dtype=float)
            hi = scale * (grids[0][1] @ vals[:split].reshape(len(lams), -1)[k])
            lo = scale * (grids[1][1] @ vals[split:].reshape(len(lams), -1)[k])
            out.append((hi, np.abs(hi - lo)))
        return out


@lru_cache(maxsize=None)
def _derivative_weights(deg: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev nodes on [-1, 1] and the matrix taking values there to derivatives 0..order at 0."""
    cheb = np.polynomial.chebyshev
    nodes = cheb.chebpts1(deg + 1)
    to_coef = np.linalg.inv(cheb.chebvander(nodes, deg))
    rows = np.array([[cheb.chebval(0.0, cheb.chebder(np.eye(deg + 1)[j], k)) if k else cheb.chebval(0.0, np.eye(deg + 1)[j])
                      for j in range(deg + 1)] for k in range(order + 1)])
    return nodes, rows @ to_coef


def _chebyshev_derivatives(f, lam: float, order: int, half: float = 0.4):
    """Derivatives at lam from Chebyshev interpolants on [lam(1-half), lam(1+half)]."""
    rad = lam * half
    scale = rad ** -np.arange(order + 1, dtype=float)
    out = []
    for deg in (40, 30):
        nodes, weights = _derivative_weights(deg, order)
        out.append(scale * (weights @ np.asarray(f(lam + rad * nodes), dtype=complex)))
    return out[0], np.abs(out[0] - out[1])


def symbol_gate(integrand: OscillatoryIntegrand, samples: int = 10) -> dict:
    """Compare |d^l psi| lam^{l-b}, l = 0, 1, at the asymptotic end of Omega with the interior.

    The declared b passes when neither ratio grows by more than a factor 10.
    Derivatives are central finite differences.
    """
    lam0 = integrand.lam0
    if integrand.domain == "low":
        lam = np.geomspace(lam0 * 1e-3, lam0 * 0.5, samples)[::-1]
    else:
        start = max(lam0, integrand.tail_start or lam0) * 1.01
        lam = np.geomspace(start, start * 1e3, samples)
    h = 1e-5 * lam
    v0 = np.abs(integrand.psi(lam))
    v1 = np.abs(integrand.psi(lam + h) - integrand.psi(lam - h)) / (2 * h)
    out = {"ok": True}
    half = samples // 2
    for name, v, shift in (("l0", v0, 0.0), ("l1", v1, 1.0)):
        c = v * lam ** (shift - integrand.b)
        interior = np.max(c[:half])
        scale = max(interior, 1e-300)
        growth = float(np.max(c[half:]) / scale) if np.max(c) > 0 else 0.0
        # a derivative that is zero on the interior samples carries no information
        if name == "l1" and interior <= 1e-12 * max(np.max(v0 * lam ** -integrand.b), 1e-300):
            growth = 0.0
        out[name] = growth
        out["ok"] = out["ok"] and growth <= 10.0
    return out


def power_amplitude(b: float, lam0: float, domain: str, coeff: complex = 1.0) -> OscillatoryIntegrand:
    """psi = coeff lam^b chi: chi = 1 on (0, lam0/2] falling to 0 at lam0 (low),
    or rising from 0 at lam0 to 1 at 2 lam0 (high).  Exact derivatives in the tail."""
    if domain == "low":
        def amp(lam):
            return coeff * lam ** b * (1.0 - smooth_step(2.0 * lam / lam0 - 1.0))

        return OscillatoryIntegrand(amp, b, "low", lam0)

    def amp(lam):
        return coeff * lam ** b * smooth_step(lam / lam0 - 1.0)

    def deriv(lam, k):
        # only used beyond tail_start where chi = 1
        return coeff * math.prod(b - j for j in range(k)) * lam ** (b - k)

    return OscillatoryIntegrand(amp, b, "high", lam0, tail_start=2 * lam0, derivative=deriv,
                                breakpoints=(2 * lam0,))


# ------------------------------------------------------------------ phase helpers

def phase(t: float, x: float, m: int, lam):
    return t * np.asarray(lam) ** (2 * m) + np.asarray(lam) * x


def phase_derivative(t: float, x: float, m: int, lam):
    return 2 * m * t * np.asarray(lam) ** (2 * m - 1) + x


def stationary_point(t: float, x: float, m: int) -> float | None:
    """lam* > 0 with 2m t lam*^{2m-1} = -x, or None when x/t >= 0."""
    if t == 0:
        raise DomainError("t must be non-zero")
    if x == 0 or (x > 0) == (t > 0):
        return None
    return (abs(x) / (2 * m * abs(t))) ** (1.0 / (2 * m - 1))


def stationary_window(t: float, x: float, m: int) -> tuple[float, float] | None:
    """{lam : |2m lam^{2m-1} + x/t| < |x/t|/2}."""
    star = stationary_point(t, x, m)
    if star is None:
        return None
    p = 1.0 / (2 * m - 1)
    return star * 0.5 ** p, star * 1.5 ** p


# ------------------------------------------------------------------ results

@dataclass(frozen=True)
class OscValue:
    value: complex
    error: float
    converged: bool
    panels: int
    ibp_depth: int = 0
    tail_cut: float | None = None
    notes: tuple[str, ...] = ()

    def __complex__(self):
        return complex(self.value)


# ------------------------------------------------------------------ quadrature

def _panel_sums(f, a, b):
    """GL24 and GL16 sums over panels [a_k, b_k], plus the GL24 integral of |f|."""
    hi = np.empty(len(a), dtype=complex)
    lo = np.empty(len(a), dtype=complex)
    mass = np.empty(len(a))
    for start in range(0, len(a), _CHUNK):
        sl = slice(start, start + _CHUNK)
        mid = 0.5 * (a[sl] + b[sl])[:, None]
        rad = 0.5 * (b[sl] - a[sl])[:, None]
        vals = f(mid + rad * _GL_HI[0])
        hi[sl] = (vals @ _GL_HI[1]) * rad[:, 0]
        mass[sl] = (np.abs(vals) @ _GL_HI[1]) * rad[:, 0]
        lo[sl] = (f(mid + rad * _GL_LO[0]) @ _GL_LO[1]) * rad[:, 0]
    return hi, lo, mass


def _invert_monotone(t, x, m, a, b, levels, iters=64):
    lo = np.full(levels.shape, a)
    hi = np.full(levels.shape, b)
    increasing = phase(t, x, m, b) > phase(t, x, m, a)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = phase(t, x, m, mid) > levels
        move_hi = above if increasing else ~above
        hi = np.where(move_hi, mid, hi)
        lo = np.where(move_hi, lo, mid)
    return 0.5 * (lo + hi)


def _edges(t, x, m, points, cap, window=None):
    """Panel edges: fixed phase steps on each monotone piece, widths at most ``cap``
    (an eighth of the window inside the stationary window)."""
    edges = [np.asarray(points, dtype=float)]
    for a, b in zip(points[:-1], points[1:]):
        local = cap
        if window and window[0] <= a and b <= window[1]:
            local = min(cap, (window[1] - window[0]) / 8)
        pa, pb = phase(t, x, m, a), phase(t, x, m, b)
        count = int(abs(pb - pa) // PHASE_STEP)
        if count:
            levels = pa + np.sign(pb - pa) * PHASE_STEP * np.arange(1, count + 1)
            edges.append(_invert_monotone(t, x, m, a, b, levels))
        pieces = int(math.ceil((b - a) / local))
        if pieces > 1:
            edges.append(np.linspace(a, b, pieces + 1)[1:-1])
    return np.unique(np.concatenate(edges))


def _adaptive(f, edges, tol, budget, phase_at=None):
    a, b = edges[:-1], edges[1:]
    length = b[-1] - a[0]
    done_val, done_err = 0.0 + 0.0j, 0.0
    total_panels = len(a)
    converged = True
    while len(a):
        hi, lo, mass = _panel_sums(f, a, b)
        err = np.abs(hi - lo)
        # rounding in f and in a phase of size |phi| sets a floor no bisection can beat
        size = 1.0 if phase_at is None else 1.0 + np.maximum(np.abs(phase_at(a)), np.abs(phase_at(b)))
        bad = err > np.maximum(0.25 * tol * (b - a) / length, 50 * np.finfo(float).eps * mass * size)
        done_val += hi[~bad].sum()
        done_err += err[~bad].sum()
        if not np.any(bad):
            break
        if total_panels + np.count_nonzero(bad) > budget:
            done_val += hi[bad].sum()
            done_err += err[bad].sum()
            converged = False
            break
        mid = 0.5 * (a[bad] + b[bad])
        a, b = np.concatenate([a[bad], mid]), np.concatenate([mid, b[bad]])
        total_panels += len(mid)
    return done_val, done_err, total_panels, converged


def _graded_origin(f, integrand, top, tol):
    """int_0^top by dyadic panels, dropping [0, s] once C s^{1+b}/(1+b) < tol/10."""
    b = integrand.b
    probe = top * 0.5 ** np.arange(0, 40, 4)
    c = SAFETY * float(np.max(np.abs(f(probe)) * probe ** (-b)))
    if c == 0.0:
        return 0.0j, 0.0, 0
    s = (tol * (1 + b) / (10 * c)) ** (1.0 / (1 + b))
    levels = max(1, int(math.ceil(math.log2(top / s)))) if s < top else 1
    levels = min(levels, 4000)
    right = top * 0.5 ** np.arange(levels)
    left = right / 2
    hi, lo, _ = _panel_sums(f, left, right)
    dropped = c * left[-1] ** (1 + b) / (1 + b)
    return hi.sum(), float(np.abs(hi - lo).sum() + dropped), levels


# ------------------------------------------------------------------ tail by parts

def _jet_reciprocal(coeffs):
    out = np.zeros_like(coeffs)
    out[0] = 1.0 / coeffs[0]
    for k in range(1, len(coeffs)):
        out[k] = -np.dot(coeffs[1:k + 1], out[k - 1::-1][:k]) / coeffs[0]
    return out


def _jet_mul(u, v):
    return np.convolve(u, v)[: min(len(u), len(v))]


def _jet_deriv(u):
    return u[1:] * np.arange(1, len(u))


def _ibp_terms(t, x, m, lam, psi_derivs, depth):
    """Boundary terms sum_{j<depth} (-1)^{j+1} e^{i phi} u_j/(i phi') at lam, and u_depth(lam).

    u_0 = psi, u_{j+1} = (u_j / (i phi'))'.
    """
    order = depth
    factorial = np.array([math.factorial(k) for k in range(order + 1)], dtype=float)
    u = np.asarray(psi_derivs[: order + 1], dtype=complex) / factorial
    deg = 2 * m - 1
    dphi = np.zeros(order + 1, dtype=complex)
    for k in range(min(order, deg) + 1):
        dphi[k] = 2 * m * t * math.comb(deg, k) * lam ** (deg - k)
    dphi[0] += x
    r = _jet_reciprocal(1j * dphi)
    total = 0.0j
    for j in range(depth):
        ur = _jet_mul(u, r[: len(u)])
        total += (-1) ** (j + 1) * ur[0]
        u = _jet_deriv(ur)
    return total * np.exp(1j * phase(t, x, m, lam)), u[0]


def _tail(integrand, t, x, m, start, base, tol):
    """int_start^inf by parts; returns (value, error, depth, cut, numeric integral range end)."""
    b = integrand.b
    min_depth = max(1, math.ceil((b + 2) / (2 * m)))
    best = None
    for factor in (1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0):
        cut = max(start, factor * base)
        probes = cut * np.array([1.0, 1.5, 2.0, 3.0, 5.0])
        table = integrand.derivatives_at(probes, min_depth + 5, x)
        for depth in range(min_depth, min_depth + 6):
            p = 2 * m * depth - b
            worst, terms, derr = 0.0, None, 0.0
            for k, lam in enumerate(probes):
                derivs, d_err = table[k]
                derivs, d_err = derivs[: depth + 1], (d_err[: depth + 1] if np.ndim(d_err) else d_err)
                boundary, last = _ibp_terms(t, x, m, float(lam), derivs, depth)
                worst = max(worst, abs(last) * lam ** p)
                if k == 0:
                    terms = boundary
                    if d_err is not None and np.any(d_err):
                        alt, _ = _ibp_terms(t, x, m, float(lam), derivs + d_err, depth)
                        derr = abs(alt - boundary)
            remainder = SAFETY * worst * cut ** (1 - p) / (p - 1)
            err = remainder + derr
            if best is None or err < best[1]:
                best = (terms, err, depth, cut)
            if err < 0.25 * tol:
                return terms, err, depth, cut
    return best


def evaluate(integrand: OscillatoryIntegrand, t: float, x: float, m: int, tol: float = 1e-10,
             max_panels: int = 200_000, n: int | None = None) -> OscValue:
    """I(t, x) with an error estimate; ``converged`` is False when tol was not reached."""
    if t == 0:
        raise DomainError("t must be non-zero")
    if m < 1:
        raise DomainError("m must be positive")
    t, x = float(t), float(x)
    lo, hi = integrand.interval
    if not hi > lo:
        return OscValue(0j, 0.0, True, 0)

    def f(lam):
        return integrand.psi(lam, x) * np.exp(1j * phase(t, x, m, lam))

    notes = []
    points = {lo}
    star = stationary_point(t, x, m)
    window = stationary_window(t, x, m)
    if star is not None:
        points.update(p for p in (star, *window))
    points.update(integrand.breakpoints)
    if integrand.tail_start is not None:
        points.add(integrand.tail_start)

    value, error, panels, depth, cut = 0j, 0.0, 0, 0, None
    if math.isinf(hi):
        scale = abs(t) ** (-1.0 / (2 * m))
        dominance = (abs(x) / (m * abs(t))) ** (1.0 / (2 * m - 1))
        start = max([lo * 1.5, integrand.tail_start or lo, dominance]
                    + [p * 1.25 for p in points if p > lo])
        base = max(scale, 2 * (window[1] if window else 0.0), dominance)
        tail_val, tail_err, depth, cut = _tail(integrand, t, x, m, start, base, tol)
        value += tail_val
        error += tail_err
        hi = cut
        notes.append(f"ibp depth {depth} at Lambda={cut:.6g}")
        if n is not None:
            notes.append(f"reference depths n0={n // (2 * m)} n1={max(n - 1, 0) // (2 * (2 * m - 1))}")
        log.debug("tail: %s", notes)
    points = sorted(p for p in points if lo <= p < hi) + [hi]

    if lo == 0.0:
        scales = [hi / 4, points[1] if len(points) > 1 else hi]
        if x:
            scales.append(PHASE_STEP / abs(x))
        scales.append((PHASE_STEP / abs(t)) ** (1.0 / (2 * m)))
        top = min(scales)
        v, e, k = _graded_origin(f, integrand, top, tol)
        value += v
        error += e
        panels += k
        points = [top] + [p for p in points if p > top]

    span = points[-1] - points[0]
    cap = min(span / 4, integrand.lam0 / 4)
    edges = _edges(t, x, m, points, cap, window)
    if len(edges) - 1 > max_panels:
        # coarsen to the budget; the GL24/GL16 gap then reports the damage
        edges = edges[np.unique(np.linspace(0, len(edges) - 1, max_panels + 1).round().astype(int))]
        notes.append("initial layout exceeded the panel budget")
    v, e, k, ok = _adaptive(f, edges, tol, max_panels, lambda lam: phase(t, x, m, lam))
    value += v
    error += e
    panels += k
    converged = ok and error <= tol and not any("budget" in note for note in notes)
    if not converged:
        notes.append("tolerance not reached")
    return OscValue(complex(value), float(error), converged, panels, depth, cut, tuple(notes))


# ------------------------------------------------------------------ decay laws

def mu_b(m: int, b) -> Fraction:
    """(m - 1 - b) / (2m - 1), exact for rational b."""
    return (Fraction(m) - 1 - Fraction(b)) / (2 * m - 1)


def mu_b_identity(m: int, n: int) -> tuple[Fraction, Fraction]:
    """(mu_b + b, n(m-1)/(2m-1)) at b = (n-1)/2; the two agree exactly."""
    b = Fraction(n - 1, 2)
    return mu_b(m, b) + b, Fraction(n * (m - 1), 2 * m - 1)


def decay_bound(domain: str, b: float, m: int, t: float, x: float) -> float:
    """Growth law when t^{-1/2m}|x| > 1, the flat law of the given domain otherwise."""
    at = abs(t)
    u = at ** (-1.0 / (2 * m)) * abs(x)
    if u > 1:
        return at ** (-(1 + b) / (2 * m)) * u ** (-float(mu_b(m, Fraction(b).limit_denominator(10 ** 6))))
    if domain == "low":
        return (1 + at ** (1.0 / (2 * m))) ** (-(1 + b))
    return at ** (-(1 + b) / (2 * m))


@dataclass(frozen=True)
class ProbeGrid:
    """t values and scaled positions u = t^{-1/2m} |x|; x takes both signs."""

    ts: tuple[float, ...]
    us: tuple[float, ...]
    signs: tuple[int, ...] = (1, -1)

    def points(self, m: int):
        """(t, x) pairs with x = sign * u * t^{1/2m}."""
        return [(t, s * u * abs(t) ** (1.0 / (2 * m))) for t in self.ts for u in self.us for s in self.signs]

    def extended(self, steps: int) -> "ProbeGrid":
        lo, hi = min(self.ts), max(self.ts)
        extra = tuple(lo / 2 ** k for k in range(1, steps + 1)) + tuple(hi * 2 ** k for k in range(1, steps + 1))
        return ProbeGrid(tuple(sorted(set(self.ts) | set(extra))), self.us, self.signs)


@dataclass(frozen=True)
class DecayCertificate:
    mu_b: Fraction
    b: float
    m: int
    k: int
    domain: str
    sups: tuple[float, ...]
    worst: tuple[float, float]
    verdict: str

    @property
    def ratio(self) -> float:
        return self.sups[0]

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def _ratio(args):
    integrand, m, t, x, tol = args
    val = evaluate(integrand, t, x, m, tol=tol)
    return abs(val.value) / decay_bound(integrand.domain, integrand.b, m, t, x), val.converged


def certify_decay(integrand: OscillatoryIntegrand, m: int, k: int, probe: ProbeGrid,
                  workers: int = 1, tol: float = 1e-10, spread: float = 3.0) -> DecayCertificate:
    """Sup of |I| / bound over the probe grid and two dyadic t-extensions of it.

    Passes when the three sups stay within a factor ``spread`` of each other.
    """
    b = integrand.b
    growth = any(u > 1 for u in probe.us)
    if growth and not (-0.5 <= b < 2 * k * m - 1):
        raise PreconditionError(f"growth-region law needs b in [-1/2, {2 * k * m - 1}), got {b}")
    if integrand.domain == "low" and not (-1 < b < 2 * k * m - 1):
        raise PreconditionError(f"flat law needs b in (-1, {2 * k * m - 1}), got {b}")
    if integrand.domain == "high" and not (-0.5 <= b < 2 * k * m - 1):
        raise PreconditionError(f"flat law needs b in [-1/2, {2 * k * m - 1}), got {b}")

    sups, worst, converged = [], (0.0, 0.0), True
    cache: dict = {}
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for steps in (0, 1, 2):
            points = (probe.extended(steps) if steps else probe).points(m)
            todo = [p for p in points if p not in cache]
            for key, res in zip(todo, pool.map(_ratio, [(integrand, m, t, x, tol) for t, x in todo])):
                cache[key] = res
            ratios = [cache[p][0] for p in points]
            converged = converged and all(cache[p][1] for p in points)
            top = int(np.argmax(ratios))
            if not sups or ratios[top] > max(sups):
                worst = points[top]
            sups.append(ratios[top])
    stable = max(sups) <= spread * min(sups) and min(sups) > 0
    verdict = "pass" if stable and converged else "fail"
    return DecayCertificate(mu_b(m, Fraction(b).limit_denominator(10 ** 6)), b, m, k, integrand.domain,
                            tuple(sups), worst, verdict)

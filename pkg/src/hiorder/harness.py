"""Desk-scale decay experiments on computed kernels.

Every check returns a report with a verdict of "pass", "fail" or
"inconclusive" and enough numbers to see why.  Bounds carry unknown
constants, so the tests are about stability of ratios and fitted slopes.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats
from scipy.integrate import IntegrationWarning, quad, trapezoid

from .errors import DomainError, PreconditionError
from .profiles import Profile
from .propagator import EnergySplit, GridOracle, KernelSample, kernel_sweep
from .spectral import OperatorSpec, vanishing_order

SHELL_FACTOR = 3.0
GROWTH_EPS = 0.1
MIN_R2 = 0.98


# ------------------------------------------------------------------ bound and ratios

def pointwise_bound(m: int, n: int, t: float, dist: float) -> float:
    """|t|^{-n/2m} (1 + |t|^{-1/2m} |x - y|)^{-n(m-1)/(2m-1)}."""
    at = abs(t)
    u = at ** (-1.0 / (2 * m)) * abs(dist)
    return at ** (-n / (2 * m)) * (1.0 + u) ** (-n * (m - 1) / (2 * m - 1))


@dataclass(frozen=True)
class BoundRatio:
    sample: KernelSample
    bound: float
    ratio: float

    @classmethod
    def of(cls, sample: KernelSample, m: int, n: int) -> "BoundRatio":
        dist = float(np.linalg.norm(np.subtract(sample.x, sample.y)))
        bound = pointwise_bound(m, n, sample.t, dist)
        return cls(sample, bound, abs(sample.K_total) / bound)


# ------------------------------------------------------------------ fits

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    ci95: tuple[float, float]
    points: int

    @classmethod
    def of(cls, xs, ys) -> "SlopeFit":
        xs, ys = np.asarray(xs, float), np.asarray(ys, float)
        res = stats.linregress(xs, ys)
        dof = len(xs) - 2
        half = float(stats.t.ppf(0.975, dof) * res.stderr) if dof > 0 else math.inf
        r2 = float(res.rvalue ** 2) if np.ptp(ys) > 0 else 1.0
        return cls(float(res.slope), float(res.intercept), r2,
                   (float(res.slope) - half, float(res.slope) + half), len(xs))


def _slope_verdict(fit: SlopeFit, expected: float, tol: float, min_r2: float = MIN_R2) -> str:
    if fit.r_squared < min_r2:
        return "inconclusive"
    return "pass" if abs(fit.slope - expected) <= tol else "fail"


def _combine(verdicts) -> str:
    verdicts = list(verdicts)
    if "fail" in verdicts:
        return "fail"
    if "inconclusive" in verdicts:
        return "inconclusive"
    return "pass"


# ------------------------------------------------------------------ report

@dataclass
class DecayReport:
    kind: str
    spec_digest: str
    grids: dict
    shells: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return _combine(self.verdicts.values())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["verdict"] = self.verdict
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable)


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Fraction):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _fit_entry(fit: SlopeFit, expected, tol) -> dict:
    return {"slope": fit.slope, "ci95": list(fit.ci95), "r_squared": fit.r_squared, "points": fit.points,
            "expected": expected, "tolerance": tol}


def _axis_point(n: int, value: float):
    if n == 1:
        return float(value)
    out = np.zeros(n)
    out[0] = value
    return tuple(out)


def _dyadic_times(t_range, per_shell: int):
    lo, hi = t_range
    if not 0 < lo < hi:
        raise DomainError("t-range must satisfy 0 < lo < hi")
    k0, k1 = math.floor(math.log2(lo) + 1e-12), math.ceil(math.log2(hi) - 1e-12)
    shells = []
    for k in range(k0, k1):
        ts = [2.0 ** (k + j / per_shell) for j in range(per_shell)]
        shells.append((2.0 ** k, 2.0 ** (k + 1), ts))
    return shells


# ------------------------------------------------------------------ pointwise bound

def default_xy(n: int = 1) -> list:
    """Pairs in units of t^{1/2m}: x across [-32, 32] against y at the profiles and away from them."""
    xs = np.linspace(-32.0, 32.0, 33)
    return [(_axis_point(n, x), _axis_point(n, y)) for y in (0.0, 1.0, 4.0, 16.0) for x in xs]


def _scaled_pairs(xy, t: float, m: int, n: int) -> list:
    c = abs(t) ** (1.0 / (2 * m))
    if n == 1:
        return [(c * float(x), c * float(y)) for x, y in xy]
    return [(tuple(c * np.asarray(x, float)), tuple(c * np.asarray(y, float))) for x, y in xy]


def pointwise_report(spec: OperatorSpec, t_range=(2.0 ** -6, 2.0 ** 6), xy=None, per_shell: int = 2,
                     split: EnergySplit | None = None, tol: float = 1e-8, workers: int = 1,
                     scaled: bool = True) -> DecayReport:
    """Shell suprema of |K| / bound over dyadic t-shells.

    With ``scaled`` the (x, y) pairs are in units of t^{1/2m}, so every
    shell sees the same range of t^{-1/2m}|x - y| and both the profiles and
    the far field.  Passes when the suprema stay within a factor 3 of each
    other and a log-log fit of them against t grows slower than t^0.1.
    """
    m, n = spec.m, spec.n
    xy = list(xy) if xy is not None else default_xy(n)
    shells = _dyadic_times(t_range, per_shell)
    rows, unconverged = [], 0
    for lo, hi, ts in shells:
        best, where = 0.0, None
        for t in ts:
            pairs = _scaled_pairs(xy, t, m, n) if scaled else xy
            for s in kernel_sweep(spec, [t], pairs, split, tol, workers):
                r = BoundRatio.of(s, m, n)
                unconverged += any("unconverged" in f for f in s.flags)
                if r.ratio > best:
                    best, where = r.ratio, (s.t, list(s.x), list(s.y))
        rows.append({"t_lo": lo, "t_hi": hi, "sup_ratio": best, "argmax": where})
    sups = np.array([r["sup_ratio"] for r in rows])
    centers = np.array([math.sqrt(r["t_lo"] * r["t_hi"]) for r in rows])
    spread = float(sups.max() / sups.min())
    trend = SlopeFit.of(np.log(centers), np.log(sups))
    report = DecayReport("pointwise", spec.digest(),
                         {"t_range": list(t_range), "per_shell": per_shell, "scaled": scaled,
                          "xy": [list(map(_plain, p)) for p in xy], "tol": tol,
                          "lam0": (split or EnergySplit()).lam0})
    report.shells = rows
    report.slopes["shell_trend"] = _fit_entry(trend, 0.0, GROWTH_EPS)
    report.slopes["shell_spread"] = spread
    report.verdicts["spread"] = "pass" if spread < SHELL_FACTOR else "fail"
    report.verdicts["growth"] = "pass" if trend.slope < GROWTH_EPS else "fail"
    if unconverged:
        report.notes.append(f"{unconverged} samples did not reach tol")
    return report


def _plain(p):
    return list(p) if isinstance(p, tuple) else p


# ------------------------------------------------------------------ exponents

def _envelope(us, mags, bins: int = 12):
    """Local maxima of |K| in log-spaced bins: (u at each maximum, maximum)."""
    edges = np.geomspace(us[0], us[-1], bins + 1)
    out_u, out_v = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = np.nonzero((us >= a) & (us <= b))[0]
        if len(sel):
            k = sel[np.argmax(mags[sel])]
            out_u.append(us[k])
            out_v.append(mags[k])
    return np.array(out_u), np.array(out_v)


def exponent_fit(spec: OperatorSpec, t_range=(2.0 ** 6, 2.0 ** 12), space_t: float = 2.0 ** -6,
                 u_range=(5.0, 50.0), samples: int = 80, split: EnergySplit | None = None,
                 tol: float = 1e-8, workers: int = 1, time_tol: float = 0.02,
                 space_tol: float = 0.05) -> DecayReport:
    """Time slope of sup_diag |K| and spatial envelope slope at fixed t.

    The diagonal sample sits at x = y = d t^{1/2m} e_1, d = 0..32, so the
    supremum sees both the region near the profiles and the free far field.
    The default time window lies past the crossover from high to low energy,
    where t^{n/2m} sup|K| has settled.
    The spatial window holds t^{-1/2m}|x - y| in u_range with y = 0; space_t
    defaults small so the window sits at high energy where scattering
    amplitudes are nearly constant across it.
    """
    m, n = spec.m, spec.n
    split = split or EnergySplit()
    ts = [2.0 ** k for k in range(round(math.log2(t_range[0])), round(math.log2(t_range[1])) + 1)]
    diag = tuple(float(d) for d in np.linspace(0.0, 32.0, 33))
    sups = []
    for t in ts:
        scale = t ** (1.0 / (2 * m))
        pts = [(_axis_point(n, d * scale), _axis_point(n, d * scale)) for d in diag]
        sups.append(max(abs(s.K_total) for s in kernel_sweep(spec, [t], pts, split, tol, workers)))
    time_fit = SlopeFit.of(np.log(ts), np.log(sups))
    time_expected = -n / (2 * m)

    scale = space_t ** (1.0 / (2 * m))
    us = np.geomspace(u_range[0], u_range[1], samples)
    pts = [(_axis_point(n, u * scale), _axis_point(n, 0.0)) for u in us]
    mags = np.array([abs(s.K_total) for s in kernel_sweep(spec, [space_t], pts, split, tol, workers)])
    env_u, env_v = _envelope(us, mags)
    space_fit = SlopeFit.of(np.log(env_u), np.log(env_v))
    space_expected = -n * (m - 1) / (2 * m - 1)

    report = DecayReport("exponents", spec.digest(),
                         {"t": ts, "diag_scaled": list(diag), "space_t": space_t, "u_range": list(u_range),
                          "samples": samples, "tol": tol, "lam0": split.lam0})
    report.shells = [{"t": t, "sup_abs_K": v} for t, v in zip(ts, sups)]
    report.slopes["time"] = _fit_entry(time_fit, time_expected, time_tol)
    report.slopes["space"] = _fit_entry(space_fit, space_expected, space_tol)
    report.verdicts["time"] = _slope_verdict(time_fit, time_expected, time_tol)
    report.verdicts["space"] = _slope_verdict(space_fit, space_expected, space_tol)
    return report


# ------------------------------------------------------------------ Lp-Lq region

def _inverse_exponent(p) -> Fraction:
    if isinstance(p, str):
        if p.strip().lower() in ("inf", "infinity", "oo"):
            return Fraction(0)
        p = Fraction(p)
    if isinstance(p, float) and math.isinf(p):
        return Fraction(0)
    p = Fraction(p)
    if p < 1:
        raise DomainError("exponents must lie in [1, inf]")
    return 1 / p


def tau(m: int) -> Fraction:
    """tau_m = (2m - 1)/(m - 1)."""
    if m < 2:
        raise DomainError("tau_m needs m >= 2")
    return Fraction(2 * m - 1, m - 1)


def region_vertices(m: int) -> dict[str, tuple[Fraction, Fraction]]:
    """A, B, C, D in (1/p, 1/q) coordinates."""
    inv = 1 / tau(m)
    return {"A": (Fraction(1, 2), Fraction(1, 2)), "B": (Fraction(1), inv), "C": (Fraction(1), Fraction(0)),
            "D": (1 - inv, Fraction(0))}


def _cross(o, a, b) -> Fraction:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def membership(point, m: int) -> bool:
    """(1/p, 1/q) inside the closed quadrilateral ABCD, in exact arithmetic."""
    v = region_vertices(m)
    ring = [v["A"], v["B"], v["C"], v["D"]]
    point = (Fraction(point[0]), Fraction(point[1]))
    area = sum(_cross((Fraction(0), Fraction(0)), ring[i], ring[(i + 1) % 4]) for i in range(4))
    sign = 1 if area > 0 else -1
    return all(sign * _cross(ring[i], ring[(i + 1) % 4], point) >= 0 for i in range(4))


def region_membership(p, q, m: int) -> bool:
    return membership((_inverse_exponent(p), _inverse_exponent(q)), m)


@dataclass(frozen=True)
class LpqPoint:
    p: Fraction | float
    q: Fraction | float
    m: int

    @property
    def inverse(self) -> tuple[Fraction, Fraction]:
        return _inverse_exponent(self.p), _inverse_exponent(self.q)

    @property
    def member(self) -> bool:
        return membership(self.inverse, self.m)

    def rate(self, n: int) -> Fraction:
        """Expected time exponent -(n/2m)(1/p - 1/q)."""
        a, b = self.inverse
        return -Fraction(n, 2 * self.m) * (a - b)


# ------------------------------------------------------------------ Lp-Lq scaling

def _u_grid(u_max: float) -> np.ndarray:
    inner = np.linspace(0.0, 5.0, 51)
    outer = np.geomspace(5.0, u_max, 60)[1:]
    half = np.concatenate([inner, outer])
    return np.concatenate([-half[:0:-1], half])


def kernel_lq_norm(us, mags, q: float, scale: float, decay: float) -> tuple[float, float]:
    """(||K||_q, tail share) from |K| on x - y = scale * u.

    Beyond the grid |K| <= A |u|^{-decay}, with A the largest |K| |u|^decay on
    the outer fifth of each side.
    """
    if math.isinf(q):
        return float(mags.max()), 0.0
    if q * decay <= 1:
        raise PreconditionError(f"|K|^q ~ u^{-q * decay:.3f} is not integrable")
    body = float(trapezoid(mags ** q, scale * us))
    tail = 0.0
    for side in (us > 0, us < 0):
        uu, mm = np.abs(us[side]), mags[side]
        order = np.argsort(uu)
        uu, mm = uu[order], mm[order]
        k = max(len(uu) // 5, 5)
        amp = float(np.max(mm[-k:] * uu[-k:] ** decay))
        tail += scale * amp ** q * uu[-1] ** (1 - q * decay) / (q * decay - 1)
    total = body + tail
    return total ** (1.0 / q), tail / total


def lpq_scaling_check(spec: OperatorSpec, pq, t_range=(2.0 ** -2, 2.0 ** 6), ys=(0.0, 8.0, 32.0),
                      split: EnergySplit | None = None, tol: float = 1e-8, workers: int = 1,
                      u_max: float = 60.0, slope_tol: float | None = None, seed: int = 0,
                      oracle_size=(40 * math.pi, 1024), probes: int = 4) -> DecayReport:
    """Fit log ||e^{-itH}||_{p->q} against log t and compare with -(n/2m)(1/p - 1/q).

    p = 1: sup over ys (units of t^{1/2m}) of ||K(t, ., y)||_q by quadrature;
    q = inf is the sup norm.  (2, 2): largest ||e^{-itH} f|| / ||f|| over seeded random f on the
    grid oracle.  Other p are not computable from the kernel.
    """
    p, q = pq
    point = LpqPoint(Fraction(p) if not _is_inf(p) else math.inf, Fraction(q) if not _is_inf(q) else math.inf, spec.m)
    inv_p, inv_q = point.inverse
    if not point.member:
        raise DomainError(f"(p, q) = ({p}, {q}) lies outside the admissible region for m={spec.m}")
    if (inv_p, inv_q) == region_vertices(spec.m)["B"]:
        raise DomainError("the endpoint (1, tau_m) is out of scope")
    expected = float(point.rate(spec.n))
    ts = [2.0 ** k for k in range(round(math.log2(t_range[0])), round(math.log2(t_range[1])) + 1)]
    report = DecayReport("lpq", spec.digest(), {"p": str(p), "q": str(q), "t": ts, "tol": tol, "seed": seed})
    norms = []
    if (inv_p, inv_q) == (Fraction(1, 2), Fraction(1, 2)):
        L, M = oracle_size
        oracle = GridOracle(spec, L, M)
        rng = np.random.default_rng(seed)
        fs = rng.standard_normal((probes, oracle.M)) + 1j * rng.standard_normal((probes, oracle.M))
        for t in ts:
            norms.append(max(oracle.norm(oracle.evolve(f, t)) / oracle.norm(f) for f in fs))
        slope_tol = 1e-10 if slope_tol is None else slope_tol
        report.grids.update({"oracle_L": L, "oracle_M": M, "probes": probes})
    elif inv_p == 1:
        if spec.n != 1:
            raise DomainError("kernel L^q norms are computed for n = 1")
        qq = math.inf if inv_q == 0 else float(1 / inv_q)
        us = _u_grid(u_max)
        tails = []
        decay = (spec.m - 1) / (2 * spec.m - 1)
        for t in ts:
            scale = t ** (1.0 / (2 * spec.m))
            best = 0.0
            for y in ys:
                y = float(y) * scale
                pts = [(float(y + scale * u), y) for u in us]
                mags = np.array([abs(s.K_total) for s in kernel_sweep(spec, [t], pts, split, tol, workers)])
                val, share = kernel_lq_norm(us, mags, qq, scale, decay)
                tails.append(share)
                best = max(best, val)
            norms.append(best)
        slope_tol = 0.03 if slope_tol is None else slope_tol
        report.grids.update({"ys": list(ys), "u_max": u_max, "points_per_y": len(us)})
        report.notes.append(f"largest tail share {max(tails):.3g}")
    else:
        raise DomainError("only the p = 1 row and the point (2, 2) are directly computable")
    fit = SlopeFit.of(np.log(ts), np.log(norms))
    report.shells = [{"t": t, "norm": v} for t, v in zip(ts, norms)]
    report.slopes["lpq"] = _fit_entry(fit, expected, slope_tol)
    if (inv_p, inv_q) == (Fraction(1, 2), Fraction(1, 2)):
        # exactly flat data: R^2 is meaningless, the slope itself is the test
        report.verdicts["lpq"] = "pass" if abs(fit.slope - expected) <= slope_tol else "fail"
    else:
        report.verdicts["lpq"] = _slope_verdict(fit, expected, slope_tol)
    return report


def _is_inf(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("inf", "infinity", "oo")
    return isinstance(v, float) and math.isinf(v)


# ------------------------------------------------------------------ moments

@dataclass
class MomentReport:
    r: int
    k0: int
    n: int
    xs: list
    values: list
    ratio_sup: float
    slope: float | None
    r_squared: float | None
    expected: int
    regime: str
    verdict: str

    def to_dict(self) -> dict:
        return asdict(self)


def _radial_part(profile: Profile):
    """f with phi(y) = f(|y|) for a centered isotropic n = 3 profile, else None."""
    if profile.dim != 3 or not profile.centered:
        return None
    probe = np.array([[0.3, 0.0, 0.0], [0.0, 0.3, 0.0], [0.0, 0.0, 0.3], [0.3 / math.sqrt(3)] * 3,
                      [0.9, 0.0, 0.0], [0.0, 0.0, 0.9], [0.9 / math.sqrt(2), -0.9 / math.sqrt(2), 0.0]])
    vals = profile(probe)
    if abs(vals[:4] - vals[0]).max() > 1e-12 * (1 + abs(vals[0])) or \
            abs(vals[4:] - vals[4]).max() > 1e-12 * (1 + abs(vals[4])):
        return None
    return lambda s: float(profile(np.array([s, 0.0, 0.0])))


def distance_moment(profile: Profile, r: int, x) -> float:
    """int |x - y|^r phi(y) dy (n = 1, or isotropic n = 3 via shells around the origin)."""
    with warnings.catch_warnings():
        # vanishing moments cancel the integrand's bulk; quad flags the lost digits
        warnings.simplefilter("ignore", IntegrationWarning)
        return _distance_moment(profile, r, x)


def _distance_moment(profile: Profile, r: int, x) -> float:
    n = profile.dim
    reach = profile.max_center + 12.0 * profile.max_width
    if n == 1:
        x = float(np.atleast_1d(x)[0])
        f = lambda y: abs(x - y) ** r * float(profile(y))
        pts = sorted({-reach, x, reach})
        pts = [v for v in pts if -reach <= v <= reach]
        return float(sum(quad(f, a, b, limit=200, epsabs=0, epsrel=1e-13)[0] for a, b in zip(pts[:-1], pts[1:])))
    f = _radial_part(profile)
    if f is None:
        raise DomainError("distance moments are implemented for n = 1 and isotropic n = 3 profiles")
    X = float(np.linalg.norm(x))

    def shell(s):
        # angular integral of |x - s w|^r over the unit sphere, times s^2
        return 2 * math.pi * s * ((X + s) ** (r + 2) - abs(X - s) ** (r + 2)) / ((r + 2) * X) * f(s)

    pts = [0.0, min(X, reach), reach] if X < reach else [0.0, reach]
    return float(sum(quad(shell, a, b, limit=200, epsabs=0, epsrel=1e-13)[0] for a, b in zip(pts[:-1], pts[1:])
                     if b > a))


def moment_bound_check(profile: Profile, r: int, k0: int, x_range=(1.0, 100.0), samples: int = 30,
                       slope_tol: float = 0.1) -> MomentReport:
    """sup over |x| in x_range of |int |x-y|^r phi| / <x>^{r-k0}, with a log-log slope.

    Passes when the ratio stays bounded: its supremum over the outer half
    of the range is at most 3 times the inner one.  For even r >= 0 the
    integrand is a polynomial of degree r <= k0 - 1 in y, so the integral
    vanishes identically and no slope exists.
    """
    n = profile.dim
    if k0 < 1:
        raise PreconditionError("k0 must be at least 1")
    if not (-(n - 1) / 2 <= r <= k0 - 1):
        raise PreconditionError(f"need -(n-1)/2 <= r <= k0 - 1, got r={r}, k0={k0}, n={n}")
    order = vanishing_order(profile, limit=k0)
    if order < k0:
        raise PreconditionError(f"profile has a non-zero moment of order {order} < k0={k0}")
    xs = np.geomspace(x_range[0], x_range[1], samples)
    expected = r - k0
    if r >= 0 and r % 2 == 0:
        return MomentReport(r, k0, n, xs.tolist(), [0.0] * samples, 0.0, None, None, expected, "exact-zero", "pass")
    direction = np.zeros(n)
    direction[0] = 1.0
    values = np.array([distance_moment(profile, r, x * direction if n > 1 else x) for x in xs])
    brackets = np.sqrt(1 + xs ** 2)
    ratio = np.abs(values) / brackets ** expected
    half = samples // 2
    bounded = ratio[half:].max() <= SHELL_FACTOR * ratio[:half].max()
    fit = SlopeFit.of(np.log(brackets), np.log(np.abs(values)))
    if fit.r_squared < MIN_R2:
        regime = "no-power-law"
    elif fit.slope < expected - slope_tol:
        regime = "faster"
    else:
        regime = "power-law"
    return MomentReport(r, k0, n, xs.tolist(), values.tolist(), float(ratio.max()), fit.slope, fit.r_squared,
                        expected, regime, "pass" if bounded else "fail")

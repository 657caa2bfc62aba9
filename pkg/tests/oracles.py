"""Independent reference computations shared by the unit and acceptance tests.

Each oracle takes a route that the library itself does not use.
"""
import cmath
import math
import warnings

import numpy as np
from scipy.integrate import IntegrationWarning, quad

warnings.filterwarnings("ignore", category=IntegrationWarning)


def fourier_pv_resolvent_1d(m, lam, r, branch="+"):
    """(1/2pi) int e^{i xi r} / (xi^{2m} - lam^{2m} -/+ i0) d xi, n = 1.

    Principal value on [0, 2 lam] through QUADPACK's Cauchy weight, the far
    field through its Fourier (cos-weighted) rule, plus the i pi delta term.
    """
    big = lam ** (2 * m)

    def reduced(xi):
        # (xi^{2m} - lam^{2m}) / (xi - lam)
        return sum(xi ** k * lam ** (2 * m - 1 - k) for k in range(2 * m))

    near, _ = quad(lambda xi: math.cos(xi * r) / reduced(xi), 0, 2 * lam, weight="cauchy", wvar=lam,
                   epsabs=1e-15, epsrel=1e-13, limit=500)
    if r > 0:
        far, _ = quad(lambda xi: 1.0 / (xi ** (2 * m) - big), 2 * lam, np.inf, weight="cos", wvar=r,
                      epsabs=1e-15, limlst=200)
    else:
        far, _ = quad(lambda xi: 1.0 / (xi ** (2 * m) - big), 2 * lam, np.inf, epsabs=1e-15, epsrel=1e-13)
    sign = 1 if branch == "+" else -1
    jump = sign * 1j * math.pi * math.cos(lam * r) / (2 * m * lam ** (2 * m - 1))
    return (near + far + jump) / math.pi


def full_line_quadrature_A00(m):
    """(1/2pi) int_R d xi / (1 + xi^{2m}) by Gauss-Legendre after xi = tan(theta)."""
    nodes, weights = np.polynomial.legendre.leggauss(400)
    theta = nodes * math.pi / 2
    xi = np.tan(theta)
    integrand = (1 + xi ** 2) / (1 + xi ** (2 * m))
    return float(np.sum(weights * integrand) * math.pi / 2 / (2 * math.pi))


def composite_gauss_legendre(f, a, b, panels, order=20):
    """Plain composite Gauss-Legendre rule; brute force reference."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    left, right = edges[:-1, None], edges[1:, None]
    nodes = (right - left) / 2 * x[None, :] + (right + left) / 2
    return np.sum(f(nodes) * w[None, :] * (right - left) / 2)


def graded_composite(f, b, panels, levels=60, order=20):
    """int_0^b with dyadic panels towards 0 and a uniform composite rule on [b/2, b]."""
    x, w = np.polynomial.legendre.leggauss(order)
    right = b / 2 * 0.5 ** np.arange(levels)
    left = right / 2
    nodes = (right - left)[:, None] / 2 * x + (right + left)[:, None] / 2
    near = np.sum(f(nodes) * w * (right - left)[:, None] / 2)
    return near + composite_gauss_legendre(f, b / 2, b, panels, order)


def ray_tail(b, start, t, x, m, radius=None, panels=20000):
    """int_start^inf lam^b e^{i(t lam^{2m} + lam x)} dlam along start + r e^{+-i pi/(4m)}.

    The integrand is analytic and decays in the sector swept by the rotation,
    so the ray integral equals the real-axis one.
    """
    theta = math.copysign(math.pi / (4 * m), t)
    direction = complex(math.cos(theta), math.sin(theta))
    if radius is None:
        # |e^{i t lam^{2m}}| along the ray falls faster than e^{-|t| r^{2m} sin(pi/2)/4} once r > start
        radius = start + ((200 + abs(x) * 10) / abs(t)) ** (1 / (2 * m)) * 2

    def g(r):
        lam = start + r * direction
        return lam ** b * np.exp(1j * (t * lam ** (2 * m) + lam * x)) * direction

    return composite_gauss_legendre(g, 0.0, radius, panels)


def rotated_free_kernel(m, n, t, r):
    """Free kernel by rotating lam -> rho e^{-+ i pi/4m}, where e^{-it lam^{2m}} = e^{-|t| rho^{2m}}.

    The Bessel-type factors are entire and grow only like e^{rho r sin(pi/4m)}.
    """
    from scipy.special import jv

    theta = -math.copysign(math.pi / (4 * m), t)
    rot = cmath.exp(1j * theta)
    if n == 1:
        coeff, g = 1 / math.pi, lambda z: np.cos(z * r)
    elif n == 2:
        coeff, g = 1 / (2 * math.pi), lambda z: z * jv(0, z * r)
    else:
        coeff, g = 1 / (2 * math.pi ** 2), lambda z: z * z * (np.sin(z * r) / (z * r) if r else 1.0)
    at = abs(t)
    upper = 1.0
    while -at * upper ** (2 * m) + upper * r * abs(math.sin(theta)) + math.log(upper + 1) * 2 > -60:
        upper *= 1.2

    def f(rho):
        return complex(np.exp(-at * rho ** (2 * m)) * g(rho * rot)) * rot

    with warnings.catch_warnings():
        # a roundoff notice at the 1e-15 request is expected near cancelling lobes
        warnings.simplefilter("ignore", IntegrationWarning)
        re = quad(lambda s: f(s).real, 0, upper, limit=800, epsabs=1e-15, epsrel=1e-13)[0]
        im = quad(lambda s: f(s).imag, 0, upper, limit=800, epsabs=1e-15, epsrel=1e-13)[0]
    return coeff * (re + 1j * im)


def fourier_transform_1d(profile, xi):
    """int phi(x) e^{-i x xi} dx for a 1-d Hermite-Gaussian profile, by contour shift.

    Each term a (x-c)^p e^{-(x-c)^2/w^2} is entire, so s = u - i xi w^2 / 2 is exact
    and leaves a non-oscillating integrand: no cancellation at large xi.
    """
    total = 0j
    for term in profile.to_dict()["terms"]:
        a, p, w, c = term["coeff"], term["powers"][0], term["width"], term["center"][0]
        shift = xi * w * w / 2
        f = lambda u, part: getattr((u - 1j * shift) ** p, part) * math.exp(-u * u / (w * w))
        re = quad(f, -np.inf, np.inf, args=("real",), epsabs=0, epsrel=1e-13, limit=200)[0]
        im = quad(f, -np.inf, np.inf, args=("imag",), epsabs=0, epsrel=1e-13, limit=200)[0] if p else 0.0
        total += a * cmath.exp(-1j * c * xi) * math.exp(-(xi * w) ** 2 / 4) * complex(re, im)
    return total

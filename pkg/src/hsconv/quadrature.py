"""Deterministic singular quadrature.

The 1D engine is a double-exponential (tanh-sinh) rule that hands the integrand
the distances to both interval ends, so endpoint powers like ``u**p`` are
evaluated without cancellation.  On top of it sit the independent quadrature
route for the two-factor surface integral and the reduced integral for the
three-factor one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import DomainError, QuadratureFailed
from .specfun import gamma_ln, hyp2f1

__all__ = [
    "SingularIntegral1D",
    "tanh_sinh",
    "integrate_pieces",
    "integrate_singular_1d",
    "theta_oracle",
    "delta3_reduced",
    "delta3_step2_regularized",
    "gamma_window",
    "sphere_area",
]

# abscissae run over |t| <= T_MAX; with endpoint distances computed exactly the
# outermost nodes sit about e^-630 from the ends, which resolves x^-0.99 type
# singularities.  The 2D cylinder rules need less and stop at CYLINDER_T_MAX.
T_MAX = 6.0
CYLINDER_T_MAX = 4.5
_INF_MAP_FLOOR = 1e-150
MAX_LEVEL = 12


def sphere_area(dim: int) -> float:
    """Surface area of the unit sphere S^{dim} sitting in R^{dim+1}."""
    k = dim + 1
    return 2.0 * math.pi ** (k / 2.0) / math.gamma(k / 2.0)


@lru_cache(maxsize=None)
def _unit_rule(level: int, t_max: float = T_MAX):
    """Tanh-sinh nodes on (0, 1) as (fraction_left, fraction_right, weight)."""
    h = 2.0**-level
    t = np.arange(-t_max, t_max + 0.5 * h, h)
    u = 0.5 * math.pi * np.sinh(t)
    # (1 + tanh u)/2 and (1 - tanh u)/2 without cancellation
    fl = 1.0 / (1.0 + np.exp(-2.0 * u))
    fr = 1.0 / (1.0 + np.exp(2.0 * u))
    wt = h * 0.25 * math.pi * np.cosh(t) / np.cosh(u) ** 2
    keep = (fl > 0) & (fr > 0) & (wt > 0)
    return fl[keep], fr[keep], wt[keep]


def _interval_nodes(a: float, b: float, level: int, t_max: float = T_MAX):
    """Nodes on [a, b] (either end may be infinite) as (x, dl, dr, w)."""
    fl, fr, wt = _unit_rule(level, t_max)
    if math.isinf(a) and math.isinf(b):
        raise DomainError("split doubly infinite ranges at a finite point first")
    if math.isinf(a) or math.isinf(b):
        # x = a + s/(1-s); nodes mapped past 1e150 would overflow the weights
        ok = fr > _INF_MAP_FLOOR
        fl, fr, wt = fl[ok], fr[ok], wt[ok]
    if math.isinf(b):
        dl = fl / fr
        return a + dl, dl, np.full_like(dl, np.inf), wt / fr**2
    if math.isinf(a):
        dr = fl / fr
        return b - dr, np.full_like(dr, np.inf), dr, wt / fr**2
    L = b - a
    dl = L * fl
    dr = L * fr
    x = np.where(fl <= 0.5, a + dl, b - dr)
    return x, dl, dr, L * wt


def tanh_sinh(f: Callable, a: float, b: float, tol: float = 1e-10,
              min_level: int = 3, max_level: int = MAX_LEVEL) -> float:
    """Integrate ``f(x, dl, dr)`` over [a, b] to relative tolerance ``tol``.

    ``dl = x - a`` and ``dr = b - x`` are supplied exactly; infinite ends are
    mapped with x = a + s/(1-s).
    """
    prev = None
    for level in range(min_level, max_level + 1):
        x, dl, dr, w = _interval_nodes(a, b, level)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            vals = f(x, dl, dr)
        vals = np.where(w > 0, vals, 0.0)
        cur = float(np.sum(w * vals))
        if not math.isfinite(cur):
            raise QuadratureFailed(f"non-finite integrand sum on [{a}, {b}]", (prev, cur))
        if prev is not None and abs(cur - prev) <= tol * abs(cur):
            return cur
        if prev is not None and cur == 0.0 and prev == 0.0:
            return 0.0
        prev = cur
    raise QuadratureFailed(f"tanh-sinh did not converge on [{a}, {b}]", (prev, cur))


def integrate_pieces(f: Callable, points, tol: float = 1e-10) -> float:
    """Sum of :func:`tanh_sinh` over consecutive breakpoints (ends may be inf)."""
    pts = sorted(set(float(p) for p in points))
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += tanh_sinh(f, lo, hi, tol)
    return total


@dataclass(frozen=True)
class SingularIntegral1D:
    """u**exponent_left * (1-u)**exponent_right * smooth_factor(u) on (0, 1)."""

    exponent_left: float
    exponent_right: float
    smooth_factor: Callable = None

    def __post_init__(self):
        if not (self.exponent_left > -1 and self.exponent_right > -1):
            raise DomainError("endpoint exponents must exceed -1 for integrability")


def integrate_singular_1d(I: SingularIntegral1D, tol: float = 1e-12) -> float:
    p, q, g = I.exponent_left, I.exponent_right, I.smooth_factor

    def f(x, dl, dr):
        val = dl**p * dr**q
        return val if g is None else val * g(x)

    return tanh_sinh(f, 0.0, 1.0, tol)


# --------------------------------------------------------------------------
# two-factor form, delta resolved in the cosine variable


def theta_oracle(n: int, alpha: float, lam: float, wnorm: float, tol: float = 1e-10) -> float:
    """Two-factor surface integral weighted by |w|^sigma, by direct quadrature.

    The delta is resolved in the cosine u between y and w, leaving one
    semi-infinite integral in r = |y| with an endpoint singularity at
    r0 = (1 + |w|^2) / (2|w|).
    """
    if not (alpha > 0 and lam > 0 and alpha + lam > n - 1):
        raise DomainError("need alpha > 0, lambda > 0, alpha + lambda > n - 1")
    d = float(wnorm)
    if not d > 0:
        raise DomainError("theta_oracle needs |w| > 0")
    sigma = alpha + lam + 2 - n
    r0 = (1.0 + d * d) / (2.0 * d)
    r0m1 = (d - 1.0) ** 2 / (2.0 * d)  # r0 - 1 without cancellation
    log_pref = (sigma - 1.0) * math.log(d) + math.log(sphere_area(n - 2)) - math.log(2.0)

    def f(t, dl, dr):
        # t = r - r0 measured from the interval ends by the caller
        r = r0 + t
        r2m1 = r0m1 * (r0 + 1.0) + t * (2.0 * r0 + t)
        ang = t * (2.0 * r0 + t) / (r * r)
        return np.exp(log_pref - 0.5 * alpha * np.log(r2m1) + (n - lam - 2.0) * np.log(r)
                      + 0.5 * (n - 3.0) * np.log(ang))

    # geometric breakpoints resolve the near-singularity at r = 1 when |w| ~ 1
    pts = [0.0]
    top = max(r0, 1.0)
    # below this the endpoint behaviour at r0 is already a clean power law
    scale = r0m1 if r0m1 > 1e-12 * top else top
    while scale < top:
        pts.append(scale)
        scale *= 8.0
    pts += [top, math.inf]

    # power of t at t = 0: ang ~ t always, and r^2 - 1 ~ t as well when |w| = 1
    p0 = 0.5 * (n - 3.0) - (0.5 * alpha if r0m1 == 0.0 else 0.0)
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        if lo == 0.0 and p0 < 0.0:
            # t = s^(1/k), k = p0 + 1, absorbs t^p0 so no truncated node rule misses mass
            k = p0 + 1.0

            def g(x, dl, dr, k=k):
                logt = np.log(dl) / k
                t = np.exp(logt)
                r = r0 + t
                lq = np.log(2.0 * r0 + t)
                if r0m1 == 0.0:
                    lr2m1 = logt + lq
                else:
                    lr2m1 = np.log(r0m1 * (r0 + 1.0) + t * (2.0 * r0 + t))
                lang = logt + lq - 2.0 * np.log(r)
                return np.exp(log_pref - 0.5 * alpha * lr2m1 + (n - lam - 2.0) * np.log(r)
                              + 0.5 * (n - 3.0) * lang - p0 * logt) / k

            total += tanh_sinh(g, 0.0, hi**k, tol)
        elif lo == 0.0:
            total += tanh_sinh(lambda x, dl, dr: f(dl, dl, dr), lo, hi, tol)
        else:
            total += tanh_sinh(lambda x, dl, dr: f(x, dl, dr), lo, hi, tol)
    return total


# --------------------------------------------------------------------------
# three-factor form


def _check_delta3(n, a1, a2, lam):
    tot = a1 + a2 + lam
    bad = []
    if not 3 * n - 2 > tot > 2 * n - 2:
        bad.append("3n-2 > a1+a2+lambda > 2n-2")
    if not a1 + lam > n - 1:
        bad.append("a1+lambda > n-1")
    if not a2 + lam > n - 1:
        bad.append("a2+lambda > n-1")
    if not 2 * n - 1 > a1 + a2:
        bad.append("2n-1 > a1+a2")
    if not (0 < a1 < n and 0 < a2 < n and lam > 0):
        bad.append("0 < a_k < n")
    if bad:
        raise DomainError("three-factor hypotheses violated: " + "; ".join(bad))


def _wnorm(w) -> float:
    w = np.atleast_1d(np.asarray(w, dtype=float))
    return float(np.linalg.norm(w))


def _cylinder_integral(n, d, integrand, level):
    """Integrate integrand(x1, rho, hx, xd, ...) over R^n in cylinder coordinates.

    x1 runs along w, rho = distance from the w-axis.  Outer breakpoints sit at
    the point singularities (0 and w) and at the plane x1 = h where the
    hypergeometric argument reaches 1.
    """
    h = (1.0 + d * d) / (2.0 * d)
    core = sorted({0.0, d, h})
    extra = {-h, -1.0, -d, 1.0, 2.0 * h}
    pts = sorted(set(core) | extra)
    pts = [-math.inf] + pts + [math.inf]

    x1s, hxs, xds, x0s, ws = [], [], [], [], []
    for lo, hi in zip(pts[:-1], pts[1:]):
        x, dl, dr, w = _interval_nodes(lo, hi, level, CYLINDER_T_MAX)
        hx = h - x
        xd = x - d
        x0 = x.copy()
        # exact offsets from the singular loci at the interval ends
        if hi == h:
            hx = dr
        if lo == h:
            hx = -dl
        if hi == d:
            xd = -dr
        if lo == d:
            xd = dl
        if hi == 0.0:
            x0 = -dr
        if lo == 0.0:
            x0 = dl
        x1s.append(x0)
        hxs.append(hx)
        xds.append(xd)
        ws.append(w)
    x1 = np.concatenate(x1s)
    hx = np.concatenate(hxs)
    xd = np.concatenate(xds)
    wx = np.concatenate(ws)
    keep = wx > 0
    x1, hx, xd, wx = x1[keep], hx[keep], xd[keep], wx[keep]

    # inner radial breakpoints per row
    bps = np.sort(np.stack([np.abs(x1), np.abs(xd), np.ones_like(x1)], axis=1), axis=1)
    fl, fr, wt = _unit_rule(level, CYLINDER_T_MAX)
    total = np.zeros_like(x1)
    lefts = [np.zeros_like(x1), bps[:, 0], bps[:, 1], bps[:, 2]]
    rights = [bps[:, 0], bps[:, 1], bps[:, 2], None]
    for lo, hi in zip(lefts, rights):
        if hi is None:
            dl = fl / fr
            rho = lo[:, None] + dl[None, :]
            wr = np.broadcast_to(wt / fr**2, rho.shape)
        else:
            L = (hi - lo)[:, None]
            rho = lo[:, None] + L * fl[None, :]
            wr = L * wt[None, :]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            vals = integrand(x1[:, None], rho, hx[:, None], xd[:, None])
            vals = np.where(wr > 0, vals * rho ** (n - 2), 0.0)
        total = total + np.sum(wr * vals, axis=1)
    return sphere_area(n - 2) * float(np.sum(wx * total))


def _adaptive_cylinder(n, d, integrand, tol, min_level=3, max_level=7):
    prev = None
    for level in range(min_level, max_level + 1):
        cur = _cylinder_integral(n, d, integrand, level)
        if not math.isfinite(cur):
            raise QuadratureFailed("non-finite three-factor integral", (prev, cur))
        if prev is not None and abs(cur - prev) <= tol * abs(cur):
            return cur
        prev = cur
    raise QuadratureFailed("three-factor quadrature did not converge", (prev, cur))


def delta3_reduced(n: int, a1: float, a2: float, lam: float, w, tol: float = 1e-7) -> float:
    """Three-factor surface integral times |w|^sigma via its reduced form.

    The y-integration is done in closed form (a 2F1 of the parameter
    beta(x, w)); the remaining x-integral over R^n is reduced to two
    dimensions by symmetry about the w-axis.
    """
    _check_delta3(n, a1, a2, lam)
    d = _wnorm(w)
    if not d > 0:
        raise DomainError("delta3_reduced needs w != 0")
    sigma = 2.0 + a1 + a2 + lam - 2.0 * n
    ha = 0.5 * a2
    hb = 0.5 * (lam + a2 - n + 1.0)
    hc = 0.5 * (lam + a2)
    # 2^{lam+a2-n-1} |S^{n-2}| B(hb, (n-1)/2) = 2^{lam+a2-n} pi^{(n-1)/2} G(hb)/G(hc)
    log_const = ((lam + a2 - n) * math.log(2.0) + 0.5 * (n - 1) * math.log(math.pi)
                 + gamma_ln(hb) - gamma_ln(hc) + sigma * math.log(d))
    const = math.exp(log_const)

    def integrand(x1, rho, hx, xd):
        s2 = x1 * x1 + rho * rho
        xw2 = xd * xd + rho * rho
        D = 1.0 + xw2 + s2
        omb = (2.0 * d * hx / D) ** 2
        beta = 4.0 * s2 * (1.0 + xw2) / (D * D)
        shape = beta.shape
        beta_c = np.clip(beta, 0.0, 1.0)
        # nodes whose offset from the plane underflowed carry negligible weight
        omb_c = np.clip(omb, 1e-280, 1.0)
        F = hyp2f1(ha, hb, hc, beta_c.ravel(), omb_c.ravel()).reshape(shape)
        return (s2 ** (0.5 * (lam + a2 - n)) * xw2 ** (-0.5 * a1)
                * D ** (n - 1.0 - lam - a2) * F)

    return const * _adaptive_cylinder(n, d, integrand, tol)


def gamma_window(n: int, a1: float, a2: float, lam: float) -> tuple[float, float]:
    """Open interval (lo, hi) of admissible 2*gamma for the majorant."""
    hi = min(n - a1, a1 + a2 + lam - 2.0 * (n - 1), 1.0)
    # gamma = 0 is the unsplit bound, so the window never extends below zero
    lo = max(1.0 - a2, a2 - (n - 1.0), 0.0)
    if not hi > lo:
        which = min(
            (("n-a1", n - a1), ("a1+a2+lambda-2(n-1)", a1 + a2 + lam - 2.0 * (n - 1)), ("1", 1.0)),
            key=lambda kv: kv[1],
        )[0]
        raise DomainError(f"empty gamma window: binding upper constraint {which} <= {lo:.6g}")
    return lo, hi


def delta3_step2_regularized(n: int, a1: float, a2: float, lam: float, gamma: float, w,
                             tol: float = 1e-7) -> float:
    """Majorant of the three-factor integral obtained by bounding
    (1 - beta u)^{-a2/2} <= (1 - beta)^{-gamma} (1 - u)^{-(a2 - 2 gamma)/2}.
    """
    _check_delta3(n, a1, a2, lam)
    lo, hi = gamma_window(n, a1, a2, lam)
    if not lo < 2.0 * gamma < hi:
        raise DomainError(f"2*gamma = {2 * gamma} outside the window ({lo}, {hi})")
    d = _wnorm(w)
    if not d > 0:
        raise DomainError("needs w != 0")
    sigma = 2.0 + a1 + a2 + lam - 2.0 * n
    hb = 0.5 * (lam + a2 - n + 1.0)
    log_const = ((lam + a2 - n - 1.0) * math.log(2.0) + math.log(sphere_area(n - 2))
                 + gamma_ln(hb) + gamma_ln(0.5 * (n - 1.0 + 2.0 * gamma - a2))
                 - gamma_ln(0.5 * (lam + 2.0 * gamma)) + sigma * math.log(d))
    const = math.exp(log_const)

    def integrand(x1, rho, hx, xd):
        s2 = x1 * x1 + rho * rho
        xw2 = xd * xd + rho * rho
        D = 1.0 + xw2 + s2
        plane = np.abs(2.0 * d * hx)  # |1 + |x-w|^2 - |x|^2|
        return (s2 ** (0.5 * (lam + a2 - n)) * xw2 ** (-0.5 * a1)
                * D ** (n - 1.0 - lam - a2 + 2.0 * gamma) * plane ** (-2.0 * gamma))

    return const * _adaptive_cylinder(n, d, integrand, tol)

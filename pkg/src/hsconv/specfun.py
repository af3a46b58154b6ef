"""Special functions: log-Gamma, Beta, digamma, Gauss 2F1 on [0, 1], elliptic K.

Everything here works in float64.  ``hyp2f1`` is the vectorised workhorse used by
the quadrature routines; ``gauss_2f1`` is the scalar entry point that takes a
:class:`HypergeomParams` record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DivergentAtOne, DomainError

__all__ = [
    "HypergeomParams",
    "gamma_ln",
    "gamma_signed_ln",
    "rgamma",
    "digamma",
    "beta",
    "gauss_2f1",
    "hyp2f1",
    "gauss_summation",
    "elliptic_K",
    "elliptic_K_complement",
    "LOG_REGIME_TOL",
]

# width of the band around an integer value of c - a - b treated as degenerate
LOG_REGIME_TOL = 1e-6
# The generic connection formula cancels catastrophically when c - a - b is
# close to an integer; inside this band it is replaced by interpolation in c.
_NEAR_INTEGER_BAND = 2e-3
_SERIES_LIMIT_POSITIVE = 0.9
_ILL_CONDITIONED_BAND = 0.15
_INTERP_STEP = 2.5e-3

# Lanczos approximation, g = 607/128, 14 terms (Godfrey's coefficients).
_LANCZOS_G = 5.24218750000000000
_LANCZOS = (
    57.1562356658629235,
    -59.5979603554754912,
    14.1360979747417471,
    -0.491913816097620199,
    0.339946499848118887e-4,
    0.465236289270485756e-4,
    -0.983744753048795646e-4,
    0.158088703224912494e-3,
    -0.210264441724104883e-3,
    0.217439618115212643e-3,
    -0.164318106536763890e-3,
    0.844182239838527433e-4,
    -0.261908384015814087e-4,
    0.368991826595316234e-5,
)
_SQRT_2PI = 2.5066282746310005


def gamma_ln(z: float) -> float:
    """Natural log of Gamma(z) for z > 0 (Lanczos)."""
    z = float(z)
    if not z > 0.0:
        raise DomainError(f"gamma_ln requires z > 0, got {z!r}")
    if z < 0.5:
        # the Lanczos sum is least accurate near 0; shift with Gamma(z) = Gamma(z+1)/z
        return _lanczos_ln(z + 1.0) - math.log(z)
    return _lanczos_ln(z)


def _lanczos_ln(x: float) -> float:
    tmp = x + _LANCZOS_G
    tmp = (x + 0.5) * math.log(tmp) - tmp
    ser = 0.999999999999997092
    y = x
    for c in _LANCZOS:
        y += 1.0
        ser += c / y
    return tmp + math.log(_SQRT_2PI * ser / x)


def _is_nonpos_int(z: float) -> bool:
    return z <= 0.0 and z == math.floor(z)


def gamma_signed_ln(z: float) -> tuple[float, float]:
    """Return ``(log|Gamma(z)|, sign(Gamma(z)))`` for any real z off the poles."""
    z = float(z)
    if _is_nonpos_int(z):
        raise DomainError(f"Gamma has a pole at {z!r}")
    if z > 0.0:
        return gamma_ln(z), 1.0
    # reflection: Gamma(z) Gamma(1-z) = pi / sin(pi z)
    s = math.sin(math.pi * z)
    lg = math.log(math.pi / abs(s)) - gamma_ln(1.0 - z)
    return lg, math.copysign(1.0, s)


def rgamma(z: float) -> float:
    """1/Gamma(z); zero at the poles."""
    if _is_nonpos_int(float(z)):
        return 0.0
    lg, sg = gamma_signed_ln(z)
    return sg * math.exp(-lg)


def _gamma_ratio(num, den) -> float:
    """prod Gamma(num) / prod Gamma(den), evaluated in log space.

    Poles in the denominator give 0; poles in the numerator raise.
    """
    if any(_is_nonpos_int(float(d)) for d in den):
        return 0.0
    lg, sg = 0.0, 1.0
    for z in num:
        a, s = gamma_signed_ln(z)
        lg += a
        sg *= s
    for z in den:
        a, s = gamma_signed_ln(z)
        lg -= a
        sg *= s
    return sg * math.exp(lg)


def digamma(x: float) -> float:
    """psi(x) = Gamma'(x)/Gamma(x) for real x off the poles."""
    x = float(x)
    if _is_nonpos_int(x):
        raise DomainError(f"digamma has a pole at {x!r}")
    if x < 0.5:
        return digamma(1.0 - x) - math.pi / math.tan(math.pi * x)
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    x2 = 1.0 / (x * x)
    # Bernoulli tail: B2k / (2k x^2k)
    tail = x2 * (1.0 / 12 - x2 * (1.0 / 120 - x2 * (1.0 / 252 - x2 * (
        1.0 / 240 - x2 * (1.0 / 132 - x2 * (691.0 / 32760 - x2 / 12.0))))))
    return acc + math.log(x) - 0.5 / x - tail


def beta(a: float, b: float) -> float:
    """Euler Beta function B(a, b) for a, b > 0."""
    if not (a > 0 and b > 0):
        raise DomainError(f"beta requires positive arguments, got {a!r}, {b!r}")
    return math.exp(gamma_ln(a) + gamma_ln(b) - gamma_ln(a + b))


@dataclass(frozen=True)
class HypergeomParams:
    """Arguments of 2F1(a, b; c; x) on the closed unit interval.

    ``one_minus_x`` may carry 1 - x computed without cancellation; when given it
    is used for the connection branch near x = 1.
    """

    a: float
    b: float
    c: float
    x: float
    one_minus_x: Optional[float] = None

    def __post_init__(self):
        if not self.c > 0:
            raise DomainError(f"2F1 requires c > 0, got c={self.c!r}")
        if not 0.0 <= self.x <= 1.0:
            raise DomainError(f"2F1 argument must lie in [0, 1], got x={self.x!r}")
        if self.one_minus_x is not None and not 0.0 <= self.one_minus_x <= 1.0:
            raise DomainError("one_minus_x must lie in [0, 1]")

    @property
    def excess(self) -> float:
        """c - a - b."""
        return self.c - self.a - self.b

    @property
    def log_regime(self) -> bool:
        s = self.excess
        m = round(s)
        return abs(s - m) < LOG_REGIME_TOL and m <= 0


def gauss_summation(a: float, b: float, c: float) -> float:
    """2F1(a, b; c; 1) = Gamma(c) Gamma(c-a-b) / (Gamma(c-a) Gamma(c-b))."""
    s = c - a - b
    if not s > 0:
        raise DivergentAtOne(f"2F1({a}, {b}; {c}; 1) diverges: c-a-b = {s} <= 0")
    if _is_nonpos_int(a) or _is_nonpos_int(b):
        # terminating series; Chu-Vandermonde is the same Gamma ratio
        pass
    return _gamma_ratio((c, s), (c - a, c - b))


def gauss_2f1(p: HypergeomParams) -> float:
    """Scalar 2F1(a, b; c; x) for x in [0, 1]."""
    omx = None if p.one_minus_x is None else np.array([p.one_minus_x])
    return float(hyp2f1(p.a, p.b, p.c, np.array([p.x]), omx)[0])


def hyp2f1(a: float, b: float, c: float, x, omx=None) -> np.ndarray:
    """Vectorised 2F1(a, b; c; x) for scalar parameters and x in [0, 1].

    Power series for x <= 1/2, the 1 - x connection formulas above that, with
    the logarithmic (digamma) forms when c - a - b is an integer.  ``omx`` is an
    optional, cancellation-free 1 - x.
    """
    a, b, c = float(a), float(b), float(c)
    if a > b:
        a, b = b, a
    if not c > 0 or _is_nonpos_int(c):
        raise DomainError(f"2F1 requires c > 0, got c={c!r}")
    x = np.asarray(x, dtype=float)
    shape = x.shape
    x = x.ravel()
    if omx is None:
        omx = 1.0 - x
    else:
        omx = np.broadcast_to(np.asarray(omx, dtype=float), shape).ravel().copy()
    if np.any((x < 0.0) | (x > 1.0)):
        raise DomainError("2F1 argument must lie in [0, 1]")
    out = np.empty_like(x)

    if a == 0.0 or b == 0.0:
        out[:] = 1.0
        return out.reshape(shape)
    if _is_nonpos_int(a) or _is_nonpos_int(b):
        out[:] = _series(a, b, c, x)
        return out.reshape(shape)
    if _is_nonpos_int(c - a) or _is_nonpos_int(c - b):
        # Euler transform turns the series into a polynomial
        s = c - a - b
        with np.errstate(divide="ignore"):
            out[:] = omx**s * _series(c - a, c - b, c, x)
        return out.reshape(shape)

    # With a, b > 0 every series term is positive, so the series stays well
    # conditioned past 1/2; the connection formulas cancel badly there when
    # c - a - b is near an integer.
    ex = c - a - b
    ill = a > 0 and abs(ex - round(ex)) < _ILL_CONDITIONED_BAND
    lo = x <= (_SERIES_LIMIT_POSITIVE if ill else 0.5)
    if np.any(lo):
        out[lo] = _series(a, b, c, x[lo])
    hi = ~lo
    if np.any(hi):
        out[hi] = _connection(a, b, c, omx[hi])
    return out.reshape(shape)


def series_2f1(a, b, c, z, max_terms=20000):
    """Plain Gauss series, convergent for |z| < 1 (slowly near 1)."""
    return _series(a, b, c, z, max_terms)


def connection_2f1(a, b, c, x, omx=None):
    """2F1 through the 1 - x connection formulas, for x in (0, 1]."""
    x = np.asarray(x, dtype=float)
    omx = 1.0 - x if omx is None else np.asarray(omx, dtype=float)
    a, b = min(a, b), max(a, b)
    return _connection(float(a), float(b), float(c), omx.ravel()).reshape(x.shape)


def _series(a, b, c, z, max_terms=20000):
    z = np.asarray(z, dtype=float)
    total = np.ones_like(z)
    term = np.ones_like(z)
    for k in range(max_terms):
        term = term * ((a + k) * (b + k) / ((c + k) * (k + 1.0))) * z
        total = total + term
        if k > 2 and np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return total


def _connection(a, b, c, w):
    """2F1 at x = 1 - w for 0 <= w < 1/2."""
    s = c - a - b
    m = round(s)
    at_one = w == 0.0
    if np.any(at_one) and s <= 0:
        raise DivergentAtOne(f"2F1({a}, {b}; {c}; 1) diverges: c-a-b = {s} <= 0")
    if s == m:
        out = _connection_integer(a, b, c, int(m), w)
    elif abs(s - m) < _NEAR_INTEGER_BAND and c - abs(s - m) - 4 * _INTERP_STEP > 0:
        out = _connection_near_integer(a, b, c, s - m, w)
    else:
        out = _connection_generic(a, b, c, w)
    if np.any(at_one):
        out = np.where(at_one, gauss_summation(a, b, c), out)
    return out


def _connection_generic(a, b, c, w):
    s = c - a - b
    g1 = _gamma_ratio((c, s), (c - a, c - b))
    g2 = _gamma_ratio((c, -s), (a, b))
    f1 = _series(a, b, 1.0 - s, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        f2 = np.where(w > 0, w**s, 0.0) * _series(c - a, c - b, 1.0 + s, w)
    return g1 * f1 + g2 * f2


def _connection_near_integer(a, b, c, eps, w):
    # 2F1 / Gamma(c) is entire in c: interpolate it from eight points where
    # c - a - b sits safely away from the integer, then evaluate at the true
    # offset.  Dividing by Gamma(c) removes the pole at c = 0, which would
    # otherwise spoil the interpolation for small c.
    h = _INTERP_STEP
    nodes = h * np.array([-4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0])
    vals = [_connection_generic(a, b, c - eps + e, w) * rgamma(c - eps + e) for e in nodes]
    out = np.zeros_like(w)
    for j, ej in enumerate(nodes):
        lj = 1.0
        for k, ek in enumerate(nodes):
            if k != j:
                lj *= (eps - ek) / (ej - ek)
        out = out + lj * vals[j]
    return out / rgamma(c)


def _tail_small(scale, bracket, total):
    # the bracket can pass through zero, so judge convergence on its size bound
    size = np.abs(scale) * (np.abs(bracket) + 1.0)
    with np.errstate(invalid="ignore"):
        return bool(np.all((size <= 1e-17 * np.abs(total)) | ~np.isfinite(bracket)))


def _connection_integer(a, b, c, m, w, max_terms=20000):
    """Limit forms of the connection formula when c - a - b = m is an integer."""
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    if m == 0:
        pref = _gamma_ratio((a + b,), (a, b))
        total = np.zeros_like(w)
        coef = 1.0
        pa, pb, p1 = digamma(a), digamma(b), digamma(1.0)
        wn = np.ones_like(w)
        for n in range(max_terms):
            bracket = 2.0 * p1 - pa - pb - logw
            term = coef * bracket * wn
            total = total + term
            if n > 2 and _tail_small(coef * wn, bracket, total):
                break
            coef *= (a + n) * (b + n) / ((n + 1.0) ** 2)
            pa += 1.0 / (a + n)
            pb += 1.0 / (b + n)
            p1 += 1.0 / (n + 1.0)
            wn = wn * w
        return pref * total

    if m > 0:
        # c = a + b + m
        finite = np.zeros_like(w)
        coef = 1.0
        wn = np.ones_like(w)
        for n in range(m):
            finite = finite + coef * wn
            if n + 1 < m:
                coef *= (a + n) * (b + n) / ((n + 1.0) * (1.0 - m + n))
            wn = wn * w
        finite *= _gamma_ratio((m, c), (a + m, b + m))
        pref = _gamma_ratio((c,), (a, b)) * (-1.0) ** m
        total = np.zeros_like(w)
        coef = 1.0 / math.factorial(m)
        p1, pm = digamma(1.0), digamma(m + 1.0)
        pa, pb = digamma(a + m), digamma(b + m)
        wn = np.ones_like(w)
        for n in range(max_terms):
            bracket = logw - p1 - pm + pa + pb
            term = coef * bracket * wn
            total = total + term
            if n > 2 and _tail_small(coef * wn, bracket, total):
                break
            coef *= (a + m + n) * (b + m + n) / ((n + 1.0) * (n + m + 1.0))
            p1 += 1.0 / (n + 1.0)
            pm += 1.0 / (n + m + 1.0)
            pa += 1.0 / (a + m + n)
            pb += 1.0 / (b + m + n)
            wn = wn * w
        with np.errstate(invalid="ignore"):
            tail = np.where(w > 0, w**m * total, 0.0)
        return finite - pref * tail

    # c = a + b - k with k = -m > 0
    k = -m
    finite = np.zeros_like(w)
    coef = 1.0
    wn = np.ones_like(w)
    for n in range(k):
        finite = finite + coef * wn
        if n + 1 < k:
            coef *= (a - k + n) * (b - k + n) / ((n + 1.0) * (1.0 - k + n))
        wn = wn * w
    with np.errstate(divide="ignore"):
        finite = _gamma_ratio((k, c), (a, b)) * finite / w**k
    pref = (-1.0) ** k * _gamma_ratio((c,), (a - k, b - k))
    total = np.zeros_like(w)
    coef = 1.0 / math.factorial(k)
    p1, pk = digamma(1.0), digamma(k + 1.0)
    pa, pb = digamma(a), digamma(b)
    wn = np.ones_like(w)
    for n in range(max_terms):
        bracket = logw - p1 - pk + pa + pb
        term = coef * bracket * wn
        total = total + term
        if n > 2 and _tail_small(coef * wn, bracket, total):
            break
        coef *= (a + n) * (b + n) / ((n + 1.0) * (n + k + 1.0))
        p1 += 1.0 / (n + 1.0)
        pk += 1.0 / (n + k + 1.0)
        pa += 1.0 / (a + n)
        pb += 1.0 / (b + n)
        wn = wn * w
    return finite - pref * total


def elliptic_K(k: float) -> float:
    """Complete elliptic integral of the first kind, modulus k in [0, 1)."""
    k = float(k)
    if not 0.0 <= k < 1.0:
        raise DomainError(f"elliptic_K requires 0 <= k < 1, got {k!r}")
    kp = math.sqrt((1.0 - k) * (1.0 + k))
    return float(elliptic_K_complement(np.array([kp]))[0])


def elliptic_K_complement(kp) -> np.ndarray:
    """K as a function of the complementary modulus k' = sqrt(1 - k^2), via AGM."""
    a = np.ones_like(np.asarray(kp, dtype=float))
    g = np.asarray(kp, dtype=float).copy()
    if np.any(g <= 0.0):
        raise DivergentAtOne("elliptic K diverges at k = 1")
    for _ in range(64):
        a, g = 0.5 * (a + g), np.sqrt(a * g)
        if np.all(np.abs(a - g) <= 1e-16 * a):
            break
    return np.pi / (a + g)

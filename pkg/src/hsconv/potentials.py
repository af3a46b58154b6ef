"""Parameter bookkeeping and closed-form quantities.

Conventions: ``m`` factors in R^n with exponents ``alphas``; the surface is
tau + sum'|x_k|^2 - |x_m|^2 = 0 together with w = sum x_k.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DivergentAtOne, DomainError
from .specfun import elliptic_K_complement, gamma_ln, hyp2f1

__all__ = [
    "MARGIN",
    "ConvolutionSpec",
    "EmbeddingIndices",
    "ReductionSpec",
    "Theorem",
    "Check",
    "ValidationReport",
    "validate_spec",
    "riesz_fourier_constant",
    "riesz_composition_constant",
    "theta_closed_form",
    "theta_upper_bound",
    "theta_bound_coefficient",
    "elliptic_theta_2d",
    "homogeneous_sigma",
    "tau_exponent",
]

# strict inequalities in the hypotheses are checked with this margin
MARGIN = 1e-9


@dataclass(frozen=True)
class ConvolutionSpec:
    """Dimensions, exponents and surface offset of an m-factor form."""

    m: int
    n: int
    alphas: tuple
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if self.m < 2:
            raise DomainError(f"need m >= 2 factors, got {self.m}")
        if self.n < 2:
            raise DomainError(f"need dimension n >= 2, got {self.n}")
        if len(self.alphas) != self.m:
            raise DomainError(f"expected {self.m} exponents, got {len(self.alphas)}")
        if self.tau < 0:
            raise DomainError("tau must be nonnegative")
        for a in self.alphas:
            if not 0 < a < self.n:
                raise DomainError(f"exponent {a} outside (0, n={self.n})")

    @classmethod
    def uniform(cls, n: int, m: int, tau: float = 1.0) -> "ConvolutionSpec":
        return cls(m=m, n=n, alphas=(n - 1.0,) * m, tau=tau)

    @property
    def alpha_sum(self) -> float:
        return sum(self.alphas)

    @property
    def rho(self) -> float:
        return 2.0 + self.alpha_sum - (self.m - 1) * self.n

    @property
    def sigma_w2(self) -> Optional[float]:
        """sigma = alpha + lambda + 2 - n for the two-factor form."""
        if self.m != 2:
            return None
        a, lam = self.alphas
        return a + lam + 2.0 - self.n

    @property
    def is_uniform(self) -> bool:
        return all(abs(a - (self.n - 1)) <= MARGIN for a in self.alphas)

    def with_tau(self, tau: float) -> "ConvolutionSpec":
        return ConvolutionSpec(self.m, self.n, self.alphas, tau)


@dataclass(frozen=True)
class EmbeddingIndices:
    """Lebesgue indices p, q = p', r and p_* with 1/p_* + 1/(rq) = 1."""

    p: float
    r: float = 1.0
    q: float = field(default=None)
    p_star: float = field(default=None)

    def __post_init__(self):
        if not self.p > 1:
            raise DomainError("need p > 1")
        if not self.r >= 1:
            raise DomainError("need r >= 1")
        q = self.p / (self.p - 1.0) if self.q is None else float(self.q)
        if abs(1.0 / self.p + 1.0 / q - 1.0) > 1e-12:
            raise DomainError("1/p + 1/q must equal 1")
        rq = self.r * q
        if rq < 2 - 1e-12:
            raise DomainError("need rq >= 2")
        ps = rq / (rq - 1.0) if self.p_star is None else float(self.p_star)
        if abs(1.0 / ps + 1.0 / rq - 1.0) > 1e-12:
            raise DomainError("1/p_* + 1/(rq) must equal 1")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p_star", ps)


@dataclass(frozen=True)
class ReductionSpec:
    """Which trailing block of ell factors the reduction keeps."""

    spec: ConvolutionSpec
    ell: int

    def __post_init__(self):
        if not self.spec.m > self.ell >= 2:
            raise DomainError(f"need m > ell >= 2, got m={self.spec.m}, ell={self.ell}")

    @property
    def beta_lm(self) -> float:
        return sum(self.spec.alphas[self.spec.m - self.ell:])

    @property
    def sigma_ell(self) -> float:
        return 2.0 + self.beta_lm - (self.ell - 1) * self.spec.n


class Theorem(str, enum.Enum):
    T1 = "T1"  # reduction of the number of factors
    T2 = "T2"  # two factors
    T3 = "T3"  # three factors
    T4 = "T4"  # uniform potentials


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    theorem: Theorem
    checks: list
    derived: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def __str__(self):
        lines = [f"{self.theorem.value}: {'pass' if self.ok else 'fail'}"]
        lines += [f"  [{'ok' if c.passed else 'FAIL'}] {c.name} {c.detail}" for c in self.checks]
        return "\n".join(lines)


def _gt(a, b):
    return a > b + MARGIN


def validate_spec(spec: ConvolutionSpec, theorem, ell: Optional[int] = None) -> ValidationReport:
    """Check the hypotheses of one of the four boundedness statements.

    Never raises on a violated hypothesis; each failing inequality is named.
    """
    th = Theorem(theorem)
    n, m, al = spec.n, spec.m, spec.alphas
    checks = []
    derived = {}

    def add(name, ok, detail=""):
        checks.append(Check(name, bool(ok), detail))

    if th is Theorem.T2:
        add("m=2", m == 2)
        if m == 2:
            a, lam = al
            add("2(n-1)>alpha+lambda", _gt(2 * (n - 1), a + lam), f"alpha+lambda={a + lam:g}")
            add("alpha+lambda>n-1", _gt(a + lam, n - 1), f"alpha+lambda={a + lam:g}")
            add("0<alpha<n-1", _gt(a, 0) and _gt(n - 1, a), f"alpha={a:g}")
            add("lambda>0", _gt(lam, 0))
            derived["sigma"] = spec.sigma_w2
    elif th is Theorem.T3:
        add("m=3", m == 3)
        if m == 3:
            a1, a2, lam = al
            tot = a1 + a2 + lam
            add("3n-2>a1+a2+lambda", _gt(3 * n - 2, tot), f"sum={tot:g}")
            add("a1+a2+lambda>2n-2", _gt(tot, 2 * n - 2), f"sum={tot:g}")
            add("a1+lambda>n-1", _gt(a1 + lam, n - 1))
            add("a2+lambda>n-1", _gt(a2 + lam, n - 1))
            add("2n-1>a1+a2", _gt(2 * n - 1, a1 + a2))
            derived["sigma"] = 2.0 + tot - 2.0 * n
    elif th is Theorem.T1:
        add("m>=3", m >= 3)
        add("n>=3", n >= 3)
        rho = spec.rho
        add("0<rho<n", _gt(rho, 0) and _gt(n, rho), f"rho={rho:g}")
        ell = 2 if ell is None else ell
        add("m>ell>=2", m > ell >= 2, f"ell={ell}")
        if m > ell >= 2:
            beta = sum(al[m - ell:])
            add("ell*n-2>beta_lm", _gt(ell * n - 2, beta), f"beta={beta:g}")
            add("beta_lm>(ell-1)n-2", _gt(beta, (ell - 1) * n - 2), f"beta={beta:g}")
            derived["beta_lm"] = beta
            derived["sigma_ell"] = 2.0 + beta - (ell - 1) * n
        derived["rho"] = rho
    else:
        add("alpha_k=n-1", spec.is_uniform)
        add("3<=m<=n+1", 3 <= m <= n + 1, f"m={m}")
        add("n>=2", n >= 2)
        derived["sigma"] = 2.0 + n - m
    return ValidationReport(th, checks, derived)


def homogeneous_sigma(spec: ConvolutionSpec) -> float:
    """The weight exponent making the form independent of tau: 2 + alpha - n(m-1)."""
    return spec.rho


def tau_exponent(spec: ConvolutionSpec, sigma: float) -> float:
    """e with Form(w, tau) = tau^e Form(w / sqrt(tau), 1).

    From x -> sqrt(tau) x: mn/2 from the measure, -n/2 from the vector delta,
    -1 from the scalar delta, -alpha/2 from the weights, sigma/2 from |w|^sigma.
    """
    # (m-1) n - alpha - 2 + sigma, written so the homogeneous weight gives exactly 0
    return 0.5 * (sigma - spec.rho)


def riesz_fourier_constant(n: int, lam: float) -> float:
    """c with F[|x|^-lam] = c |xi|^(lam-n), F f(xi) = int e^{2 pi i xi x} f(x) dx."""
    if not 0 < lam < n:
        raise DomainError(f"Riesz exponent {lam} outside (0, {n})")
    return math.exp((lam - 0.5 * n) * math.log(math.pi)
                    + gamma_ln(0.5 * (n - lam)) - gamma_ln(0.5 * lam))


def riesz_composition_constant(n: int, g1: float, g2: float) -> float:
    """c with int |x|^-g1 |w-x|^-g2 dx = c |w|^(n-g1-g2).

    The transform of the convolution is c(g1) c(g2) |xi|^(g1+g2-2n), which is
    the transform of |x|^-(g1+g2-n) / c(g1+g2-n).
    """
    for name, g in (("g1", g1), ("g2", g2)):
        if not 0 < g < n:
            raise DomainError(f"{name}={g} outside (0, {n})")
    if not g1 + g2 > n:
        raise DomainError(f"g1+g2={g1 + g2} must exceed n={n}")
    return (riesz_fourier_constant(n, g1) * riesz_fourier_constant(n, g2)
            / riesz_fourier_constant(n, g1 + g2 - n))


def _theta_args(n, alpha, lam):
    if not (alpha > 0 and lam > 0):
        raise DomainError("need alpha > 0 and lambda > 0")
    if not alpha + lam > n - 1:
        raise DomainError("need alpha + lambda > n - 1")
    a = 0.5 * alpha
    b = 0.5 * (alpha + lam - n + 1.0)
    c = 0.5 * (alpha + lam)
    return a, b, c


def _theta_pieces(wnorm):
    d = np.asarray(wnorm, dtype=float)
    d2 = d * d
    frac = d2 / (1.0 + d2)
    beta = 4.0 * d2 / (1.0 + d2) ** 2
    omb = ((1.0 - d) * (1.0 + d) / (1.0 + d2)) ** 2
    return frac, beta, omb


def theta_closed_form(n: int, alpha: float, lam: float, wnorm) -> float:
    """Two-factor surface integral times |w|^sigma, in hypergeometric form."""
    a, b, c = _theta_args(n, alpha, lam)
    scalar = np.ndim(wnorm) == 0
    d = np.atleast_1d(np.asarray(wnorm, dtype=float))
    if np.any(d < 0):
        raise DomainError("|w| must be nonnegative")
    log_cn = ((alpha + lam - n) * math.log(2.0) + 0.5 * (n - 1) * math.log(math.pi)
              + gamma_ln(b) - gamma_ln(c))
    frac, beta, omb = _theta_pieces(d)
    if np.any(omb == 0) and c - a - b <= 0:
        raise DivergentAtOne(f"value is infinite at |w|=1 for alpha={alpha} >= n-1={n - 1}")
    F = hyp2f1(a, b, c, np.clip(beta, 0, 1), omb)
    out = math.exp(log_cn) * frac ** (2.0 * b) * F
    return float(out[0]) if scalar else out


def theta_bound_coefficient(n: int, alpha: float, lam: float) -> float:
    """Gamma-ratio coefficient of the uniform bound: the prefactor times 2F1 at 1.

    The bound coefficient * (|w|^2/(1+|w|^2))^(alpha+lambda-n+1) is attained at |w| = 1.
    """
    _theta_args(n, alpha, lam)
    if not alpha < n - 1:
        raise DomainError(f"bound needs alpha < n-1 (Gamma((n-1-alpha)/2) pole), alpha={alpha}")
    return math.exp((alpha + lam - n) * math.log(2.0) + 0.5 * (n - 1) * math.log(math.pi)
                    + gamma_ln(0.5 * (alpha + lam - n + 1.0)) + gamma_ln(0.5 * (n - 1 - alpha))
                    - gamma_ln(0.5 * (n - 1.0)) - gamma_ln(0.5 * lam))


def theta_upper_bound(n: int, alpha: float, lam: float, wnorm) -> float:
    coef = theta_bound_coefficient(n, alpha, lam)
    d = np.asarray(wnorm, dtype=float)
    if np.any(d < 0):
        raise DomainError("|w| must be nonnegative")
    frac = d * d / (1.0 + d * d)
    out = coef * frac ** (alpha + lam - n + 1.0)
    return float(out) if np.ndim(out) == 0 else out


def elliptic_theta_2d(wnorm) -> float:
    """Plane case alpha = lambda = 1: (2|w|^2/(1+|w|^2)) K(sqrt(beta))."""
    scalar = np.ndim(wnorm) == 0
    d = np.atleast_1d(np.asarray(wnorm, dtype=float))
    if np.any(d < 0):
        raise DomainError("|w| must be nonnegative")
    kp = np.abs((1.0 - d) * (1.0 + d)) / (1.0 + d * d)
    if np.any(kp == 0):
        raise DivergentAtOne("elliptic form diverges at |w| = 1")
    out = 2.0 * d * d / (1.0 + d * d) * elliptic_K_complement(kp)
    return float(out[0]) if scalar else out

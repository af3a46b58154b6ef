"""Numerical checks of the boundedness statements.

A finite computation cannot certify a supremum over all of R^n, so
"uniformly bounded" is tested as sup-saturation: the supremum over a wide
logarithmic grid must be within 5% of the supremum over its inner half.
Every Monte Carlo verdict carries an explicit 3 sigma allowance.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DivergentAtOne, DomainError, HsconvError, QuadratureFailed
from .potentials import (
    ConvolutionSpec,
    EmbeddingIndices,
    ReductionSpec,
    riesz_composition_constant,
    tau_exponent,
    theta_closed_form,
    theta_upper_bound,
    validate_spec,
)
from .quadrature import delta3_reduced, sphere_area, tanh_sinh, theta_oracle
from .surface_mc import McEstimate, estimate_batches, estimate_form, fibre_estimates

__all__ = [
    "Evaluator",
    "ScanReport",
    "DecayFit",
    "FitFailed",
    "sup_scan",
    "decay_exponent",
    "ReductionReport",
    "reduction_check",
    "HomogeneityReport",
    "tau_homogeneity",
    "GaussianProfile",
    "MollifierProfile",
    "ZeroProfile",
    "DualReport",
    "dual_check",
    "mollifier_check",
    "log_grid",
]

SATURATION_TOL = 0.05
MC_SIGMAS = 3.0


class FitFailed(HsconvError):
    pass


class Evaluator(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    QUADRATURE = "quadrature"
    MC = "mc"


def log_grid(lo: float, hi: float, count: int) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), int(count))


# --------------------------------------------------------------------------
# sup scans


@dataclass
class DecayFit:
    slope: float
    intercept: float
    r2: float


@dataclass
class ScanReport:
    grid: list  # (w_norm, tau) pairs
    values: np.ndarray
    std_errors: np.ndarray
    running_sup: np.ndarray
    verdict: str
    sup_full: float
    sup_inner: float
    closed_form: Optional[np.ndarray] = None
    upper_bound: Optional[np.ndarray] = None
    decay_fit: Optional[DecayFit] = None
    violations: list = field(default_factory=list)

    @property
    def bounded(self) -> bool:
        return self.verdict == "bounded"


def _inner_mask(grid_axis: np.ndarray) -> np.ndarray:
    """Points in the central half of a logarithmic axis."""
    lg = np.log10(grid_axis)
    lo, hi = lg.min(), lg.max()
    q = 0.25 * (hi - lo)
    return (lg >= lo + q - 1e-12) & (lg <= hi - q + 1e-12)


def _homogeneous_value(spec, evaluator, d, n_samples, seed, tol, cache):
    """|w|^rho * form at (w, tau) with |w|/sqrt(tau) = d; returns (value, std_error)."""
    n, m = spec.n, spec.m
    key = (evaluator, round(math.log(d), 12))
    if evaluator is not Evaluator.MC and key in cache:
        return cache[key]
    if evaluator is Evaluator.CLOSED_FORM:
        if m != 2:
            raise DomainError("closed form exists for two factors only")
        out = (theta_closed_form(n, *spec.alphas, d), 0.0)
    elif evaluator is Evaluator.QUADRATURE:
        if m == 2:
            out = (theta_oracle(n, *spec.alphas, d, tol=tol), 0.0)
        elif m == 3:
            w = np.zeros(n)
            w[0] = d
            out = (delta3_reduced(n, *spec.alphas, w, tol=tol), 0.0)
        else:
            raise DomainError("quadrature evaluator covers m = 2 and m = 3")
    else:
        raise AssertionError
    cache[key] = out
    return out


def sup_scan(spec: ConvolutionSpec, evaluator, w_grid: Sequence[float],
             tau_grid: Sequence[float] = (1.0,), n_samples: int = 100_000, seed: int = 0,
             tol: float = 1e-8) -> ScanReport:
    """Evaluate the |w|^rho-weighted form (rho the homogeneous weight) on a grid.

    The verdict is "bounded" when the sup over the whole grid is within 5%
    (plus 3 sigma for Monte Carlo) of the sup over the inner half-grid,
    "not-saturated" otherwise, and "unbounded-at" when a point diverges.
    """
    ev = Evaluator(evaluator)
    w_grid = np.asarray(w_grid, dtype=float)
    tau_grid = np.asarray(tau_grid, dtype=float)
    if np.any(w_grid <= 0) or np.any(tau_grid <= 0):
        raise DomainError("grids must be positive")
    rho = spec.rho
    W, T = np.meshgrid(w_grid, tau_grid, indexing="ij")
    pts = list(zip(W.ravel(), T.ravel()))
    vals = np.empty(len(pts))
    ses = np.zeros(len(pts))
    cf = ub = None
    cache = {}
    violations = []

    if ev is Evaluator.CLOSED_FORM and spec.m == 2:
        a, lam = spec.alphas
        if a >= spec.n - 1:
            # c - a - b = (n-1-alpha)/2 <= 0, and the argument reaches 1 at |w| = sqrt(tau)
            try:
                theta_closed_form(spec.n, a, lam, 1.0)
            except DivergentAtOne as exc:
                violations.append((1.0, 1.0, str(exc)))

    for i, (wn, tau) in enumerate(pts):
        d = wn / math.sqrt(tau)
        try:
            if ev is Evaluator.MC:
                w = np.zeros(spec.n)
                w[0] = wn
                est = estimate_form(spec.with_tau(tau), w, tau, n_samples=n_samples,
                                    seed=seed + i, rescale=True)
                vals[i], ses[i] = est.value * wn**rho, est.std_error * wn**rho
                if est.acceptance == 0.0 and spec.m == 2:
                    # |w|^2 = tau: the surface is a hyperplane through the origin,
                    # which the polar resolution cannot sample
                    vals[i], ses[i] = _homogeneous_value(spec, Evaluator.QUADRATURE, d,
                                                         n_samples, seed, tol, cache)
            else:
                vals[i], ses[i] = _homogeneous_value(spec, ev, d, n_samples, seed, tol, cache)
        except (DivergentAtOne, QuadratureFailed) as exc:
            vals[i] = math.inf
            violations.append((wn, tau, str(exc)))
        if not math.isfinite(vals[i]) and not any(v[:2] == (wn, tau) for v in violations):
            violations.append((wn, tau, "non-finite value"))

    if spec.m == 2 and spec.alphas[0] < spec.n - 1:
        ds = np.array([p[0] / math.sqrt(p[1]) for p in pts])
        with np.errstate(all="ignore"):
            try:
                cf = theta_closed_form(spec.n, *spec.alphas, ds)
                ub = theta_upper_bound(spec.n, *spec.alphas, ds)
            except (DivergentAtOne, DomainError):
                cf = ub = None

    running = np.maximum.accumulate(np.where(np.isfinite(vals), vals, np.inf))
    inner = (_inner_mask(W.ravel()) if len(w_grid) > 1 else np.ones(len(pts), bool))
    if len(tau_grid) > 1:
        inner &= _inner_mask(T.ravel())
    sup_full = float(np.max(vals))
    k_inner = int(np.argmax(np.where(inner, vals, -np.inf)))
    sup_inner = float(vals[k_inner])
    k_full = int(np.argmax(vals))
    if violations:
        wv, tv, _ = violations[0]
        verdict = "unbounded-at"
    else:
        slack = MC_SIGMAS * math.hypot(ses[k_full], ses[k_inner])
        ok = sup_full <= (1.0 + SATURATION_TOL) * sup_inner + slack
        verdict = "bounded" if ok else "not-saturated"
    return ScanReport(pts, vals, ses, running, verdict, sup_full, sup_inner, cf, ub,
                      None, violations)


def decay_exponent(spec: ConvolutionSpec, small_w_grid: Optional[Sequence[float]] = None,
                   fit: bool = False) -> float:
    """Log-log slope of the two-factor weighted form at small |w| (tau = 1)."""
    if spec.m != 2:
        raise DomainError("decay exponent is defined for the two-factor form")
    grid = log_grid(1e-4, 1e-2, 9) if small_w_grid is None else np.asarray(small_w_grid, float)
    vals = theta_closed_form(spec.n, *spec.alphas, grid)
    x, y = np.log(grid), np.log(vals)
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    r2 = 1.0 - float(np.sum(resid**2)) / float(np.sum((y - y.mean()) ** 2))
    if r2 < 0.999:
        raise FitFailed(f"fit-failed: r^2 = {r2:.6f}")
    res = DecayFit(float(slope), float(icpt), r2)
    return res if fit else res.slope


# --------------------------------------------------------------------------
# reduction of the number of factors


@dataclass
class ReductionReport:
    w_grid: np.ndarray
    lhs: np.ndarray
    lhs_se: np.ndarray
    constant: float
    rhs_sup: float
    rhs_argsup: float
    identity_residual: float
    holds: np.ndarray
    advisories: list

    @property
    def bound(self) -> float:
        return self.constant * self.rhs_sup

    @property
    def verdict(self) -> str:
        return "holds" if bool(np.all(self.holds)) else "violated"


def _rhs_sup(n, alphas, grid, tol):
    """sup over |w|/sqrt(tau) of the homogeneous ell-fold form."""
    if len(alphas) == 2:
        vals = theta_closed_form(n, *alphas, grid)
    elif len(alphas) == 3:
        vals = np.array([delta3_reduced(n, *alphas, [d], tol=tol) for d in grid])
    else:
        raise DomainError("ell-fold sup available for ell = 2 and ell = 3")
    k = int(np.argmax(vals))
    return float(vals[k]), float(grid[k])


def reduction_check(spec: ConvolutionSpec, red: ReductionSpec,
                    w_grid: Sequence[float] = tuple(log_grid(0.1, 10.0, 9)),
                    n_samples: int = 200_000, seed: int = 0, tol: float = 1e-7,
                    rhs_grid: Optional[Sequence[float]] = None) -> ReductionReport:
    """Compare |w|^rho * (m-fold form) with C sup(|w|^sigma_ell * ell-fold form).

    C comes from int |x|^{-alpha_1} |w - x|^{-sigma_ell} dx = C |w|^{n - alpha_1 - sigma_ell}
    and n - alpha_1 - sigma_ell = -rho, so only ell = m - 1 gives a single
    Riesz composition.
    """
    if red.spec != spec:
        raise DomainError("reduction spec refers to a different form")
    rep = validate_spec(spec, "T1", ell=red.ell)
    advisories = [f"hypothesis {c}" for c in rep.failures]
    n, m = spec.n, spec.m
    if red.ell != m - 1:
        raise DomainError("constant implemented for ell = m - 1 (one composition)")
    a1 = spec.alphas[0]
    s_ell = red.sigma_ell
    for name, g in (("alpha_1", a1), ("sigma_ell", s_ell)):
        if not 0 < g < n:
            raise DomainError(f"Riesz exponent {name} = {g:g} outside (0, {n})")
    C = riesz_composition_constant(n, a1, s_ell)
    resid = (n - a1 - s_ell) - (-spec.rho)
    grid = (np.concatenate([log_grid(1e-4, 1e4, 801), 1.0 + np.linspace(-0.05, 0.05, 101)])
            if rhs_grid is None else np.asarray(rhs_grid, float))
    sup, arg = _rhs_sup(n, spec.alphas[m - red.ell:], np.sort(grid), tol)
    w_grid = np.asarray(w_grid, dtype=float)
    lhs = np.empty(len(w_grid))
    se = np.empty(len(w_grid))
    for i, wn in enumerate(w_grid):
        w = np.zeros(n)
        w[0] = wn
        est = estimate_form(spec.with_tau(1.0), w, 1.0, n_samples=n_samples, seed=seed + i,
                            rescale=True)
        lhs[i] = est.value * wn**spec.rho
        se[i] = est.std_error * wn**spec.rho
    holds = lhs <= C * sup + MC_SIGMAS * se
    return ReductionReport(w_grid, lhs, se, C, sup, arg, resid, holds, advisories)


# --------------------------------------------------------------------------
# tau homogeneity


@dataclass
class HomogeneityReport:
    sigma: float
    symbolic: float
    taus: tuple
    measured: tuple
    std_errors: tuple
    verdict: str


def tau_homogeneity(spec: ConvolutionSpec, sigma: Optional[float] = None,
                    taus: Sequence[float] = (0.25, 4.0), w0: Optional[Sequence[float]] = None,
                    n_samples: int = 1_000_000, seed: int = 0) -> HomogeneityReport:
    """Measure e in Form(w, tau) = tau^e Form(w/sqrt(tau), 1), Form = |w|^sigma * integral.

    No rescaling is applied: samples are drawn at the true scale so the
    measurement does not rely on the scaling law it tests.
    """
    sigma = spec.rho if sigma is None else float(sigma)
    e_sym = tau_exponent(spec, sigma)
    if w0 is None:
        w0 = np.zeros(spec.n)
        w0[0] = 2.0
    w0 = np.asarray(w0, dtype=float)
    d0 = float(np.linalg.norm(w0))

    def form(w, tau, s):
        est = estimate_form(spec.with_tau(tau), w, tau, n_samples=n_samples, seed=s)
        f = float(np.linalg.norm(w)) ** sigma
        return est.value * f, est.std_error * f

    base, base_se = form(w0, 1.0, seed)
    meas, errs = [], []
    worst = 0.0
    for k, tau in enumerate(taus):
        v, se = form(w0 * math.sqrt(tau), tau, seed + 1 + k)
        lt = math.log(tau)
        e = math.log(v / base) / lt
        err = math.hypot(se / v, base_se / base) / abs(lt)
        meas.append(e)
        errs.append(err)
        worst = max(worst, abs(e - e_sym) / err if err > 0 else math.inf)
    verdict = "ok" if worst <= 5.0 else "homogeneity-violated"
    return HomogeneityReport(sigma, e_sym, tuple(taus), tuple(meas), tuple(errs), verdict)


# --------------------------------------------------------------------------
# dual inequality


@dataclass(frozen=True)
class GaussianProfile:
    """g(w, tau) = exp(-s^2 |w|^2 - s^2 tau), the dilation g(s w, s^2 tau) of s = 1."""

    scale: float = 1.0

    def value(self, w, tau):
        s2 = self.scale**2
        return np.where(tau >= 0, np.exp(-s2 * np.sum(w * w, axis=-1) - s2 * tau), 0.0)

    def radial(self, r, tau):
        s2 = self.scale**2
        return np.exp(-s2 * r * r - s2 * tau)

    def sample(self, rng, size, n, p):
        s2 = self.scale**2
        sd = 1.0 / math.sqrt(2.0 * p * s2)
        w = rng.standard_normal((size, n)) * sd
        rate = p * s2
        tau = rng.exponential(1.0 / rate, size)
        log_q = (-0.5 * np.sum(w * w, axis=1) / sd**2 - n * math.log(sd * math.sqrt(2 * math.pi))
                 + math.log(rate) - rate * tau)
        return w, tau, log_q

    def dilate(self, s):
        return GaussianProfile(self.scale * s)


@dataclass(frozen=True)
class MollifierProfile:
    """Normalised bump of width eps at (w0, tau0), tau0 well above eps."""

    w0: tuple
    tau0: float
    width: float

    def _norm(self, n):
        return (math.sqrt(math.pi) * self.width) ** (n + 1)

    def value(self, w, tau):
        n = len(self.w0)
        dw = w - np.asarray(self.w0)
        e2 = self.width**2
        g = np.exp(-np.sum(dw * dw, axis=-1) / e2 - (tau - self.tau0) ** 2 / e2)
        return np.where(tau >= 0, g / self._norm(n), 0.0)

    def radial(self, r, tau):
        n = len(self.w0)
        e2 = self.width**2
        return np.exp(-r * r / e2 - (tau - self.tau0) ** 2 / e2) / self._norm(n)

    def sample(self, rng, size, n, p):
        sd = self.width / math.sqrt(2.0 * p)
        z = rng.standard_normal((size, n + 1)) * sd
        w = np.asarray(self.w0) + z[:, :n]
        tau = self.tau0 + z[:, n]
        log_q = (-0.5 * np.sum(z * z, axis=1) / sd**2
                 - (n + 1) * math.log(sd * math.sqrt(2 * math.pi)))
        return w, tau, log_q

    def dilate(self, s):
        raise DomainError("mollifier family is not dilated")


@dataclass(frozen=True)
class ZeroProfile:
    def value(self, w, tau):
        return np.zeros(np.shape(tau))

    def radial(self, r, tau):
        return np.zeros(np.broadcast(r, tau).shape)

    def sample(self, rng, size, n, p):
        return GaussianProfile().sample(rng, size, n, p)

    def dilate(self, s):
        return self


def _rhs_integral(g, n, p, tol=1e-10, tau_center=0.0):
    """int_0^inf dtau int_{R^n} |g|^p dw, with g radial about its own center."""
    area = sphere_area(n - 1)

    def inner(tau):
        f = lambda r, dl, dr: area * r ** (n - 1) * np.abs(g.radial(r, tau)) ** p
        return tanh_sinh(f, 0.0, math.inf, tol)

    def outer(t, dl, dr):
        return np.array([inner(float(x)) for x in np.atleast_1d(t)])

    pts = [0.0, tau_center, math.inf] if tau_center > 0 else [0.0, math.inf]
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += tanh_sinh(outer, lo, hi, tol, max_level=8)
    return total


def _fibre_draw(spec: ConvolutionSpec, g, p: float):
    """Sampler of |g(w, tau)|^p |w|^sigma F(w, tau) / q, F the unweighted fibre integral."""
    n = spec.n
    sigma = spec.rho

    def draw(rng, size):
        w, tau, log_q = g.sample(rng, size, n, p)
        gp = np.abs(g.value(w, tau)) ** p
        ok = (tau > 0) & (gp > 0)
        F, acc = fibre_estimates(spec, w, np.where(ok, tau, 1.0), rng)
        wn = np.linalg.norm(w, axis=1)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            vals = np.where(ok & acc, gp * F * wn**sigma * np.exp(-log_q), 0.0)
        return vals, int(np.sum(acc))

    return draw


@dataclass
class DualReport:
    p: float
    scales: tuple
    lhs: tuple  # LHS^{1/p}
    rhs: tuple  # RHS^{1/p}
    ratios: tuple
    ratio_errors: tuple
    warnings: tuple
    verdict: str


def dual_check(n: int, m: int, indices: EmbeddingIndices, g=None,
               scales: Sequence[float] = (0.25, 1.0, 4.0), n_samples: int = 400_000,
               seed: int = 0) -> DualReport:
    """LHS^{1/p} / RHS^{1/p} of the dual inequality for a dilation family of g.

    The integral over D is taken as an integral over (w, tau) of the fibre
    integrals: (w, tau) from a proposal matched to g, then one surface sample
    on the fibre, which is an importance sampler on R^{mn} restricted to D.
    """
    spec = ConvolutionSpec.uniform(n, m)
    rep = validate_spec(spec, "T4")
    if not rep.ok:
        raise DomainError("dual check needs uniform potentials with 3 <= m <= n+1: "
                          + ", ".join(rep.failures))
    g = GaussianProfile() if g is None else g
    p = indices.p
    lhs, rhs, ratios, errs, warns = [], [], [], [], []
    for k, s in enumerate(scales):
        gs = g.dilate(s)
        est = estimate_batches(_fibre_draw(spec, gs, p), n_samples, seed + k)
        R = _rhs_integral(gs, n, p)
        L = max(est.value, 0.0)
        lhs.append(L ** (1 / p))
        rhs.append(R ** (1 / p))
        warns.extend(est.warnings)
        if R > 0 and L > 0:
            ratios.append((L / R) ** (1 / p))
            errs.append(ratios[-1] * est.std_error / (p * L))
        else:
            ratios.append(math.nan)
            errs.append(math.nan)
    fin = [r for r in ratios if math.isfinite(r)]
    if len(fin) == len(ratios) and fin and max(fin) <= 2.0 * min(fin):
        verdict = "stable"
    elif not fin:
        verdict = "degenerate"
    else:
        verdict = "unstable"
    return DualReport(p, tuple(scales), tuple(lhs), tuple(rhs), tuple(ratios), tuple(errs),
                      tuple(warns), verdict)


@dataclass
class MollifierReport:
    widths: tuple
    estimates: tuple
    std_errors: tuple
    extrapolated: float
    extrapolated_se: float
    pointwise: McEstimate
    sigmas_apart: float


def mollifier_check(n: int, m: int, w0: Sequence[float], tau0: float,
                    widths: Sequence[float] = (0.2, 0.1), n_samples: int = 400_000,
                    seed: int = 0) -> MollifierReport:
    """With p = 1 and g a narrow bump, LHS tends to the weighted fibre integral at (w0, tau0).

    The smoothing bias is O(width^2), removed by Richardson extrapolation of
    two widths in ratio 2.
    """
    if len(widths) != 2 or abs(widths[0] / widths[1] - 2.0) > 1e-12:
        raise DomainError("need two widths in ratio 2")
    spec = ConvolutionSpec.uniform(n, m)
    w0 = np.asarray(w0, dtype=float)
    vals, ses = [], []
    for k, eps in enumerate(widths):
        g = MollifierProfile(tuple(w0), float(tau0), float(eps))
        est = estimate_batches(_fibre_draw(spec, g, 1.0), n_samples, seed + k)
        vals.append(est.value)
        ses.append(est.std_error)
    ext = (4.0 * vals[1] - vals[0]) / 3.0
    ext_se = math.hypot(4.0 * ses[1], ses[0]) / 3.0
    point = estimate_form(spec.with_tau(tau0), w0, tau0, n_samples=n_samples, seed=seed + 7,
                          rescale=True)
    point = point.scaled(float(np.linalg.norm(w0)) ** spec.rho)
    apart = abs(ext - point.value) / math.hypot(ext_se, point.std_error)
    return MollifierReport(tuple(widths), tuple(vals), tuple(ses), ext, ext_se, point, apart)

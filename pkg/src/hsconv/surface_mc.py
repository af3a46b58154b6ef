"""Monte Carlo estimation of delta-constrained surface integrals.

The measure is

    dnu = delta(tau + sum'|x_k|^2 - |x_m|^2) delta(w - sum x_k) dx_1 ... dx_m

where sum' runs over k < m.  The vector delta is removed by setting
x_m = w - sum_{k<m} x_k.  Of the remaining points, x_1 .. x_{m-2} are drawn
from a power-law proposal and x_{m-1} = r omega is written in polar form; the
scalar constraint is then linear in r, since the r^2 terms cancel:

    tau + S + r^2 - |v - r omega|^2 = tau + S - |v|^2 + 2 r (v . omega)

with v = w - sum_{k<m-1} x_k and S = sum_{k<m-1} |x_k|^2.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError
from .potentials import ConvolutionSpec
from .quadrature import sphere_area
from .specfun import gamma_ln

__all__ = [
    "BLOCK_SIZE",
    "GRAZING_CUTOFF",
    "RadialProposal",
    "Proposal",
    "SurfaceBatch",
    "SurfaceSample",
    "McEstimate",
    "sample_batch",
    "sample_surface",
    "estimate_form",
    "estimate_batches",
    "km_form",
    "fibre_estimates",
    "block_generator",
    "hill_tail_index",
]

log = logging.getLogger(__name__)

BLOCK_SIZE = 1 << 15
GRAZING_CUTOFF = 1e-14
# share of directions drawn from the power law in the cosine along v
GRAZING_MIX = 0.5
DEFENSIVE_SHARE = 0.25


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Independent counter-based stream for one block of samples."""
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)).jumped(block))


# --------------------------------------------------------------------------
# proposals


@dataclass(frozen=True)
class RadialProposal:
    """Radius density 1/2 (n-a) t^{n-1-a} on (0,1] plus 1/2 delta t^{-1-delta} on (1,inf)."""

    n: int
    inner: float
    tail: float = 1.0

    def __post_init__(self):
        if not self.inner < self.n:
            raise DomainError("inner exponent must be below n")
        if not self.tail > 0:
            raise DomainError("tail exponent must be positive")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        side = rng.random(size) < 0.5
        # 1 - u lies in (0, 1], so both branches stay finite
        v = 1.0 - u
        near = v ** (1.0 / (self.n - self.inner))
        far = v ** (-1.0 / self.tail)
        return np.where(side, near, far)

    def radial_pdf(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            near = 0.5 * (self.n - self.inner) * t ** (self.n - 1.0 - self.inner)
            far = 0.5 * self.tail * t ** (-1.0 - self.tail)
        return np.where(t <= 1.0, near, far)

    def log_density(self, t: np.ndarray) -> np.ndarray:
        """Log density in R^n at a point of norm t."""
        with np.errstate(divide="ignore"):
            return (np.log(self.radial_pdf(t)) - math.log(sphere_area(self.n - 1))
                    - (self.n - 1.0) * np.log(t))


@dataclass(frozen=True)
class Proposal:
    """Mixture of radial proposals around given centers (origin first)."""

    components: tuple  # ((center or None, RadialProposal, weight), ...)

    @classmethod
    def power_law(cls, n: int, alpha: float, tail: float = 1.0,
                  centers: Sequence = (), center_exponent: Optional[float] = None):
        base = RadialProposal(n, alpha, tail)
        if not centers:
            return cls(((None, base, 1.0),))
        share = DEFENSIVE_SHARE / len(centers)
        aux = RadialProposal(n, alpha if center_exponent is None else center_exponent, tail)
        comps = [(None, base, 1.0 - DEFENSIVE_SHARE)]
        comps += [(np.asarray(c, dtype=float), aux, share) for c in centers]
        return cls(tuple(comps))

    def sample(self, rng: np.random.Generator, size: int, n: int) -> np.ndarray:
        weights = np.array([c[2] for c in self.components])
        pick = rng.choice(len(weights), size=size, p=weights / weights.sum())
        x = _uniform_directions(rng, size, n)
        out = np.empty((size, n))
        for i, (center, rad, _) in enumerate(self.components):
            sel = pick == i
            k = int(sel.sum())
            if k == 0:
                continue
            t = rad.sample(rng, k)
            pts = x[sel] * t[:, None]
            if center is not None:
                pts = pts + (center if center.ndim == 1 else center[sel])
            out[sel] = pts
        return out

    def log_density(self, x: np.ndarray) -> np.ndarray:
        terms = []
        total = sum(c[2] for c in self.components)
        for center, rad, wgt in self.components:
            y = x if center is None else x - center
            t = np.linalg.norm(y, axis=-1)
            terms.append(math.log(wgt / total) + rad.log_density(t))
        return np.logaddexp.reduce(np.stack(terms), axis=0)


def _uniform_directions(rng, size, n):
    g = rng.standard_normal((size, n))
    nrm = np.linalg.norm(g, axis=1)
    # a zero Gaussian vector has probability zero; guard anyway
    nrm = np.where(nrm > 0, nrm, 1.0)
    return g / nrm[:, None]


def _cosine_density_uniform(c, n):
    """Density of |omega . e| on [0, 1] for omega uniform on S^{n-1}."""
    A = math.exp(gamma_ln(0.5 * n) - gamma_ln(0.5 * (n - 1)) - 0.5 * math.log(math.pi))
    with np.errstate(divide="ignore", invalid="ignore"):
        return 2.0 * A * (1.0 - c * c) ** (0.5 * (n - 3))


# --------------------------------------------------------------------------
# samples


@dataclass(frozen=True)
class SurfaceSample:
    """One accepted point of the constrained surface."""

    free_points: np.ndarray  # (m-2, n)
    direction: np.ndarray
    resolved_radius: float
    last_point: np.ndarray
    jacobian: float
    importance_weight: float

    @property
    def points(self) -> np.ndarray:
        return np.vstack([self.free_points, self.resolved_radius * self.direction,
                          self.last_point])


@dataclass
class SurfaceBatch:
    """Vectorised samples; rejected rows carry weight zero."""

    points: np.ndarray  # (N, m, n); row k is x_{k+1}
    radius: np.ndarray
    direction: np.ndarray
    jacobian: np.ndarray
    weight: np.ndarray  # importance weight, measure factors included
    accepted: np.ndarray


# Near the set |v|^2 = tau + S the cosine integrand has a 1/c plateau, which
# gives uniform cosines a log-divergent variance; any power c^-kappa cures it.
BASE_COSINE_POWER = 0.5


def _grazing_power(spec: ConvolutionSpec) -> float:
    # at large r the integrand behaves like |v . omega|^{alpha_{m-1} + alpha_m - n}
    e = spec.n - spec.alphas[-1] - spec.alphas[-2]
    return min(max(e, BASE_COSINE_POWER), 0.9)


def default_tail(spec: ConvolutionSpec) -> float:
    """Tail exponent for free points: decay of the integrand in |x_1|, clipped."""
    return min(max(spec.rho, 0.25), 1.0)


def sample_batch(spec: ConvolutionSpec, w, tau: float, size: int, rng: np.random.Generator,
                 proposals: Optional[Sequence[Proposal]] = None,
                 stratify: Optional[bool] = None) -> SurfaceBatch:
    """Draw ``size`` surface samples.

    ``w`` is a vector or a (size, n) array and ``tau`` a scalar or a (size,)
    array, so each row may sit on its own surface.
    """
    n, m = spec.n, spec.m
    if m < 2:
        raise DomainError("need m >= 2")
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise DomainError("tau must be nonnegative")
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != n:
        raise DomainError(f"w must live in R^{n}")
    if stratify is None:
        stratify = m == 2
    if proposals is None:
        tail = default_tail(spec)
        proposals = [Proposal.power_law(n, spec.alphas[k], tail) for k in range(m - 2)]
    if len(proposals) != m - 2:
        raise DomainError(f"need {m - 2} free-point proposals")

    log_q = np.zeros(size)
    free = np.empty((size, m - 2, n))
    for k, prop in enumerate(proposals):
        x = prop.sample(rng, size, n)
        free[:, k] = x
        log_q += prop.log_density(x)
    v = w - free.sum(axis=1)
    S = np.einsum("ijk,ijk->i", free, free)
    vnorm = np.linalg.norm(v, axis=1) if v.ndim == 2 else np.full(size, np.linalg.norm(v))
    v = np.broadcast_to(v, (size, n))
    num = vnorm * vnorm - tau - S
    vhat = v / np.where(vnorm > 0, vnorm, 1.0)[:, None]

    # direction: cosine along v from a uniform/power-law mixture
    kappa = _grazing_power(spec)
    mix = GRAZING_MIX
    omega_u = _uniform_directions(rng, size, n)
    c_unif = np.abs(np.einsum("ij,ij->i", omega_u, vhat))
    c_pow = (1.0 - rng.random(size)) ** (1.0 / (1.0 - kappa))
    use_pow = rng.random(size) < mix
    abs_c = np.where(use_pow, c_pow, c_unif)
    perp = omega_u - np.einsum("ij,ij->i", omega_u, vhat)[:, None] * vhat
    pn = np.linalg.norm(perp, axis=1)
    perp = perp / np.where(pn > 0, pn, 1.0)[:, None]
    if stratify:
        sign = np.sign(num)
    else:
        sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    c = sign * abs_c
    omega = c[:, None] * vhat + np.sqrt(np.clip(1.0 - abs_c * abs_c, 0.0, 1.0))[:, None] * perp
    g_unif = _cosine_density_uniform(abs_c, n)
    with np.errstate(divide="ignore"):
        q_c = (1.0 - mix) * g_unif + mix * (1.0 - kappa) * abs_c ** (-kappa)
        dir_ratio = np.where(q_c > 0, g_unif / q_c, 0.0)
    if stratify:
        dir_ratio = 0.5 * dir_ratio

    vdotw = vnorm * c
    graze = np.abs(vdotw) < GRAZING_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(graze, 0.0, num / (2.0 * np.where(graze, 1.0, vdotw)))
    accepted = (~graze) & (r > 0) & np.isfinite(r) & (num != 0)
    r = np.where(accepted, r, 1.0)
    xm1 = r[:, None] * omega
    xm = v - xm1
    jac = 1.0 / (2.0 * np.abs(np.where(accepted, vdotw, 1.0)))
    with np.errstate(over="ignore"):
        weight = (sphere_area(n - 1) * r ** (n - 1) * jac * dir_ratio * np.exp(-log_q))
    weight = np.where(accepted, weight, 0.0)
    pts = np.concatenate([free, xm1[:, None], xm[:, None]], axis=1)
    return SurfaceBatch(pts, r, omega, jac, weight, accepted)


def sample_surface(spec: ConvolutionSpec, w, tau: float, seed: int) -> Optional[SurfaceSample]:
    """One draw; ``None`` when the ray misses the surface."""
    b = sample_batch(spec, w, tau, 1, block_generator(seed, 0))
    if not b.accepted[0]:
        return None
    m = spec.m
    return SurfaceSample(
        free_points=b.points[0, : m - 2].copy(),
        direction=b.direction[0].copy(),
        resolved_radius=float(b.radius[0]),
        last_point=b.points[0, m - 1].copy(),
        jacobian=float(b.jacobian[0]),
        importance_weight=float(b.weight[0]),
    )


# --------------------------------------------------------------------------
# estimation


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n_samples: int
    acceptance: float
    seed: int
    tail_index: float = math.inf
    warnings: tuple = ()

    @property
    def rel_error(self) -> float:
        return self.std_error / abs(self.value) if self.value else math.inf

    def scaled(self, factor: float) -> "McEstimate":
        return McEstimate(self.value * factor, self.std_error * abs(factor), self.n_samples,
                          self.acceptance, self.seed, self.tail_index, self.warnings)


@dataclass
class _Moments:
    count: int
    mean: float
    m2: float
    accepted: int
    top: np.ndarray = field(default_factory=lambda: np.empty(0))

    @staticmethod
    def of(values: np.ndarray, accepted: int, keep: int) -> "_Moments":
        mu = float(np.mean(values))
        a = np.abs(values)
        top = np.sort(a)[-keep:] if keep else np.empty(0)
        return _Moments(len(values), mu, float(np.sum((values - mu) ** 2)), accepted, top)

    def merge(self, other: "_Moments", keep: int) -> "_Moments":
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        top = np.sort(np.concatenate([self.top, other.top]))[-keep:]
        return _Moments(n, mean, m2, self.accepted + other.accepted, top)


def _pairwise(parts, keep):
    while len(parts) > 1:
        nxt = [parts[i].merge(parts[i + 1], keep) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def hill_tail_index(top: np.ndarray) -> float:
    """Hill estimate of the Pareto index from the largest order statistics."""
    top = np.sort(top[top > 0])
    if len(top) < 10:
        return math.inf
    ref = top[0]
    logs = np.log(top[1:] / ref)
    s = float(np.mean(logs))
    return math.inf if s <= 0 else 1.0 / s


def _workers():
    try:
        return max(1, int(os.environ.get("HSCONV_THREADS", "1")))
    except ValueError:
        return 1


def estimate_batches(draw: Callable[[np.random.Generator, int], tuple], n_samples: int,
                     seed: int, workers: Optional[int] = None) -> McEstimate:
    """Run ``draw(rng, size) -> (values, n_accepted)`` over fixed-size blocks.

    Blocks are cut at BLOCK_SIZE regardless of the worker count and reduced
    pairwise in block order, so the result depends on (seed, n_samples) only.
    """
    if n_samples < 2:
        raise DomainError("need at least two samples")
    sizes = [BLOCK_SIZE] * (n_samples // BLOCK_SIZE)
    if n_samples % BLOCK_SIZE:
        sizes.append(n_samples % BLOCK_SIZE)
    keep = int(min(1000, max(10, math.sqrt(n_samples))))

    def one(j):
        vals, acc = draw(block_generator(seed, j), sizes[j])
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (sizes[j],):
            raise DomainError("draw must return one value per sample")
        return _Moments.of(vals, int(acc), keep)

    workers = _workers() if workers is None else workers
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(one, range(len(sizes))))
    else:
        parts = [one(j) for j in range(len(sizes))]
    tot = _pairwise(parts, keep)
    var = tot.m2 / (tot.count - 1)
    se = math.sqrt(var / tot.count)
    warnings = []
    if not (math.isfinite(tot.mean) and math.isfinite(se)):
        warnings.append("non-finite estimate")
    if tot.accepted == 0:
        warnings.append("no accepted samples: degenerate surface for the polar resolution")
    tail = hill_tail_index(tot.top)
    if tail < 2.0:
        warnings.append(f"heavy-tail warning: weight tail index ~{tail:.2f} (< 2, variance suspect)")
        log.warning("heavy-tailed importance weights, tail index %.2f", tail)
    return McEstimate(tot.mean, se, tot.count, tot.accepted / tot.count, int(seed),
                      tail, tuple(warnings))


def _integrand_weights(spec, pts):
    logs = np.zeros(pts.shape[0])
    for k, a in enumerate(spec.alphas):
        with np.errstate(divide="ignore"):
            logs -= a * np.log(np.linalg.norm(pts[:, k], axis=1))
    return np.exp(logs)


def fibre_estimates(spec: ConvolutionSpec, w: np.ndarray, tau: np.ndarray,
                    rng: np.random.Generator) -> tuple:
    """One-sample unbiased estimates of the unweighted form at each row (w_i, tau_i).

    Each row is mapped to max(|w|, sqrt(tau)) = 1 before sampling and scaled
    back with the homogeneity degree (m-1) n - alpha - 2.
    Returns (values, accepted).
    """
    w = np.asarray(w, dtype=float)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (w.shape[0],))
    L = np.maximum(np.linalg.norm(w, axis=1), np.sqrt(tau))
    L = np.where(L > 0, L, 1.0)
    b = sample_batch(spec, w / L[:, None], tau / L**2, w.shape[0], rng)
    deg = (spec.m - 1) * spec.n - spec.alpha_sum - 2.0
    vals = b.weight * _integrand_weights(spec, b.points) * L**deg
    return np.where(b.accepted, vals, 0.0), b.accepted


def estimate_form(spec: ConvolutionSpec, w, tau: Optional[float] = None,
                  weight_exponents: Optional[Sequence[float]] = None,
                  extra_factor: Optional[Callable] = None, n_samples: int = 100_000,
                  seed: int = 0, rescale: bool = False, workers: Optional[int] = None,
                  proposals: Optional[Sequence[Proposal]] = None) -> McEstimate:
    """Estimate the integral of prod |x_k|^{-alpha_k} * extra_factor over dnu.

    ``extra_factor(points)`` receives an (N, m, n) array in the original
    scale.  With ``rescale`` the problem is mapped to max(|w|, sqrt(tau)) = 1
    first; the unweighted integral is homogeneous of degree
    (m-1) n - alpha - 2 under x -> s x, tau -> s^2 tau.
    """
    tau = spec.tau if tau is None else float(tau)
    if weight_exponents is not None:
        spec = ConvolutionSpec(spec.m, spec.n, tuple(weight_exponents), tau)
    w = np.asarray(w, dtype=float)
    scale = 1.0
    if rescale:
        scale = max(float(np.linalg.norm(w)), math.sqrt(tau))
        if not scale > 0:
            scale = 1.0
    ws, ts = w / scale, tau / scale**2

    def draw(rng, size):
        b = sample_batch(spec, ws, ts, size, rng, proposals=proposals)
        vals = b.weight * _integrand_weights(spec, b.points)
        if extra_factor is not None:
            ef = np.asarray(extra_factor(b.points * scale), dtype=float)
            vals = np.where(b.accepted, vals * ef, 0.0)
        return vals, int(b.accepted.sum())

    est = estimate_batches(draw, n_samples, seed, workers)
    if scale != 1.0:
        deg = (spec.m - 1) * spec.n - spec.alpha_sum - 2.0
        est = est.scaled(scale**deg)
    return est


def km_form(n: int, m: int, w, tau: float, n_samples: int = 100_000, seed: int = 0,
            workers: Optional[int] = None, rescale: bool = True) -> McEstimate:
    """Uniform-potential form times its prefactor (|w|^2 when m = n, else |w|^{n+2-m})."""
    spec = ConvolutionSpec.uniform(n, m, tau)
    w = np.asarray(w, dtype=float)
    d = float(np.linalg.norm(w))
    sigma = 2.0 + n - m
    est = estimate_form(spec, w, tau, n_samples=n_samples, seed=seed, rescale=rescale,
                        workers=workers)
    return est.scaled(d**sigma)

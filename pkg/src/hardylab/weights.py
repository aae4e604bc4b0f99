"""The weight family mu and numerical audits of the hypotheses on it.

    mu(x) = exp(-delta * sum_j |x - a_j|^m) / prod_j |x - a_j|^gamma

Hypotheses are "there exist constants" statements. Here the constants
(k1, k2) are inputs and the audits check them on dense sample sets; the
``fit_k1_*`` helpers return the smallest k1 that passes at a fixed k2.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .errors import InconclusiveError, PreconditionError, SingularPointError
from .geometry import PoleConfiguration

H1, H2, H2PRIME, H3, DENSITY = "H1", "H2", "H2prime", "H3", "DensityCond"


@dataclass(frozen=True, eq=False)
class WeightSpec:
    gamma: float
    delta: float
    m: float
    k1: float
    k2: Optional[float]
    poles: PoleConfiguration
    # user-supplied weight: density(x) -> (M,), log_gradient(x) -> (M, N)
    density: Optional[Callable] = None
    log_gradient: Optional[Callable] = None

    def __post_init__(self):
        N = self.poles.dimension
        if self.density is None:
            if self.delta < 0:
                raise PreconditionError("delta must be nonnegative")
            if self.m > 2:
                raise PreconditionError("m must satisfy m <= 2")
            # local integrability of mu itself; the Hardy window gamma < N-2
            # is enforced through k2 wherever k2 is used
            if not (-N < self.gamma < N):
                raise PreconditionError(f"gamma must lie in (-N, N) = ({-N}, {N})")
        if self.k2 is not None and not self.k2 > 2 - N:
            raise PreconditionError("violates k2 > 2-N")

    @property
    def in_hardy_window(self):
        N = self.poles.dimension
        return self.density is None and -N < self.gamma < N - 2

    def require_k2(self) -> float:
        if self.k2 is None:
            raise PreconditionError("k2 must be provided for this weight")
        return self.k2

    @property
    def is_lebesgue(self):
        return self.density is None and self.gamma == 0 and self.delta == 0

    def to_dict(self):
        return {"gamma": self.gamma, "delta": self.delta, "m": self.m,
                "k1": self.k1, "k2": self.k2, "custom": self.density is not None}


def lebesgue(config: PoleConfiguration) -> WeightSpec:
    return WeightSpec(0.0, 0.0, 2.0, 0.0, 0.0, config)


def family(config, gamma, delta=0.0, m=2.0, k1=0.0, k2="auto") -> WeightSpec:
    """Built-in family.

    By default k2 = -gamma, the value matching the critical integrability
    exponent; it is left unset when -gamma <= 2-N (gamma outside the
    Hardy window), so pure weight evaluations still work.
    """
    if k2 == "auto":
        N = config.dimension
        k2 = -float(gamma) if -gamma > 2 - N else None
    return WeightSpec(float(gamma), float(delta), float(m), float(k1),
                      None if k2 is None else float(k2), config)


def _sq_dist(spec, x):
    diff = x[:, None, :] - spec.poles.poles[None, :, :]
    return diff, np.einsum("mnd,mnd->mn", diff, diff)


def _power(d2, m):
    # |x-a|^m from the squared distance; exact for m == 2
    return d2 if m == 2 else d2 ** (0.5 * m)


def eval_weight(spec: WeightSpec, x):
    """mu at points x of shape (M, N) or a single point (N,)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if spec.density is not None:
        out = np.asarray(spec.density(x), dtype=float)
        return float(out[0]) if single else out
    _, d2 = _sq_dist(spec, x)
    at_pole = (d2 == 0).any(axis=1)
    if spec.gamma > 0 and at_pole.any():
        raise SingularPointError("singular point", x[np.argmax(at_pole)])
    with np.errstate(divide="ignore"):
        decay = np.exp(-spec.delta * _power(d2, spec.m).sum(axis=1)) if spec.delta else np.ones(len(x))
        if spec.gamma == 0:
            out = decay
        else:
            out = decay / np.prod(d2 ** (0.5 * spec.gamma), axis=1)
    return float(out[0]) if single else out


def eval_log_gradient(spec: WeightSpec, x):
    """grad(mu)/mu = sum_j (-gamma - delta m |x-a_j|^m) (x - a_j)/|x - a_j|^2."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if spec.log_gradient is not None:
        out = np.asarray(spec.log_gradient(x), dtype=float)
        return out[0] if single else out
    diff, d2 = _sq_dist(spec, x)
    if (d2 == 0).any():
        raise SingularPointError("singular point", x[np.argmax((d2 == 0).any(axis=1))])
    coef = -spec.gamma - (spec.delta * spec.m * _power(d2, spec.m) if spec.delta else 0.0)
    out = np.einsum("mn,mnd->md", coef / d2, diff)
    return out[0] if single else out


# --- sampling ----------------------------------------------------------------


def radial_samples(center, r_outer, r_inner, shells=48, directions=64, seed=0):
    """Points on geometrically spaced spheres between r_inner and r_outer."""
    N = len(center)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((directions, N))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # the two axis directions along e_1 are where pole interactions peak
    axis = np.zeros((2, N))
    axis[0, 0], axis[1, 0] = 1.0, -1.0
    dirs = np.vstack([axis, dirs])
    radii = np.geomspace(r_outer, r_inner, shells)
    return (center + radii[:, None, None] * dirs[None, :, :]).reshape(-1, N)


def hypothesis_samples(config: PoleConfiguration, box_half_width, count=2 ** 14, seed=0,
                       inner_ratio=1e-3, graded_ratio=1e-6):
    """Box samples minus small pole balls plus graded radial samples at each pole."""
    N = config.dimension
    m = int(np.ceil(np.log2(count)))
    pts = qmc.Sobol(N, scramble=True, seed=seed).random_base2(m)
    pts = box_half_width * (2.0 * pts - 1.0)
    r_excl = inner_ratio * config.r0
    pts = pts[(config.distances(pts) > r_excl).all(axis=1)]
    graded = [radial_samples(a, config.r0, graded_ratio * config.r0, seed=seed + i + 1)
              for i, a in enumerate(config.poles)]
    return np.vstack([pts] + graded)


def ball_samples(config: PoleConfiguration, pole_index, shells=48, directions=64, seed=0,
                 inner_ratio=1e-6):
    a = config.poles[pole_index]
    return radial_samples(a, config.r0 * (1 - 1e-9), inner_ratio * config.r0, shells, directions, seed)


# --- hypothesis audits ----------------------------------------------------


@dataclass
class HypothesisReport:
    hypothesis_id: str
    sample_count: int
    min_slack: float
    witness_point: list
    verdict: str
    tolerance: float = 0.0
    details: dict | None = None

    def as_dict(self):
        return dict(self.__dict__)


def _verdict(min_rel_slack, tol):
    return "satisfied" if min_rel_slack >= -tol else "violated"


def _h2_sides(spec, beta, x):
    """Both sides of H2 per unit weight: (lhs, rhs without k1)."""
    diff, d2 = _sq_dist(spec, x)
    g = eval_log_gradient(spec, x)
    field = np.einsum("mnd,mn->md", diff, 1.0 / d2)
    lhs = beta * np.einsum("md,md->m", field, g)
    pot = spec.require_k2() * beta * (1.0 / d2).sum(axis=1)
    return lhs, pot


def check_H2(spec: WeightSpec, beta: float, samples, tol: float = 1e-9) -> HypothesisReport:
    """Audit beta sum_i (x-a_i)/|x-a_i|^2 . grad mu >= (-k1 + sum_i k2 beta/|x-a_i|^2) mu.

    Slack is reported per unit weight (both sides divided by mu > 0, which
    keeps the sign). The verdict uses the slack relative to the magnitude
    of the two sides, so rounding near the poles is not read as a violation.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0 or samples.size == 0:
        raise PreconditionError("no samples")
    if beta <= 0:
        raise PreconditionError("beta must be positive")
    lhs, pot = _h2_sides(spec, beta, samples)
    rhs = -spec.k1 + pot
    slack = lhs - rhs
    rel = slack / (1.0 + np.abs(lhs) + np.abs(rhs))
    i = int(np.argmin(rel))
    return HypothesisReport(H2, len(samples), float(np.min(slack)), samples[i].tolist(),
                            _verdict(rel[i], tol), tol,
                            {"beta": beta, "min_relative_slack": float(rel[i]),
                             "k1": spec.k1, "k2": spec.k2})


def fit_k1_H2(spec: WeightSpec, beta: float, samples) -> float:
    """Smallest k1 for which the H2 audit passes on ``samples`` (fixed k2)."""
    lhs, pot = _h2_sides(spec, beta, np.atleast_2d(samples))
    return float(np.max(pot - lhs))


def _h2prime_sides(spec, alpha, eps, x, i):
    a = spec.poles.poles[i]
    diff = x - a
    r2 = np.einsum("md,md->m", diff, diff)
    g = eval_log_gradient(spec, x)
    lhs = alpha * np.einsum("md,md->m", diff, g) / (eps + r2)
    pot = spec.require_k2() * alpha / (eps + r2)
    return lhs, pot


def check_H2prime(spec: WeightSpec, alpha: float, eps_list, samples=None,
                  tol: float = 1e-9) -> HypothesisReport:
    """Audit alpha (x-a_i)/(eps+|x-a_i|^2) . grad mu <= (k1 + k2 alpha/(eps+|x-a_i|^2)) mu.

    ``samples`` is a list with one point set per ball B(a_i, r0); by default
    graded radial samples are used. Slack is rhs - lhs per unit weight.
    """
    if alpha >= 0:
        raise PreconditionError("alpha must be negative")
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list):
        raise PreconditionError("eps values must be positive")
    cfg = spec.poles
    if samples is None:
        samples = [ball_samples(cfg, i, seed=i) for i in range(cfg.n)]
    if sum(len(s) for s in samples) == 0:
        raise PreconditionError("no samples")
    worst = (np.inf, np.inf, None, None)
    count = 0
    for i, pts in enumerate(samples):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.size == 0:
            continue
        for eps in eps_list:
            lhs, pot = _h2prime_sides(spec, alpha, eps, pts, i)
            rhs = spec.k1 + pot
            slack = rhs - lhs
            rel = slack / (1.0 + np.abs(lhs) + np.abs(rhs))
            j = int(np.argmin(rel))
            count += len(pts)
            if rel[j] < worst[0]:
                worst = (rel[j], float(np.min(slack)), pts[j], eps)
    rel, slack, point, eps = worst
    return HypothesisReport(H2PRIME, count, slack, np.asarray(point).tolist(),
                            _verdict(rel, tol), tol,
                            {"alpha": alpha, "eps_list": eps_list, "worst_eps": eps,
                             "min_relative_slack": float(rel), "k1": spec.k1, "k2": spec.k2})


def fit_k1_H2prime(spec: WeightSpec, alpha: float, eps_list, samples=None) -> float:
    cfg = spec.poles
    if samples is None:
        samples = [ball_samples(cfg, i, seed=i) for i in range(cfg.n)]
    need = -np.inf
    for i, pts in enumerate(samples):
        for eps in eps_list:
            lhs, pot = _h2prime_sides(spec, alpha, float(eps), np.atleast_2d(pts), i)
            need = max(need, float(np.max(lhs - pot)))
    return need


def with_constants(spec: WeightSpec, k1=None, k2=None) -> WeightSpec:
    return replace(spec, k1=spec.k1 if k1 is None else float(k1),
                   k2=spec.k2 if k2 is None else float(k2))


# --- local integrability near a pole ---------------------------------------


def _sphere_rule(N, order):
    """Product rule on S^{N-1} in hyperspherical angles."""
    x, w = np.polynomial.legendre.leggauss(order)
    th = 0.5 * np.pi * (x + 1.0)
    wth = 0.5 * np.pi * w
    nphi = 2 * order
    phi = 2 * np.pi * np.arange(nphi) / nphi
    wphi = np.full(nphi, 2 * np.pi / nphi)
    # start from the circle and lift through N-2 polar angles
    pts = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    wts = wphi
    for k in range(N - 2):
        power = k + 1
        s, c = np.sin(th), np.cos(th)
        pts = np.concatenate([
            np.einsum("a,bd->abd", s, pts).reshape(-1, pts.shape[1]),
            np.repeat(c, len(wts))[:, None],
        ], axis=1)
        wts = np.outer(wth * s ** power, wts).ravel()
    return pts, wts


@dataclass
class BallIntegral:
    value: float
    cutoffs: np.ndarray
    cumulative: np.ndarray
    divergent: bool
    growth: float


def ball_integral(spec: WeightSpec, f, pole_index, radius, cutoffs=None, radial_order=8,
                  angular_order=12, growth_threshold=0.05, weighted=True) -> BallIntegral:
    """Integral of f dmu over B(a_i, radius) on nested shells.

    ``cutoffs`` are decreasing inner radii; the cumulative integral over
    {cutoff_k <= |x - a_i| <= radius} is recorded for each one. The integral
    is flagged divergent when the last halving of the cutoff raises it by
    more than ``growth_threshold``.
    """
    cfg = spec.poles
    a = cfg.poles[pole_index]
    N = cfg.dimension
    if cutoffs is None:
        cutoffs = radius * 0.5 ** np.arange(1, 31)
    cutoffs = np.asarray(cutoffs, dtype=float)
    if np.any(np.diff(cutoffs) >= 0) or cutoffs[0] >= radius or cutoffs[-1] <= 0:
        raise PreconditionError("cutoffs must decrease strictly inside (0, radius)")
    dirs, wdir = _sphere_rule(N, angular_order)
    gx, gw = np.polynomial.legendre.leggauss(radial_order)
    edges = np.concatenate([[radius], cutoffs])
    shells = []
    for hi, lo in zip(edges[:-1], edges[1:]):
        # log-spaced radial nodes keep the rule accurate for power laws
        s = 0.5 * (np.log(hi) + np.log(lo)) + 0.5 * (np.log(hi) - np.log(lo)) * gx
        r = np.exp(s)
        wr = 0.5 * (np.log(hi) - np.log(lo)) * gw * r ** N  # dr = r ds, times r^{N-1}
        pts = a + (r[:, None, None] * dirs[None, :, :]).reshape(-1, N)
        w = np.outer(wr, wdir).ravel()
        vals = np.asarray(f(pts), dtype=float)
        if weighted:
            vals = vals * eval_weight(spec, pts)
        shells.append(float(np.sum(vals * w)))
    cumulative = np.cumsum(shells)
    prev = cumulative[-2] if len(cumulative) > 1 else 0.0
    growth = (cumulative[-1] - prev) / abs(prev) if prev != 0 else np.inf
    return BallIntegral(float(cumulative[-1]), cutoffs, cumulative,
                        bool(growth > growth_threshold), float(growth))


def estimate_critical_exponent(spec: WeightSpec, pole_index=0, radii=None, lo=0.0, hi=None,
                               tol=1e-3) -> float:
    """sup{d : |x - a_i|^{-d} is locally dmu-integrable}, by bisection on d.

    Integrals run over B(a_i, min(1, r0)) with the inner cutoffs ``radii``;
    divergence means the last halving of the cutoff grew the value by >5%.
    """
    cfg = spec.poles
    R = min(1.0, cfg.r0)
    if radii is None:
        radii = R * 0.5 ** np.arange(1, 31)
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) >= 0):
        raise PreconditionError("radii must be strictly decreasing")
    if radii[0] >= R:
        radii = radii[radii < R]
    a = cfg.poles[pole_index]
    hi = 2.0 * cfg.dimension if hi is None else hi

    def divergent(d):
        def f(x):
            return np.sum((x - a) ** 2, axis=1) ** (-0.5 * d)
        return ball_integral(spec, f, pole_index, R, radii).divergent

    if divergent(lo) or not divergent(hi):
        raise InconclusiveError("inconclusive: bisection failed to bracket the critical exponent")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if divergent(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def check_density_condition(spec: WeightSpec, p: float, pole_index=0, deltas=None,
                            exponent_tol=0.05) -> HypothesisReport:
    """Audit delta^{-p} mu(B(a_i, delta)) -> 0 via its fitted power-law exponent."""
    cfg = spec.poles
    N = cfg.dimension
    if not (1 <= p < N):
        raise PreconditionError("p must lie in [1, N)")
    if deltas is None:
        deltas = min(1.0, cfg.r0) * 0.5 ** np.arange(1, 13)
    deltas = np.asarray(deltas, dtype=float)
    if np.any(np.diff(deltas) >= 0):
        raise PreconditionError("deltas must be strictly decreasing")
    a = cfg.poles[pole_index]
    q = []
    for d in deltas:
        cut = d * 0.5 ** np.arange(1, 41)
        bi = ball_integral(spec, lambda x: np.ones(len(x)), pole_index, d, cut)
        q.append(bi.value / d ** p)
    q = np.asarray(q)
    slope = float(np.polyfit(np.log(deltas), np.log(q), 1)[0])
    decreasing = bool(np.all(np.diff(q) < 0))
    if slope > exponent_tol:
        verdict = "satisfied" if decreasing else "inconclusive"
    else:
        verdict = "violated"
    witness = (a + np.eye(N)[0] * deltas[-1]).tolist()
    return HypothesisReport(DENSITY, len(deltas), slope, witness, verdict, exponent_tol,
                            {"p": p, "deltas": deltas.tolist(), "q": q.tolist(),
                             "fitted_exponent": slope})


# --- constants of the worked example -------------------------------------------


def admissibility_constants(spec: WeightSpec, rho: float, alpha: float = -1.0) -> dict:
    """Constants c_rho, c1..c4 and the two displayed gamma bounds.

    Sums over j != k are taken for each pole k; the reported scalar is the
    largest over k (c_rho, c4) or the most negative (c1, c2).
    """
    cfg = spec.poles
    if rho <= 0:
        raise PreconditionError("invalid radius")
    if rho > cfg.r0 * (1 + 1e-12):
        raise PreconditionError("rho must not exceed r0")
    n, r0, m, g, dm = cfg.n, cfg.r0, spec.m, spec.gamma, spec.delta * spec.m
    diff = cfg.poles[:, None, :] - cfg.poles[None, :, :]
    d = np.sqrt((diff ** 2).sum(-1))
    off = ~np.eye(n, dtype=bool)
    per_k_rho = np.array([np.sum(((rho + d[k]) ** m * (1 - d[k] ** 2 / (rho + d[k]) ** 2))[off[k]])
                          for k in range(n)])
    if g >= 0:
        per_k_c1 = np.array([-0.5 * np.sum((d[k] ** 2 / (r0 + d[k]) ** 2)[off[k]]) for k in range(n)])
    else:
        per_k_c1 = np.array([-0.5 * np.sum((d[k] ** 2 / r0 ** 2)[off[k]]) for k in range(n)])
    c_rho = float(per_k_rho.max()) if n > 1 else 0.0
    c1 = float(per_k_c1.min()) if n > 1 else 0.0
    c2 = 0.0 if g > 0 else c1
    if g > 0:
        c3 = alpha * g / 2 * (n - 1) / r0 ** 2 + alpha * dm / 2 * (n - 1) / r0 ** (2 - m)
    else:
        c3 = alpha * dm / 2 * (n - 1) / r0 ** (2 - m)
    c4 = 1.0 + c_rho / (2 * rho ** m)
    base = 1 + (n - 1) / 2
    return {
        "rho": rho,
        "alpha": alpha,
        "c_rho": c_rho,
        "c1": c1,
        "c2": c2,
        "c3": c3,
        "c4": c4,
        "c_rho_per_pole": per_k_rho.tolist(),
        "gamma_upper_bound": None if spec.k2 is None else -spec.k2 / base,
        "gamma_lower_bound": None if spec.k2 is None else -(spec.k2 + dm / 2 * c_rho) / (base + c1),
    }


def sufficient_k2(gamma: float, n: int) -> float:
    """k2 from the nonnegative-gamma bound gamma <= -k2 / (1 + (n-1)/2)."""
    return -gamma * (1 + (n - 1) / 2)

"""Pole-graded cubature against dmu on a truncation box.

Far from the poles a composite Gauss-Legendre rule (order 5 per axis) is
used on a tensor grid whose breakpoints include the faces of a small cube
around every pole. Each pole cube is split into 2N pyramids with apex at
the pole; in the pyramid variable t (sup-norm distance over the cube half
side) the rule uses dyadic shells down to the inner cutoff, so power-law
singularities are integrated with geometric accuracy.

A second, coarser rule (half the panels, shells merged in pairs) is built
alongside; the difference of the two plus the size of the innermost shell
is the reported error estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Optional, Union

import numpy as np

from .errors import PreconditionError, SingularPointError
from .geometry import PoleConfiguration
from .weights import WeightSpec, ball_integral, eval_weight, lebesgue

ORDER = 5


def _gauss(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _composite_1d(breaks, order=ORDER):
    """Nodes and weights of composite Gauss-Legendre on the given breakpoints."""
    x, w = _gauss(order)
    lo, hi = breaks[:-1, None], breaks[1:, None]
    nodes = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
    weights = 0.5 * (hi - lo) * w
    cell = np.repeat(np.arange(len(breaks) - 1), order)
    return nodes.ravel(), weights.ravel(), cell


def _axis_breaks(L, panels, config, half_side):
    base = np.linspace(-L, L, panels + 1)
    faces = [config.poles[:, k, None] + np.array([-half_side, half_side]) for k in range(config.dimension)]
    out = []
    for k in range(config.dimension):
        b = np.unique(np.concatenate([base, faces[k].ravel()]))
        b = b[(b >= -L) & (b <= L)]
        # merge breakpoints closer than round-off
        keep = np.concatenate([[True], np.diff(b) > 1e-12 * L])
        out.append(b[keep])
    return out


def _far_field(L, panels, config, half_side, order=ORDER):
    N = config.dimension
    breaks = _axis_breaks(L, panels, config, half_side)
    rules = [_composite_1d(b, order) for b in breaks]
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.ones(1)
    for r in rules:
        wts = np.multiply.outer(wts, r[1])
    wts = wts.ravel()
    # a node lies in a pole cube iff its cell does; test the cell centres
    centres = []
    for b, r in zip(breaks, rules):
        centres.append(0.5 * (b[r[2]] + b[r[2] + 1]))
    cg = np.meshgrid(*centres, indexing="ij")
    cpts = np.stack([g.ravel() for g in cg], axis=1)
    inside = np.zeros(len(pts), dtype=bool)
    for a in config.poles:
        inside |= np.all(np.abs(cpts - a) < half_side, axis=1)
    # outermost layer of panels, used for the tail estimate
    edge = np.zeros(len(pts), dtype=bool)
    for k, b in enumerate(breaks):
        edge |= (cpts[:, k] < b[1]) | (cpts[:, k] > b[-2])
    keep = ~inside
    return pts[keep], wts[keep], edge[keep]


def _pyramid_nodes(N, t_edges, face_panels, order=ORDER):
    """Reference nodes in the unit cube [-1,1]^N graded toward the origin.

    Returns points y with |y|_inf = t and weights including t^{N-1}.
    """
    gx, gw = _gauss(order)
    # radial nodes per shell
    lo, hi = t_edges[1:, None], t_edges[:-1, None]
    tn = (0.5 * (lo + hi) + 0.5 * (hi - lo) * gx).ravel()
    tw = (0.5 * (hi - lo) * gw).ravel() * tn ** (N - 1)
    shell = np.repeat(np.arange(len(t_edges) - 1), order)
    fb = np.linspace(-1.0, 1.0, face_panels + 1)
    un, uw, _ = _composite_1d(fb, order)
    fg = np.meshgrid(*([un] * (N - 1)), indexing="ij")
    face_pts = np.stack([g.ravel() for g in fg], axis=1) if N > 1 else np.zeros((1, 0))
    face_w = np.ones(1)
    for _ in range(N - 1):
        face_w = np.multiply.outer(face_w, uw)
    face_w = face_w.ravel()
    pts, wts, shells = [], [], []
    for k in range(N):
        for sign in (-1.0, 1.0):
            base = np.empty((len(face_pts), N))
            base[:, k] = sign
            base[:, [j for j in range(N) if j != k]] = face_pts
            pts.append((tn[:, None, None] * base[None, :, :]).reshape(-1, N))
            wts.append(np.outer(tw, face_w).ravel())
            shells.append(np.repeat(shell, len(face_pts)))
    return np.vstack(pts), np.concatenate(wts), np.concatenate(shells)


@dataclass(eq=False)
class QuadratureRule:
    """Nodes and positive weights on [-L, L]^N, graded toward the poles.

    ``points``/``weights`` form the fine rule. ``all_points`` stacks the fine
    and coarse nodes; ``fine_weights``/``coarse_weights`` are aligned with
    it (zeros where a node does not belong to a rule).
    """

    config: PoleConfiguration
    L: float
    panels_per_axis: int
    shells_per_pole: int
    r_min_ratio: float
    half_side: float
    all_points: np.ndarray
    fine_weights: np.ndarray
    coarse_weights: np.ndarray
    innermost: np.ndarray  # nodes of the innermost fine shell
    edge: np.ndarray  # nodes of the outermost fine panel layer
    error_estimate: float = 0.0
    _mu_cache: dict = field(default_factory=dict, repr=False)

    @property
    def fine_mask(self):
        return self.fine_weights > 0

    @property
    def points(self):
        return self.all_points[self.fine_mask]

    @property
    def weights(self):
        return self.fine_weights[self.fine_mask]

    @property
    def dimension(self):
        return self.config.dimension

    def weight_values(self, spec: Optional[WeightSpec]):
        if spec is None or spec.is_lebesgue:
            return None
        key = id(spec)
        hit = self._mu_cache.get(key)
        if hit is None or hit[0] is not spec:
            hit = (spec, eval_weight(spec, self.all_points))
            self._mu_cache[key] = hit
        return hit[1]


def _build_parts(config, L, panels, shells, r_min_ratio, face_panels, half_side):
    N = config.dimension
    far_p, far_w, edge = _far_field(L, panels, config, half_side)
    t_min = r_min_ratio * config.r0 / half_side
    t_edges = np.geomspace(1.0, t_min, shells + 1)
    ref_p, ref_w, ref_shell = _pyramid_nodes(N, t_edges, face_panels)
    near_p, near_w, inner = [], [], []
    for a in config.poles:
        near_p.append(a + half_side * ref_p)
        near_w.append(half_side ** N * ref_w)
        inner.append(ref_shell == shells - 1)
    pts = np.vstack([far_p] + near_p)
    wts = np.concatenate([far_w] + near_w)
    innermost = np.concatenate([np.zeros(len(far_p), bool)] + inner)
    edge = np.concatenate([edge, np.zeros(len(pts) - len(far_p), bool)])
    return pts, wts, innermost, edge


def build_rule(config: PoleConfiguration, L: float, panels_per_axis: int = 12,
               shells_per_pole: int = 40, r_min_ratio: float = 1e-6,
               face_panels: int = 2) -> QuadratureRule:
    """Construct the fine rule and its coarse companion on [-L, L]^N."""
    if not (0 < r_min_ratio < 1):
        raise PreconditionError("r_min_ratio must lie in (0, 1)")
    if panels_per_axis < 2 or shells_per_pole < 2:
        raise PreconditionError("need at least two panels and two shells")
    if np.any(np.abs(config.poles).max(axis=1) + config.r0 > L * (1 + 1e-12)):
        raise PreconditionError("truncation box too small")
    half_side = config.r0 / np.sqrt(config.dimension)
    fp, fw, inner, edge = _build_parts(config, L, panels_per_axis, shells_per_pole,
                                       r_min_ratio, face_panels, half_side)
    cp, cw, _, _ = _build_parts(config, L, max(1, panels_per_axis // 2),
                                max(1, shells_per_pole // 2), r_min_ratio,
                                max(1, face_panels // 2), half_side)
    pts = np.vstack([fp, cp])
    nf, nc = len(fp), len(cp)
    fine = np.concatenate([fw, np.zeros(nc)])
    coarse = np.concatenate([np.zeros(nf), cw])
    rule = QuadratureRule(config, float(L), panels_per_axis, shells_per_pole, r_min_ratio,
                          half_side, pts, fine, coarse,
                          np.concatenate([inner, np.zeros(nc, bool)]),
                          np.concatenate([edge, np.zeros(nc, bool)]))
    # probe: a smooth bump times the inverse-square potential
    probe = integrate(rule, _probe_integrand(config, L))
    rule.error_estimate = probe.error_estimate / max(abs(probe.value), 1e-300)
    return rule


def _probe_integrand(config, L):
    def f(x):
        s = np.clip(1.0 - np.sum(x ** 2, axis=1) / (L * L * config.dimension), 0.0, None)
        return s ** 4 * (1.0 / config.distances(x) ** 2).sum(axis=1)
    return f


@dataclass
class FieldSample:
    """Values (and optionally gradients) of a function on ``rule.all_points``."""

    rule: QuadratureRule
    values: np.ndarray
    gradient_values: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.rule.all_points.shape[0]:
            raise PreconditionError("values array length must equal the node count")


@dataclass
class Integral:
    value: float
    error_estimate: float
    coarse_value: float
    core_estimate: float
    tail_estimate: float

    def __iter__(self):
        return iter((self.value, self.error_estimate))


def integrate(rule: QuadratureRule, integrand: Union[Callable, FieldSample, np.ndarray],
              spec: Optional[WeightSpec] = None) -> Integral:
    """sum_k w_k f(x_k) mu(x_k) with an error estimate.

    The estimate adds the fine/coarse discrepancy and the contribution of
    the innermost shell, which bounds the excised core for integrable
    power laws.
    """
    if isinstance(integrand, FieldSample):
        vals = integrand.values
    elif callable(integrand):
        vals = np.asarray(integrand(rule.all_points), dtype=float)
    else:
        vals = np.asarray(integrand, dtype=float)
    if vals.shape[0] != rule.all_points.shape[0]:
        raise PreconditionError("values array length must equal the node count")
    bad = ~np.isfinite(vals)
    if bad.any():
        k = int(np.argmax(bad))
        raise SingularPointError("singular evaluation", rule.all_points[k])
    mu = rule.weight_values(spec)
    if mu is not None:
        vals = vals * mu
    fine = float(np.sum(rule.fine_weights * vals))
    coarse = float(np.sum(rule.coarse_weights * vals))
    wf = np.where(rule.innermost, rule.fine_weights, 0.0)
    core = float(abs(np.sum(wf * vals)))
    tail = float(abs(np.sum(np.where(rule.edge, rule.fine_weights, 0.0) * vals)))
    return Integral(fine, abs(fine - coarse) + core, coarse, core, tail)


def integrate_many(rule: QuadratureRule, columns, spec: Optional[WeightSpec] = None):
    """Integrate several value arrays sharing the same weight evaluation."""
    return [integrate(rule, np.asarray(c), spec) for c in columns]


def monte_carlo_oracle(integrand: Callable, spec: Optional[WeightSpec], L: float, dimension: int,
                       sample_count: int = 10 ** 5, seed: int = 0, batch: int = 2 ** 16):
    """Uniform sampling of f mu over [-L, L]^N; returns (estimate, standard error)."""
    if sample_count < 1000:
        raise PreconditionError("sample_count must be at least 1000")
    rng = np.random.default_rng(seed)
    vol = (2.0 * L) ** dimension
    s1 = s2 = 0.0
    done = 0
    while done < sample_count:
        k = min(batch, sample_count - done)
        x = rng.uniform(-L, L, size=(k, dimension))
        v = np.asarray(integrand(x), dtype=float)
        if spec is not None and not spec.is_lebesgue:
            v = v * eval_weight(spec, x)
        s1 += float(np.sum(v))
        s2 += float(np.sum(v * v))
        done += k
    mean = s1 / sample_count
    var = max(s2 / sample_count - mean ** 2, 0.0)
    return mean * vol, vol * np.sqrt(var / sample_count)


def ball_integral_lebesgue(f, center, radius, cutoffs=None, dimension=None, **kw):
    """Integral of f over B(center, radius) with dx, on nested shells."""
    center = np.asarray(center, dtype=float)
    cfg = PoleConfiguration(center[None, :], radius)
    return ball_integral(lebesgue(cfg), f, 0, radius, cutoffs, weighted=False, **kw)


def gaussian_tail_bound(spec: WeightSpec, L: float) -> float:
    """Bound on int_{outside [-L,L]^N} mu dx for the Gaussian-type family.

    Uses mu <= exp(-delta dist_inf^m) / dist_inf^{n gamma} for gamma >= 0 with
    dist_inf the sup-norm distance from the box of poles, integrated over
    sup-norm shells. Returns inf when there is no decay.
    """
    if spec.density is not None or spec.delta <= 0 or spec.m <= 0:
        return float("inf")
    cfg = spec.poles
    N, n = cfg.dimension, cfg.n
    reach = float(np.abs(cfg.poles).max())
    s0 = L - reach
    if s0 <= 0:
        return float("inf")
    # surface of the sup-norm sphere of radius R is 2N (2R)^{N-1}
    R = np.linspace(L, L + 60.0 / max(spec.delta, 1e-3) ** (1.0 / spec.m) + 10.0, 4001)
    s = R - reach
    dens = np.exp(-spec.delta * n * s ** spec.m) * s ** (-n * max(spec.gamma, 0.0))
    if spec.gamma < 0:
        dens = dens * (R + reach) ** (-n * spec.gamma) * np.sqrt(N) ** (-n * spec.gamma)
    integrand = 2 * N * (2 * R) ** (N - 1) * dens
    return float(np.trapezoid(integrand, R))

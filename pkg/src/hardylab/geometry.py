"""Pole configurations and the radial IMS partition of unity.

The partition uses the profile

    J(t) = 1            for t <= 1/2
           sin(pi t)    for 1/2 <= t <= 1
           0            for t >= 1

around each pole, J_i(x) = J(|x - a_i| / r0), completed by
J_{n+1} = sqrt(1 - sum_i J_i^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import InconclusiveError, PreconditionError

PI2 = np.pi ** 2


@dataclass(frozen=True, eq=False)
class PoleConfiguration:
    """Poles a_1..a_n in R^N with separation radius r0."""

    poles: np.ndarray
    r0: float

    def __post_init__(self):
        poles = np.array(self.poles, dtype=float, copy=True)
        poles.setflags(write=False)
        object.__setattr__(self, "poles", poles)
        object.__setattr__(self, "r0", float(self.r0))

    @property
    def dimension(self) -> int:
        return self.poles.shape[1]

    @property
    def n(self) -> int:
        return self.poles.shape[0]

    def distances(self, x):
        """|x - a_i| for points x of shape (M, N); returns (M, n)."""
        x = np.asarray(x, dtype=float)
        diff = x[:, None, :] - self.poles[None, :, :]
        return np.sqrt(np.einsum("mnd,mnd->mn", diff, diff))

    def to_dict(self):
        return {"dimension": self.dimension, "poles": self.poles.tolist(), "r0": self.r0}


def build_configuration(points, dimension=None, default_r0=None) -> PoleConfiguration:
    """Validate pole positions and derive r0 = min_{i != j} |a_i - a_j| / 2.

    A single pole has no pairwise distance, so ``default_r0`` is mandatory
    in that case.
    """
    poles = np.atleast_2d(np.asarray(points, dtype=float))
    if poles.size == 0:
        raise PreconditionError("at least one pole is required")
    N = poles.shape[1] if dimension is None else int(dimension)
    if poles.shape[1] != N:
        raise PreconditionError(f"pole coordinates have length {poles.shape[1]}, expected {N}")
    if N < 3:
        raise PreconditionError("dimension below 3")
    n = poles.shape[0]
    if n == 1:
        if default_r0 is None or default_r0 <= 0:
            raise PreconditionError("a single pole needs a positive default_r0")
        return PoleConfiguration(poles, default_r0)
    diff = poles[:, None, :] - poles[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    dist[np.diag_indices(n)] = np.inf
    if np.min(dist) == 0.0:
        raise PreconditionError("coincident poles")
    return PoleConfiguration(poles, np.min(dist) / 2.0)


def eval_profile(t):
    """Profile J and its derivative, vectorised over t >= 0."""
    t = np.asarray(t, dtype=float)
    value = np.where(t <= 0.5, 1.0, np.where(t >= 1.0, 0.0, np.sin(np.pi * t)))
    deriv = np.where((t > 0.5) & (t < 1.0), np.pi * np.cos(np.pi * t), 0.0)
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    config: PoleConfiguration
    k0: float | None = None

    def evaluate(self, x):
        """Values (M, n+1) and gradients (M, n+1, N) of J_1..J_{n+1}.

        On the transition annulus of ball i the complement J_{n+1} equals
        |cos(pi t_i)|, which is sqrt(1 - J_i^2) without the cancellation of
        the subtraction. Its gradient follows from sum_i J_i grad J_i = 0.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cfg = self.config
        M, N, n = x.shape[0], cfg.dimension, cfg.n
        diff = x[:, None, :] - cfg.poles[None, :, :]
        r = np.sqrt(np.einsum("mnd,mnd->mn", diff, diff))
        t = r / cfg.r0
        val, dval = eval_profile(t)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, diff / r[..., None], 0.0)
        J = np.empty((M, n + 1))
        G = np.zeros((M, n + 1, N))
        J[:, :n] = val
        G[:, :n, :] = (dval / cfg.r0)[..., None] * unit

        annulus = (t > 0.5) & (t < 1.0)
        inner = t <= 0.5
        comp = np.ones(M)
        comp_grad = np.zeros((M, N))
        comp[inner.any(axis=1)] = 0.0
        rows, cols = np.nonzero(annulus)
        ti = t[rows, cols]
        comp[rows] = np.abs(np.cos(np.pi * ti))
        comp_grad[rows] = (np.pi * np.sin(np.pi * ti) / cfg.r0)[:, None] * unit[rows, cols]
        J[:, n] = comp
        G[:, n, :] = comp_grad
        return J, G

    def one_minus_square(self, J):
        """1 - J_i^2 for i <= n, computed as the sum of the other squares."""
        sq = J ** 2
        cols = range(sq.shape[1])
        return np.stack([sq[:, [k for k in cols if k != i]].sum(axis=1)
                         for i in range(sq.shape[1] - 1)], axis=1)


@dataclass
class PartitionReport:
    sample_count: int
    sum_of_squares: float
    property_a: float
    property_d: float
    annulus_constraint: float
    support_overlap: int

    def as_dict(self):
        return dict(self.__dict__)


def build_partition(config: PoleConfiguration) -> PartitionOfUnity:
    return PartitionOfUnity(config)


def _property_d_sides(partition, J, G):
    grad_sq = np.einsum("mkd,mkd->mk", G, G)
    lhs = grad_sq.sum(axis=1)
    denom = partition.one_minus_square(J)
    n = partition.config.n
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(J[:, :n] < 1.0, grad_sq[:, :n] / denom, 0.0)
    ratio = np.where(grad_sq[:, :n] == 0.0, 0.0, ratio)
    return lhs, ratio.sum(axis=1)


def verify_partition(partition: PartitionOfUnity, samples) -> PartitionReport:
    """Maximum violation of each structural identity over the samples."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    cfg = partition.config
    J, G = partition.evaluate(samples)
    n = cfg.n
    sum_sq = np.max(np.abs((J ** 2).sum(axis=1) - 1.0))
    prop_a = np.max(np.abs(np.einsum("mk,mkd->md", J, G)))
    lhs, rhs = _property_d_sides(partition, J, G)
    prop_d = np.max(np.abs(lhs - rhs))

    # |grad J_i|^2 = (pi/r0)^2 (1 - J_i^2) on each annulus
    t = cfg.distances(samples) / cfg.r0
    ann = (t > 0.5) & (t < 1.0)
    grad_sq = np.einsum("mkd,mkd->mk", G[:, :n], G[:, :n])
    F = (np.pi / cfg.r0) ** 2
    resid = np.where(ann, np.abs(grad_sq - F * partition.one_minus_square(J)), 0.0)
    overlap = int(np.sum((J[:, :n] > 0).sum(axis=1) > 1))
    return PartitionReport(
        sample_count=len(samples),
        sum_of_squares=float(sum_sq),
        property_a=float(prop_a),
        property_d=float(prop_d),
        annulus_constraint=float(np.max(resid)) if resid.size else 0.0,
        support_overlap=overlap,
    )


# --- k0 of the two-pole localisation lemma ---------------------------------


@dataclass
class K0Result:
    k0: float
    below_pi_squared: bool
    sup_value: float
    maximizer: np.ndarray
    sample_count: int
    c: float
    pair_values: list = field(default_factory=list)

    def as_dict(self):
        return {
            "k0": self.k0,
            "below_pi_squared": self.below_pi_squared,
            "sup_value": self.sup_value,
            "maximizer": np.asarray(self.maximizer).tolist(),
            "sample_count": self.sample_count,
            "c": self.c,
            "pair_values": self.pair_values,
        }


def _pair_partition(half_distance, r0, N):
    poles = np.zeros((2, N))
    poles[0, 0] = -half_distance
    poles[1, 0] = half_distance
    return PartitionOfUnity(PoleConfiguration(poles, r0))


def k0_integrand(partition, c, x):
    """r0^2 [sum_{i=1,2} |grad J_i|^2 / (1 - J_i^2) + c J_3^2 V_2] - 2c on x."""
    cfg = partition.config
    J, G = partition.evaluate(x)
    _, ratio_sum = _property_d_sides(partition, J, G)
    far = J[:, -1] > 0
    # J_3 vanishes on B(a_i, r0/2), which keeps the poles out of the potential term
    far_term = np.zeros(len(x))
    far_term[far] = J[far, -1] ** 2 * (1.0 / cfg.distances(x[far]) ** 2).sum(axis=1)
    return cfg.r0 ** 2 * (ratio_sum + c * far_term) - 2.0 * c


def _ball_sobol(center, radius, m, seed):
    N = len(center)
    pts = qmc.Sobol(N, scramble=True, seed=seed).random_base2(m)
    pts = center + radius * (2.0 * pts - 1.0)
    keep = np.sum((pts - center) ** 2, axis=1) <= radius ** 2
    return pts[keep]


def _sup_on_ball(partition, c, center, r0, log2_samples, rounds, starts, seed):
    pts = _ball_sobol(center, r0, log2_samples, seed)
    vals = k0_integrand(partition, c, pts)
    count = len(pts)
    order = np.argsort(vals)[::-1][:starts]
    best_val, best_x = vals[order[0]], pts[order[0]]
    spacing = 2.0 * r0 / 2.0 ** (log2_samples / len(center))
    for s, idx in enumerate(order):
        x0, v0 = pts[idx], vals[idx]
        half = 2.0 * spacing
        for rnd in range(rounds):
            local = qmc.Sobol(len(center), scramble=True, seed=seed + 1000 * s + rnd + 1).random_base2(10)
            local = x0 + half * (2.0 * local - 1.0)
            local = local[np.sum((local - center) ** 2, axis=1) <= r0 ** 2]
            if len(local) == 0:
                break
            lv = k0_integrand(partition, c, local)
            count += len(local)
            j = int(np.argmax(lv))
            if lv[j] > v0:
                x0, v0 = local[j], lv[j]
            half /= 8.0
        if v0 > best_val:
            best_val, best_x = v0, x0
    return best_val, best_x, count


def compute_k0(partition: PartitionOfUnity, c: float, log2_samples: int = 20,
               rounds: int = 3, starts: int = 8, seed: int = 0) -> K0Result:
    """Sampled supremum defining k0 for the localisation lemma.

    Each pole is paired with its nearest neighbour and the pair is moved to
    the frame (-a e_1, a e_1), so the value is invariant under rigid motions
    of the configuration. By the mirror symmetry of the pair it suffices to
    sample the closed ball around the first pole.
    """
    if c <= 0:
        raise PreconditionError("c must be positive")
    cfg = partition.config
    if cfg.n < 2:
        raise PreconditionError("needs two poles")
    N, r0 = cfg.dimension, cfg.r0
    diff = cfg.poles[:, None, :] - cfg.poles[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    dist[np.diag_indices(cfg.n)] = np.inf
    half_distances = sorted({round(float(d) / 2.0, 12) for d in dist.min(axis=1)})

    best, best_x, total = -np.inf, None, 0
    pair_values = []
    for a in half_distances:
        pair = _pair_partition(a, r0, N)
        center = np.zeros(N)
        center[0] = -a
        val, x, count = _sup_on_ball(pair, c, center, r0, log2_samples, rounds, starts, seed)
        pair_values.append({"half_distance": a, "sup": float(val)})
        total += count
        if val > best:
            best, best_x = val, x
    if not np.isfinite(best):
        raise InconclusiveError("k0 maximisation did not produce a finite value")
    k0 = max(0.0, float(best))
    return K0Result(k0=k0, below_pi_squared=bool(k0 < PI2), sup_value=float(best),
                    maximizer=best_x, sample_count=total, c=float(c), pair_values=pair_values)


# --- form decomposition --------------------------------------------------------


def ims_decomposition_residual(partition: PartitionOfUnity, phi, V=None, spec=None, rule=None):
    """|Q(phi) - sum_i Q(J_i phi) + int sum_i |grad J_i|^2 phi^2 dmu|,
    Q(f) = int (|grad f|^2 - V f^2) dmu, each integral computed separately.

    Returns (residual, quadrature error bound of the combination).
    """
    from .quadrature import integrate

    cfg = partition.config
    x = rule.all_points
    v, g = phi.value_grad(x)
    pot = (1.0 / cfg.distances(x) ** 2).sum(axis=1) if V is None else np.asarray(V(x), dtype=float)
    J, G = partition.evaluate(x)
    terms = [integrate(rule, np.einsum("md,md->m", g, g) - pot * v * v, spec)]
    signs = [1.0]
    for i in range(J.shape[1]):
        f = J[:, i] * v
        gf = J[:, i, None] * g + v[:, None] * G[:, i, :]
        terms.append(integrate(rule, np.einsum("md,md->m", gf, gf) - pot * f * f, spec))
        signs.append(-1.0)
    loc = np.einsum("mkd,mkd->m", G, G) * v * v
    terms.append(integrate(rule, loc, spec))
    signs.append(1.0)
    total = sum(s * t.value for s, t in zip(signs, terms))
    # the fine/coarse discrepancy cancels in the combination up to round-off
    scale = sum(abs(t.value) for t in terms)
    return abs(total), 1e-13 * scale + abs(sum(s * (t.value - t.coarse_value) for s, t in zip(signs, terms)))

"""Hardy constants, the multipolar potential and the inequality checks.

Three forms of the weighted multipolar inequality are checked on test
functions phi:

* ``vector_field_thm21``: (c_o/n) int V phi^2 + (beta^2/2) int W phi^2
  <= int |grad phi|^2 + k1 int phi^2, with beta = (N+k2-2)/(2n) and
  W = sum_{i != j} |a_i - a_j|^2 / (|x-a_i|^2 |x-a_j|^2);
* ``vector_field_thm22``: c int V phi^2 <= int |grad phi|^2 + K int phi^2
  with K = beta^2/r0^2 (n-1)(n-1+1/(2 eps)) + k1;
* ``ims_thm31``: the same with K = (k0 + (n+1)c)/r0^2 + k1.

All integrals are against dmu.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import PreconditionError, SingularPointError

METHODS = ("vector_field_thm21", "vector_field_thm22", "ims_thm31")


def hardy_constant(N, k2=0.0) -> float:
    """c_o(N + k2) = ((N + k2 - 2)/2)^2."""
    if N < 3:
        raise PreconditionError("dimension below 3")
    if not k2 > 2 - N:
        raise PreconditionError("violates k2 > 2-N")
    return ((N + k2 - 2) / 2.0) ** 2


def multipolar_potential(config, x):
    """V_n(x) = sum_i 1/|x - a_i|^2 for x of shape (N,) or (M, N)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    d = config.distances(np.atleast_2d(x))
    if np.any(d == 0):
        raise SingularPointError("singular point", np.atleast_2d(x)[np.argmax((d == 0).any(axis=1))])
    v = (1.0 / d ** 2).sum(axis=1)
    return float(v[0]) if single else v


def _pair_terms(config, x):
    diff = x[:, None, :] - config.poles[None, :, :]
    d2 = np.einsum("mnd,mnd->mn", diff, diff)
    if np.any(d2 == 0):
        raise SingularPointError("singular point")
    return diff, d2


def cross_weight(config, x):
    """W(x) = sum_{i != j} |a_i - a_j|^2 / (|x - a_i|^2 |x - a_j|^2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _, d2 = _pair_terms(config, x)
    a = config.poles
    dist2 = np.sum((a[:, None, :] - a[None, :, :]) ** 2, axis=-1)
    inv = 1.0 / d2
    return np.einsum("mi,ij,mj->m", inv, dist2, inv)


def cross_term_residual(config, x):
    """|sum_{i!=j} (x-a_i).(x-a_j)/(r_i^2 r_j^2) - [(n-1) V_n - W/2]|.

    The left sum is formed pair by pair, the right side from V_n and W, so
    the two routes share no intermediate quantity beyond the distances.
    """
    if config.n < 2:
        raise PreconditionError("needs two poles")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    diff, d2 = _pair_terms(config, x)
    n = config.n
    inv = 1.0 / d2
    left = np.zeros(len(x))
    for i in range(n):
        for j in range(n):
            if i != j:
                left += np.einsum("md,md->m", diff[:, i], diff[:, j]) * inv[:, i] * inv[:, j]
    right = (n - 1) * inv.sum(axis=1) - 0.5 * cross_weight(config, x)
    res = np.abs(left - right)
    return float(res[0]) if single else res


def beta_star(N, k2, n) -> float:
    """Maximiser of (N + k2 - 2) beta - n beta^2."""
    return (N + k2 - 2) / (2.0 * n)


def vector_field_coefficient(N, k2, n, beta):
    return (N + k2 - 2) * beta - n * beta ** 2


def vector_field_constants(n, c, r0, epsilon, k1, N, k2) -> dict:
    """Roots beta_pm of (1 + eps/2) beta^2 - 2 sqrt(c_o) beta + c = 0 and K.

    c_max = c_o/(1 + eps/2) is the largest c admissible for this eps; K is
    reported for both roots, the smaller root giving the headline value.
    """
    if epsilon <= 0:
        raise PreconditionError("epsilon must be positive")
    co = hardy_constant(N, k2)
    if c <= 0:
        raise PreconditionError("c must be positive")
    s = 1.0 + 0.5 * epsilon
    c_max = co / s
    if c > c_max * (1 + 1e-12):
        raise PreconditionError("c out of admissible range for this eps")
    disc = np.sqrt(max(co - c * s, 0.0))
    bp = (np.sqrt(co) + disc) / s
    bm = (np.sqrt(co) - disc) / s

    def K(beta):
        return beta ** 2 / r0 ** 2 * (n - 1) * (n - 1 + 1.0 / (2.0 * epsilon)) + k1

    return {"K": K(bm), "K_plus": K(bp), "beta_plus": bp, "beta_minus": bm,
            "c_max": c_max, "c_o": co, "epsilon": epsilon}


def default_epsilon(c, co) -> float:
    """eps = c_o/c - 1: half of the largest eps admissible for c."""
    if not 0 < c < co:
        raise PreconditionError("constant out of range")
    return co / c - 1.0


def ims_remainder(n, c, r0, k0, k1) -> float:
    """(k0 + (n + 1) c)/r0^2 + k1."""
    if n < 2:
        raise PreconditionError("needs two poles")
    if c <= 0:
        raise PreconditionError("c must be positive")
    if not 0 <= k0 < np.pi ** 2:
        raise PreconditionError("k0 outside [0, pi^2)")
    return (k0 + (n + 1) * c) / r0 ** 2 + k1


# --- quadratic form on a rule ------------------------------------------------


@dataclass
class FormValues:
    grad_energy: float
    potential_energy: float
    mass: float
    Q: float
    errors: dict = field(default_factory=dict)

    def as_dict(self):
        return {"grad_energy": self.grad_energy, "potential_energy": self.potential_energy,
                "mass": self.mass, "Q": self.Q, "errors": self.errors}


def _field_integrals(phi, spec, config, rule, with_cross=False):
    from .quadrature import integrate

    x = rule.all_points
    v, g = phi.value_grad(x)
    V = multipolar_potential(config, x)
    out = {
        "grad": integrate(rule, np.einsum("md,md->m", g, g), spec),
        "pot": integrate(rule, V * v * v, spec),
        "mass": integrate(rule, v * v, spec),
    }
    if with_cross and config.n > 1:
        out["cross"] = integrate(rule, cross_weight(config, x) * v * v, spec)
    return out


def quadratic_form(phi, spec, config, c, rule) -> FormValues:
    """int |grad phi|^2 dmu, c int V phi^2 dmu, int phi^2 dmu and their difference."""
    I = _field_integrals(phi, spec, config, rule)
    pot = c * I["pot"].value
    return FormValues(I["grad"].value, pot, I["mass"].value, I["grad"].value - pot,
                      {"grad_energy": I["grad"].error_estimate,
                       "potential_energy": c * I["pot"].error_estimate,
                       "mass": I["mass"].error_estimate})


# --- inequality checks ------------------------------------------------------


@dataclass
class HardyReport:
    method: str
    c: float
    c_o: float
    K: float
    lhs: float
    rhs: float
    margin: float
    quadrature_error: float
    verdict: str
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(self.__dict__)


def hardy_verdict(margin, error):
    if margin >= 0:
        return "holds"
    if margin >= -error:
        return "violated_within_error"
    return "violated"


def check_inequality(phi, spec, config, c, method, rule, k0=None, epsilon=None,
                     k2=None) -> HardyReport:
    """Evaluate one form of the inequality on phi.

    ``spec.k1`` is used as the additive hypothesis constant; k2 defaults to
    ``spec.k2`` (0 for the unweighted case). ``k0`` is required by the IMS
    form and ``epsilon`` optionally overrides the default pairing for the
    second vector-field form.
    """
    if method not in METHODS:
        raise PreconditionError(f"unknown method {method!r}")
    N, n, r0 = config.dimension, config.n, config.r0
    if k2 is None:
        k2 = 0.0 if spec is None else spec.require_k2()
    k1 = 0.0 if spec is None else spec.k1
    co = hardy_constant(N, k2)
    details = {"k1": k1, "k2": k2}
    with_cross = method == "vector_field_thm21"

    if method == "vector_field_thm21":
        if not 0 < c <= co / n * (1 + 1e-12):
            raise PreconditionError("constant out of range")
        beta = beta_star(N, k2, n)
        K = k1
        details.update(beta=beta)
    elif method == "vector_field_thm22":
        if not 0 < c < co:
            raise PreconditionError("constant out of range")
        eps = default_epsilon(c, co) if epsilon is None else float(epsilon)
        vf = vector_field_constants(n, c, r0, eps, k1, N, k2)
        K = vf["K"]
        details.update(vf)
    else:
        if not 0 < c <= co * (1 + 1e-12):
            raise PreconditionError("constant out of range")
        if n < 2:
            raise PreconditionError("needs two poles")
        if k0 is None:
            raise PreconditionError("ims check needs k0")
        if not 0 <= k0 < np.pi ** 2:
            raise PreconditionError("k0 outside [0, pi^2)")
        K = ims_remainder(n, c, r0, k0, k1)
        details.update(k0=k0)

    I = _field_integrals(phi, spec, config, rule, with_cross)
    lhs = c * I["pot"].value
    err = I["grad"].error_estimate + c * I["pot"].error_estimate + abs(K) * I["mass"].error_estimate
    if with_cross and "cross" in I:
        lhs += 0.5 * details["beta"] ** 2 * I["cross"].value
        err += 0.5 * details["beta"] ** 2 * I["cross"].error_estimate
    rhs = I["grad"].value + K * I["mass"].value
    margin = rhs - lhs
    details.update(grad_energy=I["grad"].value, potential=I["pot"].value, mass=I["mass"].value)
    return HardyReport(method, float(c), co, float(K), float(lhs), float(rhs), float(margin),
                       float(err), hardy_verdict(margin, err), details)


def run_family(family, spec, config, c, method, rule, **kw):
    """check_inequality over a list of (name, function) pairs."""
    out = []
    for name, phi in family:
        rep = check_inequality(phi, spec, config, c, method, rule, **kw)
        rep.details["function"] = name
        out.append(rep)
    return out


# --- constants admitted by an audited weight -------------------------------------


def audit_constants(spec, method, c, samples=None, box_half_width=None, eps_list=(1.0, 0.1, 0.01)):
    """Weight with the smallest k1 passing the hypothesis audit used by ``method``.

    The vector-field forms rest on the drift inequality at their beta; the
    IMS form on its local version at alpha = -(N + k2 - 2)/2.
    Returns (spec_with_k1, HypothesisReport).
    """
    from .weights import (ball_samples, check_H2, check_H2prime, fit_k1_H2, fit_k1_H2prime,
                          hypothesis_samples, with_constants)

    cfg = spec.poles
    N, n = cfg.dimension, cfg.n
    k2 = spec.require_k2()
    co = hardy_constant(N, k2)
    if method in ("vector_field_thm21", "vector_field_thm22"):
        if method == "vector_field_thm21":
            beta = beta_star(N, k2, n)
        else:
            beta = vector_field_constants(n, c, cfg.r0, default_epsilon(c, co), 0.0, N, k2)["beta_minus"]
        if samples is None:
            L = box_half_width or float(np.abs(cfg.poles).max() + 3.0 * cfg.r0)
            samples = hypothesis_samples(cfg, L, 2 ** 15)
        k1 = max(0.0, fit_k1_H2(spec, beta, samples))
        s = with_constants(spec, k1=k1 * (1 + 1e-9) + 1e-12)
        return s, check_H2(s, beta, samples)
    alpha = -(N + k2 - 2) / 2.0
    if samples is None:
        samples = [ball_samples(cfg, i, seed=i) for i in range(n)]
    k1 = max(0.0, fit_k1_H2prime(spec, alpha, eps_list, samples))
    s = with_constants(spec, k1=k1 * (1 + 1e-9) + 1e-12)
    return s, check_H2prime(s, alpha, eps_list, samples)

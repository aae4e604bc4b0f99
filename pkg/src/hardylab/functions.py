"""Test functions with analytic gradients.

Every object maps points x of shape (M, N) to ``(values, gradients)`` with
shapes (M,) and (M, N).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import PreconditionError


class TestFunction:
    __test__ = False  # not a pytest class

    def __call__(self, x):
        return self.value_grad(np.atleast_2d(np.asarray(x, dtype=float)))[0]

    def value_grad(self, x):
        raise NotImplementedError

    def scaled(self, factor):
        return LinearCombination([self], [factor])


@dataclass(frozen=True)
class RadialBump(TestFunction):
    """(1 - s^2)^4 for s = |x - centre| / radius < 1, zero outside."""

    centre: tuple
    radius: float

    def value_grad(self, x):
        c = np.asarray(self.centre, dtype=float)
        diff = x - c
        s2 = np.einsum("md,md->m", diff, diff) / self.radius ** 2
        inside = s2 < 1.0
        q = np.where(inside, 1.0 - s2, 0.0)
        val = q ** 4
        grad = (-8.0 * q ** 3 / self.radius ** 2)[:, None] * diff
        return val, grad


@dataclass(frozen=True)
class ProductBump(TestFunction):
    """prod_k (1 - ((x_k - c_k)/w_k)^2)^3 on the box |x_k - c_k| < w_k."""

    centre: tuple
    half_widths: tuple

    def value_grad(self, x):
        c = np.asarray(self.centre, dtype=float)
        w = np.asarray(self.half_widths, dtype=float)
        u = (x - c) / w
        q = np.where(np.abs(u) < 1.0, 1.0 - u ** 2, 0.0)
        f = q ** 3
        df = -6.0 * q ** 2 * u / w
        val = np.prod(f, axis=1)
        grad = np.empty_like(x)
        for k in range(x.shape[1]):
            grad[:, k] = df[:, k] * np.prod(np.delete(f, k, axis=1), axis=1)
        return val, grad


@dataclass(frozen=True)
class GaussianBump(TestFunction):
    """exp(-|x - centre|^2 / width^2) times a product bump of half width ``support``."""

    centre: tuple
    width: float
    support: float

    def value_grad(self, x):
        c = np.asarray(self.centre, dtype=float)
        diff = x - c
        g = np.exp(-np.einsum("md,md->m", diff, diff) / self.width ** 2)
        dg = (-2.0 / self.width ** 2) * g[:, None] * diff
        b, db = ProductBump(self.centre, (self.support,) * x.shape[1]).value_grad(x)
        return g * b, dg * b[:, None] + g[:, None] * db


def smoothstep_cutoff(s):
    """theta(s): 1 for s <= 1, p(2 - s) for 1 <= s <= 2, 0 beyond;
    p(t) = 6t^5 - 15t^4 + 10t^3. Returns value and derivative in s."""
    s = np.asarray(s, dtype=float)
    t = np.clip(2.0 - s, 0.0, 1.0)
    val = t ** 3 * (10.0 + t * (-15.0 + 6.0 * t))
    dval = -30.0 * t ** 2 * (1.0 - t) ** 2
    return val, dval


@dataclass(frozen=True)
class Witness(TestFunction):
    """(eps + |x - centre|)^eta * theta(|x - centre|)."""

    centre: tuple
    eta: float
    epsilon: float

    def value_grad(self, x):
        c = np.asarray(self.centre, dtype=float)
        diff = x - c
        r = np.sqrt(np.einsum("md,md->m", diff, diff))
        th, dth = smoothstep_cutoff(r)
        base = (self.epsilon + r) ** self.eta
        val = base * th
        dr = self.eta * (self.epsilon + r) ** (self.eta - 1.0) * th + base * dth
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[:, None] > 0, diff / r[:, None], 0.0)
        return val, dr[:, None] * unit


@dataclass(frozen=True)
class LinearCombination(TestFunction):
    functions: tuple
    coefficients: tuple

    def __init__(self, functions: Sequence[TestFunction], coefficients: Sequence[float]):
        if len(functions) != len(coefficients):
            raise PreconditionError("one coefficient per function")
        object.__setattr__(self, "functions", tuple(functions))
        object.__setattr__(self, "coefficients", tuple(float(a) for a in coefficients))

    def value_grad(self, x):
        val = np.zeros(x.shape[0])
        grad = np.zeros_like(x)
        for f, a in zip(self.functions, self.coefficients):
            v, g = f.value_grad(x)
            val += a * v
            grad += a * g
        return val, grad


@dataclass(frozen=True)
class Zero(TestFunction):
    def value_grad(self, x):
        return np.zeros(x.shape[0]), np.zeros_like(x)


def regression_family(config, eta=None, seed=0, witness_eps=(1e-1, 1e-2)):
    """Named representatives of H^1_mu used by the inequality checks.

    Radial bumps at each pole with three widths, a global Gaussian bump,
    witness-type functions with a subcritical exponent, and two random
    combinations of the bumps.
    """
    N, r0 = config.dimension, config.r0
    reach = float(np.abs(config.poles).max()) + 2.0 * r0
    fam = []
    bumps = []
    for i, a in enumerate(config.poles):
        for frac in (0.25, 0.5, 1.0):
            f = RadialBump(tuple(a), frac * r0)
            fam.append((f"radial_pole{i}_w{frac}", f))
            bumps.append(f)
    centroid = tuple(config.poles.mean(axis=0))
    g = GaussianBump(centroid, width=max(r0, 1.0), support=reach)
    fam.append(("gaussian_global", g))
    bumps.append(g)
    if eta is None:
        eta = -0.25 * (N - 2)
    for e in witness_eps:
        fam.append((f"witness_eps{e:g}", Witness(tuple(config.poles[0]), eta, e)))
    rng = np.random.default_rng(seed)
    for k in range(2):
        coef = rng.uniform(-1.0, 1.0, size=len(bumps))
        fam.append((f"combination{k}", LinearCombination(bumps, coef)))
    return fam


def family_extent(config):
    """Half width of a box containing every regression function's support."""
    return float(np.abs(config.poles).max()) + max(2.0, 2.0 * config.r0) + 0.5

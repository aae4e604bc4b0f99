import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from hardylab.errors import PreconditionError, SingularPointError
from hardylab.functions import GaussianBump, ProductBump, RadialBump, Witness, smoothstep_cutoff
from hardylab.geometry import build_configuration
from hardylab.quadrature import (ball_integral_lebesgue, build_rule, gaussian_tail_bound,
                                 integrate, monte_carlo_oracle)
from hardylab.weights import ball_integral, family


@pytest.fixture(scope="module")
def cube_rule():
    cfg = build_configuration([[0.0, 0.0, 0.0]], default_r0=1.0)
    return build_rule(cfg, 1.0)


@pytest.fixture(scope="module")
def pair_rule():
    return build_rule(build_configuration([[1.0, 0, 0], [-1.0, 0, 0]]), 2.5)


def test_cube_volume(cube_rule):
    assert integrate(cube_rule, lambda x: np.ones(len(x))).value == pytest.approx(8.0, abs=1e-10)


def test_rule_structure(pair_rule):
    w = pair_rule.weights
    assert np.all(w > 0)
    assert np.all(pair_rule.config.distances(pair_rule.points) > 0)
    assert np.all(np.abs(pair_rule.points) <= pair_rule.L + 1e-12)


def test_rule_box_too_small():
    cfg = build_configuration([[1.0, 0, 0], [-1.0, 0, 0]])
    with pytest.raises(PreconditionError, match="truncation box too small"):
        build_rule(cfg, 1.5)


def test_inverse_square_on_ball():
    val = ball_integral_lebesgue(lambda x: 1.0 / np.sum(x * x, axis=1), np.zeros(3), 1.0,
                                 cutoffs=0.5 ** np.arange(1, 40)).value
    assert val == pytest.approx(4 * np.pi, rel=1e-3)


def test_inverse_square_box_rule(cube_rule):
    # the box rule restricted to the unit ball; only the ball surface is not resolved
    def f(x):
        r2 = np.sum(x * x, axis=1)
        return np.where(r2 < 1.0, 1.0 / r2, 0.0)
    assert integrate(cube_rule, f).value == pytest.approx(4 * np.pi, rel=5e-3)


def test_critical_power_flagged_divergent():
    cfg = build_configuration([[0.0, 0.0, 0.0]], default_r0=1.0)
    spec = family(cfg, 1.0, k2=None)
    # logarithmic divergence: the last halving adds about 1/k of the value after k
    # halvings, so the 5% rule needs a ladder shorter than 20 cutoffs
    res = ball_integral(spec, lambda x: 1.0 / np.sum(x * x, axis=1), 0, 1.0, 0.5 ** np.arange(1, 13))
    assert res.divergent and res.growth >= 0.05
    ok = ball_integral(spec, lambda x: np.sum(x * x, axis=1) ** -0.75, 0, 1.0, 0.5 ** np.arange(1, 31))
    assert not ok.divergent


def test_witness_square_matches_radial_oracle():
    cfg = build_configuration([[0.0, 0.0, 0.0]], default_r0=1.0)
    rule = build_rule(cfg, 2.5, panels_per_axis=16, shells_per_pole=60, r_min_ratio=1e-10)
    eta, eps = -0.75, 0.1
    phi = Witness((0.0, 0.0, 0.0), eta, eps)
    val = integrate(rule, lambda x: phi(x) ** 2).value

    def radial(r):
        return 4 * np.pi * r * r * (eps + r) ** (2 * eta) * smoothstep_cutoff(r)[0] ** 2
    oracle = quad(radial, 0, 1, limit=200)[0] + quad(radial, 1, 2, limit=200)[0]
    assert val == pytest.approx(oracle, rel=5e-3)


def test_potential_bump_against_monte_carlo(pair_rule):
    cfg = pair_rule.config
    phi = ProductBump((0.0, 0.0, 0.0), (0.6, 1.2, 1.2))

    def f(x):
        return (1.0 / cfg.distances(x) ** 2).sum(axis=1) * phi(x) ** 2
    val = integrate(pair_rule, f).value
    mc, se = monte_carlo_oracle(f, None, 2.5, 3, 2 * 10 ** 5, seed=4)
    assert np.isfinite(val)
    assert abs(val - mc) <= 3 * se


def test_monte_carlo_constant_exact():
    est, se = monte_carlo_oracle(lambda x: np.ones(len(x)), None, 1.0, 3, 10 ** 4, seed=9)
    assert est == 8.0 and se == 0.0


def test_monte_carlo_gaussian():
    est, se = monte_carlo_oracle(lambda x: np.exp(-np.sum(x * x, axis=1)), None, 4.0, 3, 4 * 10 ** 5,
                                 seed=1)
    assert abs(est - np.pi ** 1.5) <= 3 * se


def test_monte_carlo_sample_floor():
    with pytest.raises(PreconditionError):
        monte_carlo_oracle(lambda x: x[:, 0], None, 1.0, 3, 10)


def _suite(cfg):
    a = cfg.poles[0]
    return {
        "bump_sq": lambda x: RadialBump(tuple(a), 1.0)(x) ** 2,
        "gauss": lambda x: GaussianBump((0.0, 0.0, 0.0), 1.0, 2.5)(x),
        "potential_bump": lambda x: (1.0 / cfg.distances(x) ** 2).sum(axis=1)
        * ProductBump((0.0, 0.0, 0.0), (0.6, 1.0, 1.0))(x) ** 2,
        "inverse_distance": lambda x: RadialBump(tuple(a), 1.0)(x) / cfg.distances(x)[:, 0],
        "polynomial": lambda x: (x[:, 0] ** 2 + x[:, 1] * x[:, 2] + 1.0),
    }


@pytest.mark.parametrize("name", ["bump_sq", "gauss", "potential_bump", "inverse_distance",
                                  "polynomial"])
def test_integrate_agrees_with_monte_carlo(pair_rule, name):
    f = _suite(pair_rule.config)[name]
    spec = family(pair_rule.config, 0.5, 1.0, 2.0)
    for s in (None, spec):
        val = integrate(pair_rule, f, s).value
        mc, se = monte_carlo_oracle(f, s, 2.5, 3, 2 * 10 ** 5, seed=11)
        assert abs(val - mc) <= 3 * se + 1e-9 * abs(val)


def test_nonnegative_integrand_gives_nonnegative_value(pair_rule, rng):
    vals = rng.uniform(0, 1, size=len(pair_rule.all_points))
    assert integrate(pair_rule, vals).value >= 0


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 10 ** 6))
def test_linearity(a, b, seed):
    cfg = build_configuration([[0.0, 0.0, 0.0]], default_r0=1.0)
    rule = _small_rule(cfg)
    rng = np.random.default_rng(seed)
    f = rng.normal(size=len(rule.all_points))
    g = rng.normal(size=len(rule.all_points))
    lhs = integrate(rule, a * f + b * g).value
    rhs = a * integrate(rule, f).value + b * integrate(rule, g).value
    scale = (abs(a) + abs(b)) * integrate(rule, np.abs(f) + np.abs(g)).value
    assert abs(lhs - rhs) <= 1e-12 * max(scale, 1.0)


_RULES = {}


def _small_rule(cfg):
    if "small" not in _RULES:
        _RULES["small"] = build_rule(cfg, 1.5, panels_per_axis=4, shells_per_pole=8)
    return _RULES["small"]


def test_shell_refinement_converges_geometrically():
    cfg = build_configuration([[0.0, 0.0, 0.0]], default_r0=1.0)

    def f(x):
        return RadialBump((0.0, 0.0, 0.0), 1.0)(x) * np.sum(x * x, axis=1) ** -1.25
    vals = [integrate(build_rule(cfg, 1.5, panels_per_axis=6, shells_per_pole=s, r_min_ratio=1e-10),
                      f).value for s in (5, 10, 20, 40)]
    d = np.abs(np.diff(vals))
    assert np.all(d[1:] < 0.05 * d[:-1])


def test_singular_evaluation_raises(cube_rule):
    vals = np.ones(len(cube_rule.all_points))
    vals[3] = np.inf
    with pytest.raises(SingularPointError):
        integrate(cube_rule, vals)


def test_gaussian_tail_bound_decreases():
    cfg = build_configuration([[0.0, 0.0, 0.0]], default_r0=1.0)
    spec = family(cfg, 0.0, 1.0, 2.0)
    b = [gaussian_tail_bound(spec, L) for L in (2.0, 3.0, 4.0)]
    assert b[0] > b[1] > b[2] > 0
    # exact tail of exp(-|x|^2) outside [-2, 2]^3 is smaller than the bound
    from scipy.special import erf
    exact = np.pi ** 1.5 * (1 - erf(2.0) ** 3)
    assert exact <= b[0]
    assert gaussian_tail_bound(family(cfg, 0.5, k2=None), 3.0) == np.inf

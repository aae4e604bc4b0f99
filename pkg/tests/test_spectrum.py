import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import RegularGridInterpolator

from hardylab.errors import PreconditionError
from hardylab.geometry import build_configuration, build_partition, compute_k0
from hardylab.hardy import hardy_constant, ims_remainder
from hardylab.quadrature import build_rule, integrate
from hardylab.spectrum import (MeshSchedule, WitnessSpec, assemble, build_mesh, choose_eta,
                               eta_window, is_positive_definite, lambda1, lambda1_levels,
                               optimality_sweep, refinement_stability, witness_quotient,
                               witness_rule)
from hardylab.weights import family

CUBE = 3 * (np.pi / 2) ** 2


@pytest.fixture(scope="module")
def cube_forms():
    cfg = build_configuration([[0.0, 0.0, 0.0]], default_r0=1.0)
    return assemble(None, cfg, 0.0, L=1.0, spacing=1 / 16, layers=0)


@pytest.fixture(scope="module")
def weighted_pair_forms():
    cfg = build_configuration([[1.0, 0, 0], [-1.0, 0, 0]])
    return assemble(family(cfg, 0.5, 1.0, 2.0), cfg, 0.05, L=2.0, spacing=0.5, layers=4)


def test_cube_uniform_mesh(cube_forms):
    assert cube_forms.mesh.dof_count == 32 ** 3
    res = lambda1(cube_forms)
    assert res.lambda1 == pytest.approx(CUBE, rel=0.02)


def test_forms_symmetric_and_mass_definite(weighted_pair_forms):
    f = weighted_pair_forms
    for mat in (f.K, f.P, f.M, f.A):
        asym = abs(mat - mat.T).max()
        assert asym <= 1e-12 * abs(mat).max()
    assert is_positive_definite(f.M)


def test_no_dof_at_poles(weighted_pair_forms):
    f = weighted_pair_forms
    d = f.mesh.config.distances(f.mesh.interior_nodes())
    assert d.min() > 0


def _interior_sum_function(breaks):
    """prod_k s_k(x_k): sum of all interior hat functions on the tensor mesh."""
    def f(x):
        out = np.ones(len(x))
        for k, b in enumerate(breaks):
            t = x[:, k]
            s = np.ones_like(t)
            s = np.where(t < b[1], (t - b[0]) / (b[1] - b[0]), s)
            s = np.where(t > b[-2], (b[-1] - t) / (b[-1] - b[-2]), s)
            out *= np.clip(s, 0.0, 1.0)
        return out
    return f


def test_mass_matrix_total_against_quadrature(weighted_pair_forms):
    f = weighted_pair_forms
    ones = np.ones(f.mesh.dof_count)
    total = ones @ (f.M @ ones)
    psi = _interior_sum_function(f.mesh.breaks)
    rule = build_rule(f.mesh.config, f.mesh.L, panels_per_axis=16)
    ref = integrate(rule, lambda x: psi(x) ** 2, f.spec).value
    assert total == pytest.approx(ref, rel=1e-2)


def test_rayleigh_quotient_consistency(weighted_pair_forms):
    res = lambda1(weighted_pair_forms)
    v = res.eigenvector
    A, M = weighted_pair_forms.A, weighted_pair_forms.M
    assert (v @ (A @ v)) / (v @ (M @ v)) == pytest.approx(res.lambda1, rel=1e-8)


def test_lambda1_monotone_in_c(weighted_pair_forms, rng):
    f1 = weighted_pair_forms.with_c(0.02)
    f2 = weighted_pair_forms.with_c(0.08)
    for _ in range(10):
        v = rng.normal(size=f1.mesh.dof_count)
        q1 = (v @ (f1.A @ v)) / (v @ (f1.M @ v))
        q2 = (v @ (f2.A @ v)) / (v @ (f2.M @ v))
        assert q2 <= q1
    assert lambda1(f2).lambda1 <= lambda1(f1).lambda1


def test_lambda1_respects_ims_bound():
    cfg = build_configuration([[1.0, 0, 0], [-1.0, 0, 0]])
    for c in (0.1, 0.25):
        K = ims_remainder(2, c, cfg.r0, compute_k0(build_partition(cfg), c).k0, 0.0)
        lam = lambda1(assemble(None, cfg, c, L=2.0, spacing=0.25, layers=8)).lambda1
        assert lam >= -K


@pytest.fixture(scope="module")
def single_pole():
    return build_configuration([[0.0, 0.0, 0.0]], default_r0=1.0)


def test_lambda1_subcritical_stabilizes(single_pole):
    lams = [r.lambda1 for r in lambda1_levels(None, single_pole, 0.8 * 0.25, 3)]
    stab = refinement_stability(lams)
    assert min(lams) > -1.0
    assert stab["last_change"] < 0.1 * stab["first_change"]


def test_lambda1_supercritical_diverges(single_pole):
    lams = [r.lambda1 for r in lambda1_levels(None, single_pole, 1.2 * 0.25, 3)]
    assert np.all(np.diff(lams) < 0)
    assert lams[-1] < lams[0] - 100


def test_choose_eta_examples():
    assert eta_window(1.0, 3) == (-1.0, -0.5)
    assert choose_eta(1.0, 3) == -0.75
    lo, hi = eta_window(2.0, 4)
    assert lo == pytest.approx(-np.sqrt(2)) and hi == -1.0
    assert choose_eta(2.0, 4) == pytest.approx(-1.2071, abs=1e-4)
    with pytest.raises(PreconditionError, match="witness requires c > c_o"):
        choose_eta(0.25, 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 6), st.floats(-0.9, 2.0), st.floats(1.001, 6.0))
def test_choose_eta_invariants(N, k2, factor):
    co = hardy_constant(N, k2)
    c = factor * co
    eta = choose_eta(c, N, k2)
    lo, hi = eta_window(c, N, k2)
    assert eta - lo >= 1e-9 * max(1.0, hi - lo) or hi - lo < 2e-9
    assert eta * eta < c
    # |x|^(2 eta) integrable against r^(N-1+k2), |x|^(2 eta - 2) is not
    assert 2 * eta > -(N + k2)
    assert 2 * eta - 2 < -(N + k2)


def test_witness_large_eps_moderate(single_pole):
    q = witness_quotient(None, single_pole, WitnessSpec(0, choose_eta(0.5, 3), 1.0), 0.5)
    assert np.isfinite(q) and abs(q) < 1e3


@pytest.fixture(scope="module")
def witness_sweep(single_pole):
    c = 2 * 0.25
    eta = choose_eta(c, 3)
    rule = witness_rule(single_pole)
    return [witness_quotient(None, single_pole, WitnessSpec(0, eta, e), c, rule)
            for e in (1e-1, 1e-2, 1e-3, 1e-4)]


def test_witness_sweep_strictly_decreasing(witness_sweep):
    assert np.all(np.diff(witness_sweep) < 0)


def test_witness_sweep_crosses_threshold(witness_sweep):
    # expected to fail at this resolution; see the project notes
    assert witness_sweep[-1] < -100


def test_witness_interpolation_improves(single_pole, rng):
    wit = WitnessSpec(0, choose_eta(0.5, 3), 1e-2).function(single_pole)
    x = rng.uniform(-0.9, 0.9, size=(20000, 3))
    errs = []
    # halve the bulk spacing per level; graded layers alone stop helping once
    # the innermost cell is below eps
    for spacing, layers in ((0.25, 4), (0.125, 5), (0.0625, 6)):
        mesh = build_mesh(single_pole, 1.0, spacing, layers)
        grids = np.meshgrid(*mesh.breaks, indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        vals = wit(nodes).reshape(mesh.shape)
        interp = RegularGridInterpolator(mesh.breaks, vals)
        errs.append(np.sqrt(np.mean((interp(x) - wit(x)) ** 2)))
    assert errs[0] > errs[1] > errs[2]


def test_sweep_refuses_critical_constant(single_pole):
    with pytest.raises(PreconditionError, match="sweep requires supercritical c"):
        optimality_sweep(None, single_pole, 0.25)


def test_sweep_confirms_at_1_2_co(single_pole):
    sweep = optimality_sweep(None, single_pole, 1.2 * 0.25)
    assert sweep["lambda1_diverges"]
    assert sweep["verdict"] == "optimality confirmed"


def test_sweep_weighted_four_dimensions():
    cfg = build_configuration([np.zeros(4)], default_r0=1.0)
    spec = family(cfg, 0.5, 0.0, 2.0)
    assert hardy_constant(4, spec.k2) == 0.5625
    sweep = optimality_sweep(spec, cfg, 2 * 0.5625,
                             schedule=MeshSchedule(L=2.0, spacing=0.5, base_layers=2,
                                                   layers_per_level=2))
    assert sweep["c_o"] == 0.5625
    assert sweep["lambda1_diverges"] and sweep["witness_strictly_decreasing"]
    assert sweep["verdict"] == "optimality confirmed"


def test_mesh_rejects_small_box():
    cfg = build_configuration([[1.0, 0, 0], [-1.0, 0, 0]])
    with pytest.raises(PreconditionError):
        build_mesh(cfg, 1.0, 0.25, 4)

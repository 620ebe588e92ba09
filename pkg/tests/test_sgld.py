import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from cmibound.core import CubeDistribution, Seed, SuperSample, sample_membership, sample_stiefel, sample_supersample, select_train
from cmibound.exceptions import CouplingError, ParameterError, ShapeError
from cmibound.mixent import LOG2
from cmibound.problems import ProblemInstance, loss_range
from cmibound.sgld import (
    SGLDConfig,
    SubspaceSGLD,
    distortion_prefactor,
    forgetting_factors,
    lossless_bound,
    lossless_roots,
    lossy_bound,
    lossy_distortion,
    lossy_roots,
    measure_gen_gap,
    perturbed_trajectory,
    q_t,
    run_ensemble,
    train_subspace,
)

D, N = 24, 12


@pytest.fixture(scope="module")
def setup():
    dist = CubeDistribution.random(D, Seed(0))
    ss = sample_supersample(dist, N, Seed(1))
    J = sample_membership(N, Seed(2))
    theta = sample_stiefel(D, 3, Seed(3))
    return dist, ss, J, theta


def test_zero_step_and_noise_keeps_start(setup):
    _, ss, J, theta = setup
    cfg = SGLDConfig(3, 20, 4, eta=0.0, sigma=0.0)
    w0 = np.array([0.1, -0.2, 0.3])
    tr = train_subspace(cfg, ProblemInstance("linear", D), ss, J, theta, Seed(4), w0=w0)
    assert np.array_equal(tr.states, np.tile(w0, (21, 1)))


def test_linear_step_matches_hand_formula(setup):
    _, ss, J, theta = setup
    inst = ProblemInstance("linear", D, L=1.5, R=10.0)
    cfg = SGLDConfig(3, 1, 5, eta=0.2, sigma=0.0, R=10.0)
    tr = train_subspace(cfg, inst, ss, J, theta, Seed(5))
    batch = select_train(ss, J)[tr.batches[0]]
    expected = 0.2 * 1.5 * theta.T @ batch.mean(axis=0)
    assert np.allclose(tr.states[1], expected, atol=1e-14)


def test_gaps_equal_projected_column_difference(setup):
    _, ss, J, theta = setup
    inst = ProblemInstance("linear", D, L=2.0)
    tr = train_subspace(SGLDConfig(3, 15, 4), inst, ss, J, theta, Seed(6))
    expected = 2.0 * np.linalg.norm((ss.points[:, 0] - ss.points[:, 1]) @ theta, axis=1)
    for t in range(15):
        hit = tr.touch[t] > 0
        assert np.allclose(tr.gaps[t, hit], expected[hit], atol=1e-13)
        assert np.all(tr.gaps[t, ~hit] == 0.0)
        assert tr.touch[t].sum() == 4


def test_zero_aux_noise_reproduces_reference(setup):
    _, ss, J, theta = setup
    inst = ProblemInstance("linear", D)
    cfg = SGLDConfig(3, 25, 4, nu=0.0)
    ref = train_subspace(cfg, inst, ss, J, theta, Seed(7))
    pert = perturbed_trajectory(cfg, inst, ss, J, theta, ref, Seed(7))
    assert np.array_equal(pert.states, ref.states)
    assert np.all(pert.coupling[:, 0] == 0.0)


def test_one_step_coupling_is_tight(setup):
    _, ss, J, theta = setup
    inst = ProblemInstance("linear", D, R=50.0)
    cfg = SGLDConfig(3, 1, 4, nu=0.3, R=50.0)
    ref = train_subspace(cfg, inst, ss, J, theta, Seed(8))
    pert = perturbed_trajectory(cfg, inst, ss, J, theta, ref, Seed(8))
    assert pert.coupling[0, 0] == pytest.approx(0.3 * np.linalg.norm(pert.aux_noise[0]), rel=1e-12)
    assert pert.coupling[0, 0] == pytest.approx(pert.coupling[0, 1], rel=1e-12)


def test_contractive_coupling_holds_and_misdeclared_alpha_raises(setup):
    _, ss, J, theta = setup
    # one noiseless step contracts by 1 - eta lam = 0.9
    inst = ProblemInstance("strongly_convex", D, L_c=1.0, lam=2.0, R=1.0)
    good = SGLDConfig(3, 50, 4, eta=0.05, nu=0.01, alpha=0.9)
    ref = train_subspace(good, inst, ss, J, theta, Seed(9))
    pert = perturbed_trajectory(good, inst, ss, J, theta, ref, Seed(9))
    assert np.all(pert.coupling[:, 0] <= pert.coupling[:, 1] * (1 + 1e-9) + 1e-12)
    bad = replace(good, alpha=0.3)
    ref_bad = train_subspace(bad, inst, ss, J, theta, Seed(9))
    with pytest.raises(CouplingError):
        perturbed_trajectory(bad, inst, ss, J, theta, ref_bad, Seed(9))


def test_identical_columns_give_zero_bound(setup):
    dist, ss, J, theta = setup
    same = SuperSample(np.stack([ss.points[:, 0], ss.points[:, 0]], axis=1))
    inst = ProblemInstance("linear", D)
    tr = train_subspace(SGLDConfig(3, 30, 4), inst, same, J, theta, Seed(10))
    assert lossless_bound([tr], 2.0, SGLDConfig(3, 30, 4)) == 0.0


def test_pure_sgd_bound_counts_touches(setup):
    _, ss, J, theta = setup
    inst = ProblemInstance("linear", D)
    cfg = SGLDConfig(3, 40, 4, sigma=0.0)
    tr = train_subspace(cfg, inst, ss, J, theta, Seed(11))
    C = float(np.subtract(*loss_range(inst)[::-1]))
    steps = (tr.touch > 0).sum(axis=0)
    expected = C * math.sqrt(2) / N * np.sum(np.sqrt(steps * LOG2))
    assert lossless_bound([tr], C, cfg) == pytest.approx(expected, rel=1e-12)


def test_bound_decreases_with_sigma(setup):
    _, ss, J, theta = setup
    inst = ProblemInstance("linear", D)
    cfg = SGLDConfig(3, 40, 4, sigma=0.05)
    tr = train_subspace(cfg, inst, ss, J, theta, Seed(12))
    vals = [lossless_bound([tr], 2.0, replace(cfg, sigma=s)) for s in (0.01, 0.05, 0.2, 1.0)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_q_t_values():
    assert q_t(1.0, 0.1, 1.0, 10.0) == pytest.approx(1 - 2 * stats.norm.sf(0.11), rel=1e-14)
    assert q_t(1.0, 0.1, 1.0, 10.0) == pytest.approx(0.0876, abs=5e-5)
    assert q_t(1.0, 0.1, 1.0, 0.0) == 1.0
    assert q_t(1.0, 0.1, 1.0, 1e9) == pytest.approx(0.0, abs=1e-8)


@given(st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_q_t_monotone_in_sigma_hat(s1, s2):
    lo, hi = sorted((s1, s2))
    assert q_t(1.0, 0.1, 1.0, hi) <= q_t(1.0, 0.1, 1.0, lo) + 1e-15


def test_distortion_terms():
    assert distortion_prefactor(1, 1.0) == pytest.approx(2 * math.sqrt(2) / math.sqrt(math.pi), rel=1e-14)
    assert distortion_prefactor(1, 1.0) == pytest.approx(1.5958, abs=5e-5)
    assert lossy_distortion(SGLDConfig(4, 10, 2, nu=0.0)) == 0.0
    cfg = SGLDConfig(1, 3, 1, nu=[0.1, 0.2, 0.3], alpha=0.5)
    assert lossy_distortion(cfg) == pytest.approx(distortion_prefactor(1, 1.0) * (0.1 * 0.25 + 0.2 * 0.5 + 0.3))


def test_lossy_equals_lossless_without_aux_noise(setup):
    _, ss, J, theta = setup
    inst = ProblemInstance("linear", D)
    cfg = SGLDConfig(3, 30, 4, nu=0.0)
    ref = train_subspace(cfg, inst, ss, J, theta, Seed(13))
    pert = perturbed_trajectory(cfg, inst, ss, J, theta, ref, Seed(13))
    assert np.allclose(lossy_roots(pert, cfg, forgetting=False), lossless_roots(ref, cfg), atol=1e-12)
    rep = lossy_bound([pert], 2.0, cfg, references=[ref], forgetting=False)
    assert rep.lossy_total == pytest.approx(rep.lossless_total, abs=1e-12)
    assert rep.distortion_term == 0.0


def test_forgetting_only_shrinks(setup):
    _, ss, J, theta = setup
    inst = ProblemInstance("linear", D)
    cfg = SGLDConfig(3, 30, 4, sigma=0.5, nu=0.01)
    ref = train_subspace(cfg, inst, ss, J, theta, Seed(14))
    pert = perturbed_trajectory(cfg, inst, ss, J, theta, ref, Seed(14))
    assert np.all(lossy_roots(pert, cfg, True) <= lossy_roots(pert, cfg, False) + 1e-15)
    assert np.all((forgetting_factors(cfg) >= 0) & (forgetting_factors(cfg) <= 1))


def test_states_stay_in_ball(setup):
    _, ss, J, theta = setup
    inst = ProblemInstance("linear", D, R=0.3)
    tr = train_subspace(SGLDConfig(3, 60, 4, eta=0.5, sigma=0.5, R=0.3), inst, ss, J, theta, Seed(15))
    assert np.all(np.linalg.norm(tr.states, axis=1) <= 0.3 + 1e-12)


def test_input_validation(setup):
    _, ss, J, theta = setup
    inst = ProblemInstance("linear", D)
    with pytest.raises(ParameterError):
        train_subspace(SGLDConfig(3, 5, 4), inst, ss, J, 2 * theta, Seed(0))
    with pytest.raises(ShapeError):
        train_subspace(SGLDConfig(2, 5, 4), inst, ss, J, theta, Seed(0))
    with pytest.raises(ParameterError):
        train_subspace(SGLDConfig(3, 5, N + 1), inst, ss, J, theta, Seed(0))
    with pytest.raises(ShapeError):
        SGLDConfig(3, 5, 4, eta=[0.1, 0.2])
    with pytest.raises(ParameterError):
        SGLDConfig(3, 5, 4, sigma=-0.1)
    with pytest.raises(ParameterError):
        lossless_bound([], 1.0, SGLDConfig(3, 5, 4))


def test_zero_step_size_generalizes():
    # with eta = 0 the output ignores the data, so the mean gap is zero
    inst = ProblemInstance("linear", D)
    dist = CubeDistribution.random(D, Seed(20))
    est = measure_gen_gap(SGLDConfig(3, 10, 4, eta=0.0, sigma=0.3), inst, dist, N, 200, Seed(21))
    assert abs(est.value) <= 4 * est.std_error + 1e-12


def test_ensemble_reproducible():
    inst = ProblemInstance("linear", D)
    dist = CubeDistribution.random(D, Seed(22))
    cfg = SGLDConfig(3, 10, 4, nu=0.01)
    a = run_ensemble(cfg, inst, dist, N, 3, Seed(23))
    b = run_ensemble(cfg, inst, dist, N, 3, Seed(23))
    assert [m.gen_gap for m in a] == [m.gen_gap for m in b]
    assert all(m.perturbed is not None for m in a)


def test_estimator_api():
    inst = ProblemInstance("linear", D)
    X = CubeDistribution.random(D, Seed(0)).sample(N, Seed(1).generator())
    est = SubspaceSGLD(inst, n_components=3, n_steps=20, batch_size=4, random_state=5).fit(X)
    again = SubspaceSGLD(inst, n_components=3, n_steps=20, batch_size=4, random_state=5).fit(X)
    assert est.coef_.shape == (D,)
    assert np.array_equal(est.coef_, again.coef_)
    assert np.allclose(est.coef_, est.theta_ @ est.subspace_coef_)
    with pytest.raises(ParameterError):
        SubspaceSGLD().fit(X)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmibound.core import CubeDistribution, FiniteSupport, Seed, SphereUniform
from cmibound.exceptions import ParameterError, ShapeError, UnsupportedError
from cmibound.problems import (
    EmpiricalRiskMinimizer,
    ProblemInstance,
    ProjectedGradientDescent,
    audit_lipschitz,
    empirical_risk,
    erm_linear,
    gen_error,
    gen_error_rows,
    loss,
    loss_grad,
    loss_matrix,
    loss_range,
    population_risk,
)

seeds = st.integers(0, 2**32)


def _data(D, n, root):
    dist = CubeDistribution.random(D, Seed(root))
    return dist, dist.sample(n, Seed(root).child(1).generator())


@given(st.integers(1, 12), st.integers(1, 20), seeds, st.floats(0.1, 3.0))
def test_linear_gen_identity(D, n, root, L):
    inst = ProblemInstance("linear", D, L=L)
    dist, Z = _data(D, n, root)
    w = Seed(root).child(2).generator().standard_normal(D)
    two_risk = population_risk(inst, dist, w) - empirical_risk(inst, Z, w)
    direct = -L * float(w @ (dist.mean() - Z.mean(axis=0)))
    assert two_risk == pytest.approx(direct, abs=1e-12)
    assert gen_error(inst, dist, Z, w) == pytest.approx(direct, abs=1e-12)


@given(st.integers(1, 12), st.integers(1, 20), seeds)
def test_erm_attains_minimum(D, n, root):
    inst = ProblemInstance("linear", D, R=0.7)
    _, Z = _data(D, n, root)
    w = erm_linear(inst, Z)
    zbar = Z.mean(axis=0)
    assert empirical_risk(inst, Z, w) == pytest.approx(-np.linalg.norm(zbar) * 0.7, abs=1e-12)
    assert np.linalg.norm(w) <= 0.7 + 1e-12


def test_erm_zero_mean_returns_zero():
    inst = ProblemInstance("linear", 2)
    Z = np.array([[0.5, 0.5], [-0.5, -0.5]])
    assert np.array_equal(erm_linear(inst, Z), np.zeros(2))


@given(st.integers(1, 10), st.integers(1, 15), seeds, st.floats(0.2, 2.0), st.floats(0.2, 3.0))
def test_strongly_convex_gen_equals_linear(D, n, root, Lc, lam):
    sc = ProblemInstance("strongly_convex", D, L_c=Lc, lam=lam)
    lin = ProblemInstance("linear", D, L=Lc)
    dist, Z = _data(D, n, root)
    w = Seed(root).child(3).generator().uniform(-1, 1, D)
    assert gen_error(sc, dist, Z, w) == pytest.approx(gen_error(lin, dist, Z, w), abs=1e-12)


def test_strongly_convex_erm_projects():
    inst = ProblemInstance("strongly_convex", 3, L_c=1.0, lam=0.1, R=1.0)
    Z = np.tile([[1.0, 0.0, 0.0]], (4, 1))
    assert np.allclose(erm_linear(inst, Z), [1.0, 0.0, 0.0])
    inst2 = ProblemInstance("strongly_convex", 3, L_c=1.0, lam=4.0, R=1.0)
    assert np.allclose(erm_linear(inst2, Z), [0.25, 0.0, 0.0])


def test_squared_loss_closed_form_population():
    inst = ProblemInstance("squared", 2, L=1.0)
    dist = FiniteSupport([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5])
    w = np.array([0.3, -0.2])
    exact = np.mean([-np.sum((w - a) ** 2) for a in dist.atoms])
    assert population_risk(inst, dist, w) == pytest.approx(exact, abs=1e-12)


@given(st.integers(1, 6), seeds)
def test_gradients_match_finite_differences(D, root):
    rng = Seed(root).generator()
    Z = SphereUniform(D).sample(3, rng)
    w = rng.uniform(-0.5, 0.5, D)
    for inst in (ProblemInstance("linear", D), ProblemInstance("strongly_convex", D, lam=0.7), ProblemInstance("squared", D)):
        g = loss_grad(inst, Z, w)
        h = 1e-6
        for k in range(D):
            e = np.zeros(D)
            e[k] = h
            fd = (loss_matrix(inst, Z, w + e)[0] - loss_matrix(inst, Z, w - e)[0]) / (2 * h)
            assert np.allclose(g[:, k], fd, atol=1e-6)


def _logistic_instance(D):
    def link(t, Z):
        return np.logaddexp(0.0, -t)

    def link_grad(t, Z):
        return -1.0 / (1.0 + np.exp(t))

    return ProblemInstance("generalized_linear", D, L=1.0, B=1.0, link=link, link_grad=link_grad, loss_bounds=(0.0, np.log1p(np.e)))


def test_generalized_linear_lipschitz_audit():
    inst = _logistic_instance(5)
    audit = audit_lipschitz(inst, SphereUniform(5), n_probes=500, seed=3)
    assert audit.ok and audit.worst_ratio <= 1.0


def test_audit_flags_wrong_constant():
    def link(t, Z):
        return 3.0 * t

    inst = ProblemInstance("generalized_linear", 4, L=1.0, link=link)
    assert not audit_lipschitz(inst, SphereUniform(4), n_probes=200, seed=0).ok


def test_generalized_linear_mc_population_risk():
    inst = _logistic_instance(3)
    w = np.array([0.5, 0.0, 0.0])
    est = population_risk(inst, SphereUniform(3), w, n_samples=200_000, random_state=1, return_ci=True)
    assert est.half_width > 0
    # E log(1 + exp(-0.5 z_1)) with z_1 uniform on [-1, 1] for the 3-sphere
    x = np.linspace(-1, 1, 200_001)
    exact = np.trapezoid(np.logaddexp(0.0, -0.5 * x), x) / 2
    assert abs(est.value - exact) <= 4 * est.std_error
    g = gen_error_rows(inst, SphereUniform(3), np.eye(3), w[None, :], seed=Seed(0))
    assert g.shape == (1,)
    assert loss_range(inst) == (0.0, pytest.approx(np.log1p(np.e)))


def test_generalized_linear_requires_link_and_bounds():
    with pytest.raises(ParameterError):
        ProblemInstance("generalized_linear", 3)
    inst = ProblemInstance("generalized_linear", 3, link=lambda t, Z: t)
    with pytest.raises(UnsupportedError):
        loss_range(inst)
    with pytest.raises(UnsupportedError):
        loss_grad(inst, np.eye(3), np.zeros(3))


def test_loss_shapes_and_errors():
    inst = ProblemInstance("linear", 3)
    assert isinstance(loss(inst, [1.0, 0.0, 0.0], [0.5, 0.0, 0.0]), float)
    assert loss(inst, np.eye(3), [0.5, 0.0, 0.0]).shape == (3,)
    with pytest.raises(ShapeError):
        loss(inst, [1.0, 0.0], [0.5, 0.0, 0.0])
    with pytest.raises(ParameterError):
        ProblemInstance("hinge", 3)
    with pytest.raises(ParameterError):
        ProblemInstance("linear", 3, R=0.0)
    with pytest.raises(ShapeError):
        population_risk(inst, SphereUniform(4), np.zeros(3))


def test_loss_range_contains_losses():
    for inst in (ProblemInstance("linear", 4, L=2.0, R=0.5), ProblemInstance("strongly_convex", 4, lam=2.0), ProblemInstance("squared", 4)):
        lo, hi = loss_range(inst)
        rng = Seed(9).generator()
        Z = SphereUniform(4).sample(200, rng)
        W = rng.standard_normal((50, 4))
        W *= inst.R * rng.random((50, 1)) / np.linalg.norm(W, axis=1, keepdims=True)
        vals = loss_matrix(inst, Z, W)
        assert vals.min() >= lo - 1e-12 and vals.max() <= hi + 1e-12


def test_learners_emit_hypotheses_in_ball():
    inst = ProblemInstance("linear", 6, R=0.8)
    dist, Z = _data(6, 30, 4)
    erm = EmpiricalRiskMinimizer(inst).fit(Z)
    pgd = ProjectedGradientDescent(inst, step_size=0.5, n_iter=200).fit(Z)
    assert np.linalg.norm(erm.coef_) <= 0.8 + 1e-12
    assert np.linalg.norm(pgd.coef_) <= 0.8 + 1e-12
    assert pgd.score(Z) == pytest.approx(erm.score(Z), abs=1e-9)
    assert erm.get_params()["problem"] is inst
    with pytest.raises(ParameterError):
        EmpiricalRiskMinimizer().fit(Z)

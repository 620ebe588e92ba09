import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from cmibound import compress
from cmibound.compress import (
    CompressedHypothesis,
    CompressorConfig,
    JLCompressor,
    ball_coord_abs_mean,
    clip_project,
    cmi_cap,
    norm_blowup_lower_bound,
    pushforward_norm_moments,
    quantize,
    reconstruct,
    tail_bound,
    theta_token,
)
from cmibound.core import Seed, sample_gaussian_matrix
from cmibound.exceptions import ParameterError, ShapeError, UsageError

c_ws = st.floats(1.0, math.sqrt(1.25), exclude_max=True)
nus = st.floats(1e-3, 1.0)
seeds = st.integers(0, 2**32)


@given(st.integers(1, 50), c_ws, nus)
def test_config_accepts_valid_ranges(d, c_w, nu):
    cfg = CompressorConfig(d, c_w, nu)
    assert cfg.to_dict() == {"d": d, "c_w": c_w, "nu": nu}


@pytest.mark.parametrize("args", [(0, 1.0, 0.4), (1, 0.99, 0.4), (1, math.sqrt(1.25), 0.4), (1, 1.0, 0.0), (1, 1.0, 1.01), (1.5, 1.0, 0.4)])
def test_config_rejects_invalid(args):
    with pytest.raises(ParameterError):
        CompressorConfig(*args)


def test_clip_boundary_kept():
    theta = np.eye(3)
    w = np.array([0.6, 0.8, 0.0])
    assert np.array_equal(clip_project(theta, w, 1.0), w)
    assert np.array_equal(clip_project(theta, 2 * w, 1.0), np.zeros(3))
    assert np.array_equal(clip_project(theta, np.zeros(3), 1.0), np.zeros(3))


def test_clip_batches_rows_independently():
    theta = np.eye(2)
    W = np.array([[0.5, 0.0], [3.0, 0.0]])
    assert np.array_equal(clip_project(theta, W, 1.0), [[0.5, 0.0], [0.0, 0.0]])
    with pytest.raises(ShapeError):
        clip_project(theta, np.zeros(3), 1.0)


@given(st.integers(1, 6), st.integers(0, 10), c_ws, nus, seeds)
def test_code_norm_at_most_cw_plus_nu(d, extra, c_w, nu, root):
    D = d + extra
    comp = JLCompressor(d, c_w, nu, random_state=root).fit(n_features=D)
    rng = Seed(root).child(7).generator()
    W = rng.standard_normal((20, D))
    W /= np.maximum(np.linalg.norm(W, axis=1, keepdims=True), 1.0)
    codes = comp.transform(W, rng=rng)
    assert np.all(np.linalg.norm(codes, axis=1) <= c_w + nu + 1e-12)
    U = comp.clip(W)
    assert np.all(np.linalg.norm(codes - U, axis=1) <= nu * (1 + 1e-12))


def test_dither_unbiased():
    U = np.array([1.0, 0.0, 0.0])
    draws = np.array([quantize(U, 0.4, Seed(3).child(k)).w_hat for k in range(10**5)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - U) <= 3 * se)


def test_quantize_small_radius_and_clip_check():
    U = np.array([0.3, -0.2])
    q = quantize(U, 1e-9, Seed(0))
    assert isinstance(q, CompressedHypothesis)
    assert np.linalg.norm(q.w_hat - U) <= 1e-9
    with pytest.raises(ParameterError):
        quantize(np.array([2.0, 0.0]), 0.1, Seed(0), c_w=1.0)
    with pytest.raises(ParameterError):
        quantize(U, 0.0, Seed(0))


def test_reconstruct_identity_and_token():
    theta = sample_gaussian_matrix(5, 2, Seed(1))
    other = sample_gaussian_matrix(5, 2, Seed(2))
    code = CompressedHypothesis(np.array([0.1, 0.2]), theta_token(theta))
    assert np.allclose(reconstruct(theta, code), theta @ [0.1, 0.2])
    assert np.array_equal(reconstruct(theta, np.zeros(2)), np.zeros(5))
    with pytest.raises(UsageError):
        reconstruct(other, code)
    with pytest.raises(ShapeError):
        reconstruct(theta, np.zeros(3))
    assert np.array_equal(reconstruct(np.eye(3), np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])


def test_reconstruct_norm_over_projections():
    # E ||Theta w_hat||^2 = (D/d) ||w_hat||^2 over Theta draws
    D, d, m = 8, 2, 10**6
    w_hat = np.array([0.6, -0.3])
    rng = Seed(12).generator()
    vals = np.empty(m)
    for k in range(0, m, 100_000):
        theta = rng.standard_normal((100_000, D, d)) / np.sqrt(d)
        vals[k : k + 100_000] = np.sum((theta @ w_hat) ** 2, axis=1)
    assert abs(vals.mean() / (D / d * w_hat @ w_hat) - 1) <= 0.03


def test_estimator_api():
    comp = JLCompressor(2, 1.05, 0.3, random_state=4)
    params = comp.get_params()
    assert params == {"n_components": 2, "clip_radius": 1.05, "dither_radius": 0.3, "projection": "gaussian", "random_state": 4}
    X = np.zeros((3, 7))
    comp.fit(X)
    assert comp.theta_.shape == (7, 2) and comp.n_features_in_ == 7
    again = clone(comp).fit(X)
    assert np.array_equal(again.theta_, comp.theta_)
    back = comp.inverse_transform(comp.transform(X[0]))
    assert back.shape == (7,)
    code = comp.compress(X[0])
    assert code.theta_ref == comp.theta_id_
    with pytest.raises(ParameterError):
        JLCompressor(2).fit()
    with pytest.raises(ParameterError):
        JLCompressor(2, projection="identity").fit(n_features=3)
    with pytest.raises(ParameterError):
        JLCompressor(2, projection="sparse").fit(n_features=3)


def test_transform_reproducible_with_explicit_rng():
    comp = JLCompressor(3, random_state=1).fit(n_features=10)
    w = np.full(10, 0.1)
    a = comp.transform(w, rng=Seed(5).generator())
    b = comp.transform(w, rng=Seed(5).generator())
    assert np.array_equal(a, b)


def test_cmi_cap_values():
    assert cmi_cap(CompressorConfig(1, 1.0, 0.4)) == pytest.approx(math.log(3.5), abs=1e-15)
    assert cmi_cap(CompressorConfig(1, 1.0, 0.4)) == pytest.approx(1.252763, abs=1e-6)
    assert cmi_cap(CompressorConfig(2, 1.0, 0.4)) == pytest.approx(2 * math.log(3.5))
    assert cmi_cap(CompressorConfig(3, 1.0, 1.0)) == pytest.approx(3 * math.log(2))


@given(st.integers(1, 500), c_ws)
def test_tail_bound_formula_and_monotone(d, c_w):
    val = tail_bound(d, c_w)
    assert val == pytest.approx(math.exp(-0.21 * d * (c_w**2 - 1) ** 2), rel=1e-14)
    assert tail_bound(d + 1, c_w) <= val


def test_tail_bound_examples():
    assert tail_bound(7, 1.0) == 1.0
    assert tail_bound(100, 1.1) == pytest.approx(math.exp(-0.9261), rel=1e-12)
    assert tail_bound(100, 1.1) == pytest.approx(0.3961, abs=5e-5)
    with pytest.raises(ParameterError):
        tail_bound(1, 1.2)


def test_clip_frequency_dominated():
    freq = compress.mc_clip_frequency(30, 10, [1.0, 1.05, 1.1], 40_000, Seed(3))
    for c, est in freq.items():
        assert est.value <= tail_bound(10, c) + 3 * est.std_error


@given(st.integers(1, 60), st.integers(0, 60), st.floats(0.0, 3.0))
def test_pushforward_moments_formula(d, extra, wn):
    D = d + extra
    m2, m4 = pushforward_norm_moments(D, d, wn)
    assert m2 == pytest.approx((D + d + 1) / d * wn**2, rel=1e-14)
    assert m4 == pytest.approx((D + d + 3) * (D + d + 5) * (d + 2) / d**3 * wn**4, rel=1e-14)
    assert m4 >= m2**2 * (1 - 1e-12)  # Jensen


def test_pushforward_mc_small():
    m2, m4 = compress.mc_pushforward_moments(6, 2, 200_000, Seed(9))
    e2, e4 = pushforward_norm_moments(6, 2, 1.0)
    assert abs(m2.value - e2) <= 4 * m2.std_error
    assert abs(m4.value - e4) <= 4 * m4.std_error


def test_norm_blowup_arithmetic():
    # independent arithmetic of the closed form at D=1e4, d=10
    D, d, c_w, nu = 10_000, 10, 1.1, 0.4
    m2 = (D + d + 1) / d
    root_m4 = math.sqrt((D + d + 3) * (D + d + 5) * (d + 2) / d**3)
    expected = m2 - root_m4 * math.exp(-0.1 * d * (c_w**2 - 1) ** 2) - D * nu**2 / d
    assert norm_blowup_lower_bound(D, d, c_w, nu, 1.0) == pytest.approx(expected, rel=1e-13)
    assert m2 == pytest.approx(1001.1)
    assert expected == pytest.approx(-208.553, abs=1e-3)
    # c_w = 1: the exponential factor equals one
    lb = norm_blowup_lower_bound(50, 5, 1.0, 0.4, 1.0)
    m2b, m4b = pushforward_norm_moments(50, 5, 1.0)
    assert lb == pytest.approx(m2b - math.sqrt(m4b) - 50 * 0.16 / 5, rel=1e-13)


def test_norm_blowup_monotone_in_D():
    vals = [norm_blowup_lower_bound(D, 2000, 1.1, 0.4, 1.0) for D in range(2000, 40_000, 2000)]
    assert np.all(np.diff(vals) > 0)


def test_norm_blowup_below_mc():
    D, d, c_w, nu = 40, 4, 1.1, 0.4
    est = compress.mc_compressed_norm_sq(D, d, c_w, nu, 1.0, 100_000, Seed(2))
    assert est.value >= norm_blowup_lower_bound(D, d, c_w, nu, 1.0)


def test_ball_coord_abs_mean_values():
    assert ball_coord_abs_mean(1, 0.8) == pytest.approx(0.4, abs=1e-15)
    assert ball_coord_abs_mean(2, 1.0) == pytest.approx(4 / (3 * math.pi), abs=1e-15)
    # log-gamma keeps huge d finite; E|V_1| ~ nu sqrt(2 / (pi d))
    big = ball_coord_abs_mean(10**6, 1.0)
    assert big == pytest.approx(math.sqrt(2 / (math.pi * 10**6)), rel=1e-5)


@pytest.mark.parametrize("d", [1, 3, 7])
def test_ball_coord_abs_mean_vs_mc(d):
    est = compress.mc_ball_coord_abs_mean(d, 0.5, 200_000, Seed(d))
    assert abs(est.value - ball_coord_abs_mean(d, 0.5)) <= 4 * est.std_error

import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from scipy import stats

from cmibound.core import Seed
from cmibound.exceptions import ParameterError
from cmibound.mixent import (
    LOG2,
    MixtureParams,
    binary_entropy,
    f_ap,
    f_table,
    gmix_logpdf,
    gmix_pdf,
    mc_mixture_entropy,
    write_f_table,
)

gaps = st.floats(-30.0, 30.0)
weights = st.floats(0.0, 1.0)


def _f_trapezoid(a, p):
    # independent route: scipy.stats densities on a dense grid
    x = np.linspace(min(0.0, a) - 14, max(0.0, a) + 14, 400_001)
    g = p * stats.norm.pdf(x) + (1 - p) * stats.norm.pdf(x, loc=a)
    h = -np.trapezoid(np.where(g > 0, g * np.log(np.where(g > 0, g, 1.0)), 0.0), x)
    return h - 0.5 * math.log(2 * math.pi * math.e)


def test_pdf_reduces_to_standard_normal():
    x = np.linspace(-4, 4, 17)
    assert np.allclose(gmix_pdf(x, 0.0, 0.3), stats.norm.pdf(x), rtol=1e-14)
    assert np.allclose(gmix_pdf(x, 5.0, 1.0), stats.norm.pdf(x), rtol=1e-14)
    assert gmix_pdf(1.0, 0.0, 0.5) == pytest.approx(0.24197, abs=5e-6)
    assert isinstance(gmix_pdf(1.0, MixtureParams(1.0, 0.5)), float)


@given(gaps, weights)
@example(1.0, 2.2250738585e-313)
def test_pdf_integrates_to_one(a, p):
    x = np.linspace(min(0.0, a) - 12, max(0.0, a) + 12, 20_001)
    assert np.trapezoid(gmix_pdf(x, a, p), x) == pytest.approx(1.0, abs=1e-9)


def test_logpdf_is_stable_in_tails():
    assert np.isfinite(gmix_logpdf(60.0, 0.0, 0.5))
    assert gmix_logpdf(60.0, 0.0, 0.5) == pytest.approx(stats.norm.logpdf(60.0), rel=1e-12)


def test_pdf_rejects_infinite_gap():
    with pytest.raises(ParameterError):
        gmix_pdf(0.0, math.inf, 0.5)
    with pytest.raises(ParameterError):
        MixtureParams(1.0, 1.5)


def test_binary_entropy_values():
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.25) == pytest.approx(0.81128, abs=5e-6)


def test_f_boundary_values():
    for p in (0.1, 0.5, 0.9):
        assert f_ap(0.0, p) == 0.0
        assert f_ap(0.0, p, method="quad") < 1e-8
    assert f_ap(math.inf, 0.5) == pytest.approx(LOG2, abs=1e-15)
    assert f_ap(-math.inf, 0.25) == pytest.approx(LOG2 * 0.8112781244591328, rel=1e-12)
    assert f_ap(3.0, 0.0) == 0.0 and f_ap(3.0, 1.0) == 0.0


@settings(max_examples=40)
@given(st.floats(-20.0, 20.0), st.floats(0.01, 0.99))
def test_f_symmetries(a, p):
    base = f_ap(a, p)
    assert abs(f_ap(-a, p) - base) <= 1e-10
    assert abs(f_ap(a, 1 - p) - base) <= 1e-10
    assert 0.0 <= base <= LOG2


@pytest.mark.parametrize("p", [0.1, 0.2, 0.3, 0.4, 0.5])
def test_f_large_gap_limit(p):
    assert abs(f_ap(50.0, p, method="quad") - LOG2 * binary_entropy(p)) <= 1e-6


@pytest.mark.parametrize("a,p", [(0.5, 0.5), (1.0, 0.3), (2.0, 0.5), (4.0, 0.1), (8.0, 0.7)])
def test_f_matches_independent_trapezoid(a, p):
    assert f_ap(a, p) == pytest.approx(_f_trapezoid(a, p), abs=1e-8)


def test_f_monotone_on_grids():
    a_grid = np.linspace(0.0, 10.0, 41)
    p_grid = np.linspace(0.02, 0.5, 25)
    table = f_table(a_grid, p_grid)
    assert np.all(np.diff(table[1:], axis=0) > 0)
    assert np.all(np.diff(table[1:], axis=1) > 0)


def test_quad_and_auto_agree_below_crossover():
    for a in (0.3, 5.0, 39.0):
        assert f_ap(a, 0.4, method="quad") == pytest.approx(f_ap(a, 0.4), abs=1e-12)
    # across the crossover the two routes stay within the limit tolerance
    assert abs(f_ap(41.0, 0.4, method="quad") - f_ap(41.0, 0.4)) <= 1e-6


def test_f_method_validation():
    with pytest.raises(ParameterError):
        f_ap(math.inf, 0.5, method="quad")
    with pytest.raises(ParameterError):
        f_ap(1.0, 0.5, method="simpson")


def test_mc_entropy_matches_quadrature():
    est = mc_mixture_entropy(1.5, 0.3, 400_000, Seed(2))
    assert abs(est.value - f_ap(1.5, 0.3)) <= 4 * est.std_error


def test_write_f_table(tmp_path):
    path = tmp_path / "f.csv"
    table = write_f_table(path, [0.0, 1.0], [0.5])
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1] == "a,p,f"
    assert len(lines) == 4
    assert float(lines[3].split(",")[2]) == table[1, 0]

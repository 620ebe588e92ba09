import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from cmibound.compress import JLCompressor
from cmibound.core import CubeDistribution, Seed, select_ghost, select_train
from cmibound.exceptions import ParameterError
from cmibound.memor import (
    ConstantAdversary,
    CorrelationAdversary,
    DummyAdversary,
    FrontierReport,
    compressed_tracing_probe,
    correlation_statistics,
    dummy_adversary,
    dummy_best_recall,
    dummy_closed_form,
    dummy_feasible,
    play_recall_game,
)
from cmibound.problems import EmpiricalRiskMinimizer, ProblemInstance

D = 64


@pytest.fixture(scope="module")
def game():
    inst = ProblemInstance("linear", D)
    dist = CubeDistribution.random(D, Seed(0))
    return inst, dist, EmpiricalRiskMinimizer(inst)


@pytest.mark.parametrize("bit", [0, 1])
def test_constant_adversaries(game, bit):
    inst, dist, erm = game
    rep = play_recall_game(erm, inst, dist, 10, ConstantAdversary(bit), 30, Seed(1))
    assert rep.soundness_hat == bit
    assert rep.recall_counts[10 * bit] == 30
    assert rep.recall_prob(10)[0] == bit and rep.recall_prob(0)[0] == 1.0


def test_dummy_extremes(game):
    inst, dist, erm = game
    silent = play_recall_game(erm, inst, dist, 8, dummy_adversary(1.0, 0.3), 50, Seed(2))
    assert silent.soundness_hat == 0.0 and silent.recall_counts[0] == 50
    loud = play_recall_game(erm, inst, dist, 8, dummy_adversary(0.0, 0.0), 50, Seed(2))
    assert loud.soundness_hat == 1.0 and loud.recall_counts[8] == 50


def test_dummy_ignores_membership(game):
    inst, dist, erm = game
    rep = play_recall_game(erm, inst, dist, 10, DummyAdversary(0.2, 0.6), 4000, Seed(3), keep_transcript=True)
    mem = np.concatenate([t["member_guesses"] for t in rep.transcript]).astype(float)
    gho = np.concatenate([t["ghost_guesses"] for t in rep.transcript]).astype(float)
    diff = mem.mean() - gho.mean()
    se = math.sqrt(mem.var() / mem.size + gho.var() / gho.size)
    assert abs(diff) <= 3 * se


@pytest.mark.parametrize("alpha,r_n,n,m", [(0.3, 0.8, 10, 3), (0.0, 0.9, 20, 2), (0.5, 0.5, 6, 4)])
def test_dummy_closed_form_matches_simulation(game, alpha, r_n, n, m):
    inst, dist, erm = game
    trials = 6000
    rep = play_recall_game(lambda X: np.zeros(D), inst, dist, n, DummyAdversary(alpha, r_n, random_state=Seed(9)), trials, Seed(4))
    s_exact, r_exact = dummy_closed_form(alpha, r_n, n, m)
    # independent route for the closed form
    assert s_exact == pytest.approx((1 - alpha) * (1 - r_n**n))
    assert r_exact == pytest.approx((1 - alpha) * sum(stats.binom.pmf(k, n, 1 - r_n) for k in range(m, n + 1)))
    assert abs(rep.soundness_hat - s_exact) <= 4 * math.sqrt(s_exact * (1 - s_exact) / trials) + 1e-12
    r_hat = rep.recall_prob(m)[0]
    assert abs(r_hat - r_exact) <= 4 * math.sqrt(r_exact * (1 - r_exact) / trials) + 1e-12


def test_dummy_feasibility_cases():
    assert dummy_feasible(5, 0.3, 0.3, 20)
    assert dummy_feasible(0, 0.9, 0.0, 20).condition == "m = 0"
    assert not dummy_feasible(100, 0.9, 0.01, 100)


@given(st.integers(1, 40), st.floats(0.05, 0.95), st.floats(0.0, 0.5))
def test_feasible_witness_really_traces(n, q, xi):
    m = max(1, n // 4)
    res = dummy_feasible(m, q, xi, n, step=0.01)
    if res and res.condition == "grid":
        s, r = dummy_closed_form(res.alpha, res.r_n, n, m)
        assert s <= xi + 1e-12 and r >= q - 1e-12


@pytest.mark.parametrize("m,xi,n", [(5, 0.1, 20), (10, 0.05, 40), (1, 0.2, 5)])
def test_best_recall_vs_brute_force(m, xi, n):
    best, alpha, r_n = dummy_best_recall(m, xi, n)
    s, r = dummy_closed_form(alpha, r_n, n, m)
    assert s <= xi + 1e-12 and r == pytest.approx(best)
    a = np.linspace(0, 0.999, 600)[:, None]
    rr = np.linspace(0, 1, 2000)[None, :]
    sound = (1 - a) * (1 - rr**n)
    rec = (1 - a) * stats.binom.sf(m - 1, n, 1 - rr)
    brute = rec[sound <= xi].max()
    assert brute <= best + 1e-3


def test_verdict_semantics(game):
    inst, dist, erm = game
    rep = play_recall_game(erm, inst, dist, 10, ConstantAdversary(1), 40, Seed(5))
    v = rep.verdict(5, 0.9, 0.5)
    assert v == {"consistent": False, "certified": False}
    rep0 = play_recall_game(erm, inst, dist, 10, ConstantAdversary(0), 40, Seed(5))
    assert rep0.verdict(0, 0.5, 0.1) == {"consistent": True, "certified": True}
    with pytest.raises(ParameterError):
        rep0.verdict(11, 0.5, 0.1)


def test_transcript_is_consistent(game):
    inst, dist, erm = game
    rep = play_recall_game(erm, inst, dist, 6, CorrelationAdversary(0.0), 5, Seed(6), keep_transcript=True)
    for rec in rep.transcript:
        mu = dist.mean()
        members, ghosts = select_train(rec["ss"], rec["J"]), select_ghost(rec["ss"], rec["J"])
        assert np.array_equal(rec["member_guesses"], ((members - mu) @ rec["model"] > 0).astype(np.uint8))
        assert np.array_equal(rec["ghost_guesses"], ((ghosts - mu) @ rec["model"] > 0).astype(np.uint8))
    assert rep.to_dict()["adversary"] == {"kind": "correlation", "threshold": 0.0}


def test_correlation_thresholds_extremes(game):
    inst, dist, erm = game
    never = play_recall_game(erm, inst, dist, 8, CorrelationAdversary(math.inf), 10, Seed(7))
    always = play_recall_game(erm, inst, dist, 8, CorrelationAdversary(-math.inf), 10, Seed(7))
    assert never.soundness_hat == 0 and never.recall_mean == 0
    assert always.soundness_hat == 1 and always.recall_mean == 8


def test_identity_compressor_matches_raw(game):
    inst, dist, erm = game
    comp = JLCompressor(D, 1.0, 1e-9, projection="identity")
    raw = correlation_statistics(erm, inst, dist, 8, 20, Seed(8))
    cmp_ = correlation_statistics(erm, inst, dist, 8, 20, Seed(8), compressor=comp)
    assert np.allclose(raw[0], cmp_[0], atol=1e-8)
    assert np.allclose(raw[1], cmp_[1], atol=1e-8)


def test_frontier_probe_and_csv(game, tmp_path):
    inst, dist, erm = game
    rep = compressed_tracing_probe(erm, [None, JLCompressor(1, 1.0, 0.4)], inst, dist, [8], 60, Seed(9), n_thresholds=16)
    assert isinstance(rep, FrontierReport)
    assert len(rep.select(d="raw")) == 16 and len(rep.select(d=1)) == 16
    assert 0.0 <= rep.best_recall_at_soundness(0.1, d="raw") <= 1.0
    for r in rep.rows:
        assert r["soundness_ci"][0] <= r["soundness"] <= r["soundness_ci"][1]
    viol = rep.dichotomy_violations(d="raw", z=0.0)
    assert all(r["recall_prob"] > 0 for r in viol)
    path = tmp_path / "frontier.csv"
    rep.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#")
    rows = list(csv.DictReader(lines[1:]))
    assert tuple(rows[0].keys()) == FrontierReport.CSV_COLUMNS
    assert len(rows) == 32
    assert float(rows[0]["recall_rate"]) == rep.rows[0]["recall_rate"]


def test_adversary_validation():
    with pytest.raises(ParameterError):
        ConstantAdversary(2)
    with pytest.raises(ParameterError):
        DummyAdversary(1.5, 0.1)

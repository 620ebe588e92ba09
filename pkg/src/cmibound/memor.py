"""Recall-game simulator for membership tracing.

In each trial a super-sample and membership vector are drawn, the learner is
trained on the members, and the adversary is queried independently on every
training member and every ghost. Soundness is the probability that at least
one ghost is flagged; recall of ``m`` samples is the probability that at
least ``m`` members are flagged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from ._validation import check_int, check_real
from .bounds import fresh_compressor, as_compressor, fit_hypothesis
from .core import (
    DataDistribution,
    Seed,
    as_seed,
    sample_membership,
    sample_supersample,
    select_ghost,
    select_train,
)
from .exceptions import ParameterError
from .problems import ProblemInstance
from .stats import wilson_interval

__all__ = [
    "Adversary",
    "ConstantAdversary",
    "DummyAdversary",
    "CorrelationAdversary",
    "dummy_adversary",
    "TraceReport",
    "play_recall_game",
    "Feasibility",
    "dummy_feasible",
    "dummy_closed_form",
    "dummy_best_recall",
    "FrontierReport",
    "correlation_statistics",
    "compressed_tracing_probe",
]


# ---------------------------------------------------------------------------
# adversaries
# ---------------------------------------------------------------------------


class Adversary:
    """Membership guesser ``Q(model, z, mu) -> {0, 1}``.

    ``start_trial`` returns the guess function for one game; any randomness
    shared across the queries of a game lives in that closure, so state is
    never shared between trials. The returned function maps a batch of points
    to bits row by row.
    """

    kind = ""
    random_state = None

    def start_trial(self, rng: np.random.Generator) -> Callable:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind}


class ConstantAdversary(Adversary):
    """Always answers ``bit``."""

    kind = "constant"

    def __init__(self, bit: int):
        if bit not in (0, 1):
            raise ParameterError("bit must be 0 or 1")
        self.bit = bit

    def start_trial(self, rng):
        def guess(model, Z, mu, theta=None):
            return np.full(len(Z), self.bit, dtype=np.uint8)

        return guess

    def to_dict(self):
        return {"kind": self.kind, "bit": self.bit}


class DummyAdversary(Adversary):
    """Input-independent guesser.

    With probability ``alpha`` (drawn once per game) it answers 0 everywhere;
    otherwise each query is answered 0 with probability ``r_n``.
    """

    kind = "dummy"

    def __init__(self, alpha: float, r_n: float, random_state=None):
        self.alpha = check_real("alpha", alpha, 0.0, 1.0)
        self.r_n = check_real("r_n", r_n, 0.0, 1.0)
        self.random_state = None if random_state is None else as_seed(random_state)

    def start_trial(self, rng):
        silent = rng.random() < self.alpha

        def guess(model, Z, mu, theta=None):
            if silent:
                return np.zeros(len(Z), dtype=np.uint8)
            return (rng.random(len(Z)) >= self.r_n).astype(np.uint8)

        return guess

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "r_n": self.r_n}


class CorrelationAdversary(Adversary):
    """Flags ``z`` when ``<model, z - E_mu[Z]> > threshold``."""

    kind = "correlation"

    def __init__(self, threshold: float):
        self.threshold = check_real("threshold", threshold, allow_inf=True)

    def start_trial(self, rng):
        def guess(model, Z, mu, theta=None):
            return ((np.asarray(Z) - mu.mean()) @ model > self.threshold).astype(np.uint8)

        return guess

    def to_dict(self):
        return {"kind": self.kind, "threshold": self.threshold}


def dummy_adversary(alpha: float, r_n: float, seed: Seed | int | None = None) -> DummyAdversary:
    """Build the input-independent adversary.

    With ``seed`` its coin flips come from ``seed.child(trial)``; otherwise
    they derive from the game seed.
    """
    return DummyAdversary(alpha, r_n, random_state=seed)


# ---------------------------------------------------------------------------
# the game
# ---------------------------------------------------------------------------


def _half(ci: tuple) -> float:
    return 0.5 * (ci[1] - ci[0])


@dataclass
class TraceReport:
    """Soundness and recall statistics of an adversary.

    Attributes
    ----------
    n, trials : int
    soundness_hat : float
        Fraction of trials with at least one ghost flagged.
    soundness_ci : tuple
        Wilson 95% interval.
    recall_counts : ndarray of shape (n + 1,)
        Histogram of the number of flagged members per trial.
    transcript : list, optional
        Per-trial records when requested.
    """

    n: int
    trials: int
    soundness_hat: float
    soundness_ci: tuple
    recall_counts: np.ndarray
    adversary: dict = field(default_factory=dict)
    transcript: Optional[list] = None

    @property
    def recall_dist(self) -> np.ndarray:
        return self.recall_counts / self.trials

    @property
    def recall_mean(self) -> float:
        return float(np.arange(self.n + 1) @ self.recall_dist)

    @property
    def recall_std_error(self) -> float:
        k = np.arange(self.n + 1)
        var = float((k**2) @ self.recall_dist - self.recall_mean**2)
        return math.sqrt(max(var, 0.0) / max(self.trials - 1, 1))

    def recall_prob(self, m: int) -> tuple[float, tuple]:
        """Estimated ``P(flagged members >= m)`` with its Wilson interval."""
        m = check_int("m", m, 0, self.n)
        hits = int(self.recall_counts[m:].sum())
        return hits / self.trials, wilson_interval(hits, self.trials)

    def verdict(self, m: int, q: float, xi: float) -> dict:
        """CI-qualified ``(m, q, xi)`` tracing verdicts.

        ``consistent``: the estimates do not rule tracing out
        (soundness CI reaches down to ``xi`` and recall CI reaches up to ``q``).
        ``certified``: tracing holds at the CI level
        (soundness CI entirely below ``xi``, recall CI entirely above ``q``).
        """
        q = check_real("q", q, 0.0, 1.0)
        xi = check_real("xi", xi, 0.0, 1.0)
        _, rci = self.recall_prob(m)
        return {
            "consistent": bool(self.soundness_ci[0] <= xi and rci[1] >= q),
            "certified": bool(self.soundness_ci[1] <= xi and rci[0] >= q),
        }

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "trials": self.trials,
            "soundness_hat": self.soundness_hat,
            "soundness_ci": list(self.soundness_ci),
            "recall_counts": self.recall_counts.tolist(),
            "recall_mean": self.recall_mean,
            "adversary": self.adversary,
        }


def _model_for_trial(learner, compressor, inst, dist, n, seed: Seed):
    ss = sample_supersample(dist, n, seed.child(0))
    J = sample_membership(n, seed.child(1))
    members = select_train(ss, J)
    ghosts = select_ghost(ss, J)
    w = fit_hypothesis(learner, members, seed.child(2))
    theta = None
    if compressor is not None:
        comp = fresh_compressor(as_compressor(compressor), inst.D, seed.child(3))
        w = comp.inverse_transform(comp.transform(w, rng=seed.child(4).generator()))
        theta = comp.theta_
    return ss, J, members, ghosts, w, theta


def play_recall_game(
    learner,
    inst: ProblemInstance,
    dist: DataDistribution,
    n: int,
    adversary: Adversary,
    trials: int,
    seed: Seed | int = 0,
    compressor=None,
    keep_transcript: bool = False,
) -> TraceReport:
    """Simulate the recall game.

    Parameters
    ----------
    learner : estimator or callable
    inst, dist : problem instance and data distribution
    n : int
    adversary : Adversary
    trials : int
    seed : Seed or int
    compressor : CompressorConfig or JLCompressor, optional
        When given, the adversary sees ``Theta W_hat`` (and ``Theta``) instead
        of the raw hypothesis; a fresh projection is drawn per trial.
    keep_transcript : bool
        Store per-trial ``(S~, J, model, guesses)``.
    """
    n = check_int("n", n, 1)
    trials = check_int("trials", trials, 1)
    seed = as_seed(seed)
    counts = np.zeros(n + 1, dtype=np.int64)
    sound_hits = 0
    transcript = [] if keep_transcript else None
    for t in range(trials):
        ts = seed.child(t)
        ss, J, members, ghosts, model, theta = _model_for_trial(learner, compressor, inst, dist, n, ts)
        adv_seed = ts.child(5) if adversary.random_state is None else adversary.random_state.child(t)
        guess = adversary.start_trial(adv_seed.generator())
        g_mem = guess(model, members, dist, theta)
        g_gho = guess(model, ghosts, dist, theta)
        counts[int(g_mem.sum())] += 1
        sound_hits += int(g_gho.any())
        if keep_transcript:
            transcript.append({"ss": ss, "J": J, "model": model, "member_guesses": g_mem, "ghost_guesses": g_gho})
    return TraceReport(
        n=n,
        trials=trials,
        soundness_hat=sound_hits / trials,
        soundness_ci=wilson_interval(sound_hits, trials),
        recall_counts=counts,
        adversary=adversary.to_dict(),
        transcript=transcript,
    )


# ---------------------------------------------------------------------------
# dummy feasibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Feasibility:
    """Outcome of the dummy feasibility search; truthy when feasible."""

    feasible: bool
    alpha: Optional[float] = None
    r_n: Optional[float] = None
    condition: Optional[str] = None

    def __bool__(self) -> bool:
        return self.feasible


def dummy_feasible(m: int, q: float, xi: float, n: int, step: float = 1e-3) -> Feasibility:
    """Search for an input-independent adversary that ``(m, q, xi)``-traces.

    Checks ``xi >= q`` (witness ``alpha = 1 - xi``, ``r_n = 0``), the trivial
    case ``m = 0`` (all-zero adversary), and otherwise grid-searches ``alpha``
    over ``[0, 1 - xi]`` for
    ``(1 - xi/(1-alpha))^(1/n) + sqrt(log(1/(1 - q/(1-alpha))) / (2n)) + m/n <= 1``.
    """
    n = check_int("n", n, 1)
    m = check_int("m", m, 0, n)
    q = check_real("q", q, 0.0, 1.0)
    xi = check_real("xi", xi, 0.0, 1.0)
    if xi >= q:
        return Feasibility(True, 1.0 - xi, 0.0, "xi >= q")
    if m == 0:
        return Feasibility(True, 1.0, 1.0, "m = 0")
    for alpha in np.arange(0.0, 1.0, step):
        if alpha > 1.0 - xi + 1e-12:
            break
        ratio_q = q / (1.0 - alpha)
        if ratio_q >= 1.0:
            continue
        ratio_xi = min(xi / (1.0 - alpha), 1.0)
        slack = math.sqrt(math.log(1.0 / (1.0 - ratio_q)) / (2.0 * n))
        if (1.0 - ratio_xi) ** (1.0 / n) + slack + m / n <= 1.0:
            return Feasibility(True, float(alpha), 1.0 - m / n - slack, "grid")
    return Feasibility(False)


def dummy_closed_form(alpha: float, r_n: float, n: int, m: int) -> tuple[float, float]:
    """Exact ``(soundness, P(recall >= m))`` of a dummy adversary."""
    soundness = (1.0 - alpha) * (1.0 - r_n**n)
    recall = (1.0 - alpha) * float(stats.binom.sf(m - 1, n, 1.0 - r_n)) if m > 0 else 1.0
    return soundness, recall


def dummy_best_recall(m: int, xi: float, n: int, grid: int = 2001) -> tuple[float, float, float]:
    """Largest exact recall probability of any dummy adversary with soundness ``<= xi``.

    For each ``alpha`` on a grid the smallest admissible ``r_n`` is used
    (recall decreases in ``r_n``). Returns ``(recall, alpha, r_n)``.
    """
    best = (0.0, 1.0, 1.0)
    for alpha in np.linspace(0.0, 1.0, grid):
        if alpha >= 1.0:
            continue
        ratio = xi / (1.0 - alpha)
        r_min = 0.0 if ratio >= 1.0 else (1.0 - ratio) ** (1.0 / n)
        _, rec = dummy_closed_form(alpha, r_min, n, m)
        if rec > best[0]:
            best = (rec, float(alpha), float(r_min))
    return best


# ---------------------------------------------------------------------------
# correlation sweeps
# ---------------------------------------------------------------------------


def correlation_statistics(learner, inst, dist, n, trials, seed: Seed, compressor=None):
    """Centred correlations ``<model, z - E[Z]>`` for members and ghosts.

    Returns two arrays of shape ``(trials, n)``. Thresholding them reproduces
    :class:`CorrelationAdversary` games played with the same seeds.
    """
    mu = dist.mean()
    mem = np.empty((trials, n))
    gho = np.empty((trials, n))
    for t in range(trials):
        _, _, members, ghosts, model, _ = _model_for_trial(learner, compressor, inst, dist, n, seed.child(t))
        mem[t] = (members - mu) @ model
        gho[t] = (ghosts - mu) @ model
    return mem, gho


@dataclass
class FrontierReport:
    """Threshold sweep results.

    ``rows`` hold ``n, d, tau, recall_rate, recall_prob, recall_prob_ci,
    soundness, soundness_ci`` where ``recall_prob`` is ``P(flagged members >= n/2)``
    and ``d`` is ``"raw"`` for the uncompressed model.
    """

    rows: list

    CSV_COLUMNS = ("recall_rate", "soundness", "tau", "n", "d", "recall_prob", "recall_prob_lo", "recall_prob_hi", "soundness_lo", "soundness_hi")

    def select(self, n=None, d=None) -> list:
        return [r for r in self.rows if (n is None or r["n"] == n) and (d is None or r["d"] == d)]

    def best_recall_at_soundness(self, xi: float, n=None, d=None) -> float:
        """Largest recall rate among sweep points with soundness at most ``xi``."""
        vals = [r["recall_rate"] for r in self.select(n, d) if r["soundness"] <= xi]
        return max(vals, default=0.0)

    def dichotomy_violations(self, n=None, d=None, z: float = 2.0) -> list:
        """Sweep points with ``recall_prob > 0`` and ``soundness < recall_prob - z * CI``.

        ``CI`` is the half-width of the Wilson interval of ``recall_prob``.
        """
        out = []
        for r in self.select(n, d):
            half = _half(r["recall_prob_ci"])
            if r["recall_prob"] > 0 and r["soundness"] < r["recall_prob"] - z * half:
                out.append(r)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(
                "# columns: recall_rate = mean flagged members / n, soundness = P(any ghost flagged), "
                "tau = threshold, n, d (raw = uncompressed), recall_prob = P(flagged members >= n/2) "
                "with Wilson 95% bounds, soundness Wilson 95% bounds\n"
            )
            w = csv.writer(fh)
            w.writerow(self.CSV_COLUMNS)
            for r in self.rows:
                w.writerow(
                    [
                        f"{r['recall_rate']:.17g}",
                        f"{r['soundness']:.17g}",
                        f"{r['tau']:.17g}",
                        r["n"],
                        r["d"],
                        f"{r['recall_prob']:.17g}",
                        f"{r['recall_prob_ci'][0]:.17g}",
                        f"{r['recall_prob_ci'][1]:.17g}",
                        f"{r['soundness_ci'][0]:.17g}",
                        f"{r['soundness_ci'][1]:.17g}",
                    ]
                )


def _sweep_rows(mem, gho, taus, n, d_label) -> list:
    trials = mem.shape[0]
    need = math.ceil(n / 2)
    rows = []
    for tau in taus:
        counts = (mem > tau).sum(axis=1)
        hits_r = int((counts >= need).sum())
        hits_s = int((gho > tau).any(axis=1).sum())
        rows.append(
            {
                "n": n,
                "d": d_label,
                "tau": float(tau),
                "recall_rate": float(counts.mean() / n),
                "recall_prob": hits_r / trials,
                "recall_prob_ci": wilson_interval(hits_r, trials),
                "soundness": hits_s / trials,
                "soundness_ci": wilson_interval(hits_s, trials),
            }
        )
    return rows


def compressed_tracing_probe(
    learner,
    compressors: Sequence,
    inst: ProblemInstance,
    dist: DataDistribution,
    n_grid: Sequence[int],
    trials: int,
    seed: Seed | int = 0,
    n_thresholds: int = 64,
    pilot_trials: Optional[int] = None,
) -> FrontierReport:
    """Sweep correlation thresholds against raw and compressed models.

    Parameters
    ----------
    learner : estimator or callable
    compressors : sequence
        Compressor configs or templates; ``None`` entries mean the raw model.
    inst, dist : problem and distribution
    n_grid : sequence of int
    trials : int
        Games per ``(n, compressor)`` cell.
    seed : Seed or int
    n_thresholds : int
        Grid size; thresholds are quantiles of pilot statistics drawn with an
        independent seed.
    pilot_trials : int, optional
        Defaults to ``max(20, trials // 4)``.
    """
    seed = as_seed(seed)
    trials = check_int("trials", trials, 1)
    pilot = pilot_trials or max(20, trials // 4)
    rows = []
    for a, n in enumerate(n_grid):
        n = check_int("n", n, 1)
        for b, comp in enumerate(compressors):
            label = "raw" if comp is None else as_compressor(comp).n_components
            pm, pg = correlation_statistics(learner, inst, dist, n, pilot, seed.child(a, b, 0), comp)
            pooled = np.concatenate([pm.ravel(), pg.ravel()])
            taus = np.quantile(pooled, np.linspace(0.0, 1.0, n_thresholds))
            mem, gho = correlation_statistics(learner, inst, dist, n, trials, seed.child(a, b, 1), comp)
            rows.extend(_sweep_rows(mem, gho, taus, n, label))
    return FrontierReport(rows)

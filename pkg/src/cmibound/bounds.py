"""Generalization bounds for projection-compressed learners.

The central estimator assembles

    E_{S~,Theta}[ sqrt(2 * Delta_ell(S~, Theta) * cap / n) ] + eps

where ``Delta_ell`` is the mean squared loss gap between the two columns of
the super-sample evaluated at the projected-back compressed model, ``cap`` is
the analytic information cap of the compressor and ``eps`` is the distortion
``E[gen(S, W) - gen(S, Theta W_hat)]``. Every term is estimated by nested
Monte Carlo with per-replica derived seeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.special import gammaln
from sklearn.base import clone

from ._validation import check_int, check_real
from .compress import CompressorConfig, JLCompressor, ball_coord_abs_mean, cmi_cap, tail_bound
from .core import (
    DataDistribution,
    Seed,
    SuperSample,
    as_seed,
    sample_membership,
    sample_supersample,
    select_train,
)
from .exceptions import CapacityError, ParameterError, UnsupportedError
from .problems import ProblemInstance, gen_error_rows, loss_matrix
from .stats import MCEstimate, mean_ci

__all__ = [
    "MCBudget",
    "BoundReport",
    "fit_hypothesis",
    "as_compressor",
    "fresh_compressor",
    "delta_ell_hat",
    "bound_replicate",
    "distortion_estimate",
    "theorem1_bound",
    "single_datum_bound",
    "assemble_theorem1",
    "closed_form_clb",
    "closed_form_rate",
    "distortion_ceiling",
    "exact_cmi_oracle",
    "classic_cmi_bound",
    "chi2_abs_deviation",
    "cross_term_abs_mean",
    "glm_distortion_ceiling",
    "glm_rate",
    "closed_form_report",
]

MAX_ORACLE_N = 14


@dataclass(frozen=True)
class MCBudget:
    """Nested Monte Carlo budget.

    Parameters
    ----------
    outer_samples : int
        Replicas over ``(S~, Theta)``.
    inner_samples : int
        Draws over ``(J, W, W_hat)`` per replica.
    seed : Seed or int
    """

    outer_samples: int
    inner_samples: int
    seed: Seed | int = 0

    def __post_init__(self):
        check_int("outer_samples", self.outer_samples, 1)
        check_int("inner_samples", self.inner_samples, 1)
        object.__setattr__(self, "seed", as_seed(self.seed))

    def to_dict(self) -> dict:
        return {
            "outer_samples": self.outer_samples,
            "inner_samples": self.inner_samples,
            "seed": self.seed.to_dict(),
        }


def _est(x) -> Optional[dict]:
    return None if x is None else x.to_dict()


@dataclass
class BoundReport:
    """All terms of an assembled bound.

    ``total`` always equals the assembly rule of ``mode``:
    ``theorem1``/``single_datum``: ``rate_term.value + distortion_eps.upper``;
    closed forms: the formula value.
    """

    mode: str
    n: int
    d: Optional[int]
    cmi_term: float
    total: float
    rate_term: Optional[MCEstimate] = None
    delta_ell: Optional[MCEstimate] = None
    distortion_eps: Optional[MCEstimate] = None
    measured_gen: Optional[MCEstimate] = None
    budget: Optional[dict] = None
    notes: dict = field(default_factory=dict)
    replicates: dict = field(default_factory=dict)

    CSV_COLUMNS = (
        "mode",
        "n",
        "d",
        "cmi_term",
        "delta_ell",
        "delta_ell_ci",
        "distortion_eps",
        "distortion_eps_ci",
        "rate_term",
        "measured_gen",
        "measured_gen_ci",
        "total",
    )

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n": self.n,
            "d": self.d,
            "terms": {
                "cmi_term": self.cmi_term,
                "rate_term": _est(self.rate_term),
                "delta_ell": _est(self.delta_ell),
                "distortion_eps": _est(self.distortion_eps),
                "measured_gen": _est(self.measured_gen),
                "total": self.total,
            },
            "budget": self.budget,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_row(self) -> list:
        def val(e, attr="value"):
            return "" if e is None else f"{getattr(e, attr):.17g}"

        return [
            self.mode,
            str(self.n),
            "" if self.d is None else str(self.d),
            f"{self.cmi_term:.17g}",
            val(self.delta_ell),
            val(self.delta_ell, "half_width"),
            val(self.distortion_eps),
            val(self.distortion_eps, "half_width"),
            val(self.rate_term),
            val(self.measured_gen),
            val(self.measured_gen, "half_width"),
            f"{self.total:.17g}",
        ]


# ---------------------------------------------------------------------------
# learner / compressor plumbing
# ---------------------------------------------------------------------------


def fit_hypothesis(learner, X, seed: Seed | None = None) -> np.ndarray:
    """Fit ``learner`` on ``X`` and return its hypothesis vector.

    ``learner`` is either an estimator exposing ``coef_`` after ``fit`` (a
    ``random_state`` parameter, when present, receives ``seed``) or a plain
    callable ``X -> w``.
    """
    if hasattr(learner, "fit"):
        est = clone(learner)
        if seed is not None and "random_state" in est.get_params(deep=False):
            est.set_params(random_state=seed)
        return np.asarray(est.fit(X).coef_, dtype=np.float64)
    return np.asarray(learner(X), dtype=np.float64)


def as_compressor(compressor) -> JLCompressor:
    """Normalise a :class:`CompressorConfig` or compressor template."""
    if isinstance(compressor, JLCompressor):
        return compressor
    if isinstance(compressor, CompressorConfig):
        return JLCompressor(compressor.d, compressor.c_w, compressor.nu)
    raise ParameterError(f"expected a CompressorConfig or JLCompressor, got {type(compressor).__name__}")


def fresh_compressor(template: JLCompressor, D: int, seed: Seed) -> JLCompressor:
    """Unfitted copy of ``template`` fitted with a projection drawn from ``seed``."""
    return clone(template).set_params(random_state=seed).fit(n_features=D)


# ---------------------------------------------------------------------------
# Monte Carlo estimators
# ---------------------------------------------------------------------------


def _inner_draws(inst, ss: SuperSample, comp: JLCompressor, learner, inner: int, seed: Seed):
    """Inner loop over ``(J, W, W_hat)`` for a fixed ``(S~, Theta)``.

    Returns per-draw squared loss gaps ``(inner, n)``, raw hypotheses and
    projected-back models.
    """
    n, D = ss.n, ss.D
    flat = ss.points.reshape(2 * n, D)
    gaps = np.empty((inner, n))
    Js = np.empty((inner, n), dtype=np.uint8)
    W = np.empty((inner, D))
    back = np.empty((inner, D))
    for k in range(inner):
        J = sample_membership(n, seed.child(k, 0))
        w = fit_hypothesis(learner, select_train(ss, J), seed.child(k, 1))
        w_hat = comp.transform(w, rng=seed.child(k, 2).generator())
        model = comp.inverse_transform(w_hat)
        losses = loss_matrix(inst, flat, model)[0].reshape(n, 2)
        gaps[k] = (losses[:, 0] - losses[:, 1]) ** 2
        Js[k], W[k], back[k] = J, w, model
    return gaps, Js, W, back


def delta_ell_hat(
    inst: ProblemInstance,
    ss: SuperSample,
    compressor: JLCompressor,
    learner,
    inner_samples: int,
    seed: Seed | int = 0,
    per_index: bool = False,
):
    """Estimate the mean squared column loss gap for a fixed ``(S~, Theta)``.

    Parameters
    ----------
    inst : ProblemInstance
    ss : SuperSample
    compressor : JLCompressor
        A fitted compressor; its projection is held fixed.
    learner : estimator or callable
    inner_samples : int
        Draws over ``(J, W, W_hat)``.
    seed : Seed or int
    per_index : bool
        Also return the per-index means ``(n,)``.

    Returns
    -------
    MCEstimate, or (MCEstimate, ndarray) when ``per_index``.
    """
    inner = check_int("inner_samples", inner_samples, 1)
    gaps = _inner_draws(inst, ss, compressor, learner, inner, as_seed(seed))[0]
    est = mean_ci(gaps.mean(axis=1))
    return (est, gaps.mean(axis=0)) if per_index else est


def bound_replicate(
    inst: ProblemInstance,
    dist: DataDistribution,
    learner,
    compressor,
    n: int,
    inner_samples: int,
    seed: Seed,
) -> dict:
    """One outer replica over ``(S~, Theta)``.

    Returns a dict of scalar summaries (means over the inner draws):
    ``delta_ell``, ``rate``, ``gen_raw``, ``gen_compressed``, ``distortion``,
    ``single_datum`` and the per-index gaps ``delta_ell_i``.
    """
    template = as_compressor(compressor)
    cap = cmi_cap(template.config)
    ss = sample_supersample(dist, n, seed.child(0))
    comp = fresh_compressor(template, inst.D, seed.child(1))
    gaps, Js, W, back = _inner_draws(inst, ss, comp, learner, inner_samples, seed.child(2))
    gen_raw = np.empty(inner_samples)
    gen_cmp = np.empty(inner_samples)
    for k in range(inner_samples):
        train = select_train(ss, Js[k])
        g = gen_error_rows(inst, dist, train, np.stack([W[k], back[k]]), seed.child(3, k))
        gen_raw[k], gen_cmp[k] = g
    dl = float(gaps.mean())
    per_i = gaps.mean(axis=0)
    return {
        "delta_ell": dl,
        "rate": math.sqrt(2.0 * dl * cap / n),
        "single_datum": float(np.mean(np.sqrt(2.0 * per_i * cap))),
        "gen_raw": float(gen_raw.mean()),
        "gen_compressed": float(gen_cmp.mean()),
        "distortion": float((gen_raw - gen_cmp).mean()),
        "delta_ell_i": per_i.tolist(),
    }


def _run_replicates(inst, dist, learner, compressor, n, budget: MCBudget, map_fn: Callable | None):
    n = check_int("n", n, 1)
    seeds = [budget.seed.child(r) for r in range(budget.outer_samples)]

    def one(s):
        return bound_replicate(inst, dist, learner, compressor, n, budget.inner_samples, s)

    return list((map_fn or map)(one, seeds))


def distortion_estimate(
    inst: ProblemInstance,
    dist: DataDistribution,
    learner,
    compressor,
    n: int,
    budget: MCBudget,
    map_fn: Callable | None = None,
) -> MCEstimate:
    """Monte Carlo estimate of ``E[gen(S, W) - gen(S, Theta W_hat)]``."""
    reps = _run_replicates(inst, dist, learner, compressor, n, budget, map_fn)
    return mean_ci([r["distortion"] for r in reps])


def assemble_theorem1(
    replicates: list, n: int, compressor, budget: MCBudget | None = None, mode: str = "theorem1"
) -> BoundReport:
    """Build a :class:`BoundReport` from per-replica summaries.

    ``mode`` is ``"theorem1"`` (rate from the pooled gap) or ``"single_datum"``
    (average of per-index rates).
    """
    if mode not in ("theorem1", "single_datum"):
        raise ParameterError(f"unknown assembly mode {mode!r}")
    if not replicates:
        raise ParameterError("no replicates to assemble")
    cfg = as_compressor(compressor).config
    cap = cmi_cap(cfg)
    key = "rate" if mode == "theorem1" else "single_datum"
    rate = mean_ci([r[key] for r in replicates])
    eps = mean_ci([r["distortion"] for r in replicates])
    notes = {"eps_rule": "point estimate plus upper 95% CI edge", "cmi_term": "analytic cap"}
    if mode == "single_datum":
        notes["per_index_cmi"] = "global cap used for every index (slack)"
    return BoundReport(
        mode=mode,
        n=n,
        d=cfg.d,
        cmi_term=cap,
        total=rate.value + eps.upper,
        rate_term=rate,
        delta_ell=mean_ci([r["delta_ell"] for r in replicates]),
        distortion_eps=eps,
        measured_gen=mean_ci([r["gen_raw"] for r in replicates]),
        budget=None if budget is None else budget.to_dict(),
        notes=notes,
        replicates={k: [r[k] for r in replicates] for k in ("delta_ell", "rate", "single_datum", "gen_raw", "distortion")},
    )


def theorem1_bound(
    inst: ProblemInstance,
    dist: DataDistribution,
    learner,
    compressor,
    n: int,
    budget: MCBudget,
    map_fn: Callable | None = None,
) -> BoundReport:
    """Estimate and assemble the compressed CMI bound.

    Parameters
    ----------
    inst, dist : problem and data distribution
    learner : estimator with ``fit``/``coef_`` or callable
    compressor : CompressorConfig or JLCompressor template
        A fresh projection is drawn per outer replica.
    n : int
    budget : MCBudget
    map_fn : callable, optional
        ``map``-like function used to evaluate replicas (e.g. a pool map).

    Returns
    -------
    BoundReport
        ``total = rate_term.value + distortion_eps.upper``; ``measured_gen``
        holds the generalization error of the raw hypotheses from the same
        draws.
    """
    reps = _run_replicates(inst, dist, learner, compressor, n, budget, map_fn)
    return assemble_theorem1(reps, n, compressor, budget, "theorem1")


def single_datum_bound(
    inst: ProblemInstance,
    dist: DataDistribution,
    learner,
    compressor,
    n: int,
    budget: MCBudget,
    map_fn: Callable | None = None,
) -> BoundReport:
    """Per-index variant: ``(1/n) sum_i E sqrt(2 Delta_ell_i cap) + eps``.

    Each index uses the global cap, which is loose; the report flags this.
    """
    reps = _run_replicates(inst, dist, learner, compressor, n, budget, map_fn)
    return assemble_theorem1(reps, n, compressor, budget, "single_datum")


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def closed_form_clb(L: float, R: float, n: int) -> float:
    """``8 L R / sqrt(n)``."""
    L = check_real("L", L, 0.0, low_open=True)
    R = check_real("R", R, 0.0, low_open=True)
    n = check_int("n", n, 1)
    return 8.0 * L * R / math.sqrt(n)


def distortion_ceiling(d: int, c_w: float, n: int) -> float:
    """``(2/sqrt(n)) (1 + 2/d)^(1/4) exp(-(0.21/4) d (c_w^2 - 1)^2)``."""
    cfg = CompressorConfig(d, c_w, 1.0)
    n = check_int("n", n, 1)
    return 2.0 / math.sqrt(n) * (1.0 + 2.0 / cfg.d) ** 0.25 * math.exp(-0.0525 * cfg.d * (cfg.c_w**2 - 1.0) ** 2)


def closed_form_rate(d: int, c_w: float, nu: float, n: int) -> float:
    """Closed-form compressed bound for the linear instance with ``L = R = 1``.

    ``sqrt(8 d (c_w+nu)^2 log((c_w+nu)/nu) / n)`` plus :func:`distortion_ceiling`.
    """
    cfg = CompressorConfig(d, c_w, nu)
    n = check_int("n", n, 1)
    first = math.sqrt(8.0 * cfg.d * (cfg.c_w + cfg.nu) ** 2 * math.log((cfg.c_w + cfg.nu) / cfg.nu) / n)
    return first + distortion_ceiling(cfg.d, cfg.c_w, n)


def chi2_abs_deviation(d: int) -> float:
    """``E| ||Theta^T u||^2 - 1 |`` for a unit vector ``u``, i.e. ``E|chi2_d - d| / d``."""
    d = check_int("d", d, 1)
    return math.exp((2.0 - d / 2.0) * math.log(2.0) + (d / 2.0) * math.log(d) - d / 2.0 - gammaln(d / 2.0)) / d


def cross_term_abs_mean(d: int) -> float:
    """``E|<Theta^T u, Theta^T v>|`` for orthonormal ``u, v``: ``2 Gamma((d+1)/2) / (sqrt(pi) Gamma(d/2) d)``."""
    d = check_int("d", d, 1)
    return 2.0 / math.sqrt(math.pi) * math.exp(gammaln((d + 1) / 2.0) - gammaln(d / 2.0)) / d


def glm_distortion_ceiling(d: int, c_w: float = 1.1, nu: float = 0.5) -> float:
    """Distortion ceiling for unit-scale generalized-linear losses.

    ``2 * (tail + E|chi2_d/d - 1| + E|cross term| + E|V_1|)``, with the exact
    finite-``d`` expectations in place of their ``O(1/sqrt(d))`` rates.
    """
    cfg = CompressorConfig(d, c_w, nu)
    return 2.0 * (tail_bound(cfg.d, cfg.c_w) + chi2_abs_deviation(cfg.d) + cross_term_abs_mean(cfg.d) + ball_coord_abs_mean(cfg.d, cfg.nu))


def glm_rate(n: int, c_w: float = 1.1, nu: float = 0.5, d: int | None = None, L: float = 1.0, R: float = 1.0, B: float = 1.0) -> float:
    """Assembled generalized-linear bound with ``d = round(sqrt(n))`` by default.

    ``LRB * (sqrt(8 d (c_w+nu)^2 log((c_w+nu)/nu) / n) + glm_distortion_ceiling(d))``;
    decays as ``n^(-1/4)``.
    """
    n = check_int("n", n, 1)
    d = max(1, round(math.sqrt(n))) if d is None else check_int("d", d, 1)
    cfg = CompressorConfig(d, c_w, nu)
    scale = check_real("L", L, 0.0, low_open=True) * check_real("R", R, 0.0, low_open=True) * check_real("B", B, 0.0, low_open=True)
    rate = math.sqrt(8.0 * d * (cfg.c_w + cfg.nu) ** 2 * math.log((cfg.c_w + cfg.nu) / cfg.nu) / n)
    return scale * (rate + glm_distortion_ceiling(d, cfg.c_w, cfg.nu))


def closed_form_report(mode: str, n: int, **params) -> BoundReport:
    """Wrap a closed-form bound in a :class:`BoundReport`.

    ``mode`` is ``closed_form_clb`` (params ``L, R``), ``closed_form_rate``
    (``d, c_w, nu``) or ``classic_cmi`` (``cmi, L, R``; total is the
    ``LR sqrt(8 cmi / n)`` form).
    """
    if mode == "closed_form_clb":
        total = closed_form_clb(params.get("L", 1.0), params.get("R", 1.0), n)
        return BoundReport(mode, n, None, float("nan"), total, notes={"formula": "8LR/sqrt(n)"})
    if mode == "closed_form_rate":
        d, c_w, nu = params.get("d", 1), params.get("c_w", 1.0), params.get("nu", 0.4)
        total = closed_form_rate(d, c_w, nu, n)
        return BoundReport(mode, n, d, cmi_cap(CompressorConfig(d, c_w, nu)), total, notes={"formula": "analytic rate plus distortion ceiling"})
    if mode == "classic_cmi":
        cmi = params["cmi"]
        total = classic_cmi_bound(cmi, n, params.get("L", 1.0), params.get("R", 1.0))[1]
        return BoundReport(mode, n, None, float(cmi), total, notes={"formula": "LR sqrt(8 cmi / n)"})
    raise ParameterError(f"unknown closed-form mode {mode!r}")


def classic_cmi_bound(cmi: float, n: int, L: float = 1.0, R: float = 1.0) -> tuple[float, float]:
    """Uncompressed forms ``(sqrt(2 cmi / n), L R sqrt(8 cmi / n))``."""
    cmi = check_real("cmi", cmi, 0.0)
    n = check_int("n", n, 1)
    return math.sqrt(2.0 * cmi / n), L * R * math.sqrt(8.0 * cmi / n)


# ---------------------------------------------------------------------------
# exact oracle
# ---------------------------------------------------------------------------


def _all_memberships(n: int) -> np.ndarray:
    codes = np.arange(2**n, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(np.uint8)


def _group_entropy(outputs: np.ndarray, tol: float) -> float:
    """Entropy (nats) of the uniform mixture over outputs merged within ``tol``."""
    m = outputs.shape[0]
    pairs = cKDTree(outputs).query_pairs(r=tol, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m, m)) if len(pairs) else coo_matrix((m, m))
    _, labels = connected_components(graph, directed=False)
    counts = np.bincount(labels).astype(np.float64)
    p = counts / m
    return float(-(p * np.log(p)).sum())


def _uniform_mixture_entropy(centers: np.ndarray, nu: float) -> float:
    """Exact differential entropy of an equal-weight mixture of ``U[c - nu, c + nu]``."""
    lo = np.sort(centers - nu)
    hi = np.sort(centers + nu)
    edges = np.unique(np.concatenate([lo, hi]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    widths = np.diff(edges)
    active = np.searchsorted(lo, mids, side="right") - np.searchsorted(hi, mids, side="right")
    dens = active / (centers.size * 2.0 * nu)
    keep = dens > 0
    return float(-(widths[keep] * dens[keep] * np.log(dens[keep])).sum())


def exact_cmi_oracle(
    inst: ProblemInstance,
    ss: SuperSample,
    learner,
    compressor: JLCompressor | None = None,
    tol: float = 1e-9,
    return_details: bool = False,
):
    """Exact ``I(output; J | S~)`` in nats by enumerating all memberships.

    Without a compressor the output is the learner's hypothesis; outputs equal
    within ``tol`` are merged and the discrete entropy is returned. With a
    fitted one-dimensional compressor the output is ``W_hat = U + V`` with the
    clipped projection ``U`` and uniform dither ``V``; the differential entropy
    of the resulting mixture of intervals is computed exactly and the dither
    entropy ``log(2 nu)`` subtracted.

    Raises
    ------
    CapacityError
        If ``n`` exceeds 14.
    UnsupportedError
        For compressors with ``d > 1``.
    """
    n = ss.n
    if n > MAX_ORACLE_N:
        raise CapacityError(f"exact enumeration needs n <= {MAX_ORACLE_N}, got {n}")
    Js = _all_memberships(n)
    W = np.stack([fit_hypothesis(learner, select_train(ss, J)) for J in Js])
    if compressor is None:
        value = _group_entropy(W, tol)
        details = {"output": "hypothesis", "grouping_tol": tol}
    else:
        cfg = compressor.config
        if cfg.d != 1:
            raise UnsupportedError("exact compressed entropy is implemented for d = 1 only")
        U = compressor.clip(W)[:, 0]
        value = _uniform_mixture_entropy(U, cfg.nu) - math.log(2.0 * cfg.nu)
        details = {
            "output": "dithered code",
            "clip_fraction": float(np.mean(np.linalg.norm(W @ compressor.theta_, axis=1) > cfg.c_w)),
            "cap": cmi_cap(cfg),
        }
    value = max(value, 0.0)
    return (value, details) if return_details else value

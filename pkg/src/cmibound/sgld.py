"""Random-subspace SGD/SGLD with trajectory instrumentation and its bounds.

Training runs in a frozen ``d``-dimensional subspace spanned by the columns
of a Stiefel matrix ``Theta``:

    W'_t = Proj_R( W'_{t-1} - eta_t * grad L_{V_t}(Theta W'_{t-1}) + sigma_t eps_t )

with minibatches ``V_t`` of size ``b`` drawn uniformly with replacement.
The lossless bound sums the mixture entropy function over the steps that
touch each index; the lossy bound evaluates it on an auxiliary trajectory
with extra noise ``nu_t`` and adds a distortion term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln
from scipy.stats import norm
from sklearn.base import BaseEstimator

from ._validation import check_int, check_real, check_rows
from .core import (
    DataDistribution,
    Seed,
    SuperSample,
    as_seed,
    sample_membership,
    sample_supersample,
    select_train,
    stiefel_from_rng,
)
from .exceptions import CouplingError, ParameterError, ShapeError
from .mixent import LOG2, f_ap
from .problems import ProblemInstance, gen_error_rows, loss_grad
from .stats import MCEstimate, mean_ci

__all__ = [
    "SGLDConfig",
    "Trajectory",
    "SGLDBoundReport",
    "train_subspace",
    "perturbed_trajectory",
    "lossless_roots",
    "lossless_bound",
    "assemble_rate",
    "forgetting_factors",
    "lossy_roots",
    "lossy_distortion",
    "lossy_report",
    "lossy_bound",
    "q_t",
    "distortion_prefactor",
    "EnsembleMember",
    "run_replica",
    "run_ensemble",
    "measure_gen_gap",
    "SubspaceSGLD",
]

_ORTHO_TOL = 1e-8


def _schedule(name: str, value, T: int, allow_zero: bool) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(T, float(arr))
    if arr.shape != (T,):
        raise ShapeError(f"{name} schedule must be a scalar or have length T={T}")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0) or (not allow_zero and np.any(arr == 0)):
        raise ParameterError(f"{name} schedule has invalid entries")
    return arr


@dataclass(frozen=True)
class SGLDConfig:
    """Subspace SGLD configuration.

    Parameters
    ----------
    d, T, b : int
        Subspace dimension, number of steps and minibatch size.
    eta, sigma, nu : float or sequence of length T
        Step sizes, SGLD noise scales and auxiliary (lossy) noise scales.
    R : float
        Radius of the projection ball in the subspace.
    alpha : float
        Declared contraction constant of one noiseless projected step.
    lipschitz_L : float
        Certified Lipschitz constant of the loss in the subspace parameter.
    """

    d: int
    T: int
    b: int
    eta: float | Sequence[float] = 0.05
    sigma: float | Sequence[float] = 0.05
    nu: float | Sequence[float] = 0.0
    R: float = 1.0
    alpha: float = 1.0
    lipschitz_L: float = 1.0

    def __post_init__(self):
        check_int("d", self.d, 1)
        T = check_int("T", self.T, 1)
        check_int("b", self.b, 1)
        check_real("R", self.R, 0.0, low_open=True)
        check_real("alpha", self.alpha, 0.0, low_open=True)
        check_real("lipschitz_L", self.lipschitz_L, 0.0)
        for name in ("eta", "sigma", "nu"):
            _schedule(name, getattr(self, name), T, True)

    @property
    def etas(self) -> np.ndarray:
        return _schedule("eta", self.eta, self.T, True)

    @property
    def sigmas(self) -> np.ndarray:
        return _schedule("sigma", self.sigma, self.T, True)

    @property
    def nus(self) -> np.ndarray:
        return _schedule("nu", self.nu, self.T, True)

    def to_dict(self) -> dict:
        def ser(v):
            return v if np.ndim(v) == 0 else list(np.asarray(v, dtype=float))

        return {
            "d": self.d,
            "T": self.T,
            "b": self.b,
            "eta": ser(self.eta),
            "sigma": ser(self.sigma),
            "nu": ser(self.nu),
            "R": self.R,
            "alpha": self.alpha,
            "lipschitz_L": self.lipschitz_L,
        }


@dataclass
class Trajectory:
    """Instrumented training run.

    Attributes
    ----------
    states : ndarray of shape (T + 1, d)
        ``W'_0, ..., W'_T``.
    batches : ndarray of shape (T, b)
        Minibatch indices ``V_t``.
    touch : ndarray of shape (T, n)
        Multiplicity of index ``i`` in ``V_t``.
    gaps : ndarray of shape (T, n)
        Gradient gaps between the two columns at the pre-step iterate; zero
        where the index is untouched.
    noise : ndarray of shape (T, d)
        SGLD noise draws ``eps_t``.
    aux_noise : ndarray of shape (T, d) or None
        Auxiliary draws ``eps'_t`` (perturbed runs only).
    coupling : ndarray of shape (T,) or None
        ``(observed distance, bound)`` pairs checked online (perturbed runs).
    """

    states: np.ndarray
    batches: np.ndarray
    touch: np.ndarray
    gaps: np.ndarray
    noise: np.ndarray
    aux_noise: Optional[np.ndarray] = None
    coupling: Optional[np.ndarray] = None
    seed: Optional[dict] = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class SGLDBoundReport:
    """Assembled lossless and lossy bounds.

    ``lossy_total = rate_term + distortion_term``.
    """

    lossless_total: Optional[float]
    lossy_total: float
    rate_term: float
    distortion_term: float
    per_index: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lossless_total": self.lossless_total,
            "lossy_total": self.lossy_total,
            "rate_term": self.rate_term,
            "distortion_term": self.distortion_term,
            "per_index": list(self.per_index),
            "flags": dict(self.flags),
            "notes": dict(self.notes),
        }


def _check_stiefel(theta: np.ndarray, d: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 2 or theta.shape[1] != d:
        raise ShapeError(f"projection must have {d} columns, got shape {theta.shape}")
    if np.max(np.abs(theta.T @ theta - np.eye(d))) > _ORTHO_TOL:
        raise ParameterError("projection columns are not orthonormal")
    return theta


def _project(w: np.ndarray, R: float) -> np.ndarray:
    nrm = float(np.linalg.norm(w))
    return w if nrm <= R else w * (R / nrm)


def _column_gaps(inst, ss: SuperSample, theta: np.ndarray, w_sub: np.ndarray) -> np.ndarray:
    """``||Theta^T (grad l(Z_{i,0}) - grad l(Z_{i,1}))||`` for every index."""
    w_full = theta @ w_sub
    g0 = loss_grad(inst, ss.column(0), w_full)
    g1 = loss_grad(inst, ss.column(1), w_full)
    return np.linalg.norm((g0 - g1) @ theta, axis=1)


def _run(cfg, inst, train, theta, batches, noise, w0, aux=None, ss=None, reference=None):
    """Shared update loop; records column gaps when ``ss`` is given."""
    T, d = cfg.T, cfg.d
    etas, sigmas, nus = cfg.etas, cfg.sigmas, cfg.nus
    states = np.empty((T + 1, d))
    states[0] = w0
    n = ss.n if ss is not None else train.shape[0]
    gaps = np.zeros((T, n))
    touch = np.zeros((T, n), dtype=np.int64)
    coupling = None if reference is None else np.empty((T, 2))
    budget = 0.0
    w = w0.copy()
    for t in range(T):
        idx = batches[t]
        np.add.at(touch[t], idx, 1)
        if ss is not None:
            col = _column_gaps(inst, ss, theta, w)
            hit = touch[t] > 0
            gaps[t, hit] = col[hit]
        grad = loss_grad(inst, train[idx], theta @ w).mean(axis=0) @ theta
        step = w - etas[t] * grad + sigmas[t] * noise[t]
        if aux is not None:
            step = step + nus[t] * aux[t]
        w = _project(step, cfg.R)
        states[t + 1] = w
        if reference is not None:
            budget = cfg.alpha * budget + nus[t] * float(np.linalg.norm(aux[t]))
            dist = float(np.linalg.norm(w - reference.states[t + 1]))
            coupling[t] = dist, budget
            if dist > budget * (1.0 + 1e-9) + 1e-12:
                raise CouplingError(
                    f"coupling violated at step {t + 1}: distance {dist:.6g} > bound {budget:.6g} "
                    f"with alpha={cfg.alpha}; the declared contraction constant is too small"
                )
    return states, touch, gaps, coupling


def train_subspace(
    cfg: SGLDConfig,
    inst: ProblemInstance,
    ss: SuperSample,
    J,
    theta,
    seed: Seed | int = 0,
    w0=None,
) -> Trajectory:
    """Run subspace SGLD on ``S~_J`` and record the full trajectory.

    Batches come from ``seed.child(0)`` and SGLD noise from ``seed.child(1)``,
    so a perturbed run can share both.
    """
    seed = as_seed(seed)
    theta = _check_stiefel(theta, cfg.d)
    if theta.shape[0] != inst.D:
        raise ShapeError("projection rows must match the problem dimension")
    n = ss.n
    if cfg.b > n:
        raise ParameterError(f"batch size b={cfg.b} exceeds n={n}")
    batches = seed.child(0).generator().integers(0, n, size=(cfg.T, cfg.b))
    noise = seed.child(1).generator().standard_normal((cfg.T, cfg.d))
    w0 = np.zeros(cfg.d) if w0 is None else _project(np.asarray(w0, dtype=np.float64), cfg.R)
    train = select_train(ss, J)
    states, touch, gaps, _ = _run(cfg, inst, train, theta, batches, noise, w0, ss=ss)
    return Trajectory(states, batches, touch, gaps, noise, seed=seed.to_dict())


def perturbed_trajectory(
    cfg: SGLDConfig,
    inst: ProblemInstance,
    ss: SuperSample,
    J,
    theta,
    reference: Trajectory,
    seed: Seed | int = 0,
) -> Trajectory:
    """Auxiliary run sharing batches and noise with ``reference`` plus ``nu_t eps'_t``.

    The pathwise coupling ``||W_hat_t - W'_t|| <= sum_r alpha^(t-r) nu_r ||eps'_r||``
    is checked after every step.

    Raises
    ------
    CouplingError
        If the coupling inequality fails (``alpha`` misdeclared).
    """
    seed = as_seed(seed)
    theta = _check_stiefel(theta, cfg.d)
    aux = seed.child(2).generator().standard_normal((cfg.T, cfg.d))
    train = select_train(ss, J)
    states, touch, gaps, coupling = _run(
        cfg, inst, train, theta, reference.batches, reference.noise, reference.states[0], aux=aux, ss=ss, reference=reference
    )
    return Trajectory(states, reference.batches, touch, gaps, reference.noise, aux, coupling, seed=seed.to_dict())


def _f_half(args: np.ndarray) -> np.ndarray:
    """``f(a, 1/2)`` evaluated once per distinct argument."""
    uniq, inv = np.unique(args, return_inverse=True)
    vals = np.array([f_ap(float(a), 0.5) for a in uniq])
    return vals[inv].reshape(args.shape)


def _info_terms(traj: Trajectory, cfg: SGLDConfig, scales: np.ndarray) -> np.ndarray:
    """Per-(step, index) information terms ``f(eta m Delta / (b s), 1/2)``."""
    etas = cfg.etas[:, None]
    mult = traj.touch.astype(np.float64)
    num = etas * mult * traj.gaps
    s = scales[:, None] * cfg.b
    with np.errstate(divide="ignore", invalid="ignore"):
        args = np.where(s > 0, num / np.where(s > 0, s, 1.0), np.inf)
    args = np.where(num == 0, 0.0, args)
    vals = np.zeros_like(args)
    finite = np.isfinite(args)
    vals[finite] = _f_half(args[finite])
    vals[~finite] = LOG2
    return np.where(mult > 0, vals, 0.0)


def lossless_roots(traj: Trajectory, cfg: SGLDConfig) -> np.ndarray:
    """Per-index ``sqrt(sum_{t: i in V_t} f(eta m Delta / (b sigma), 1/2))`` for one run."""
    return np.sqrt(_info_terms(traj, cfg, cfg.sigmas).sum(axis=0))


def lossless_bound(trajectories: Sequence[Trajectory], C: float, cfg: SGLDConfig, return_per_index: bool = False):
    """``(C sqrt 2 / n) sum_i E sqrt(sum_{t: i in V_t} f(eta m Delta / (b sigma), 1/2))``.

    ``m`` is the multiplicity of ``i`` in ``V_t``; steps with ``sigma_t = 0``
    contribute ``log 2`` for any nonzero gap.
    """
    if not trajectories:
        raise ParameterError("empty trajectory ensemble")
    C = check_real("C", C, 0.0)
    per_index = np.stack([lossless_roots(tr, cfg) for tr in trajectories]).mean(axis=0)
    total = assemble_rate(per_index, C)
    return (total, per_index) if return_per_index else total


def assemble_rate(per_index: np.ndarray, C: float) -> float:
    """``(C sqrt 2 / n) * sum_i per_index[i]``."""
    per_index = np.asarray(per_index, dtype=np.float64)
    return float(C * math.sqrt(2.0) / per_index.shape[0] * per_index.sum())


def q_t(R: float, eta: float, lip: float, sigma_hat: float) -> float:
    """Forgetting factor ``1 - 2 Qbar((R + eta L) / sigma_hat)``; 1 when ``sigma_hat = 0``."""
    sigma_hat = check_real("sigma_hat", sigma_hat, 0.0)
    if sigma_hat == 0.0:
        return 1.0
    return float(1.0 - 2.0 * norm.sf((R + eta * lip) / sigma_hat))


def distortion_prefactor(d: int, lip: float) -> float:
    """``2 sqrt 2 L Gamma((d+1)/2) / Gamma(d/2)``."""
    return float(2.0 * math.sqrt(2.0) * lip * math.exp(gammaln((d + 1) / 2.0) - gammaln(d / 2.0)))


def forgetting_factors(cfg: SGLDConfig, forgetting: bool = True) -> np.ndarray:
    """``q_t`` for every step at ``sigma_hat_t = sqrt(sigma_t^2 + nu_t^2)``."""
    sig_hat = np.sqrt(cfg.sigmas**2 + cfg.nus**2)
    if not forgetting:
        return np.ones(cfg.T)
    return np.array([q_t(cfg.R, cfg.etas[t], cfg.lipschitz_L, sig_hat[t]) for t in range(cfg.T)])


def lossy_roots(traj: Trajectory, cfg: SGLDConfig, forgetting: bool = True) -> np.ndarray:
    """Per-index ``sqrt(sum_{t: i in V_t} A_{t,i} f(eta m Delta_hat / (b sigma_hat), 1/2))``."""
    sig_hat = np.sqrt(cfg.sigmas**2 + cfg.nus**2)
    q = forgetting_factors(cfg, forgetting)
    info = _info_terms(traj, cfg, sig_hat)
    # A[t, i] = product of q_r over later steps r that skip index i
    factors = np.where(traj.touch == 0, q[:, None], 1.0)
    A = np.ones_like(info)
    for t in range(cfg.T - 2, -1, -1):
        A[t] = A[t + 1] * factors[t + 1]
    return np.sqrt((A * info).sum(axis=0))


def lossy_distortion(cfg: SGLDConfig) -> float:
    """``2 sqrt 2 L Gamma((d+1)/2)/Gamma(d/2) sum_t nu_t alpha^(T-t)``."""
    weights = cfg.alpha ** (cfg.T - 1 - np.arange(cfg.T))
    return float(distortion_prefactor(cfg.d, cfg.lipschitz_L) * np.sum(cfg.nus * weights))


def lossy_report(
    per_index: np.ndarray, C: float, cfg: SGLDConfig, lossless_total: float | None = None, forgetting: bool = True
) -> SGLDBoundReport:
    """Assemble an :class:`SGLDBoundReport` from ensemble-averaged per-index roots."""
    rate = assemble_rate(per_index, C)
    dist = lossy_distortion(cfg)
    return SGLDBoundReport(
        lossless_total=lossless_total,
        lossy_total=rate + dist,
        rate_term=rate,
        distortion_term=dist,
        per_index=np.asarray(per_index).tolist(),
        flags={"sgd_mode": bool(np.all(cfg.sigmas == 0)), "forgetting": forgetting},
        notes={
            "posterior_weights": "p replaced by 1/2",
            "forgetting_convention": "immediate past iterate",
            "sigma_hat": "sqrt(sigma^2 + nu^2)",
        },
    )


def lossy_bound(
    perturbed: Sequence[Trajectory],
    C: float,
    cfg: SGLDConfig,
    references: Sequence[Trajectory] | None = None,
    forgetting: bool = True,
) -> SGLDBoundReport:
    """Rate term on perturbed trajectories plus the distortion term.

    Parameters
    ----------
    perturbed : sequence of Trajectory
        Auxiliary runs providing the gaps.
    C : float
        Loss range.
    cfg : SGLDConfig
    references : sequence of Trajectory, optional
        When given, the lossless bound on them is reported alongside.
    forgetting : bool
        Apply the factors ``q_r``; with ``False`` every ``q_r`` is 1.
    """
    if not perturbed:
        raise ParameterError("empty trajectory ensemble")
    C = check_real("C", C, 0.0)
    per_index = np.stack([lossy_roots(tr, cfg, forgetting) for tr in perturbed]).mean(axis=0)
    lossless = None if references is None else lossless_bound(references, C, cfg)
    return lossy_report(per_index, C, cfg, lossless, forgetting)


@dataclass
class EnsembleMember:
    """One replica: reference and perturbed runs plus the gap of the final model."""

    reference: Trajectory
    perturbed: Optional[Trajectory]
    gen_gap: float


def run_replica(cfg, inst, dist, n, seed: Seed, perturb: bool = True) -> EnsembleMember:
    """One replica: seeds 0 super-sample, 1 membership, 2 projection, 3 training, 4 gen error."""
    ss = sample_supersample(dist, n, seed.child(0))
    J = sample_membership(n, seed.child(1))
    theta = stiefel_from_rng(seed.child(2).generator(), inst.D, cfg.d)
    ref = train_subspace(cfg, inst, ss, J, theta, seed.child(3))
    pert = perturbed_trajectory(cfg, inst, ss, J, theta, ref, seed.child(3)) if perturb else None
    w = theta @ ref.final
    train = select_train(ss, J)
    gap = float(gen_error_rows(inst, dist, train, w[None, :], seed.child(4))[0])
    return EnsembleMember(ref, pert, gap)


def run_ensemble(
    cfg: SGLDConfig,
    inst: ProblemInstance,
    dist: DataDistribution,
    n: int,
    replicas: int,
    seed: Seed | int = 0,
    perturb: bool = True,
    map_fn=None,
) -> list:
    """Independent replicas over fresh ``(S~, J, Theta, noise)``."""
    n = check_int("n", n, 1)
    replicas = check_int("replicas", replicas, 1)
    seed = as_seed(seed)

    def one(r):
        return run_replica(cfg, inst, dist, n, seed.child(r), perturb)

    return list((map_fn or map)(one, range(replicas)))


def measure_gen_gap(
    cfg: SGLDConfig,
    inst: ProblemInstance,
    dist: DataDistribution,
    n: int,
    replicas: int,
    seed: Seed | int = 0,
) -> MCEstimate:
    """Mean generalization gap of ``Theta W'_T`` over fresh replicas."""
    members = run_ensemble(cfg, inst, dist, n, replicas, seed, perturb=False)
    return mean_ci([m.gen_gap for m in members])


class SubspaceSGLD(BaseEstimator):
    """Subspace SGLD as a learner: ``fit`` returns ``coef_ = Theta W'_T``.

    Parameters
    ----------
    problem : ProblemInstance
    n_components, n_steps, batch_size : int
    step_size, noise_scale, radius : float
    random_state : Seed, int or None
    """

    def __init__(
        self,
        problem: Optional[ProblemInstance] = None,
        n_components: int = 8,
        n_steps: int = 100,
        batch_size: int = 10,
        step_size: float = 0.05,
        noise_scale: float = 0.05,
        radius: float = 1.0,
        random_state=None,
    ):
        self.problem = problem
        self.n_components = n_components
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.step_size = step_size
        self.noise_scale = noise_scale
        self.radius = radius
        self.random_state = random_state

    def fit(self, X, y=None):
        inst = self.problem
        if inst is None:
            raise ParameterError("SubspaceSGLD needs a problem instance")
        X = check_rows("X", X, inst.D)
        cfg = SGLDConfig(self.n_components, self.n_steps, min(self.batch_size, X.shape[0]), self.step_size, self.noise_scale, 0.0, self.radius)
        seed = as_seed(self.random_state)
        theta = stiefel_from_rng(seed.child(0).generator(), inst.D, cfg.d)
        batches = seed.child(1).generator().integers(0, X.shape[0], size=(cfg.T, cfg.b))
        noise = seed.child(2).generator().standard_normal((cfg.T, cfg.d))
        states = _run(cfg, inst, X, theta, batches, noise, np.zeros(cfg.d))[0]
        self.theta_ = theta
        self.subspace_coef_ = states[-1]
        self.coef_ = theta @ states[-1]
        return self

"""Loss families, risk functionals and learners.

Four loss families are supported on the hypothesis ball ``B_D(R)``:

* ``linear``: ``-L <w, z>``
* ``strongly_convex``: ``-L_c <w, z> + (lam/2) ||w||^2``
* ``squared``: ``-L ||w - z||^2``
* ``generalized_linear``: ``g(<w, phi(z)>, z) + r(w)`` with user-supplied
  link ``g``, feature map ``phi`` and offset ``r``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_int, check_real, check_rows, check_vector
from .core import DataDistribution, FiniteSupport, Seed, as_seed, uniform_ball_rows
from .exceptions import ParameterError, ShapeError, UnsupportedError
from .stats import MCEstimate, mean_ci

__all__ = [
    "KINDS",
    "ProblemInstance",
    "loss",
    "loss_matrix",
    "loss_grad",
    "loss_range",
    "empirical_risk",
    "population_risk",
    "gen_error",
    "gen_error_rows",
    "erm_linear",
    "EmpiricalRiskMinimizer",
    "ProjectedGradientDescent",
    "project_ball",
    "LipschitzAudit",
    "audit_lipschitz",
]

KINDS = ("linear", "strongly_convex", "squared", "generalized_linear")


@dataclass(frozen=True)
class ProblemInstance:
    """Loss family descriptor with its constants.

    Parameters
    ----------
    kind : str
        One of ``KINDS``.
    D : int
        Ambient dimension.
    L, L_c, lam, R, B : float
        Lipschitz constant, linear-part constant for the strongly convex
        family, curvature, hypothesis radius and feature bound.
    link : callable, optional
        ``link(t, Z)`` for the generalized-linear family, where ``t`` has shape
        ``(k, m)`` and ``Z`` has shape ``(m, D)``. Must be ``L``-Lipschitz in ``t``.
    link_grad : callable, optional
        Derivative of ``link`` in ``t``, same signature.
    feature_map : callable, optional
        ``phi(Z) -> (m, D)`` with row norms at most ``B``; identity if omitted.
    offset, offset_grad : callable, optional
        ``r(W) -> (k,)`` and its gradient ``(D,) -> (D,)``; zero if omitted.
    loss_bounds : tuple of float, optional
        Declared range of the generalized-linear loss.
    """

    kind: str
    D: int
    L: float = 1.0
    L_c: float = 1.0
    lam: float = 1.0
    R: float = 1.0
    B: float = 1.0
    link: Optional[Callable] = None
    link_grad: Optional[Callable] = None
    feature_map: Optional[Callable] = None
    offset: Optional[Callable] = None
    offset_grad: Optional[Callable] = None
    loss_bounds: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        check_int("D", self.D, 1)
        for name in ("L", "L_c", "lam", "R", "B"):
            check_real(name, getattr(self, name), 0.0, low_open=True)
        if self.kind == "generalized_linear" and self.link is None:
            raise ParameterError("generalized_linear instances need a link function")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "D": self.D, "R": self.R}
        if self.kind in ("linear", "squared", "generalized_linear"):
            out["L"] = self.L
        if self.kind == "strongly_convex":
            out.update(L_c=self.L_c, lam=self.lam)
        if self.kind == "generalized_linear":
            out["B"] = self.B
        return out


def _features(inst: ProblemInstance, Z: np.ndarray) -> np.ndarray:
    if inst.feature_map is None:
        return Z
    return np.asarray(inst.feature_map(Z), dtype=np.float64)


def loss_matrix(inst: ProblemInstance, Z, W) -> np.ndarray:
    """Losses for every (hypothesis, point) pair.

    Parameters
    ----------
    inst : ProblemInstance
    Z : array_like of shape (m, D) or (D,)
    W : array_like of shape (k, D) or (D,)

    Returns
    -------
    ndarray of shape (k, m)
    """
    Z = check_rows("Z", Z, inst.D)
    W = check_rows("W", W, inst.D)
    if inst.kind == "linear":
        return -inst.L * (W @ Z.T)
    if inst.kind == "strongly_convex":
        sq = np.einsum("kd,kd->k", W, W)
        return -inst.L_c * (W @ Z.T) + 0.5 * inst.lam * sq[:, None]
    if inst.kind == "squared":
        wsq = np.einsum("kd,kd->k", W, W)
        zsq = np.einsum("md,md->m", Z, Z)
        return -inst.L * (wsq[:, None] - 2.0 * (W @ Z.T) + zsq[None, :])
    t = W @ _features(inst, Z).T
    out = np.asarray(inst.link(t, Z), dtype=np.float64)
    if inst.offset is not None:
        out = out + np.asarray(inst.offset(W), dtype=np.float64)[:, None]
    return out


def loss(inst: ProblemInstance, z, w):
    """Loss of hypothesis ``w`` at point(s) ``z``.

    Returns a float for a single point and an ``(m,)`` array for ``m`` points.
    """
    w = check_vector("w", w, inst.D)
    z_arr = np.asarray(z, dtype=np.float64)
    if z_arr.ndim == 1 and z_arr.shape[0] != inst.D:
        raise ShapeError(f"point has length {z_arr.shape[0]}, expected D={inst.D}")
    out = loss_matrix(inst, z_arr, w)[0]
    return float(out[0]) if z_arr.ndim == 1 else out


def loss_grad(inst: ProblemInstance, Z, w) -> np.ndarray:
    """Gradient in ``w`` of the loss at each row of ``Z``; shape ``(m, D)``."""
    Z = check_rows("Z", Z, inst.D)
    w = check_vector("w", w, inst.D)
    if inst.kind == "linear":
        return -inst.L * Z
    if inst.kind == "strongly_convex":
        return -inst.L_c * Z + inst.lam * w[None, :]
    if inst.kind == "squared":
        return -2.0 * inst.L * (w[None, :] - Z)
    if inst.link_grad is None:
        raise UnsupportedError("generalized_linear gradients need link_grad")
    phi = _features(inst, Z)
    t = (w @ phi.T)[None, :]
    g = np.asarray(inst.link_grad(t, Z), dtype=np.float64)[0]
    out = g[:, None] * phi
    if inst.offset_grad is not None:
        out = out + np.asarray(inst.offset_grad(w), dtype=np.float64)[None, :]
    return out


def loss_range(inst: ProblemInstance) -> tuple[float, float]:
    """A valid ``(low, high)`` range of the loss over ``B_D(R)`` and the unit ball."""
    if inst.kind == "linear":
        return -inst.L * inst.R, inst.L * inst.R
    if inst.kind == "strongly_convex":
        return -inst.L_c * inst.R, inst.L_c * inst.R + 0.5 * inst.lam * inst.R**2
    if inst.kind == "squared":
        return -inst.L * (inst.R + 1.0) ** 2, 0.0
    if inst.loss_bounds is None:
        raise UnsupportedError("generalized_linear range must be declared via loss_bounds")
    lo, hi = inst.loss_bounds
    return float(lo), float(hi)


def empirical_risk(inst: ProblemInstance, dataset, w) -> float:
    """Mean loss of ``w`` over ``dataset`` (shape ``(n, D)``)."""
    Z = check_rows("dataset", dataset, inst.D)
    if Z.shape[0] == 0:
        raise ParameterError("dataset must be non-empty")
    return float(loss_matrix(inst, Z, w)[0].mean())


def population_risk(
    inst: ProblemInstance,
    dist: DataDistribution,
    w,
    *,
    n_samples: int = 10**6,
    random_state=None,
    return_ci: bool = False,
):
    """Expected loss of ``w`` under ``dist``.

    Closed form for the linear, strongly convex and squared families (through
    ``E[Z]`` and ``E||Z||^2``) and for finite supports; Monte Carlo otherwise.

    Parameters
    ----------
    inst, dist, w
    n_samples : int
        Monte Carlo sample count when no closed form applies.
    random_state : Seed or int, optional
    return_ci : bool
        Return an :class:`MCEstimate` (half-width 0 when exact).
    """
    w = check_vector("w", w, inst.D)
    if dist.D != inst.D:
        raise ShapeError(f"distribution dimension {dist.D} != instance dimension {inst.D}")
    mu = dist.mean()
    if inst.kind == "linear":
        est = MCEstimate.exact(-inst.L * float(w @ mu))
    elif inst.kind == "strongly_convex":
        est = MCEstimate.exact(-inst.L_c * float(w @ mu) + 0.5 * inst.lam * float(w @ w))
    elif inst.kind == "squared":
        est = MCEstimate.exact(-inst.L * (float(w @ w) - 2.0 * float(w @ mu) + dist.sq_norm_mean()))
    elif isinstance(dist, FiniteSupport):
        est = MCEstimate.exact(float(dist.weights @ loss_matrix(inst, dist.atoms, w)[0]))
    else:
        n_samples = check_int("n_samples", n_samples, 2)
        rng = as_seed(random_state).generator()
        chunk = 10**5
        vals = []
        left = n_samples
        while left > 0:
            m = min(chunk, left)
            vals.append(loss_matrix(inst, dist.sample(m, rng), w)[0])
            left -= m
        est = mean_ci(np.concatenate(vals))
    return est if return_ci else est.value


def gen_error(inst: ProblemInstance, dist: DataDistribution, dataset, w, **kwargs) -> float:
    """Population risk minus empirical risk of ``w`` on ``dataset``."""
    return population_risk(inst, dist, w, **kwargs) - empirical_risk(inst, dataset, w)


def gen_error_rows(inst: ProblemInstance, dist: DataDistribution, dataset, W, seed: Seed | int = 0) -> np.ndarray:
    """Generalization errors of every row of ``W`` (shape ``(k, D)``) on ``dataset``.

    Closed forms are used where available; otherwise each row gets a Monte
    Carlo population risk with ``10**5`` samples from ``seed.child(row)``.
    """
    W = check_rows("W", W, inst.D)
    emp = loss_matrix(inst, dataset, W).mean(axis=1)
    if inst.kind == "generalized_linear" and not isinstance(dist, FiniteSupport):
        seed = as_seed(seed)
        pop = np.array(
            [population_risk(inst, dist, w, random_state=seed.child(k), n_samples=10**5) for k, w in enumerate(W)]
        )
        return pop - emp
    return np.array([population_risk(inst, dist, w) for w in W]) - emp


def project_ball(w: np.ndarray, R: float) -> np.ndarray:
    """Radial projection onto the closed ball of radius ``R``."""
    nrm = float(np.linalg.norm(w))
    return w if nrm <= R else w * (R / nrm)


def erm_linear(inst: ProblemInstance, dataset) -> np.ndarray:
    """Exact empirical risk minimiser over ``B_D(R)``.

    Linear family: ``R * zbar / ||zbar||`` (zero when ``zbar = 0``).
    Strongly convex family: ``(L_c/lam) * zbar`` projected onto ``B_D(R)``.
    """
    if inst.kind not in ("linear", "strongly_convex"):
        raise UnsupportedError(f"closed-form ERM is not available for kind {inst.kind!r}")
    Z = check_rows("dataset", dataset, inst.D)
    if Z.shape[0] == 0:
        raise ParameterError("dataset must be non-empty")
    zbar = Z.mean(axis=0)
    if inst.kind == "strongly_convex":
        return project_ball((inst.L_c / inst.lam) * zbar, inst.R)
    nrm = float(np.linalg.norm(zbar))
    if nrm == 0.0:
        return np.zeros(inst.D)
    return inst.R * zbar / nrm


class EmpiricalRiskMinimizer(BaseEstimator):
    """Closed-form ERM learner for the linear and strongly convex families.

    Parameters
    ----------
    problem : ProblemInstance

    Attributes
    ----------
    coef_ : ndarray of shape (D,)
        The learned hypothesis.
    """

    def __init__(self, problem: Optional[ProblemInstance] = None):
        self.problem = problem

    def fit(self, X, y=None):
        if self.problem is None:
            raise ParameterError("EmpiricalRiskMinimizer needs a problem instance")
        self.coef_ = erm_linear(self.problem, X)
        return self

    def score(self, X, y=None) -> float:
        """Negative empirical risk of the fitted hypothesis on ``X``."""
        return -empirical_risk(self.problem, X, self.coef_)


class ProjectedGradientDescent(BaseEstimator):
    """Full-batch projected gradient descent on the empirical risk.

    Parameters
    ----------
    problem : ProblemInstance
    step_size : float
    n_iter : int
    """

    def __init__(self, problem: Optional[ProblemInstance] = None, step_size: float = 0.1, n_iter: int = 100):
        self.problem = problem
        self.step_size = step_size
        self.n_iter = n_iter

    def fit(self, X, y=None):
        inst = self.problem
        if inst is None:
            raise ParameterError("ProjectedGradientDescent needs a problem instance")
        Z = check_rows("X", X, inst.D)
        eta = check_real("step_size", self.step_size, 0.0)
        w = np.zeros(inst.D)
        for _ in range(check_int("n_iter", self.n_iter, 0)):
            w = project_ball(w - eta * loss_grad(inst, Z, w).mean(axis=0), inst.R)
        self.coef_ = w
        return self

    def score(self, X, y=None) -> float:
        return -empirical_risk(self.problem, X, self.coef_)


@dataclass(frozen=True)
class LipschitzAudit:
    """Outcome of a randomized Lipschitz check.

    ``worst_ratio`` is the largest observed
    ``|loss(z,w1) - loss(z,w2)| / (L * B * ||w1 - w2||)``.
    """

    ok: bool
    worst_ratio: float
    n_probes: int


def audit_lipschitz(
    inst: ProblemInstance,
    dist: DataDistribution,
    n_probes: int = 1000,
    seed: Seed | int | None = 0,
) -> LipschitzAudit:
    """Probe the claimed Lipschitz constant ``L * B`` of a loss in ``w``."""
    n_probes = check_int("n_probes", n_probes, 1)
    rng = as_seed(seed).generator()
    Z = dist.sample(n_probes, rng)
    W1 = uniform_ball_rows(rng, n_probes, inst.D, inst.R)
    W2 = uniform_ball_rows(rng, n_probes, inst.D, inst.R)
    l1 = np.array([loss_matrix(inst, Z[k], W1[k])[0, 0] for k in range(n_probes)])
    l2 = np.array([loss_matrix(inst, Z[k], W2[k])[0, 0] for k in range(n_probes)])
    gaps = np.linalg.norm(W1 - W2, axis=1)
    const = inst.L * (inst.B if inst.kind == "generalized_linear" else 1.0)
    ratio = np.abs(l1 - l2) / (const * np.maximum(gaps, 1e-300))
    worst = float(ratio.max())
    return LipschitzAudit(worst <= 1.0 + 1e-9, worst, n_probes)

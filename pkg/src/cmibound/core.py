"""Seeded randomness, data distributions and the super-sample machinery.

Every sampler here is a pure function of its parameters and a :class:`Seed`.
Seeds derive independent child streams hierarchically, so Monte Carlo
replicas are reproducible regardless of how they are scheduled.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_int, check_matrix, check_real, check_vector, frozen
from .exceptions import ParameterError, ShapeError

__all__ = [
    "Seed",
    "as_seed",
    "DataDistribution",
    "CubeDistribution",
    "FiniteSupport",
    "SphereUniform",
    "distribution_from_dict",
    "SuperSample",
    "sample_supersample",
    "sample_membership",
    "select_train",
    "select_ghost",
    "sample_gaussian_matrix",
    "sample_uniform_ball",
    "sample_stiefel",
    "uniform_ball_rows",
    "stiefel_from_rng",
]

_MAX_ROOT = 2**64


@dataclass(frozen=True)
class Seed:
    """Hierarchical seed: a 64-bit root and a path of non-negative integers.

    Identical ``(root, path)`` pairs give identical streams; distinct paths
    give statistically independent streams (via ``SeedSequence`` spawn keys
    feeding a counter-based Philox generator).

    Parameters
    ----------
    root : int
        Root entropy, ``0 <= root < 2**64``.
    path : tuple of int, optional
        Derivation path.
    """

    root: int
    path: tuple = field(default=())

    def __post_init__(self):
        root = check_int("seed root", self.root, 0, _MAX_ROOT - 1)
        path = tuple(check_int("seed path entry", k, 0) for k in self.path)
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "path", path)

    def child(self, *keys: int) -> "Seed":
        """Return the seed at ``path + keys``."""
        return Seed(self.root, self.path + tuple(keys))

    def generator(self) -> np.random.Generator:
        """Return a fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.root, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))

    def to_dict(self) -> dict:
        return {"root": self.root, "path": list(self.path)}


def as_seed(random_state) -> Seed:
    """Coerce ``None``, an int or a :class:`Seed` into a :class:`Seed`.

    ``None`` draws a fresh root from OS entropy (non-reproducible).
    """
    if isinstance(random_state, Seed):
        return random_state
    if random_state is None:
        return Seed(int.from_bytes(os.urandom(8), "little"))
    return Seed(check_int("random_state", random_state, 0, _MAX_ROOT - 1))


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


class DataDistribution:
    """Base class for data distributions supported in the unit ball of R^D."""

    kind: str = ""

    @property
    def D(self) -> int:
        raise NotImplementedError

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``size`` i.i.d. points as a ``(size, D)`` array."""
        raise NotImplementedError

    def mean(self) -> np.ndarray:
        """Exact mean vector E[Z]."""
        raise NotImplementedError

    def sq_norm_mean(self) -> float:
        """Exact E[||Z||^2]."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class CubeDistribution(DataDistribution):
    """Product distribution on ``{-1/sqrt(D), +1/sqrt(D)}^D``.

    Coordinate ``k`` equals ``+1/sqrt(D)`` with probability ``(1 + p_k)/2``,
    so ``E[Z_k] = p_k/sqrt(D)`` and every atom has unit norm.

    Parameters
    ----------
    p_star : array_like of shape (D,)
        Bias vector with entries in ``[-1, 1]``.
    """

    kind = "cube_p"

    def __init__(self, p_star):
        p = check_vector("p_star", p_star)
        if p.size == 0:
            raise ParameterError("p_star must be non-empty")
        if np.any(p < -1.0) or np.any(p > 1.0):
            raise ParameterError("p_star components must lie in [-1, 1]")
        self.p_star = frozen(p)

    @classmethod
    def random(cls, D: int, seed: Seed) -> "CubeDistribution":
        """Cube distribution with ``p_star`` drawn uniformly from ``[-1, 1]^D``."""
        D = check_int("D", D, 1)
        return cls(seed.generator().uniform(-1.0, 1.0, size=D))

    @property
    def D(self) -> int:
        return self.p_star.shape[0]

    def sample(self, size, rng):
        size = check_int("size", size, 0)
        u = rng.random((size, self.D))
        signs = np.where(u < 0.5 * (1.0 + self.p_star), 1.0, -1.0)
        return signs / np.sqrt(self.D)

    def mean(self):
        return self.p_star / np.sqrt(self.D)

    def sq_norm_mean(self):
        return 1.0

    def to_dict(self):
        return {"kind": self.kind, "p_star": self.p_star.tolist()}


class FiniteSupport(DataDistribution):
    """Distribution on finitely many atoms with explicit weights.

    Parameters
    ----------
    atoms : array_like of shape (k, D)
    weights : array_like of shape (k,)
        Non-negative, summing to one within 1e-12.
    """

    kind = "finite_support"

    def __init__(self, atoms, weights):
        atoms = check_matrix("atoms", atoms)
        weights = check_vector("weights", weights, atoms.shape[0])
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ParameterError("weights must be non-negative and sum to 1")
        if np.any(np.linalg.norm(atoms, axis=1) > 1.0 + 1e-12):
            raise ParameterError("atoms must lie in the unit ball")
        self.atoms = frozen(atoms)
        self.weights = frozen(weights)

    @property
    def D(self):
        return self.atoms.shape[1]

    def sample(self, size, rng):
        size = check_int("size", size, 0)
        idx = rng.choice(self.atoms.shape[0], size=size, p=self.weights)
        return self.atoms[idx].copy()

    def mean(self):
        return self.weights @ self.atoms

    def sq_norm_mean(self):
        return float(self.weights @ np.einsum("kd,kd->k", self.atoms, self.atoms))

    def to_dict(self):
        return {"kind": self.kind, "atoms": self.atoms.tolist(), "weights": self.weights.tolist()}


class SphereUniform(DataDistribution):
    """Uniform distribution on the unit sphere of R^D."""

    kind = "sphere_uniform"

    def __init__(self, D: int):
        self._D = check_int("D", D, 1)

    @property
    def D(self):
        return self._D

    def sample(self, size, rng):
        size = check_int("size", size, 0)
        g = rng.standard_normal((size, self.D))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def mean(self):
        return np.zeros(self.D)

    def sq_norm_mean(self):
        return 1.0

    def to_dict(self):
        return {"kind": self.kind, "D": self.D}


def distribution_from_dict(block: dict) -> DataDistribution:
    """Rebuild a distribution from its ``to_dict`` record."""
    kind = block.get("kind")
    if kind == "cube_p":
        return CubeDistribution(block["p_star"])
    if kind == "finite_support":
        return FiniteSupport(block["atoms"], block["weights"])
    if kind == "sphere_uniform":
        return SphereUniform(block["D"])
    raise ParameterError(f"unknown distribution kind {kind!r}")


# ---------------------------------------------------------------------------
# super-samples and membership
# ---------------------------------------------------------------------------


class SuperSample:
    """An ``n x 2`` array of data points.

    Parameters
    ----------
    points : array_like of shape (n, 2, D)
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ShapeError(f"super-sample must have shape (n, 2, D), got {pts.shape}")
        self.points = frozen(pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def D(self) -> int:
        return self.points.shape[2]

    def column(self, j: int) -> np.ndarray:
        return self.points[:, j, :]

    def __repr__(self):
        return f"SuperSample(n={self.n}, D={self.D})"


def sample_supersample(dist: DataDistribution, n: int, seed: Seed) -> SuperSample:
    """Draw ``2n`` i.i.d. points from ``dist`` arranged as ``n x 2``."""
    n = check_int("n", n, 1)
    pts = dist.sample(2 * n, seed.generator())
    return SuperSample(pts.reshape(n, 2, dist.D))


def sample_membership(n: int, seed: Seed) -> np.ndarray:
    """Draw ``n`` i.i.d. fair bits as a ``uint8`` array."""
    n = check_int("n", n, 1)
    return seed.generator().integers(0, 2, size=n, dtype=np.uint8)


def _check_membership(ss: SuperSample, J) -> np.ndarray:
    J = np.asarray(J)
    if J.ndim != 1 or J.shape[0] != ss.n:
        raise ShapeError(f"membership vector length {J.shape} does not match n={ss.n}")
    if np.any((J != 0) & (J != 1)):
        raise ParameterError("membership bits must be 0 or 1")
    return J.astype(np.intp)


def select_train(ss: SuperSample, J) -> np.ndarray:
    """Return the training set ``(Z_{i,J_i})_i`` as an ``(n, D)`` array."""
    J = _check_membership(ss, J)
    return ss.points[np.arange(ss.n), J]


def select_ghost(ss: SuperSample, J) -> np.ndarray:
    """Return the ghost set ``(Z_{i,1-J_i})_i`` as an ``(n, D)`` array."""
    J = _check_membership(ss, J)
    return ss.points[np.arange(ss.n), 1 - J]


# ---------------------------------------------------------------------------
# random matrices and balls
# ---------------------------------------------------------------------------


def _check_dims(D, d):
    D = check_int("D", D, 1)
    d = check_int("d", d, 1)
    if d > D:
        raise ParameterError(f"target dimension d={d} exceeds ambient D={D}")
    return D, d


def sample_gaussian_matrix(D: int, d: int, seed: Seed) -> np.ndarray:
    """Draw a ``D x d`` matrix with i.i.d. ``N(0, 1/d)`` entries."""
    D, d = _check_dims(D, d)
    return seed.generator().standard_normal((D, d)) / np.sqrt(d)


def uniform_ball_rows(rng: np.random.Generator, size: int, d: int, nu: float) -> np.ndarray:
    """Draw ``size`` points uniformly from the ``d``-ball of radius ``nu``."""
    g = rng.standard_normal((size, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero Gaussian draw has probability zero; guard anyway
    norms[norms == 0.0] = 1.0
    r = nu * rng.random((size, 1)) ** (1.0 / d)
    return g / norms * r


def sample_uniform_ball(d: int, nu: float, seed: Seed, size: int | None = None) -> np.ndarray:
    """Draw from the uniform distribution on the ``d``-ball of radius ``nu``.

    Parameters
    ----------
    d : int
    nu : float
        Radius, strictly positive.
    seed : Seed
    size : int, optional
        Number of draws; a single vector is returned when omitted.

    Returns
    -------
    ndarray of shape (d,) or (size, d)
    """
    d = check_int("d", d, 1)
    nu = check_real("nu", nu, 0.0, low_open=True)
    rows = uniform_ball_rows(seed.generator(), 1 if size is None else check_int("size", size, 0), d, nu)
    return rows[0] if size is None else rows


def stiefel_from_rng(rng: np.random.Generator, D: int, d: int) -> np.ndarray:
    """Haar-distributed ``D x d`` matrix with orthonormal columns."""
    q, r = np.linalg.qr(rng.standard_normal((D, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def sample_stiefel(D: int, d: int, seed: Seed) -> np.ndarray:
    """Draw a uniformly distributed ``D x d`` matrix with orthonormal columns."""
    D, d = _check_dims(D, d)
    return stiefel_from_rng(seed.generator(), D, d)

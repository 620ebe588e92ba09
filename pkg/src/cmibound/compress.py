"""Gaussian projection, clipping and uniform-ball dithering of hypotheses.

A hypothesis ``w`` in ``R^D`` is compressed to ``w_hat = U + V`` in ``R^d``
where ``U = Theta^T w`` if ``||Theta^T w|| <= c_w`` and ``U = 0`` otherwise,
``Theta`` has i.i.d. ``N(0, 1/d)`` entries and ``V`` is uniform on the
``d``-ball of radius ``nu``. The projected-back model is ``Theta w_hat``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_int, check_matrix, check_real, check_rows, check_vector
from .core import Seed, as_seed, sample_gaussian_matrix, uniform_ball_rows
from .exceptions import ParameterError, ShapeError, UsageError
from .stats import MCEstimate, mean_ci

__all__ = [
    "CompressorConfig",
    "CompressedHypothesis",
    "theta_token",
    "clip_project",
    "quantize",
    "reconstruct",
    "cmi_cap",
    "tail_bound",
    "pushforward_norm_moments",
    "norm_blowup_lower_bound",
    "ball_coord_abs_mean",
    "JLCompressor",
    "mc_pushforward_moments",
    "mc_ball_coord_abs_mean",
    "mc_clip_frequency",
    "mc_compressed_norm_sq",
]

_CW_MAX = np.sqrt(1.25)


def _check_cw(c_w) -> float:
    return check_real("c_w", c_w, 1.0, _CW_MAX, high_open=True)


def _check_nu(nu) -> float:
    return check_real("nu", nu, 0.0, 1.0, low_open=True)


@dataclass(frozen=True)
class CompressorConfig:
    """Parameters ``(d, c_w, nu)`` of the projection compressor.

    Parameters
    ----------
    d : int
        Target dimension, at least 1.
    c_w : float
        Clip radius in ``[1, sqrt(5/4))``.
    nu : float
        Dither radius in ``(0, 1]``.
    """

    d: int
    c_w: float = 1.0
    nu: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, "d", check_int("d", self.d, 1))
        object.__setattr__(self, "c_w", _check_cw(self.c_w))
        object.__setattr__(self, "nu", _check_nu(self.nu))

    def cmi_cap(self) -> float:
        return cmi_cap(self)

    def to_dict(self) -> dict:
        return {"d": self.d, "c_w": self.c_w, "nu": self.nu}


@dataclass(frozen=True)
class CompressedHypothesis:
    """A compressed hypothesis tied to the projection that produced it."""

    w_hat: np.ndarray
    theta_ref: str


def theta_token(theta: np.ndarray) -> str:
    """Identity token of a projection matrix (content hash)."""
    arr = np.ascontiguousarray(theta, dtype=np.float64)
    h = hashlib.sha256(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()[:16]


def clip_project(theta, w, c_w: float) -> np.ndarray:
    """Project with ``Theta^T`` and zero out rows whose norm exceeds ``c_w``.

    Parameters
    ----------
    theta : array_like of shape (D, d)
    w : array_like of shape (D,) or (m, D)
    c_w : float

    Returns
    -------
    ndarray of shape (d,) or (m, d)
    """
    theta = check_matrix("theta", theta)
    c_w = check_real("c_w", c_w, 0.0)
    single = np.ndim(w) == 1
    W = check_rows("w", w, theta.shape[0])
    U = W @ theta
    # boundary norm == c_w stays unclipped
    U[np.linalg.norm(U, axis=1) > c_w] = 0.0
    return U[0] if single else U


def quantize(U, nu: float, seed: Seed, theta_ref: str = "", c_w: float | None = None) -> CompressedHypothesis:
    """Add uniform-ball dither of radius ``nu`` to ``U``."""
    U = check_vector("U", U)
    nu = check_real("nu", nu, 0.0, low_open=True)
    if c_w is not None and np.linalg.norm(U) > c_w:
        raise ParameterError("U lies outside the clip ball")
    v = uniform_ball_rows(seed.generator(), 1, U.shape[0], nu)[0]
    return CompressedHypothesis(U + v, theta_ref)


def reconstruct(theta, w_hat) -> np.ndarray:
    """Map a compressed hypothesis back to ``R^D`` as ``Theta w_hat``.

    ``w_hat`` may be a :class:`CompressedHypothesis`, whose token must match
    ``theta``, or a raw array (no identity check).
    """
    theta = check_matrix("theta", theta)
    if isinstance(w_hat, CompressedHypothesis):
        if w_hat.theta_ref and w_hat.theta_ref != theta_token(theta):
            raise UsageError("compressed hypothesis was produced with a different projection")
        w_hat = w_hat.w_hat
    arr = np.asarray(w_hat, dtype=np.float64)
    if arr.shape[-1] != theta.shape[1]:
        raise ShapeError(f"w_hat has length {arr.shape[-1]}, projection has d={theta.shape[1]}")
    return arr @ theta.T


def cmi_cap(cfg: CompressorConfig) -> float:
    """Information cap ``d * log((c_w + nu) / nu)`` in nats."""
    return cfg.d * float(np.log((cfg.c_w + cfg.nu) / cfg.nu))


def tail_bound(d: int, c_w: float) -> float:
    """Upper bound ``exp(-0.21 d (c_w^2 - 1)^2)`` on the clip probability."""
    d = check_int("d", d, 1)
    c_w = _check_cw(c_w)
    return float(np.exp(-0.21 * d * (c_w**2 - 1.0) ** 2))


def pushforward_norm_moments(D: int, d: int, wn: float) -> tuple[float, float]:
    """Exact ``E||Theta Theta^T w||^2`` and ``E||Theta Theta^T w||^4`` for ``||w|| = wn``."""
    D = check_int("D", D, 1)
    d = check_int("d", d, 1, D)
    wn = check_real("wn", wn, 0.0)
    m2 = (D + d + 1) / d * wn**2
    m4 = (D + d + 3) * (D + d + 5) * (d + 2) / d**3 * wn**4
    return float(m2), float(m4)


def norm_blowup_lower_bound(D: int, d: int, c_w: float, nu: float, wn: float) -> float:
    """Lower bound on ``E||Theta w_hat||^2`` for a hypothesis of norm ``wn``.

    May be negative when ``D`` is small relative to the dither and clip terms.
    """
    m2, m4 = pushforward_norm_moments(D, d, wn)
    c_w = _check_cw(c_w)
    nu = _check_nu(nu)
    decay = np.exp(-0.1 * d * (c_w**2 - 1.0) ** 2)
    return float(m2 - np.sqrt(m4) * decay - D * nu**2 / d)


def ball_coord_abs_mean(d: int, nu: float) -> float:
    """Exact ``E|V_1|`` for ``V`` uniform on the ``d``-ball of radius ``nu``."""
    d = check_int("d", d, 1)
    nu = check_real("nu", nu, 0.0, low_open=True)
    log_ratio = gammaln((d + 2) / 2.0) - gammaln((d + 3) / 2.0)
    return float(nu * np.exp(log_ratio) / np.sqrt(np.pi))


class JLCompressor(TransformerMixin, BaseEstimator):
    """Gaussian projection compressor with clipping and ball dithering.

    ``fit`` draws the projection ``Theta`` (shape ``(n_features, d)``);
    ``transform`` maps hypotheses to dithered codes ``w_hat``;
    ``inverse_transform`` maps codes back to ``Theta w_hat``.

    Parameters
    ----------
    n_components : int
        Target dimension ``d``.
    clip_radius : float
        ``c_w`` in ``[1, sqrt(5/4))``.
    dither_radius : float
        ``nu`` in ``(0, 1]``.
    projection : {"gaussian", "identity"}
        ``"identity"`` uses ``Theta = I`` and requires ``d = n_features``;
        it exists for testing.
    random_state : Seed, int or None

    Attributes
    ----------
    theta_ : ndarray of shape (n_features, n_components)
    theta_id_ : str
        Identity token of ``theta_``.
    n_features_in_ : int
    """

    def __init__(
        self,
        n_components: int = 1,
        clip_radius: float = 1.0,
        dither_radius: float = 0.4,
        projection: str = "gaussian",
        random_state=None,
    ):
        self.n_components = n_components
        self.clip_radius = clip_radius
        self.dither_radius = dither_radius
        self.projection = projection
        self.random_state = random_state

    @property
    def config(self) -> CompressorConfig:
        return CompressorConfig(self.n_components, self.clip_radius, self.dither_radius)

    def fit(self, X=None, y=None, n_features: int | None = None):
        """Draw the projection for hypotheses of dimension ``X.shape[1]``."""
        cfg = self.config
        if X is not None:
            n_features = check_rows("X", X).shape[1]
        if n_features is None:
            raise ParameterError("fit needs X or n_features")
        D = check_int("n_features", n_features, 1)
        seed = as_seed(self.random_state)
        if self.projection == "gaussian":
            theta = sample_gaussian_matrix(D, cfg.d, seed.child(0))
        elif self.projection == "identity":
            if cfg.d != D:
                raise ParameterError("identity projection needs n_components == n_features")
            theta = np.eye(D)
        else:
            raise ParameterError(f"unknown projection {self.projection!r}")
        self.theta_ = theta
        self.theta_id_ = theta_token(theta)
        self.n_features_in_ = D
        self._dither_rng = seed.child(1).generator()
        return self

    def clip(self, W) -> np.ndarray:
        """Clipped projections ``U`` without dither."""
        check_is_fitted(self, "theta_")
        return clip_project(self.theta_, W, self.clip_radius)

    def transform(self, X, rng: np.random.Generator | None = None) -> np.ndarray:
        """Dithered codes ``w_hat`` for hypotheses ``X`` (one fresh dither per row).

        Parameters
        ----------
        X : array_like of shape (m, n_features) or (n_features,)
        rng : numpy Generator, optional
            Dither source; the compressor's own stream is used when omitted.
        """
        U = self.clip(X)
        single = U.ndim == 1
        U2 = U[None, :] if single else U
        rng = self._dither_rng if rng is None else rng
        out = U2 + uniform_ball_rows(rng, U2.shape[0], U2.shape[1], self.dither_radius)
        return out[0] if single else out

    def inverse_transform(self, X) -> np.ndarray:
        """Projected-back models ``Theta w_hat``."""
        check_is_fitted(self, "theta_")
        return reconstruct(self.theta_, X)

    def compress(self, w, rng: np.random.Generator | None = None) -> CompressedHypothesis:
        """Compress one hypothesis into a token-tagged :class:`CompressedHypothesis`."""
        return CompressedHypothesis(self.transform(check_vector("w", w), rng=rng), self.theta_id_)


# ---------------------------------------------------------------------------
# Monte Carlo oracles for the closed forms above
# ---------------------------------------------------------------------------


def _chunks(total: int, size: int):
    left = total
    while left > 0:
        m = min(size, left)
        yield m
        left -= m


def mc_pushforward_moments(D: int, d: int, n_samples: int, seed: Seed, chunk: int = 20000):
    """Monte Carlo ``E||Theta Theta^T e_1||^2`` and ``^4`` over fresh projections.

    Returns
    -------
    (MCEstimate, MCEstimate)
    """
    D = check_int("D", D, 1)
    d = check_int("d", d, 1, D)
    rng = seed.generator()
    s2 = []
    for m in _chunks(check_int("n_samples", n_samples, 2), chunk):
        theta = rng.standard_normal((m, D, d)) / np.sqrt(d)
        v = np.einsum("mkd,md->mk", theta, theta[:, 0, :])
        s2.append(np.einsum("mk,mk->m", v, v))
    s2 = np.concatenate(s2)
    return mean_ci(s2), mean_ci(s2**2)


def mc_ball_coord_abs_mean(d: int, nu: float, n_samples: int, seed: Seed, chunk: int = 200000) -> MCEstimate:
    """Monte Carlo ``E|V_1|`` for the uniform ``d``-ball of radius ``nu``."""
    rng = seed.generator()
    vals = [np.abs(uniform_ball_rows(rng, m, d, nu)[:, 0]) for m in _chunks(n_samples, chunk)]
    return mean_ci(np.concatenate(vals))


def mc_clip_frequency(D: int, d: int, c_ws, n_samples: int, seed: Seed, chunk: int | None = None) -> dict:
    """Empirical ``P(||Theta^T w|| > c_w)`` for a fixed random unit ``w``.

    The same projections are reused for every ``c_w`` in ``c_ws``.

    Returns
    -------
    dict mapping ``c_w`` to an :class:`MCEstimate` of the clip frequency.
    """
    D = check_int("D", D, 1)
    d = check_int("d", d, 1, D)
    rng = seed.generator()
    w = rng.standard_normal(D)
    w /= np.linalg.norm(w)
    chunk = chunk or max(1, 2_000_000 // (D * d))
    norms = []
    for m in _chunks(check_int("n_samples", n_samples, 2), chunk):
        theta = rng.standard_normal((m, D, d)) / np.sqrt(d)
        norms.append(np.linalg.norm(np.einsum("k,mkd->md", w, theta), axis=1))
    norms = np.concatenate(norms)
    return {float(c): mean_ci((norms > c).astype(np.float64)) for c in c_ws}


def mc_compressed_norm_sq(
    D: int, d: int, c_w: float, nu: float, wn: float, n_samples: int, seed: Seed, chunk: int | None = None
) -> MCEstimate:
    """Monte Carlo ``E||Theta w_hat||^2`` for a fixed hypothesis of norm ``wn``."""
    cfg = CompressorConfig(d, c_w, nu)
    rng = seed.generator()
    w = rng.standard_normal(D)
    w *= wn / np.linalg.norm(w)
    chunk = chunk or max(1, 2_000_000 // (D * d))
    vals = []
    for m in _chunks(check_int("n_samples", n_samples, 2), chunk):
        theta = rng.standard_normal((m, D, d)) / np.sqrt(d)
        U = np.einsum("k,mkd->md", w, theta)
        U[np.linalg.norm(U, axis=1) > cfg.c_w] = 0.0
        w_hat = U + uniform_ball_rows(rng, m, d, cfg.nu)
        back = np.einsum("mkd,md->mk", theta, w_hat)
        vals.append(np.einsum("mk,mk->m", back, back))
    return mean_ci(np.concatenate(vals))

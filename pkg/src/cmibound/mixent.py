"""Entropy of a two-component unit-variance Gaussian mixture.

``f(a, p)`` is the differential entropy of
``g_{a,p}(x) = p N(x; 0, 1) + (1 - p) N(x; a, 1)`` minus that of a standard
normal, i.e. the mutual information between a Bernoulli(p) selector and the
mixture draw. It lies in ``[0, log 2]`` and tends to ``log(2) h_b(p)`` as
``|a|`` grows.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from ._validation import check_real
from .core import Seed
from .exceptions import NumericalError, ParameterError
from .stats import MCEstimate, mean_ci

__all__ = [
    "MixtureParams",
    "gmix_pdf",
    "gmix_logpdf",
    "binary_entropy",
    "f_ap",
    "mc_mixture_entropy",
    "f_table",
    "write_f_table",
]

LOG2 = math.log(2.0)
_GAUSS_H = 0.5 * math.log(2.0 * math.pi * math.e)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_CROSSOVER = 40.0
_QUAD_TOL = 1e-10


@dataclass(frozen=True)
class MixtureParams:
    """Mean gap ``a`` (may be ``inf``) and weight ``p`` of the zero-mean component."""

    a: float
    p: float

    def __post_init__(self):
        object.__setattr__(self, "a", check_real("a", self.a, allow_inf=True))
        object.__setattr__(self, "p", check_real("p", self.p, 0.0, 1.0))


def _params(a, p) -> MixtureParams:
    return a if isinstance(a, MixtureParams) else MixtureParams(a, p)


def gmix_logpdf(x, a: float, p: float) -> np.ndarray:
    """Log-density of the mixture, evaluated stably."""
    x = np.asarray(x, dtype=np.float64)
    # log-weights rather than b=, which overflows for subnormal p
    with np.errstate(divide="ignore"):
        log_w = np.log(np.array([p, 1.0 - p])).reshape((2,) + (1,) * x.ndim)
    comps = np.stack([-0.5 * x**2, -0.5 * (x - a) ** 2]) + log_w
    return logsumexp(comps, axis=0) - _HALF_LOG_2PI


def gmix_pdf(x, mp: MixtureParams | float, p: float | None = None):
    """Mixture density ``g_{a,p}(x)``.

    Parameters
    ----------
    x : float or array_like
    mp : MixtureParams or float
        Parameters, or the gap ``a`` with ``p`` passed separately.
    """
    mp = _params(mp, p)
    if not math.isfinite(mp.a):
        raise ParameterError("the density needs a finite gap a")
    out = np.exp(gmix_logpdf(x, mp.a, mp.p))
    return float(out) if np.ndim(out) == 0 else out


def binary_entropy(p: float) -> float:
    """Binary entropy in bits, with ``0 log 0 = 0``."""
    p = check_real("p", p, 0.0, 1.0)
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p))


def f_ap(mp: MixtureParams | float, p: float | None = None, method: str = "auto") -> float:
    """Mixture entropy excess ``h(g_{a,p}) - log sqrt(2 pi e)``.

    Evaluated by adaptive Gauss-Kronrod quadrature over
    ``[min(0,a) - 12, max(0,a) + 12]``; for ``|a| > 40`` (including infinity)
    the limit ``log(2) h_b(p)`` is returned. The result is clamped to
    ``[0, log 2]``. ``method="quad"`` skips the shortcuts for ``a = 0``,
    ``p in {0, 1}`` and large ``|a|`` (finite ``a`` only).

    Raises
    ------
    NumericalError
        If the quadrature does not converge.
    """
    mp = _params(mp, p)
    a, p = mp.a, mp.p
    if method not in ("auto", "quad"):
        raise ParameterError(f"unknown method {method!r}")
    if method == "quad":
        if not math.isfinite(a):
            raise ParameterError("quadrature needs a finite gap a")
    elif abs(a) > _CROSSOVER:
        return LOG2 * binary_entropy(p)
    elif a == 0.0 or p in (0.0, 1.0):
        return 0.0
    lo, hi = min(0.0, a) - 12.0, max(0.0, a) + 12.0

    q = 1.0 - p

    def integrand(x):
        c1 = -0.5 * x * x
        c2 = -0.5 * (x - a) * (x - a)
        m = max(c1, c2)
        lg = m + math.log(p * math.exp(c1 - m) + q * math.exp(c2 - m)) - _HALF_LOG_2PI
        return -math.exp(lg) * lg

    # split at the component means so each piece is unimodal-ish
    pts = sorted({lo, min(0.0, a), 0.5 * a, max(0.0, a), hi})
    total = 0.0
    err = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for left, right in zip(pts[:-1], pts[1:]):
            try:
                val, e = integrate.quad(integrand, left, right, epsabs=_QUAD_TOL * 1e-2, epsrel=1e-12, limit=200)
            except integrate.IntegrationWarning as exc:
                raise NumericalError(f"quadrature failed for a={a}, p={p} on [{left}, {right}]: {exc}") from exc
            total += val
            err += e
    if err > _QUAD_TOL:
        raise NumericalError(f"quadrature error estimate {err:.3g} exceeds tolerance for a={a}, p={p}")
    return float(min(max(total - _GAUSS_H, 0.0), LOG2))


def mc_mixture_entropy(a: float, p: float, n_samples: int, seed: Seed, chunk: int = 10**6) -> MCEstimate:
    """Monte Carlo estimate of ``h(g_{a,p}) - log sqrt(2 pi e)``."""
    rng = seed.generator()
    vals = []
    left = n_samples
    while left > 0:
        m = min(chunk, left)
        x = rng.standard_normal(m) + np.where(rng.random(m) < p, 0.0, a)
        vals.append(-gmix_logpdf(x, a, p))
        left -= m
    est = mean_ci(np.concatenate(vals))
    return MCEstimate(est.value - _GAUSS_H, est.half_width, est.n_samples, est.std_error)


def f_table(a_grid, p_grid) -> np.ndarray:
    """Values of ``f`` on the product grid; shape ``(len(a_grid), len(p_grid))``."""
    return np.array([[f_ap(float(a), float(p)) for p in p_grid] for a in a_grid])


def write_f_table(path, a_grid, p_grid) -> np.ndarray:
    """Write a long-format CSV ``a,p,f`` (17 significant digits) and return the grid."""
    table = f_table(a_grid, p_grid)
    with open(path, "w", newline="") as fh:
        fh.write("# columns: a = mean gap, p = weight of zero-mean component, f = entropy excess (nats)\n")
        w = csv.writer(fh)
        w.writerow(["a", "p", "f"])
        for i, a in enumerate(a_grid):
            for j, p in enumerate(p_grid):
                w.writerow([f"{a:.17g}", f"{p:.17g}", f"{table[i, j]:.17g}"])
    return table

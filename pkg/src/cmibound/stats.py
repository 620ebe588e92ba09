"""Monte Carlo summaries and binomial confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exceptions import ParameterError

__all__ = ["MCEstimate", "mean_ci", "wilson_interval", "Z95"]

Z95 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class MCEstimate:
    """A Monte Carlo point estimate with a symmetric 95% half-width.

    Attributes
    ----------
    value : float
    half_width : float
        ``1.96 * standard error``; zero for exact values.
    n_samples : int
    std_error : float
    """

    value: float
    half_width: float
    n_samples: int
    std_error: float = 0.0

    @property
    def lower(self) -> float:
        return self.value - self.half_width

    @property
    def upper(self) -> float:
        return self.value + self.half_width

    @classmethod
    def exact(cls, value: float) -> "MCEstimate":
        return cls(float(value), 0.0, 0, 0.0)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "half_width": self.half_width,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
        }


def mean_ci(samples) -> MCEstimate:
    """Sample mean with a normal-approximation 95% interval."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ParameterError("cannot summarise an empty sample")
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return MCEstimate(float(x.mean()), Z95 * se, int(x.size), se)


def wilson_interval(successes: int, trials: int) -> tuple[float, float]:
    """Wilson score 95% interval for a binomial proportion."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(0.95, method="wilson")
    return float(ci.low), float(ci.high)

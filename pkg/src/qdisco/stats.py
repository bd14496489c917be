"""Small statistics helpers: exact binomial intervals and a width trend."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


def clopper_pearson(k: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    """Exact two-sided binomial interval for k successes out of n."""
    if n <= 0:
        return 0.0, 1.0
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside [0, {n}]")
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


@dataclass(frozen=True)
class Trend:
    slope: float
    lo: float
    hi: float
    points: int

    @property
    def negative(self) -> bool:
        """True when the whole interval lies below zero (significant decay)."""
        return self.hi < 0


def width_trend(widths, correct, alpha: float = 0.05) -> Trend:
    """Slope of per-instance correctness against width with a t-based interval.

    Ordinary least squares on the 0/1 outcomes, which weights every width by
    its instance count.
    """
    x = np.asarray(widths, dtype=float)
    y = np.asarray(correct, dtype=float)
    n = x.size
    if n < 3 or np.ptp(x) == 0:
        return Trend(0.0, -np.inf, np.inf, n)
    fit = stats.linregress(x, y)
    if not np.isfinite(fit.stderr) or fit.stderr == 0:
        return Trend(float(fit.slope), float(fit.slope), float(fit.slope), n)
    t = stats.t.ppf(1 - alpha / 2, n - 2)
    return Trend(float(fit.slope), float(fit.slope - t * fit.stderr),
                 float(fit.slope + t * fit.stderr), n)

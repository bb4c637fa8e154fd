"""Student-t distribution via the regularized incomplete beta function, and the paired t-test."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_TINY = 1e-300
_EPS = 1e-15


def _beta_cf(a: float, b: float, x: float, max_iter: int = 10_000) -> float:
    """Continued fraction of the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)`` for ``a, b > 0`` and ``0 <= x <= 1``."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = a * math.log(x) + b * math.log1p(-x) - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
    # the fraction converges fast below the mean; use the symmetry relation above it
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)``."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if t == 0:
        return 1.0
    if math.isinf(t):
        return 0.0
    return betainc(0.5 * df, 0.5, df / (df + t * t))


def student_t_cdf(t: float, df: float) -> float:
    """``F_t(t; df)``; exactly 0.5 at ``t = 0``."""
    if t == 0:
        return 0.5
    tail = 0.5 * student_t_sf2(t, df)
    return 1.0 - tail if t > 0 else tail


@dataclass(frozen=True)
class PairedTTestResult:
    t_statistic: float
    degrees_of_freedom: int
    p_value: float  # NaN when degenerate
    mean_difference: float
    n: int
    degenerate: bool = False  # differences have zero variance, so t and p are undefined

    def significant(self, alpha: float = 0.05) -> bool:
        return not self.degenerate and self.p_value < alpha


def paired_t_test(a, b) -> PairedTTestResult:
    """Two-sided paired t-test on ``d = a - b`` with the sample (n-1) standard deviation."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be 1-D and equal length, got {a.shape} and {b.shape}")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return PairedTTestResult(math.nan, n - 1, math.nan, mean, n, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return PairedTTestResult(t, n - 1, student_t_sf2(t, n - 1), mean, n)

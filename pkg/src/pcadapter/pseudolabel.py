"""Class-wise confidence distributions and bias-corrected pseudo-labels.

Each class's confidence on its own source samples is modelled as a beta
distribution fitted by the method of moments. A target score is rescaled by
``1 / (1 - r + r0)`` where ``r`` is its percentile rank (beta CDF) under that
class's fitted distribution, which favours classes whose typical confidence is
low, i.e. the source minority classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

_CF_EPS = 1e-15
_CF_TINY = 1e-300
_CF_MAX_ITER = 10_000


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float
    valid: bool = True

    @classmethod
    def invalid(cls) -> "BetaParams":
        return cls(math.nan, math.nan, False)

    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def variance(self) -> float:
        s = self.alpha + self.beta
        return self.alpha * self.beta / (s * s * (s + 1.0))


class ClassConfidenceStats:
    """Running count / sum / sum of squares of true-class confidences, per class."""

    def __init__(self, n_classes: int):
        self.n_classes = n_classes
        self.reset()

    def reset(self):
        self.count = np.zeros(self.n_classes, dtype=np.int64)
        self.total = np.zeros(self.n_classes)
        self.total_sq = np.zeros(self.n_classes)

    def add(self, probs, label: int):
        c = float(probs[label])
        self.count[label] += 1
        self.total[label] += c
        self.total_sq[label] += c * c

    def mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.total / self.count

    def variance(self) -> np.ndarray:
        """Unbiased sample variance; NaN for classes with fewer than two samples."""
        n = self.count.astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            var = (self.total_sq - self.total * self.total / n) / (n - 1.0)
        var = np.where(n >= 2, np.maximum(var, 0.0), np.nan)
        return var

    def fit(self) -> list[BetaParams]:
        means, variances = self.mean(), self.variance()
        return [fit_beta_mom(float(means[t]), float(variances[t]), int(self.count[t]))
                for t in range(self.n_classes)]


def collect_stats(stats: ClassConfidenceStats, probs, true_label: int) -> None:
    stats.add(probs, true_label)


def fit_beta_mom(mean: float, variance: float, count: Optional[int] = None) -> BetaParams:
    if count is not None and count < 2:
        return BetaParams.invalid()
    if not (0.0 < mean < 1.0) or not math.isfinite(variance):
        return BetaParams.invalid()
    spread = mean * (1.0 - mean)
    if variance <= 0.0 or variance >= spread:
        return BetaParams.invalid()
    common = spread / variance - 1.0
    return BetaParams(mean * common, (1.0 - mean) * common)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    if a <= 0 or b <= 0:
        raise ValueError(f"beta parameters must be positive, got ({a}, {b})")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # the fraction converges fast only below the mean-ish switch point
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def beta_cdf(x: float, params: BetaParams) -> float:
    if not params.valid:
        raise ValueError("beta_cdf called with an invalid fit")
    return regularized_incomplete_beta(float(x), params.alpha, params.beta)


def rectify(probs, all_params: Sequence[BetaParams], r0: float) -> np.ndarray:
    """Scale each class score by ``1 / (1 - r_t + r0)``.

    Classes without a valid fit use the raw score itself as ``r_t``.
    """
    if r0 <= 0:
        raise ValueError(f"r0 must be positive, got {r0}")
    probs = np.asarray(probs, dtype=np.float64)
    ranks = np.array([beta_cdf(p, bp) if bp.valid else p for p, bp in zip(probs, all_params)])
    return probs / (1.0 - ranks + r0)


def rescaled_threshold(gamma: float, r0: float) -> float:
    """Threshold moved onto the scale of rectified scores (mean of the extreme factors)."""
    return gamma * 0.5 * (1.0 / (r0 + 1.0) + 1.0 / r0)


def select_pseudo_label(adjusted, gamma: float, r0: float):
    """``(class, score)`` of the top adjusted score if it clears the rescaled threshold, else None."""
    adjusted = np.asarray(adjusted)
    t = int(np.argmax(adjusted))
    score = float(adjusted[t])
    if score >= rescaled_threshold(gamma, r0):
        return t, score
    return None


def max_confidence_pl(probs, gamma: float):
    probs = np.asarray(probs)
    t = int(np.argmax(probs))
    score = float(probs[t])
    return (t, score) if score >= gamma else None

"""Maximum-likelihood power-law fits with KS-based lower-cutoff selection.

Two regimes are supported:

* ``BOUNDED`` -- density ``c x**-delta`` on a finite interval ``[x_min, x_max]``;
  any real exponent is admissible, including ``delta < 1``.
* ``TAIL`` -- the same density on ``[x_min, inf)``, which requires ``delta > 1``.

Internally everything is written in terms of ``y = ln(x / x_min)``,
``L = ln(x_max / x_min)`` and ``a = 1 - delta``; the bounded family then has
normalizer ``g(a) = (exp(a L) - 1) / a`` and the mean of ``y`` under parameter
``a`` is ``h(a) = d ln g / da``.  The likelihood equation is ``h(a) = mean(y)``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq

logger = logging.getLogger(__name__)

# |1 - delta| below which the removable singularity at delta = 1 is handled by series
SINGULAR_EPS = 1e-6
DEFAULT_BRACKET = (1e-6, 20.0)


class Regime(str, Enum):
    BOUNDED = "bounded"
    TAIL = "tail"


class PowerLawError(ValueError):
    pass


class NoRootInBracket(PowerLawError):
    pass


class DegenerateSample(PowerLawError):
    pass


class InfiniteExponent(PowerLawError):
    pass


class EmptyTail(PowerLawError):
    pass


class FitFailed(PowerLawError):
    pass


def _log_g(a: float, L: float) -> float:
    """ln g(a) with g(a) = expm1(a L) / a and g(0) = L."""
    if a == 0.0:
        return math.log(L)
    aL = a * L
    if aL > 0:
        return aL + math.log1p(-math.exp(-aL)) - math.log(a)
    return math.log(-math.expm1(aL)) - math.log(-a)


def _mean_y(a: float, L: float) -> float:
    """h(a): mean of ln(x / x_min) under the bounded law with exponent 1 - a."""
    if abs(a) < SINGULAR_EPS:
        return L / 2 + a * L * L / 12 - a ** 3 * L ** 4 / 720
    aL = a * L
    if aL < -700:
        return -1.0 / a
    return L / -math.expm1(-aL) - 1.0 / a


def normalization(delta: float, x_min: float, x_max: float = math.inf) -> float:
    """The constant c making c * x**-delta a density on [x_min, x_max]."""
    if math.isinf(x_max):
        if delta <= 1:
            raise PowerLawError("unbounded support needs delta > 1")
        return (delta - 1) * x_min ** (delta - 1)
    L = math.log(x_max / x_min)
    return math.exp((delta - 1) * math.log(x_min) - _log_g(1 - delta, L))


@dataclass(frozen=True)
class PowerLawFit:
    regime: Regime
    delta: float
    x_min: float
    x_max: float = math.inf
    sigma: float = math.nan
    ks: float = math.nan
    n_tail: int = 0

    def __post_init__(self):
        if not self.x_min > 0:
            raise PowerLawError("x_min must be positive")
        if self.regime is Regime.TAIL:
            if not self.delta > 1:
                raise PowerLawError("the unbounded tail regime requires delta > 1")
            object.__setattr__(self, "x_max", math.inf)
        elif not (math.isfinite(self.x_max) and self.x_max > self.x_min):
            raise PowerLawError("bounded support needs finite x_max > x_min")

    @property
    def c(self) -> float:
        return normalization(self.delta, self.x_min, self.x_max)

    @property
    def log_range(self) -> float:
        return math.log(self.x_max / self.x_min)

    def _y(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(x < self.x_min) or np.any(x > self.x_max):
            raise PowerLawError(f"values outside the support [{self.x_min}, {self.x_max}]")
        return np.log(x / self.x_min)

    def logpdf(self, x) -> np.ndarray:
        y = self._y(x)
        if self.regime is Regime.TAIL:
            log_norm = -math.log(self.delta - 1)
        else:
            log_norm = _log_g(1 - self.delta, self.log_range)
        return -math.log(self.x_min) - log_norm - self.delta * y

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def cdf(self, x) -> np.ndarray:
        y = self._y(x)
        a = 1 - self.delta
        if self.regime is Regime.TAIL:
            return -np.expm1(a * y)
        L = self.log_range
        if a == 0.0:
            return y / L
        if a > 0:
            # exp(a (y - L)) (1 - exp(-a y)) / (1 - exp(-a L)) avoids overflow for large a L
            return np.exp(a * (y - L)) * np.expm1(-a * y) / math.expm1(-a * L)
        return np.expm1(a * y) / math.expm1(a * L)

    def ppf(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        a = 1 - self.delta
        if self.regime is Regime.TAIL:
            y = -np.log1p(-u) / (self.delta - 1)
        else:
            L = self.log_range
            if a == 0.0:
                y = u * L
            elif a > 0:
                y = L + np.log(u + (1 - u) * math.exp(-a * L)) / a
            else:
                y = np.log1p(u * math.expm1(a * L)) / a
        return np.clip(self.x_min * np.exp(y), self.x_min, self.x_max)

    def sample(self, count: int, seed=None) -> np.ndarray:
        """Inverse-CDF draws; identical seeds give identical draws."""
        return self.ppf(np.random.default_rng(seed).random(count))


def _check_support(x: np.ndarray, x_min: float, x_max: float = math.inf):
    if x.size and (x.min() < x_min or x.max() > x_max):
        raise PowerLawError(f"samples outside [{x_min}, {x_max}]")


def bounded_score(delta: float, samples, x_min: float, x_max: float) -> float:
    """d(log-likelihood)/d(delta) of the bounded law, summed over samples."""
    x = np.asarray(samples, dtype=float)
    y = np.log(x / x_min)
    return x.size * _mean_y(1 - delta, math.log(x_max / x_min)) - math.fsum(y)


def bounded_loglik(delta: float, samples, x_min: float, x_max: float) -> float:
    x = np.asarray(samples, dtype=float)
    y_sum = math.fsum(np.log(x / x_min))
    L = math.log(x_max / x_min)
    return -x.size * (math.log(x_min) + _log_g(1 - delta, L)) - delta * y_sum


def mle_delta_bounded(samples, x_min: float, x_max: float,
                      bracket: tuple[float, float] = DEFAULT_BRACKET) -> float:
    """Root of the bounded-law score equation.

    The bracket is widened geometrically on both sides until the score
    changes sign, so exponents at or below zero are reachable.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 10:
        raise PowerLawError("the bounded fit needs at least 10 samples")
    _check_support(x, x_min, x_max)
    if x.max() == x.min() or x_max <= x_min:
        raise DegenerateSample("all samples are equal")
    L = math.log(x_max / x_min)
    y_bar = math.fsum(np.log(x / x_min)) / x.size

    def f(delta):
        return _mean_y(1 - delta, L) - y_bar

    lo, hi = bracket
    f_lo, f_hi = f(lo), f(hi)
    step = hi - lo
    for _ in range(60):
        if f_lo >= 0 >= f_hi:
            break
        if f_lo < 0:
            lo -= step
            f_lo = f(lo)
        if f_hi > 0:
            hi += step
            f_hi = f(hi)
        step *= 2
    else:
        raise NoRootInBracket(
            f"score does not change sign on [{lo:g}, {hi:g}]: "
            f"{x.size * f_lo:g}, {x.size * f_hi:g}")
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    return brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def mle_delta_unbounded(samples, x_min: float) -> float:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise PowerLawError("the tail fit needs at least 2 samples")
    _check_support(x, x_min)
    total = math.fsum(np.log(x / x_min))
    if total == 0:
        raise InfiniteExponent("all samples sit at x_min")
    return 1 + x.size / total


def standard_error(delta: float, n: int, regime: Regime, x_min: float,
                   x_max: float = math.inf) -> float:
    """Inverse square root of n times the Fisher information per observation.

    For the bounded law the information is the negated second derivative of
    the per-observation log-likelihood, taken by central differences with a
    step of 1e-4 * delta.  For the tail law it is 1 / (delta - 1)**2.
    """
    if regime is Regime.TAIL:
        return (delta - 1) / math.sqrt(n)
    L = math.log(x_max / x_min)

    def ll(d):
        # the data term -d * mean(y) is linear in d and drops out of the second difference
        return -_log_g(1 - d, L)

    h = max(1e-4 * abs(delta), 1e-6)
    info = -(ll(delta + h) - 2 * ll(delta) + ll(delta - h)) / (h * h)
    return 1 / math.sqrt(n * info)


def _ks_sorted(tail: np.ndarray, fit: PowerLawFit) -> float:
    m = tail.size
    F = np.clip(fit.cdf(tail), 0.0, 1.0)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - F), np.max(F - (i - 1) / m)))


def ks_statistic(samples, fit: PowerLawFit) -> float:
    """Sup distance between the empirical CDF of the tail and the fitted CDF.

    The empirical CDF is evaluated on both sides of each of its steps.
    """
    x = np.asarray(samples, dtype=float)
    tail = np.sort(x[x >= fit.x_min])
    if tail.size == 0:
        raise EmptyTail(f"no samples at or above x_min={fit.x_min}")
    return _ks_sorted(tail, fit)


def fit_power_law(samples, regime: Regime, x_min: float, x_max: float | None = None) -> PowerLawFit:
    """Fit the exponent on the samples at or above a given x_min."""
    x = np.sort(np.asarray(samples, dtype=float))
    tail = x[x >= x_min]
    if tail.size == 0:
        raise EmptyTail(f"no samples at or above x_min={x_min}")
    return _fit_tail(tail, regime, x_min, x.max() if x_max is None else x_max)


def _fit_tail(tail: np.ndarray, regime: Regime, x_min: float, x_max: float) -> PowerLawFit:
    if regime is Regime.TAIL:
        delta = mle_delta_unbounded(tail, x_min)
    else:
        delta = mle_delta_bounded(tail, x_min, x_max)
    fit = PowerLawFit(regime, delta, x_min, x_max)
    sigma = standard_error(delta, tail.size, regime, x_min, fit.x_max)
    return PowerLawFit(regime, delta, x_min, fit.x_max, sigma=sigma,
                       ks=_ks_sorted(tail, fit), n_tail=int(tail.size))


def xmin_candidates(samples, skip_top: int = 10, exhaustive_limit: int = 1000,
                    max_candidates: int = 1000) -> np.ndarray:
    """Distinct sample values eligible as x_min, excluding the top order statistics.

    Above `exhaustive_limit` samples the list is thinned to `max_candidates`
    values evenly spaced in rank.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size <= skip_top:
        return np.empty(0)
    pool = np.unique(x[: x.size - skip_top])
    if x.size > exhaustive_limit and pool.size > max_candidates:
        idx = np.unique(np.linspace(0, pool.size - 1, max_candidates).round().astype(int))
        pool = pool[idx]
    return pool


def fit_with_xmin_scan(samples, regime: Regime, skip_top: int = 10,
                       exhaustive_limit: int = 1000, max_candidates: int = 1000) -> PowerLawFit:
    """Choose x_min by minimizing the KS statistic of the tail fit.

    Ties are broken towards the smaller x_min.  For the bounded regime
    x_max is the sample maximum for every candidate.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size < 50:
        warnings.warn(f"x_min scan on only {x.size} samples", stacklevel=2)
    x_max = float(x[-1]) if x.size else math.nan
    best = None
    for cand in xmin_candidates(x, skip_top, exhaustive_limit, max_candidates):
        tail = x[np.searchsorted(x, cand, side="left"):]
        try:
            fit = _fit_tail(tail, regime, float(cand), x_max)
        except PowerLawError as exc:
            logger.debug("x_min=%g skipped: %s", cand, exc)
            continue
        if best is None or fit.ks < best.ks:
            best = fit
    if best is None:
        raise FitFailed("no x_min candidate produced a fit")
    return best

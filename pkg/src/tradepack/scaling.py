"""Conditional-mean scaling relations between package duration, size and volume."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .detect import TradePackage
from .regress import ols


@dataclass(frozen=True)
class BinnedSeries:
    edges: np.ndarray  # (n_bins, 2): lowest and highest conditioning value per bin
    cond_mean: np.ndarray
    resp_mean: np.ndarray
    resp_se: np.ndarray
    counts: np.ndarray

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)


def equal_count_bins(x, n_bins: int) -> list[np.ndarray]:
    """Index arrays of `n_bins` consecutive groups of x in ascending order.

    Ties are kept in input order; group sizes differ by at most one.
    """
    x = np.asarray(x, dtype=float)
    if x.size < n_bins:
        raise ValueError(f"{x.size} samples for {n_bins} bins")
    order = np.argsort(x, kind="stable")
    return np.array_split(order, n_bins)


def binned_conditional_mean(x, y, n_bins: int = 20) -> BinnedSeries:
    """Means of y within equal-count bins of x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    groups = equal_count_bins(x, n_bins)
    edges = np.array([[x[g[0]], x[g[-1]]] for g in groups])
    cond = np.array([x[g].mean() for g in groups])
    resp = np.array([y[g].mean() for g in groups])
    se = np.array([y[g].std(ddof=1) / math.sqrt(g.size) if g.size > 1 else math.nan
                   for g in groups])
    counts = np.array([g.size for g in groups])
    return BinnedSeries(edges, cond, resp, se, counts)


@dataclass(frozen=True)
class LogLogFit:
    exponent: float
    stderr: float
    intercept: float
    n_bins: int

    @property
    def prefactor(self) -> float:
        return math.exp(self.intercept)


def window_mask(series: BinnedSeries, window: tuple[float, float] | None = None,
                top_frac: float | None = 0.5) -> np.ndarray:
    """Bins whose conditioning mean lies in `window`, or the top fraction of bins."""
    if window is not None:
        lo, hi = window
        return (series.cond_mean >= lo) & (series.cond_mean <= hi)
    mask = np.zeros(series.n_bins, dtype=bool)
    if top_frac is None:
        mask[:] = True
    else:
        k = max(2, int(math.ceil(top_frac * series.n_bins)))
        mask[-k:] = True
    return mask


def fit_loglog_powerlaw(series: BinnedSeries, window: tuple[float, float] | None = None,
                        top_frac: float | None = 0.5) -> LogLogFit:
    """OLS slope of ln(response mean) on ln(conditioning mean) over the fit window.

    `window` selects bins by conditioning value; otherwise the top
    `top_frac` of bins is used (all bins when `top_frac` is None).
    """
    mask = window_mask(series, window, top_frac)
    xs, ys = series.cond_mean[mask], series.resp_mean[mask]
    if xs.size < 2:
        raise ValueError("fewer than two bins in the fit window")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("nonpositive bin mean inside the fit window")
    lx = np.log(xs)
    X = np.column_stack([np.ones(lx.size), lx])
    ly = np.log(ys)
    if xs.size == 2:
        slope = (ly[1] - ly[0]) / (lx[1] - lx[0])
        return LogLogFit(float(slope), math.nan, float(ly[0] - slope * lx[0]), 2)
    res = ols(X, ly)
    return LogLogFit(float(res.beta[1]), float(res.stderr[1]), float(res.beta[0]), int(xs.size))


@dataclass(frozen=True)
class ScalingResult:
    g1: LogLogFit  # <T|V>
    g2: LogLogFit  # <N|V>
    g3: LogLogFit  # <T|N>
    series: dict[str, BinnedSeries]

    @property
    def product_gap(self) -> float:
        return abs(self.g1.exponent - self.g2.exponent * self.g3.exponent)

    @property
    def gap_sigma(self) -> float:
        """Standard error of g1 - g2*g3 by first-order propagation over independent fits."""
        g2, g3 = self.g2.exponent, self.g3.exponent
        return math.sqrt(self.g1.stderr ** 2 + (g3 * self.g2.stderr) ** 2
                         + (g2 * self.g3.stderr) ** 2)


def scaling_exponents_from_arrays(T, N, V, n_bins: int = 20,
                                  window_top_frac: float | None = 0.5) -> ScalingResult:
    T = np.asarray(T, dtype=float)
    N = np.asarray(N, dtype=float)
    V = np.asarray(V, dtype=float)
    if T.size < n_bins:
        raise ValueError(f"need at least {n_bins} packages, got {T.size}")
    series = {
        "T|V": binned_conditional_mean(V, T, n_bins),
        "N|V": binned_conditional_mean(V, N, n_bins),
        "T|N": binned_conditional_mean(N, T, n_bins),
    }
    fits = {k: fit_loglog_powerlaw(s, top_frac=window_top_frac) for k, s in series.items()}
    return ScalingResult(fits["T|V"], fits["N|V"], fits["T|N"], series)


def scaling_exponents(packages: Sequence[TradePackage], n_bins: int = 20,
                      window_top_frac: float | None = 0.5) -> ScalingResult:
    return scaling_exponents_from_arrays([p.T for p in packages], [p.N for p in packages],
                                         [p.V for p in packages], n_bins, window_top_frac)


def write_bins_tsv(series: dict[str, BinnedSeries], sink: IO[str]) -> None:
    sink.write("relation\tbin\tx_lo\tx_hi\tx_mean\ty_mean\ty_se\tcount\n")
    for name, s in series.items():
        for i in range(s.n_bins):
            sink.write(f"{name}\t{i}\t{s.edges[i, 0]:.6g}\t{s.edges[i, 1]:.6g}\t"
                       f"{s.cond_mean[i]:.6g}\t{s.resp_mean[i]:.6g}\t{s.resp_se[i]:.6g}\t"
                       f"{s.counts[i]}\n")

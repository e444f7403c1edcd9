"""Intraday profiles of package trading against normalized day-time t/D."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np

from .clock import CLOCK
from .detect import TradePackage
from .ingest import Aggressor, TradeRecord

logger = logging.getLogger(__name__)

DEFAULT_BINS = 48


class Selector(str, Enum):
    MARKET = "market"
    LIMIT = "limit"
    ALL = "all"
    CONCURRENT = "concurrent"


def time_bins(t, n_bins: int) -> np.ndarray:
    """Bin index of normalized times; t = 1 falls in the last bin."""
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("normalized times must lie in [0, 1]")
    return np.minimum((t * n_bins).astype(int), n_bins - 1)


def bin_centers(n_bins: int) -> np.ndarray:
    return (np.arange(n_bins) + 0.5) / n_bins


def stock_mean_volumes(records: Iterable[TradeRecord]) -> dict[str, float]:
    """Mean transaction volume of each stock over all of its trades."""
    totals: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for rec in records:
        acc = totals[rec.stock]
        acc[0] += rec.volume
        acc[1] += 1
    return {s: v / n for s, (v, n) in totals.items()}


def package_transactions(packages: Iterable[TradePackage]) -> list[TradeRecord]:
    return [tr for p in packages for tr in p.trades]


def concurrent_trades(packages: Sequence[TradePackage],
                      stream: Iterable[TradeRecord]) -> list[TradeRecord]:
    """Market-order trades of other investors in the same stock and second as a package trade."""
    owners: dict[tuple, set[int]] = defaultdict(set)
    for p in packages:
        for tr in p.trades:
            owners[(tr.stock, tr.date, tr.time)].add(tr.investor)
    out = []
    for rec in stream:
        if rec.aggr is not Aggressor.MARKET:
            continue
        investors = owners.get((rec.stock, rec.date, rec.time))
        if investors and (len(investors) > 1 or rec.investor not in investors):
            out.append(rec)
    return out


@dataclass(frozen=True)
class Profile:
    values: np.ndarray  # NaN where a bin is empty
    counts: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return bin_centers(self.values.size)


def _select(trades: Iterable[TradeRecord], selector: Selector) -> list[TradeRecord]:
    if selector is Selector.MARKET:
        return [t for t in trades if t.aggr is Aggressor.MARKET]
    if selector is Selector.LIMIT:
        return [t for t in trades if t.aggr is Aggressor.LIMIT]
    return list(trades)


def _normalized(trades: Sequence[TradeRecord], mean_volumes: dict[str, float]):
    t = np.array([CLOCK.normalize(tr.time) for tr in trades], dtype=float)
    v = np.array([tr.volume / mean_volumes[tr.stock] for tr in trades], dtype=float)
    return t, v


def mean_volume_profile(trades: Sequence[TradeRecord], mean_volumes: dict[str, float],
                        selector: Selector = Selector.ALL, n_bins: int = DEFAULT_BINS,
                        packages: Sequence[TradePackage] | None = None,
                        stream: Iterable[TradeRecord] | None = None) -> Profile:
    """Per-bin mean of volumes normalized by their stock's mean transaction volume.

    `trades` are package transactions. The concurrent selector instead takes
    the matching trades of other investors from `stream`, which then
    requires `packages`.
    """
    if selector is Selector.CONCURRENT:
        if packages is None or stream is None:
            raise ValueError("the concurrent selector needs packages and the full stream")
        chosen = concurrent_trades(packages, stream)
    else:
        chosen = _select(trades, selector)
    total = total_volume_profile(chosen, mean_volumes, n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(total.counts > 0, total.values / np.maximum(total.counts, 1), np.nan)
    return Profile(values, total.counts)


def total_volume_profile(trades: Sequence[TradeRecord], mean_volumes: dict[str, float],
                         n_bins: int = DEFAULT_BINS) -> Profile:
    """Per-bin sum of normalized volumes; empty bins sum to 0."""
    t, v = _normalized(trades, mean_volumes)
    idx = time_bins(t, n_bins)
    sums = np.bincount(idx, weights=v, minlength=n_bins).astype(float)
    counts = np.bincount(idx, minlength=n_bins)
    return Profile(sums, counts)


def time_pdf(times, n_bins: int = DEFAULT_BINS) -> np.ndarray:
    """Fraction of normalized times falling in each bin."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("no times to histogram")
    counts = np.bincount(time_bins(times, n_bins), minlength=n_bins)
    return counts / counts.sum()


def transaction_time_pdf(trades: Sequence[TradeRecord], n_bins: int = DEFAULT_BINS) -> np.ndarray:
    return time_pdf([CLOCK.normalize(tr.time) for tr in trades], n_bins)


def endpoint_time_pdfs(packages: Sequence[TradePackage],
                       n_bins: int = DEFAULT_BINS) -> tuple[np.ndarray, np.ndarray]:
    """PDFs of the normalized first and last trade times."""
    return (time_pdf([p.t_ini for p in packages], n_bins),
            time_pdf([p.t_fin for p in packages], n_bins))


def write_profile_tsv(columns: dict[str, Profile | np.ndarray], sink: IO[str]) -> None:
    """One row per bin: center then a value (and count, for profiles) per named column."""
    names = list(columns)
    n_bins = None
    header = ["t_center"]
    for name in names:
        col = columns[name]
        size = col.values.size if isinstance(col, Profile) else len(col)
        n_bins = n_bins or size
        if size != n_bins:
            raise ValueError("profiles must share the bin count")
        header += [name, f"{name}_count"] if isinstance(col, Profile) else [name]
    sink.write("\t".join(header) + "\n")
    for i, center in enumerate(bin_centers(n_bins)):
        row = [f"{center:.6f}"]
        for name in names:
            col = columns[name]
            if isinstance(col, Profile):
                val = col.values[i]
                row += ["" if math.isnan(val) else f"{val:.6g}", str(col.counts[i])]
            else:
                row.append(f"{col[i]:.6g}")
        sink.write("\t".join(row) + "\n")

"""Package- and transaction-level price impact, its conditional means and fits."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np
from scipy import stats

from .clock import CLOCK
from .detect import TradePackage
from .ingest import Aggressor, InvestorType, TradeRecord
from .regress import ols
from .scaling import BinnedSeries, binned_conditional_mean, equal_count_bins

logger = logging.getLogger(__name__)


class FmFilter(str, Enum):
    GT08 = "gt08"
    LT02 = "lt02"
    ALL = "all"

    def accepts(self, f_m: float) -> bool:
        if self is FmFilter.GT08:
            return f_m > 0.8
        if self is FmFilter.LT02:
            return f_m < 0.2
        return True


@dataclass(frozen=True)
class PackageImpact:
    package: TradePackage
    r: float
    R: float

    @property
    def F_m(self) -> float:
        return self.package.F_m

    def condition(self, name: str) -> float:
        if name == "T":
            return self.package.T
        if name == "V":
            return float(self.package.V)
        if name == "t":
            return self.package.t_ini
        raise ValueError(f"unknown package condition {name!r}")


def _safe_scale(mean_abs: float, stock: str, what: str) -> float:
    if mean_abs > 0:
        return mean_abs
    logger.warning("stock %s: mean |%s| is zero; scaled impacts set to 0", stock, what)
    return math.inf


def package_impacts(packages: Iterable[TradePackage]) -> list[PackageImpact]:
    """Scaled impacts R = s*r/<|r|> of within-one-day packages.

    r is the log-price change between the package's own first and last
    trade; <|r|> is taken per stock over all its within-one-day packages,
    pooling investor types. Multi-day packages are skipped.
    """
    by_stock: dict[str, list[tuple[TradePackage, float]]] = defaultdict(list)
    skipped = 0
    for p in packages:
        if not p.within_one_day:
            skipped += 1
            continue
        r = math.log(p.last.price) - math.log(p.first.price)
        by_stock[p.stock].append((p, r))
    if skipped:
        logger.info("excluded %d multi-day packages from package impact", skipped)
    out = []
    for stock in sorted(by_stock):
        items = by_stock[stock]
        scale = _safe_scale(math.fsum(abs(r) for _, r in items) / len(items), stock, "r")
        out.extend(PackageImpact(p, r, p.sign * r / scale) for p, r in items)
    return out


@dataclass(frozen=True)
class TransactionImpact:
    trade: TradeRecord
    package: TradePackage
    r: float
    R: float
    r_con: float
    R_con: float
    v_norm: float

    @property
    def t(self) -> float:
        return CLOCK.normalize(self.trade.time)

    @property
    def v(self) -> float:
        return float(self.trade.volume)

    def condition(self, name: str) -> float:
        if name == "t":
            return self.t
        if name == "v":
            return self.v
        raise ValueError(f"unknown transaction condition {name!r}")


@dataclass
class _DayPrints:
    """Prints of one stock on one day, in input order, indexed by second."""

    seconds: list[int] = field(default_factory=list)
    by_second: dict[int, list[TradeRecord]] = field(default_factory=lambda: defaultdict(list))

    def add(self, rec: TradeRecord) -> None:
        if rec.time not in self.by_second:
            self.seconds.append(rec.time)
        self.by_second[rec.time].append(rec)

    def freeze(self) -> None:
        self.seconds.sort()
        self._sorted = np.asarray(self.seconds)

    def last_before(self, second: int) -> TradeRecord | None:
        k = int(np.searchsorted(self._sorted, second, side="left"))
        if k == 0:
            return None
        return self.by_second[int(self._sorted[k - 1])][-1]


def transaction_impacts(packages: Iterable[TradePackage], prints: Iterable[TradeRecord],
                        excluded: dict[str, int] | None = None) -> list[TransactionImpact]:
    """Scaled impacts of every trade of the within-one-day packages.

    `prints` is the market's trade tape in input order; within one second the
    later row counts as the later print. The reference price p(t-) is the
    last print strictly before the trade's second. r_con is the log change
    from the trade's price to the last print of another investor in the same
    second (0 when there is none). R and R_con share the trade's side sign
    and the stock's <|r_i|> over package trades.
    """
    tape: dict[tuple, _DayPrints] = defaultdict(_DayPrints)
    for rec in prints:
        tape[(rec.stock, rec.date)].add(rec)
    for day in tape.values():
        day.freeze()
    volume_sums: dict[str, list[float]] = defaultdict(lambda: [0.0, 0])

    rows: dict[str, list] = defaultdict(list)
    no_reference = 0
    for p in packages:
        if not p.within_one_day:
            continue
        for tr in p.trades:
            day = tape.get((tr.stock, tr.date))
            prev = day.last_before(tr.time) if day else None
            if prev is None:
                no_reference += 1
                continue
            r = math.log(tr.price) - math.log(prev.price)
            others = [q for q in day.by_second[tr.time] if q.investor != tr.investor]
            r_con = math.log(others[-1].price) - math.log(tr.price) if others else 0.0
            rows[tr.stock].append((tr, p, r, r_con))
    if no_reference:
        logger.info("%d package trades have no earlier print that day and were excluded",
                    no_reference)
    if excluded is not None:
        excluded["no_reference_price"] = no_reference

    for rec in _all_records(tape):
        acc = volume_sums[rec.stock]
        acc[0] += rec.volume
        acc[1] += 1
    out = []
    for stock in sorted(rows):
        items = rows[stock]
        scale = _safe_scale(math.fsum(abs(r) for _, _, r, _ in items) / len(items), stock, "r_i")
        mean_v = volume_sums[stock][0] / volume_sums[stock][1]
        for tr, p, r, r_con in items:
            out.append(TransactionImpact(tr, p, r, tr.sign * r / scale, r_con,
                                         tr.sign * r_con / scale, tr.volume / mean_v))
    return out


def _all_records(tape: dict[tuple, _DayPrints]):
    for day in tape.values():
        for recs in day.by_second.values():
            yield from recs


def select_impacts(impacts: Sequence, itype: InvestorType | None = None,
                   fm_filter: FmFilter = FmFilter.ALL,
                   aggressor: Aggressor | None = None) -> list:
    """Filter package or transaction impacts by investor type, F_m and aggressor."""
    out = []
    for imp in impacts:
        pkg = imp.package
        if itype is not None and pkg.itype is not itype:
            continue
        if not fm_filter.accepts(pkg.F_m):
            continue
        if aggressor is not None and getattr(imp, "trade", None) is not None \
                and imp.trade.aggr is not aggressor:
            continue
        out.append(imp)
    return out


def conditional_impact(impacts: Sequence, condition: str, n_bins: int = 20,
                       fm_filter: FmFilter = FmFilter.ALL,
                       field_name: str = "R") -> BinnedSeries:
    """Equal-count binned means of R (or R_con) against a conditioning variable."""
    chosen = [imp for imp in impacts if fm_filter.accepts(imp.package.F_m)]
    if len(chosen) < n_bins:
        raise ValueError(f"{len(chosen)} impacts after filtering, need {n_bins}")
    x = np.array([imp.condition(condition) for imp in chosen])
    y = np.array([getattr(imp, field_name) for imp in chosen])
    return binned_conditional_mean(x, y, n_bins)


def binned_groups(impacts: Sequence, condition: str, n_bins: int = 20,
                  field_name: str = "R") -> list[np.ndarray]:
    """Values of each equal-count bin, for the analysis of variance across bins."""
    x = np.array([imp.condition(condition) for imp in impacts])
    y = np.array([getattr(imp, field_name) for imp in impacts])
    return [y[g] for g in equal_count_bins(x, n_bins)]


@dataclass(frozen=True)
class AnovaResult:
    F: float
    p_value: float
    df_between: int
    df_within: int
    degenerate: bool = False


def anova_oneway(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """Classical one-way analysis of variance.

    Zero within-group variance is flagged as degenerate: F is infinite with
    p = 0 when group means differ, and undefined (NaN) when all values agree.
    """
    arrays = [np.asarray(g, dtype=float) for g in groups]
    if len(arrays) < 2 or any(a.size < 2 for a in arrays):
        raise ValueError("need at least two groups of at least two values")
    k = len(arrays)
    n = sum(a.size for a in arrays)
    grand = np.concatenate(arrays).mean()
    ss_between = math.fsum(a.size * (a.mean() - grand) ** 2 for a in arrays)
    ss_within = math.fsum(float(((a - a.mean()) ** 2).sum()) for a in arrays)
    df_b, df_w = k - 1, n - k
    if ss_within == 0:
        if ss_between == 0:
            return AnovaResult(math.nan, math.nan, df_b, df_w, True)
        return AnovaResult(math.inf, 0.0, df_b, df_w, True)
    F = (ss_between / df_b) / (ss_within / df_w)
    return AnovaResult(F, float(stats.f.sf(F, df_b, df_w)), df_b, df_w)


@dataclass(frozen=True)
class ImpactFit:
    """|<R|x>| = prefactor * x**exponent with standard errors."""

    prefactor: float
    exponent: float
    prefactor_se: float
    exponent_se: float
    sign: int
    n_bins: int
    excluded_bins: tuple[int, ...] = ()


def fit_impact_powerlaw(series: BinnedSeries, floor: float | None = None) -> ImpactFit:
    """Log-log OLS of |bin mean| on the bin's conditioning mean above `floor`.

    Bins whose mean is zero or carries the minority sign are excluded and
    reported; they would otherwise enter as a log of a sign-crossing value.
    """
    idx = np.arange(series.n_bins)
    if floor is not None:
        idx = idx[series.cond_mean > floor]
    means = series.resp_mean[idx]
    total = float(np.sum(np.sign(means)))
    sign = 1 if total >= 0 else -1
    keep = (np.sign(means) == sign) & (series.cond_mean[idx] > 0)
    excluded = tuple(int(i) for i in idx[~keep])
    if excluded:
        logger.warning("excluded sign-crossing bins %s from the impact fit", list(excluded))
    idx = idx[keep]
    if idx.size < 3:
        raise ValueError(f"only {idx.size} usable bins for the impact fit")
    lx = np.log(series.cond_mean[idx])
    ly = np.log(np.abs(series.resp_mean[idx]))
    res = ols(np.column_stack([np.ones(idx.size), lx]), ly)
    A = math.exp(res.beta[0])
    return ImpactFit(A, float(res.beta[1]), A * float(res.stderr[0]), float(res.stderr[1]),
                     sign, int(idx.size), excluded)


def write_impact_bins(series: BinnedSeries, sink: IO[str], condition: str) -> None:
    sink.write(f"bin\t{condition}_lo\t{condition}_hi\t{condition}_mean\tR_mean\tR_se\tcount\n")
    for i in range(series.n_bins):
        sink.write(f"{i}\t{series.edges[i, 0]:.6g}\t{series.edges[i, 1]:.6g}\t"
                   f"{series.cond_mean[i]:.6g}\t{series.resp_mean[i]:.6g}\t"
                   f"{series.resp_se[i]:.6g}\t{series.counts[i]}\n")

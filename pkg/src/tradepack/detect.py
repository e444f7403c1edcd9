"""Segmentation of investor trade sequences into trade packages."""

from __future__ import annotations

import datetime as dt
import statistics
from dataclasses import dataclass
from enum import Enum
from itertools import groupby
from typing import IO, Iterable, Sequence

from .clock import CLOCK, DAY_SECONDS, format_time
from .ingest import Aggressor, InvestorType, Side, TradeRecord, sort_key


@dataclass(frozen=True)
class DetectorConfig:
    break_days: int = 1
    theta: float = 0.75
    min_market_trades: int = 5
    one_day_only: bool = False

    def __post_init__(self):
        if self.break_days < 1:
            raise ValueError("break_days must be >= 1")
        if not 0.5 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0.5, 1]")
        if self.min_market_trades < 0:
            raise ValueError("min_market_trades must be >= 0")


class Calendar:
    """Ordered trading days observed in a data set."""

    def __init__(self, dates: Iterable[dt.date]):
        self.days = sorted(set(dates))
        self._index = {d: i for i, d in enumerate(self.days)}

    @classmethod
    def from_records(cls, records: Iterable[TradeRecord]) -> "Calendar":
        return cls(r.date for r in records)

    def index(self, date: dt.date) -> int:
        return self._index[date]

    def __len__(self) -> int:
        return len(self.days)

    def clock(self, rec: TradeRecord) -> float:
        """Trading-clock seconds since the first day's open."""
        return self._index[rec.date] * DAY_SECONDS + CLOCK.trading_seconds(rec.time)


@dataclass(frozen=True)
class TradePackage:
    stock: str
    investor: int
    itype: InvestorType
    sign: int
    trades: tuple[TradeRecord, ...]
    T: float
    N: int
    V: int
    n_market: int
    F_m: float
    t_ini: float
    t_fin: float
    within_one_day: bool

    @property
    def first(self) -> TradeRecord:
        return self.trades[0]

    @property
    def last(self) -> TradeRecord:
        return self.trades[-1]


class RejectReason(str, Enum):
    THETA = "ThetaFail"
    FEW_MARKET_ORDERS = "TooFewMarketOrders"


@dataclass(frozen=True)
class Rejected:
    reason: RejectReason
    trades: tuple[TradeRecord, ...]


def segment_investor_trades(trades: Sequence[TradeRecord], break_days: int,
                            calendar: Calendar) -> list[list[TradeRecord]]:
    """Split one investor's time-sorted trades in one stock at gaps of >= `break_days` days."""
    segments: list[list[TradeRecord]] = []
    prev_day = None
    for rec in trades:
        day = calendar.index(rec.date)
        if prev_day is None or day - prev_day >= break_days:
            segments.append([])
        segments[-1].append(rec)
        prev_day = day
    return segments


def _build(trades: tuple[TradeRecord, ...], sign: int, calendar: Calendar) -> TradePackage:
    first, last = trades[0], trades[-1]
    volume = sum(t.volume for t in trades)
    market = [t for t in trades if t.aggr is Aggressor.MARKET]
    return TradePackage(
        stock=first.stock,
        investor=first.investor,
        itype=first.itype,
        sign=sign,
        trades=trades,
        T=calendar.clock(last) - calendar.clock(first),
        N=len(trades),
        V=volume,
        n_market=len(market),
        F_m=sum(t.volume for t in market) / volume,
        t_ini=CLOCK.normalize(first.time),
        t_fin=CLOCK.normalize(last.time),
        within_one_day=first.date == last.date,
    )


def classify_package(segment: Sequence[TradeRecord], config: DetectorConfig,
                     calendar: Calendar) -> TradePackage | Rejected:
    trades = tuple(segment)
    total = sum(t.volume for t in trades)
    buy = sum(t.volume for t in trades if t.side is Side.BUY)
    if buy > config.theta * total:
        sign = 1
    elif total - buy > config.theta * total:
        sign = -1
    else:
        return Rejected(RejectReason.THETA, trades)
    n_market = sum(1 for t in trades if t.aggr is Aggressor.MARKET)
    if n_market <= config.min_market_trades:
        return Rejected(RejectReason.FEW_MARKET_ORDERS, trades)
    return _build(trades, sign, calendar)


def audit_package(pkg: TradePackage, config: DetectorConfig) -> list[str]:
    """Rules an accepted package violates; empty for a valid package."""
    problems = []
    side = Side.BUY if pkg.sign > 0 else Side.SELL
    dominant = sum(t.volume for t in pkg.trades if t.side is side)
    if not dominant > config.theta * pkg.V:
        problems.append("theta")
    if not pkg.n_market > config.min_market_trades:
        problems.append("market-orders")
    if pkg.V != sum(t.volume for t in pkg.trades) or pkg.N != len(pkg.trades):
        problems.append("aggregates")
    return problems


def detect_packages(stream: Sequence[TradeRecord], config: DetectorConfig,
                    calendar: Calendar | None = None,
                    rejections: dict[RejectReason, int] | None = None) -> list[TradePackage]:
    """Packages of every (investor, stock) pair, ordered by (stock, investor, start).

    `stream` must be merged. The calendar defaults to the days present in the
    stream; pass the full data set's calendar when analysing a subset.
    """
    calendar = calendar or Calendar.from_records(stream)
    ordered = stream if _is_sorted(stream) else sorted(stream, key=sort_key)
    packages = []
    for _, trades in groupby(ordered, key=lambda r: (r.investor, r.stock)):
        for segment in segment_investor_trades(list(trades), config.break_days, calendar):
            result = classify_package(segment, config, calendar)
            if isinstance(result, Rejected):
                if rejections is not None:
                    rejections[result.reason] = rejections.get(result.reason, 0) + 1
                continue
            if config.one_day_only and not result.within_one_day:
                continue
            packages.append(result)
    packages.sort(key=lambda p: (p.stock, p.investor, p.first.date, p.first.time))
    return packages


def _is_sorted(stream: Sequence[TradeRecord]) -> bool:
    return all(sort_key(a) <= sort_key(b) for a, b in zip(stream, stream[1:]))


class EmptyPopulation(ValueError):
    pass


@dataclass(frozen=True)
class PackageStats:
    n_packages: int
    mean_T: float
    mean_N: float
    mean_V: float


def _stats(packages: Sequence[TradePackage]) -> PackageStats:
    return PackageStats(
        n_packages=len(packages),
        mean_T=statistics.fmean(p.T for p in packages),
        mean_N=statistics.fmean(p.N for p in packages),
        mean_V=statistics.fmean(p.V for p in packages),
    )


def package_stats(packages: Sequence[TradePackage]) -> dict[InvestorType, PackageStats]:
    """Package count and mean T, N, V for each investor type present."""
    if not packages:
        raise EmptyPopulation("no packages")
    out = {}
    for itype in InvestorType:
        group = [p for p in packages if p.itype is itype]
        if group:
            out[itype] = _stats(group)
    return out


PACKAGE_COLUMNS = ("stock", "investor", "itype", "sign", "start_date", "start_time",
                   "end_date", "end_time", "T", "N", "V", "N_m", "F_m", "t_ini", "t_fin",
                   "within_one_day")


def write_packages_tsv(packages: Iterable[TradePackage], sink: IO[str]) -> None:
    sink.write("\t".join(PACKAGE_COLUMNS) + "\n")
    for p in packages:
        row = (p.stock, str(p.investor), p.itype.value, f"{p.sign:+d}",
               p.first.date.isoformat(), format_time(p.first.time),
               p.last.date.isoformat(), format_time(p.last.time),
               f"{p.T:g}", str(p.N), str(p.V), str(p.n_market), f"{p.F_m:.6f}",
               f"{p.t_ini:.6f}", f"{p.t_fin:.6f}", "1" if p.within_one_day else "0")
        sink.write("\t".join(row) + "\n")

"""Reading, merging and summarizing per-investor transaction files.

The input is a comma-delimited text file with the header
``stock,investor,itype,date,time,side,aggr,price,volume``.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from itertools import groupby
from typing import IO, Iterable, NamedTuple, Sequence

from .clock import CLOCK, format_time, parse_time

logger = logging.getLogger(__name__)

COLUMNS = ("stock", "investor", "itype", "date", "time", "side", "aggr", "price", "volume")


class InvestorType(str, Enum):
    INSTITUTION = "I"
    INDIVIDUAL = "P"


class Side(str, Enum):
    BUY = "B"
    SELL = "S"

    @property
    def sign(self) -> int:
        return 1 if self is Side.BUY else -1


class Aggressor(str, Enum):
    MARKET = "M"
    LIMIT = "L"


class TradeRecord(NamedTuple):
    stock: str
    investor: int
    itype: InvestorType
    date: dt.date
    time: int  # seconds after midnight
    side: Side
    aggr: Aggressor
    price: float
    volume: int

    @property
    def sign(self) -> int:
        return self.side.sign

    @property
    def is_market(self) -> bool:
        return self.aggr is Aggressor.MARKET


class TradeFileError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class MalformedRow(TradeFileError):
    pass


class NonPositivePrice(TradeFileError):
    pass


class NonPositiveVolume(TradeFileError):
    pass


class OutOfSessionRow(TradeFileError):
    pass


def _parse_row(row: list[str], line: int, dates: dict, stocks: dict) -> TradeRecord:
    if len(row) != len(COLUMNS):
        raise MalformedRow(line, f"expected {len(COLUMNS)} fields, got {len(row)}")
    stock, investor, itype, date, time, side, aggr, price, volume = row
    if len(stock) != 6:
        raise MalformedRow(line, f"stock code {stock!r} is not 6 characters")
    try:
        investor_id = int(investor)
        investor_type = InvestorType(itype)
        trade_side = Side(side)
        aggressor = Aggressor(aggr)
        day = dates.get(date)
        if day is None:
            if len(date) != 10:
                raise ValueError(f"bad date {date!r}")
            day = dates[date] = dt.date.fromisoformat(date)
        seconds = parse_time(time)
        if "." in price and len(price.rsplit(".", 1)[1]) > 3:
            raise ValueError(f"price {price!r} has more than 3 fraction digits")
        px = float(price)
        qty = int(volume)
    except ValueError as exc:
        raise MalformedRow(line, str(exc)) from None
    if not math.isfinite(px) or px <= 0:
        raise NonPositivePrice(line, f"price {price!r} is not positive")
    if qty <= 0:
        raise NonPositiveVolume(line, f"volume {volume!r} is not positive")
    if not CLOCK.in_session(seconds):
        raise OutOfSessionRow(line, f"time {time} is outside the trading sessions")
    return TradeRecord(stocks.setdefault(stock, stock), investor_id, investor_type, day,
                       seconds, trade_side, aggressor, px, qty)


def parse_trade_file(
    source: IO[str] | IO[bytes] | str,
    strict: bool = True,
    errors: list[TradeFileError] | None = None,
    delimiter: str = ",",
) -> list[TradeRecord]:
    """Parse a trade file into records, preserving row order.

    In strict mode the first bad row raises. In lenient mode bad rows are
    logged, appended to `errors` when given, and skipped.
    """
    if isinstance(source, str):
        with open(source, encoding="utf-8", newline="") as fh:
            return parse_trade_file(fh, strict, errors, delimiter)
    if isinstance(source, (io.BufferedIOBase, io.RawIOBase)) or "b" in getattr(source, "mode", ""):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")
    reader = csv.reader(source, delimiter=delimiter)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != COLUMNS:
        raise MalformedRow(1, f"header must be {','.join(COLUMNS)}")
    records: list[TradeRecord] = []
    dates: dict[str, dt.date] = {}
    stocks: dict[str, str] = {}
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            records.append(_parse_row(row, line, dates, stocks))
        except TradeFileError as exc:
            if strict:
                raise
            logger.warning("skipping %s", exc)
            if errors is not None:
                errors.append(exc)
    return records


def format_record(rec: TradeRecord) -> str:
    return (f"{rec.stock},{rec.investor},{rec.itype.value},{rec.date.isoformat()},"
            f"{format_time(rec.time)},{rec.side.value},{rec.aggr.value},"
            f"{rec.price:.3f},{rec.volume}")


def write_trade_file(records: Iterable[TradeRecord], sink: IO[str] | str) -> None:
    """Write records in the canonical rendering (prices with three decimals)."""
    if isinstance(sink, str):
        with open(sink, "w", encoding="utf-8", newline="") as fh:
            write_trade_file(records, fh)
        return
    sink.write(",".join(COLUMNS) + "\n")
    for chunk in _chunks(records, 50_000):
        sink.write("\n".join(map(format_record, chunk)) + "\n")


def _chunks(items: Iterable, size: int):
    batch = []
    for item in items:
        batch.append(item)
        if len(batch) == size:
            yield batch
            batch = []
    if batch:
        yield batch


def sort_key(rec: TradeRecord):
    return (rec.investor, rec.stock, rec.date, rec.time)


def merge_same_time_trades(records: Sequence[TradeRecord]) -> list[TradeRecord]:
    """Collapse fills of one investor in one stock that share a second, side and aggressor.

    The merged record carries the summed volume and the volume-weighted price.
    Opposite-side fills within the same second stay separate. Input must be
    sorted by (investor, stock, timestamp); output keeps that order, with
    distinct (side, aggressor) keys of a second in order of first appearance.
    """
    out: list[TradeRecord] = []
    for _, block in groupby(records, key=sort_key):
        block = list(block)
        if len(block) == 1:
            out.append(block[0])
            continue
        groups: dict[tuple[Side, Aggressor], list[TradeRecord]] = {}
        for rec in block:
            groups.setdefault((rec.side, rec.aggr), []).append(rec)
        for fills in groups.values():
            if len(fills) == 1:
                out.append(fills[0])
                continue
            volume = sum(f.volume for f in fills)
            price = math.fsum(f.price * f.volume for f in fills) / volume
            out.append(fills[0]._replace(price=price, volume=volume))
    return out


def prepare_stream(records: Iterable[TradeRecord]) -> list[TradeRecord]:
    """Sort by (investor, stock, timestamp) and merge same-second fills."""
    return merge_same_time_trades(sorted(records, key=sort_key))


@dataclass(frozen=True)
class StockSummary:
    stock: str
    n_investors: int
    n_trades: int
    trades_per_investor_mean: float
    trades_per_investor_median: float
    trades_per_investor_std: float
    std_defined: bool = True
    metadata: dict[str, float | None] = field(default_factory=dict)


SUMMARY_COLUMNS = ("stock", "A_tot", "C_flo", "C_tot", "N_inv", "N_tra", "mean", "median", "std")


def summarize(records: Iterable[TradeRecord],
              metadata: dict[str, dict[str, float]] | None = None) -> list[StockSummary]:
    """Per-stock investor counts and trades-per-investor statistics (sample std)."""
    counts: dict[str, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    for rec in records:
        counts[rec.stock][rec.investor] += 1
    metadata = metadata or {}
    out = []
    for stock in sorted(counts):
        per_investor = list(counts[stock].values())
        n = len(per_investor)
        std_defined = n > 1
        out.append(StockSummary(
            stock=stock,
            n_investors=n,
            n_trades=sum(per_investor),
            trades_per_investor_mean=statistics.fmean(per_investor),
            trades_per_investor_median=float(statistics.median(per_investor)),
            trades_per_investor_std=statistics.stdev(per_investor) if std_defined else 0.0,
            std_defined=std_defined,
            metadata=dict(metadata.get(stock, {})),
        ))
    return out


def _fmt(value: float | None, digits: int = 1) -> str:
    if value is None:
        return ""
    return f"{value:.{digits}f}"


def write_summary_tsv(summaries: Iterable[StockSummary], sink: IO[str]) -> None:
    sink.write("\t".join(SUMMARY_COLUMNS) + "\n")
    for s in summaries:
        row = [
            s.stock,
            _fmt(s.metadata.get("A_tot")),
            _fmt(s.metadata.get("C_flo")),
            _fmt(s.metadata.get("C_tot")),
            str(s.n_investors),
            str(s.n_trades),
            f"{s.trades_per_investor_mean:.4f}",
            f"{s.trades_per_investor_median:g}",
            f"{s.trades_per_investor_std:.4f}",
        ]
        sink.write("\t".join(row) + "\n")

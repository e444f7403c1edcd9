"""Per-second return grids and the return-on-signed-log-volume regressions."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np
import scipy.linalg

from .clock import CLOCK, DAY_SECONDS, HALF_DAY
from .detect import Calendar, TradePackage
from .ingest import Aggressor, TradeRecord

logger = logging.getLogger(__name__)

T_CRITICAL = 1.96
DEFAULT_LAGS = (0, 5, 10, 15, 20, 25)
DEFAULT_AR_LAGS = (5, 10, 15, 20, 25)


class RankDeficient(np.linalg.LinAlgError):
    pass


@dataclass
class OLSResult:
    beta: np.ndarray
    cov: np.ndarray
    stderr: np.ndarray
    t: np.ndarray
    r2: float
    n_obs: int
    dropped: list[int] = field(default_factory=list)
    names: list[str] | None = None

    @property
    def significant(self) -> np.ndarray:
        return np.abs(self.t) >= T_CRITICAL

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])

    def tstat(self, name: str) -> float:
        return float(self.t[self.names.index(name)])

    def se(self, name: str) -> float:
        return float(self.stderr[self.names.index(name)])


def ols(X, y, names: Sequence[str] | None = None, drop_collinear: bool = False,
        tol: float = 1e-10) -> OLSResult:
    """Least squares with classical (homoskedastic) standard errors.

    Solved through a column-pivoted QR decomposition.  Columns found linearly
    dependent are dropped when `drop_collinear` is set, and their coefficients
    reported as NaN; otherwise `RankDeficient` is raised.  R^2 is centred when
    the design has a constant column and uncentred otherwise.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(diag[0] if diag.size else 0.0, 1e-300)))
    dropped = sorted(int(j) for j in piv[rank:])
    if dropped and not drop_collinear:
        raise RankDeficient(f"design columns {dropped} are collinear")
    keep = [j for j in range(p) if j not in dropped]
    Xk = X[:, keep]
    if n <= len(keep):
        raise RankDeficient(f"{n} observations for {len(keep)} parameters")
    Q, Rk = np.linalg.qr(Xk)
    bk = scipy.linalg.solve_triangular(Rk, Q.T @ y)
    resid = y - Xk @ bk
    ssr = float(resid @ resid)
    dof = n - len(keep)
    s2 = ssr / dof
    Rinv = scipy.linalg.solve_triangular(Rk, np.eye(len(keep)))
    cov_k = s2 * (Rinv @ Rinv.T)

    beta = np.full(p, np.nan)
    beta[keep] = bk
    cov = np.full((p, p), np.nan)
    cov[np.ix_(keep, keep)] = cov_k
    stderr = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(stderr > 0, beta / stderr, np.sign(beta) * np.inf)
    t[dropped] = np.nan

    has_const = any(np.all(Xk[:, j] == Xk[0, j]) and Xk[0, j] != 0 for j in range(len(keep)))
    sst = float(np.sum((y - y.mean()) ** 2)) if has_const else float(y @ y)
    r2 = 1 - ssr / sst if sst > 0 else math.nan
    return OLSResult(beta, cov, stderr, t, r2, n, dropped,
                     list(names) if names is not None else None)


@dataclass
class SecondGrid:
    """Per-second series for one stock, laid out day-major with 14400 cells per day.

    `returns` are normalized to unit standard deviation over nonzero cells;
    `raw_returns` keep the log-price differences.  `volume` holds the summed
    signed log-volume s*ln(v) of the selected package transactions.
    """

    stock: str
    days: list
    raw_returns: np.ndarray
    returns: np.ndarray
    volume: np.ndarray
    package_mask: np.ndarray
    return_scale: float

    @property
    def session(self) -> np.ndarray:
        return np.arange(self.returns.size) // HALF_DAY

    @classmethod
    def from_raw(cls, stock, days, raw_returns, volume, package_mask=None) -> "SecondGrid":
        raw = np.asarray(raw_returns, dtype=float).copy()
        raw[::HALF_DAY] = 0.0
        nonzero = raw[raw != 0]
        scale = float(np.std(nonzero)) if nonzero.size > 1 else 1.0
        if scale == 0:
            scale = 1.0
        volume = np.asarray(volume, dtype=float)
        if package_mask is None:
            package_mask = volume != 0
        return cls(stock, list(days), raw, raw / scale, volume,
                   np.asarray(package_mask, dtype=bool), scale)


def _session_prices(day_prints: list[tuple[int, float]]) -> np.ndarray:
    price = np.full(DAY_SECONDS, np.nan)
    for idx, px in day_prints:
        price[idx] = px
    return price


def build_second_grid(stock_records: Sequence[TradeRecord], packages: Iterable[TradePackage],
                      calendar: Calendar | None = None,
                      aggressor: Aggressor | None = Aggressor.MARKET) -> SecondGrid:
    """Last-trade price per trading second, forward-filled within each session.

    Returns are zero where the price did not change, before a session's first
    print, and on the first cell of each session.  Package transactions of
    the chosen aggressor type (all types when None) fill the volume channel.
    """
    stocks = {r.stock for r in stock_records}
    if len(stocks) != 1:
        raise ValueError(f"expected records of exactly one stock, got {sorted(stocks)}")
    stock = stocks.pop()
    calendar = calendar or Calendar.from_records(stock_records)
    prints: dict = defaultdict(list)
    for rec in stock_records:
        prints[rec.date].append((CLOCK.second_index(rec.time), rec.price))
    days = [d for d in calendar.days if d in prints]
    for d in calendar.days:
        if d not in prints:
            logger.info("stock %s has no trades on %s; day skipped", stock, d)
    day_pos = {d: i for i, d in enumerate(days)}

    raw = np.zeros(len(days) * DAY_SECONDS)
    for d in days:
        # stable sort keeps input order within a second, so the last print wins
        day_prints = sorted(prints[d], key=lambda p: p[0])
        logp = np.log(_session_prices(day_prints))
        r = np.zeros(DAY_SECONDS)
        for lo in (0, HALF_DAY):
            seg = logp[lo:lo + HALF_DAY]
            filled = _ffill(seg)
            diff = np.diff(filled, prepend=np.nan)
            diff[np.isnan(diff)] = 0.0
            r[lo:lo + HALF_DAY] = diff
        raw[day_pos[d] * DAY_SECONDS:(day_pos[d] + 1) * DAY_SECONDS] = r

    volume = np.zeros_like(raw)
    mask = np.zeros(raw.size, dtype=bool)
    for pkg in packages:
        if pkg.stock != stock:
            continue
        for tr in pkg.trades:
            if aggressor is not None and tr.aggr is not aggressor:
                continue
            if tr.date not in day_pos:
                continue
            k = day_pos[tr.date] * DAY_SECONDS + CLOCK.second_index(tr.time)
            volume[k] += tr.sign * math.log(tr.volume)
            mask[k] = True
    return SecondGrid.from_raw(stock, days, raw, volume, mask)


def _ffill(a: np.ndarray) -> np.ndarray:
    idx = np.where(~np.isnan(a), np.arange(a.size), 0)
    np.maximum.accumulate(idx, out=idx)
    out = a[idx]
    if a.size and np.isnan(a[0]):
        first = np.argmax(~np.isnan(a)) if np.any(~np.isnan(a)) else a.size
        out[:first] = np.nan
    return out


def _shift_valid(session: np.ndarray, t: np.ndarray, lag: int) -> np.ndarray:
    """Mask of observations t whose t + lag lies inside the grid and the same session."""
    target = t + lag
    ok = (target >= 0) & (target < session.size)
    ok[ok] &= session[target[ok]] == session[t[ok]]
    return ok


@dataclass
class LagRegression:
    lag: int
    result: OLSResult

    @property
    def beta(self) -> float:
        return self.result.coef("slnv")

    @property
    def t(self) -> float:
        return self.result.tstat("slnv")

    @property
    def stderr(self) -> float:
        return self.result.se("slnv")

    @property
    def significant(self) -> bool:
        return abs(self.t) >= T_CRITICAL


def regress_lagged_volume(grid: SecondGrid, lags: Sequence[int] = DEFAULT_LAGS,
                          min_obs: int = 100) -> dict[int, LagRegression]:
    """For each lag i, OLS of R(t+i) on a constant and s*ln v(t) over package seconds t."""
    t_all = np.flatnonzero(grid.package_mask)
    if t_all.size < min_obs:
        raise ValueError(f"only {t_all.size} package-transaction seconds (need {min_obs})")
    session = grid.session
    out = {}
    for lag in lags:
        t = t_all[_shift_valid(session, t_all, lag)]
        X = np.column_stack([np.ones(t.size), grid.volume[t]])
        res = ols(X, grid.returns[t + lag], names=["const", "slnv"], drop_collinear=True)
        if res.dropped:
            logger.warning("lag %d: singular design (constant volume channel)", lag)
        out[lag] = LagRegression(lag, res)
    return out


def ar_volume_design(grid: SecondGrid, ar_lags: Sequence[int] = DEFAULT_AR_LAGS,
                     volume_lags: Sequence[int] = DEFAULT_LAGS,
                     observations: np.ndarray | None = None):
    """Design matrix, response and observation indices of the AR + volume model."""
    session = grid.session
    t = np.arange(grid.returns.size) if observations is None else np.asarray(observations)
    max_lag = max([0, *ar_lags, *volume_lags])
    t = t[_shift_valid(session, t, -max_lag)]
    cols = [np.ones(t.size)]
    names = ["const"]
    for j in ar_lags:
        cols.append(grid.returns[t - j])
        names.append(f"R{j}")
    for i in volume_lags:
        cols.append(grid.volume[t - i])
        names.append(f"slnv{i}")
    return np.column_stack(cols), grid.returns[t], t, names


def regress_ar_volume(grid: SecondGrid, ar_lags: Sequence[int] = DEFAULT_AR_LAGS,
                      volume_lags: Sequence[int] = DEFAULT_LAGS,
                      observations: np.ndarray | None = None) -> OLSResult:
    """OLS of R(t) on a constant, lagged returns and lagged signed log-volumes.

    By default every second with a complete in-session lag history is an
    observation; `observations` restricts the fit to given grid indices.
    """
    X, y, _, names = ar_volume_design(grid, ar_lags, volume_lags, observations)
    res = ols(X, y, names=names, drop_collinear=True)
    if res.dropped:
        logger.warning("dropped collinear columns %s", [names[j] for j in res.dropped])
    return res


def write_lagged_table(rows: dict[str, dict[int, LagRegression]], sink: IO[str],
                       lags: Sequence[int] = DEFAULT_LAGS) -> None:
    """Per-stock coefficient / t-statistic pairs; '*' marks 5% significance."""
    header = ["code"]
    for lag in lags:
        header += [f"beta_{lag}", f"t_{lag}"]
    sink.write("\t".join(header) + "\n")
    for stock in sorted(rows):
        row = [stock]
        for lag in lags:
            reg = rows[stock].get(lag)
            if reg is None or math.isnan(reg.beta):
                row += ["", ""]
                continue
            row += [f"{reg.beta:.3f}{'*' if reg.significant else ''}", f"{reg.t:.2f}"]
        sink.write("\t".join(row) + "\n")


def write_ar_table(rows: dict[str, OLSResult], sink: IO[str],
                   volume_lags: Sequence[int] = DEFAULT_LAGS) -> None:
    header = ["code"]
    for lag in volume_lags:
        header += [f"beta_{lag}", f"t_{lag}"]
    header.append("R2")
    sink.write("\t".join(header) + "\n")
    for stock in sorted(rows):
        res = rows[stock]
        row = [stock]
        for lag in volume_lags:
            k = res.names.index(f"slnv{lag}")
            if math.isnan(res.beta[k]):
                row += ["", ""]
                continue
            star = "*" if abs(res.t[k]) >= T_CRITICAL else ""
            row += [f"{res.beta[k]:.3f}{star}", f"{res.t[k]:.2f}"]
        row.append(f"{res.r2:.2f}")
        sink.write("\t".join(row) + "\n")

"""Synthetic trade tapes with planted packages and a recorded ground truth.

Each stock draws its package plan and its price path from two independent
random streams derived from (seed, stock index), so the plan (and hence the
truth) can be rebuilt without simulating prices.

Price model, in log units per stock: a diffusion between prints; every
print sits at the current level plus an aggressor-signed jump J(v); a
fraction `jump_persistence` of the jump stays in the level; package trades
2..N each add s*A*V**gamma/(N-1) to the level, so a package's first-to-last
return carries its full planted impact.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Any

import numpy as np

from .clock import CLOCK, DAY_SECONDS, HALF_DAY
from .ingest import Aggressor, InvestorType, Side, TradeRecord
from .powerlaw import PowerLawFit, Regime
from .regress import SecondGrid

logger = logging.getLogger(__name__)

NOISE_ID_BASE = 10_000_000


class InfeasibleConfig(ValueError):
    pass


@dataclass
class SynthConfig:
    seed: int = 0
    n_stocks: int = 1
    n_days: int = 20
    start_date: str = "2003-01-02"
    packages_per_stock: int = 50
    institution_frac: float = 0.5
    # package volume V: bounded power law on [v_min, v_max], or a tail law when v_max is null
    delta_V: float = 1.0
    v_min: float = 1e4
    v_max: float | None = 1e6
    # N = n_scale * (V/v_min)**g2 * lognormal, at least n_floor
    g2: float = 0.74
    n_scale: float = 12.0
    n_noise: float = 0.2
    n_floor: int = 6
    # T = t_scale * N**g3 * lognormal, in trading seconds, within one day
    g3: float = 0.18
    t_scale: float = 1500.0
    t_noise: float = 0.2
    start_window: tuple[float, float] = (0.0, 1.0)
    market_frac: float = 0.9
    contra_frac: float = 0.0
    invalid_frac: float = 0.0
    theta: float = 0.75
    min_market_trades: int = 5
    open_boost: float = 0.0
    open_tau: float = 0.05
    # background traders, each with at most `min_market_trades` market orders
    noise_traders_per_day: int = 0
    noise_max_trades: int = 8
    noise_market_frac: float = 0.5
    noise_volume: float = 1000.0
    # prices
    p0: float = 10.0
    diffusion: float = 2e-5
    impact_A: float = 0.0
    impact_gamma: float = 0.447
    jump_form: str = "log"
    jump_b: float = 0.0
    jump_k: float = 0.45
    jump_persistence: float = 0.0

    def __post_init__(self):
        self.start_window = tuple(self.start_window)
        if self.jump_form not in ("log", "power"):
            raise ValueError(f"jump_form must be 'log' or 'power', got {self.jump_form!r}")
        if self.n_stocks < 1 or self.n_days < 1:
            raise InfeasibleConfig("need at least one stock and one day")
        if self.t_scale >= DAY_SECONDS:
            raise InfeasibleConfig("t_scale exceeds the trading day")
        if self.v_max is None and self.delta_V <= 1:
            raise InfeasibleConfig("an unbounded volume law needs delta_V > 1")
        lo, hi = self.start_window
        if not 0 <= lo < hi <= 1:
            raise InfeasibleConfig("start_window must satisfy 0 <= lo < hi <= 1")

    def to_json(self, sink: IO[str] | None = None) -> str:
        text = json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)
        if sink is not None:
            sink.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def volume_law(self) -> PowerLawFit:
        if self.v_max is None:
            return PowerLawFit(Regime.TAIL, self.delta_V, self.v_min)
        return PowerLawFit(Regime.BOUNDED, self.delta_V, self.v_min, self.v_max)


@dataclass(frozen=True)
class PlantedPackage:
    stock: str
    investor: int
    itype: str
    sign: int
    date: str
    start_time: str
    end_time: str
    T: int
    N: int
    V: int
    n_market: int
    valid: bool
    reason: str = ""


@dataclass
class GroundTruth:
    config: dict[str, Any]
    packages: list[PlantedPackage]
    trade_counts: dict[str, dict[str, int]]  # stock -> investor id -> trades
    constants: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def valid_packages(self) -> list[PlantedPackage]:
        return [p for p in self.packages if p.valid]

    def to_json(self, sink: IO[str] | None = None) -> str:
        data = {
            "config": self.config,
            "packages": [dataclasses.asdict(p) for p in self.packages],
            "trade_counts": self.trade_counts,
            "constants": self.constants,
        }
        text = json.dumps(data, indent=1, sort_keys=True)
        if sink is not None:
            sink.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        data = json.loads(text)
        return cls(data["config"], [PlantedPackage(**p) for p in data["packages"]],
                   data["trade_counts"], data.get("constants", {}))


@dataclass
class _Trade:
    investor: int
    itype: InvestorType
    day: int
    second: int  # trading-second cell
    side: Side
    aggr: Aggressor
    volume: int
    impact: float = 0.0  # level shift applied just before this print


def trading_days(start: str, n: int) -> list[dt.date]:
    day = dt.date.fromisoformat(start)
    out = []
    while len(out) < n:
        if day.weekday() < 5:
            out.append(day)
        day += dt.timedelta(days=1)
    return out


def stock_code(index: int) -> str:
    return f"{index + 1:06d}"


def _split_volume(rng, V: int, weights: np.ndarray) -> np.ndarray:
    n = weights.size
    p = rng.gamma(2.0, size=n) * weights
    return 1 + rng.multinomial(V - n, p / p.sum())


def _rule_check(sides, aggrs, volumes, theta: float, min_market: int) -> tuple[int, bool, str]:
    volumes = np.asarray(volumes)
    total = volumes.sum()
    buy = volumes[np.array([s is Side.BUY for s in sides])].sum()
    if buy > theta * total:
        sign = 1
    elif total - buy > theta * total:
        sign = -1
    else:
        return (1 if 2 * buy >= total else -1), False, "ThetaFail"
    n_market = sum(1 for a in aggrs if a is Aggressor.MARKET)
    if n_market <= min_market:
        return sign, False, "TooFewMarketOrders"
    return sign, True, ""


def _plan_stock(cfg: SynthConfig, stock_index: int, rng: np.random.Generator,
                days: list[dt.date], first_investor: int):
    """Package and noise-trader trades of one stock, without prices."""
    stock = stock_code(stock_index)
    law = cfg.volume_law()
    trades: list[_Trade] = []
    planted: list[PlantedPackage] = []
    n_pkg = cfg.packages_per_stock
    V_all = np.maximum(np.floor(law.ppf(rng.random(n_pkg))).astype(np.int64), 1)
    for k in range(n_pkg):
        investor = first_investor + k
        itype = InvestorType.INSTITUTION if rng.random() < cfg.institution_frac \
            else InvestorType.INDIVIDUAL
        V = int(V_all[k])
        N = cfg.n_scale * (V / cfg.v_min) ** cfg.g2 * math.exp(cfg.n_noise * rng.standard_normal())
        N = int(min(max(round(N), cfg.n_floor, 2), V))
        T = cfg.t_scale * N ** cfg.g3 * math.exp(cfg.t_noise * rng.standard_normal())
        T = int(min(max(round(T), N - 1), DAY_SECONDS - 1))
        if N > DAY_SECONDS:
            raise InfeasibleConfig(f"package with {N} trades does not fit in one day")
        lo = int(cfg.start_window[0] * DAY_SECONDS)
        hi = min(int(cfg.start_window[1] * DAY_SECONDS), DAY_SECONDS - 1 - T)
        start = int(rng.integers(lo, hi + 1)) if hi >= lo else DAY_SECONDS - 1 - T
        day = int(rng.integers(len(days)))
        inner = rng.choice(T - 1, size=N - 2, replace=False) + start + 1 if N > 2 else []
        seconds = np.sort(np.concatenate([[start], inner, [start + T]]).astype(int))

        invalid = rng.random() < cfg.invalid_frac
        kind = rng.integers(2) if invalid else -1
        sign = 1 if rng.random() < 0.5 else -1
        if kind == 0:
            side_signs = np.where(rng.random(N) < 0.5, 1, -1)
        else:
            side_signs = np.where(rng.random(N) < cfg.contra_frac, -sign, sign)
        if kind == 1:
            n_market = int(rng.integers(0, cfg.min_market_trades + 1))
        else:
            n_market = max(int(rng.binomial(N, cfg.market_frac)), cfg.min_market_trades + 1)
        n_market = min(n_market, N)
        is_market = np.zeros(N, dtype=bool)
        is_market[rng.choice(N, size=n_market, replace=False)] = True

        t_norm = seconds / DAY_SECONDS
        weights = 1 + cfg.open_boost * np.exp(-t_norm / cfg.open_tau)
        volumes = _split_volume(rng, V, weights)
        sides = [Side.BUY if s > 0 else Side.SELL for s in side_signs]
        aggrs = [Aggressor.MARKET if m else Aggressor.LIMIT for m in is_market]
        true_sign, valid, reason = _rule_check(sides, aggrs, volumes, cfg.theta,
                                               cfg.min_market_trades)
        step = true_sign * cfg.impact_A * V ** cfg.impact_gamma / (N - 1)
        for j in range(N):
            trades.append(_Trade(investor, itype, day, int(seconds[j]), sides[j], aggrs[j],
                                 int(volumes[j]), step if j > 0 else 0.0))
        planted.append(PlantedPackage(
            stock, investor, itype.value, true_sign, days[day].isoformat(),
            _wall(int(seconds[0])), _wall(int(seconds[-1])), T, N, V, n_market, valid, reason))

    noise_id = NOISE_ID_BASE + stock_index * 1_000_000
    for day in range(len(days)):
        for _ in range(cfg.noise_traders_per_day):
            k = int(rng.integers(1, cfg.noise_max_trades + 1))
            seconds = np.sort(rng.choice(DAY_SECONDS, size=k, replace=False))
            n_market = min(int(rng.binomial(k, cfg.noise_market_frac)), cfg.min_market_trades)
            is_market = np.zeros(k, dtype=bool)
            is_market[rng.choice(k, size=n_market, replace=False)] = True
            itype = InvestorType.INSTITUTION if rng.random() < cfg.institution_frac \
                else InvestorType.INDIVIDUAL
            for j in range(k):
                side = Side.BUY if rng.random() < 0.5 else Side.SELL
                vol = max(1, int(round(cfg.noise_volume * math.exp(rng.standard_normal()))))
                trades.append(_Trade(noise_id, itype, day, int(seconds[j]), side,
                                     Aggressor.MARKET if is_market[j] else Aggressor.LIMIT, vol))
            noise_id += 1
    return stock, trades, planted


def _wall(cell: int) -> str:
    w = CLOCK.wall_time(cell)
    return f"{w // 3600:02d}:{w % 3600 // 60:02d}:{w % 60:02d}"


def _jump(cfg: SynthConfig, volume: int) -> float:
    if cfg.jump_b == 0:
        return 0.0
    if cfg.jump_form == "log":
        return cfg.jump_b * math.log(volume)
    return cfg.jump_b * volume ** cfg.jump_k


def _price_stock(cfg: SynthConfig, stock: str, trades: list[_Trade], rng: np.random.Generator,
                 days: list[dt.date]) -> list[TradeRecord]:
    order = rng.permutation(len(trades))
    ranked = sorted(range(len(trades)), key=lambda i: (trades[i].day, trades[i].second, order[i]))
    level = 0.0
    last_clock = 0
    out = []
    for i in ranked:
        tr = trades[i]
        clock = tr.day * DAY_SECONDS + tr.second
        if cfg.diffusion and clock > last_clock:
            level += cfg.diffusion * math.sqrt(clock - last_clock) * rng.standard_normal()
        last_clock = clock
        level += tr.impact
        aggressor_sign = tr.side.sign if tr.aggr is Aggressor.MARKET else -tr.side.sign
        jump = aggressor_sign * _jump(cfg, tr.volume)
        price = max(round(cfg.p0 * math.exp(level + jump), 3), 0.001)
        level += cfg.jump_persistence * jump
        out.append(TradeRecord(stock, tr.investor, tr.itype, days[tr.day],
                               CLOCK.wall_time(tr.second), tr.side, tr.aggr, price, tr.volume))
    return out


def _streams(cfg: SynthConfig, stock_index: int):
    plan_seq, price_seq = np.random.SeedSequence([cfg.seed, stock_index]).spawn(2)
    return np.random.default_rng(plan_seq), np.random.default_rng(price_seq)


def _truth(cfg: SynthConfig, plans) -> GroundTruth:
    packages, counts = [], {}
    for stock, trades, planted in plans:
        packages.extend(planted)
        per = {}
        for tr in trades:
            per[str(tr.investor)] = per.get(str(tr.investor), 0) + 1
        counts[stock] = per
    constants = {stock: {"p0": cfg.p0, "impact_A": cfg.impact_A,
                         "impact_gamma": cfg.impact_gamma}
                 for stock, _, _ in plans}
    return GroundTruth(json.loads(cfg.to_json()), packages, counts, constants)


def _plans(cfg: SynthConfig):
    days = trading_days(cfg.start_date, cfg.n_days)
    plans, rngs = [], []
    for s in range(cfg.n_stocks):
        plan_rng, price_rng = _streams(cfg, s)
        plans.append(_plan_stock(cfg, s, plan_rng, days, 1 + s * cfg.packages_per_stock))
        rngs.append(price_rng)
    return days, plans, rngs


def planted_truth(cfg: SynthConfig) -> GroundTruth:
    """Ground truth of `generate_market(cfg)` without simulating prices."""
    _, plans, _ = _plans(cfg)
    return _truth(cfg, plans)


def generate_market(cfg: SynthConfig) -> tuple[list[TradeRecord], GroundTruth]:
    """Trade records in tape order (date, time, stock) plus their ground truth."""
    days, plans, rngs = _plans(cfg)
    records = []
    for (stock, trades, _), rng in zip(plans, rngs):
        records.extend(_price_stock(cfg, stock, trades, rng, days))
    records.sort(key=lambda r: (r.date, r.time, r.stock))
    return records, _truth(cfg, plans)


@dataclass(frozen=True)
class PlantedGrid:
    grid: SecondGrid
    beta: dict[int, float]
    ar: dict[int, float]


def planted_return_grid(seed: int, n_days: int = 1, beta: dict[int, float] | None = None,
                        ar: dict[int, float] | None = None, noise_sd: float = 1.0,
                        density: float = 0.1, log_volume_mean: float = math.log(1000.0),
                        log_volume_sd: float = 1.0) -> PlantedGrid:
    """Per-second grid with R(t) = sum_i beta_i x(t-i) + sum_j ar_j R(t-j) + noise.

    x is the signed log-volume channel, nonzero on a random `density` of the
    seconds. Lagged terms never reach across a session boundary.
    """
    beta = dict(beta or {})
    ar = dict(ar or {})
    rng = np.random.default_rng(seed)
    n = n_days * DAY_SECONDS
    mask = rng.random(n) < density
    signs = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    mask[::HALF_DAY] = False  # the first cell of a session has no return
    x = np.where(mask, signs * rng.normal(log_volume_mean, log_volume_sd, n), 0.0)
    eps = noise_sd * rng.standard_normal(n)
    raw = np.zeros(n)
    for s0 in range(0, n, HALF_DAY):
        xs = x[s0:s0 + HALF_DAY]
        r = eps[s0:s0 + HALF_DAY].copy()
        for lag, b in beta.items():
            r[lag:] += b * xs[:HALF_DAY - lag]
        r[0] = 0.0
        if ar:
            for t in range(HALF_DAY):
                for lag, a in ar.items():
                    if t >= lag:
                        r[t] += a * r[t - lag]
        raw[s0:s0 + HALF_DAY] = r
    days = trading_days("2003-01-02", n_days)
    return PlantedGrid(SecondGrid.from_raw("000001", days, raw, x, mask), beta, ar)

import datetime as dt
import io
import random

import pytest
from hypothesis import given, settings, strategies as st

from tradepack.detect import (Calendar, DetectorConfig, EmptyPopulation, Rejected, RejectReason,
                              TradePackage, audit_package, classify_package, detect_packages,
                              package_stats, segment_investor_trades, write_packages_tsv)
from tradepack.ingest import Aggressor, InvestorType, Side, TradeRecord, prepare_stream

DAYS = [dt.date(2003, 3, 3) + dt.timedelta(days=i) for i in range(40)]
CAL = Calendar(DAYS)


def tr(day=0, time=36000, side="B", aggr="M", volume=100, investor=1, stock="000001",
       itype="I", price=10.0):
    return TradeRecord(stock, investor, InvestorType(itype), DAYS[day], time, Side(side),
                       Aggressor(aggr), price, volume)


def segment_oracle(trades, n):
    """O(n^2) oracle: i and j share a segment iff no adjacent gap between them reaches n."""
    idx = [CAL.index(t.date) for t in trades]
    label = []
    for j in range(len(trades)):
        same = next((i for i in range(j) if all(idx[k + 1] - idx[k] < n for k in range(i, j))), j)
        label.append(label[same] if same < j else (max(label) + 1 if label else 0))
    return label


class TestSegment:
    def test_gap_split(self):
        trades = [tr(day=d) for d in (1, 2, 3, 10)]
        segs = segment_investor_trades(trades, 5, CAL)
        assert [len(s) for s in segs] == [3, 1]

    def test_singleton(self):
        assert segment_investor_trades([tr()], 1, CAL) == [[tr()]]

    def test_empty(self):
        assert segment_investor_trades([], 3, CAL) == []

    def test_trading_days_not_calendar_days(self):
        cal = Calendar([dt.date(2003, 3, 7), dt.date(2003, 3, 10)])  # Friday, Monday
        trades = [tr()._replace(date=d) for d in cal.days]
        assert len(segment_investor_trades(trades, 2, cal)) == 1

    def test_against_pairwise_oracle(self):
        rng = random.Random(2)
        for _ in range(60):
            days = sorted(rng.randint(0, 39) for _ in range(rng.randint(1, 100)))
            trades = [tr(day=d) for d in days]
            n = rng.randint(1, 6)
            segs = segment_investor_trades(trades, n, CAL)
            got = [k for k, s in enumerate(segs) for _ in s]
            assert got == segment_oracle(trades, n)


class TestClassify:
    cfg = DetectorConfig()

    def test_accept_all_one_side(self):
        seg = [tr(time=36000 + i, aggr="M" if i < 6 else "L") for i in range(10)]
        pkg = classify_package(seg, self.cfg, CAL)
        assert isinstance(pkg, TradePackage)
        assert pkg.sign == 1 and pkg.N == 10 and pkg.V == 1000 and pkg.n_market == 6
        assert pkg.F_m == 0.6 and pkg.T == 9

    def test_theta_boundary_strict(self):
        # buy volume 900 of 1200 is exactly 0.75
        seg = [tr(time=36000, side="S", volume=300)] + [tr(time=36001 + i) for i in range(9)]
        res = classify_package(seg, self.cfg, CAL)
        assert isinstance(res, Rejected) and res.reason is RejectReason.THETA
        seg[0] = seg[0]._replace(volume=299)
        assert isinstance(classify_package(seg, self.cfg, CAL), TradePackage)

    def test_market_order_boundary_strict(self):
        seg = [tr(time=36000 + i, aggr="M" if i < 5 else "L") for i in range(10)]
        res = classify_package(seg, self.cfg, CAL)
        assert isinstance(res, Rejected) and res.reason is RejectReason.FEW_MARKET_ORDERS

    def test_sell_package(self):
        seg = [tr(time=36000 + i, side="S") for i in range(6)]
        assert classify_package(seg, self.cfg, CAL).sign == -1

    def test_multi_day_T_skips_closed_hours(self):
        seg = [tr(day=0, time=53000)] + [tr(day=1, time=34300 + i) for i in range(6)]
        pkg = classify_package(seg, DetectorConfig(break_days=2), CAL)
        # 1000 s to the close, then 100 + 5 s into the next day
        assert pkg.T == 1000 + 105 and not pkg.within_one_day

    def test_T_skips_midday_break(self):
        seg = [tr(time=41000 + i) for i in range(5)] + [tr(time=47000)]
        pkg = classify_package(seg, self.cfg, CAL)
        assert pkg.T == (41400 - 41000) + (47000 - 46800)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DetectorConfig(theta=0.5)
        with pytest.raises(ValueError):
            DetectorConfig(break_days=0)


def random_stream(seed, n_investors=6, n=300):
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        out.append(tr(day=rng.randint(0, 9), time=34200 + rng.randint(0, 7199),
                      side="B" if rng.random() < 0.8 else "S",
                      aggr="M" if rng.random() < 0.6 else "L",
                      volume=rng.randint(1, 500), investor=rng.randint(1, n_investors),
                      stock=rng.choice(["000001", "000002"])))
    return prepare_stream(out)


class TestDetect:
    def test_all_limit_orders(self):
        stream = prepare_stream([tr(time=36000 + i, aggr="L") for i in range(50)])
        assert detect_packages(stream, DetectorConfig()) == []

    @pytest.mark.parametrize("seed", range(5))
    def test_audit_and_no_overlap(self, seed):
        stream = random_stream(seed)
        cfg = DetectorConfig(break_days=2)
        pkgs = detect_packages(stream, cfg)
        assert pkgs
        for p in pkgs:
            assert audit_package(p, cfg) == []
            assert 0 <= p.F_m <= 1 and p.T >= 0
        by_owner = {}
        for p in pkgs:
            by_owner.setdefault((p.investor, p.stock), []).append(p)
        cal = Calendar.from_records(stream)
        for group in by_owner.values():
            group.sort(key=lambda p: cal.clock(p.first))
            for a, b in zip(group, group[1:]):
                assert cal.clock(a.last) < cal.clock(b.first)

    @pytest.mark.parametrize("seed", range(5))
    def test_monotone_in_theta_and_min_market(self, seed):
        stream = random_stream(seed)
        counts = [len(detect_packages(stream, DetectorConfig(3, theta, 5)))
                  for theta in (0.6, 0.75, 0.9, 1.0)]
        assert counts == sorted(counts, reverse=True)
        counts = [len(detect_packages(stream, DetectorConfig(3, 0.75, m))) for m in (0, 3, 5, 8)]
        assert counts == sorted(counts, reverse=True)

    def test_segment_nesting(self):
        # segments are nested across break lengths; packages are then nested on synth data
        stream = random_stream(9, n_investors=2)
        for owner_trades in _by_owner(stream).values():
            fine = segment_investor_trades(owner_trades, 1, CAL)
            coarse = segment_investor_trades(owner_trades, 10, CAL)
            for seg in fine:
                assert any(set(seg) <= set(c) for c in coarse)

    def test_package_nesting_on_synth(self, small_market):
        _, records, _ = small_market
        stream = prepare_stream(records)
        one = detect_packages(stream, DetectorConfig(break_days=1))
        ten = detect_packages(stream, DetectorConfig(break_days=10))
        for p in one:
            assert any(set(p.trades) <= set(q.trades) for q in ten)

    def test_rejection_counts(self):
        stream = prepare_stream([tr(time=36000 + i, aggr="L") for i in range(10)]
                                + [tr(time=36000 + i, investor=2, side="BS"[i % 2])
                                   for i in range(10)])
        rej = {}
        detect_packages(stream, DetectorConfig(), rejections=rej)
        assert rej == {RejectReason.FEW_MARKET_ORDERS: 1, RejectReason.THETA: 1}

    def test_one_day_only(self):
        stream = prepare_stream([tr(day=d, time=36000 + i) for d in (0, 1) for i in range(4)])
        assert len(detect_packages(stream, DetectorConfig(break_days=2))) == 1
        assert detect_packages(stream, DetectorConfig(break_days=2, one_day_only=True)) == []

    def test_tsv(self):
        pkgs = detect_packages(prepare_stream([tr(time=36000 + i) for i in range(6)]),
                               DetectorConfig())
        sink = io.StringIO()
        write_packages_tsv(pkgs, sink)
        lines = sink.getvalue().splitlines()
        assert len(lines) == 2 and lines[1].split("\t")[3] == "+1"


def _by_owner(stream):
    out = {}
    for r in stream:
        out.setdefault((r.investor, r.stock), []).append(r)
    return out


class TestStats:
    def _pkg(self, T, N, V, itype=InvestorType.INSTITUTION):
        trades = tuple(tr() for _ in range(N))
        return TradePackage("000001", 1, itype, 1, trades, T, N, V, N, 1.0, 0.0, 0.0, True)

    def test_single(self):
        s = package_stats([self._pkg(100, 7, 700)])[InvestorType.INSTITUTION]
        assert (s.n_packages, s.mean_T, s.mean_N, s.mean_V) == (1, 100, 7, 700)

    def test_partition(self):
        pk = [self._pkg(1, 2, 3), self._pkg(4, 5, 6, InvestorType.INDIVIDUAL), self._pkg(7, 8, 9)]
        stats = package_stats(pk)
        assert sum(s.n_packages for s in stats.values()) == 3
        assert stats[InvestorType.INSTITUTION].mean_T == 4

    def test_empty(self):
        with pytest.raises(EmptyPopulation):
            package_stats([])


@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 7199)), min_size=1, max_size=60),
       st.integers(1, 8))
@settings(max_examples=100)
def test_segments_partition_input(points, n):
    trades = sorted((tr(day=d, time=34200 + s) for d, s in points), key=lambda r: (r.date, r.time))
    segs = segment_investor_trades(trades, n, CAL)
    assert [t for s in segs for t in s] == trades
    for a, b in zip(segs, segs[1:]):
        assert CAL.index(b[0].date) - CAL.index(a[-1].date) >= n

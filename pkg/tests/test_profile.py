import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tradepack.clock import CLOCK
from tradepack.detect import DetectorConfig, detect_packages
from tradepack.ingest import Aggressor, InvestorType, Side, TradeRecord, prepare_stream
from tradepack.profile import (Selector, concurrent_trades, endpoint_time_pdfs, mean_volume_profile,
                               package_transactions, stock_mean_volumes, time_bins,
                               total_volume_profile, transaction_time_pdf)
from tradepack.synth import SynthConfig, generate_market

D = dt.date(2003, 3, 3)


def tr(time, volume=100, aggr="M", investor=1, side="B", stock="000001"):
    return TradeRecord(stock, investor, InvestorType.INSTITUTION, D, time, Side(side),
                       Aggressor(aggr), 10.0, volume)


@pytest.fixture(scope="module")
def synth_packages():
    cfg = SynthConfig(seed=21, n_stocks=2, n_days=10, packages_per_stock=300,
                      noise_traders_per_day=40, open_boost=3.0, market_frac=0.7)
    records, _ = generate_market(cfg)
    stream = prepare_stream(records)
    pkgs = [p for p in detect_packages(stream, DetectorConfig()) if p.within_one_day]
    return stream, pkgs


def test_bins_edges():
    assert list(time_bins([0.0, 0.5, 0.999, 1.0], 48)) == [0, 24, 47, 47]
    with pytest.raises(ValueError):
        time_bins([1.2], 4)


def test_flat_profile_at_one():
    trades = [tr(CLOCK.wall_time(144 * i)) for i in range(100)]
    prof = mean_volume_profile(trades, stock_mean_volumes(trades), Selector.ALL, 10)
    populated = prof.counts > 0
    assert np.allclose(prof.values[populated], 1.0)
    assert np.all(np.isnan(prof.values[~populated]))


def test_empty_bin_is_missing_not_zero():
    trades = [tr(34200)]
    prof = mean_volume_profile(trades, {"000001": 100.0}, Selector.ALL, 4)
    assert prof.values[0] == 1.0 and np.isnan(prof.values[1:]).all()


def test_market_limit_partition(synth_packages):
    stream, pkgs = synth_packages
    means = stock_mean_volumes(stream)
    trades = package_transactions(pkgs)
    m = mean_volume_profile(trades, means, Selector.MARKET)
    lim = mean_volume_profile(trades, means, Selector.LIMIT)
    a = mean_volume_profile(trades, means, Selector.ALL)
    weighted = (np.nan_to_num(m.values) * m.counts + np.nan_to_num(lim.values) * lim.counts)
    ok = a.counts > 0
    assert np.allclose(weighted[ok] / a.counts[ok], a.values[ok], rtol=1e-12)
    assert np.array_equal(m.counts + lim.counts, a.counts)


def test_open_boost_recovered(synth_packages):
    stream, pkgs = synth_packages
    prof = mean_volume_profile(package_transactions(pkgs), stock_mean_volumes(stream))
    first_decile = np.nanmean(prof.values[:5])
    midday = np.nanmean(prof.values[20:28])
    assert first_decile > midday


def test_mean_times_count_is_total(synth_packages):
    stream, pkgs = synth_packages
    means = stock_mean_volumes(stream)
    trades = package_transactions(pkgs)
    mean = mean_volume_profile(trades, means)
    total = total_volume_profile(trades, means)
    assert np.allclose(np.nan_to_num(mean.values) * mean.counts, total.values, rtol=0, atol=1e-9)
    assert total.counts.sum() == len(trades)


def test_order_invariance(synth_packages):
    stream, pkgs = synth_packages
    means = stock_mean_volumes(stream)
    trades = package_transactions(pkgs)
    rev = trades[::-1]
    a, b = total_volume_profile(trades, means), total_volume_profile(rev, means)
    assert np.allclose(a.values, b.values, rtol=1e-12) and np.array_equal(a.counts, b.counts)
    assert np.array_equal(transaction_time_pdf(trades), transaction_time_pdf(rev))


def test_concurrent_selection():
    pkg_trades = [tr(36000 + i) for i in range(6)]
    others = [tr(36000, investor=2), tr(36001, investor=3, aggr="L"), tr(36100, investor=4),
              tr(36002, investor=5, stock="000002")]
    stream = prepare_stream(pkg_trades + others)
    (pkg,) = detect_packages(stream, DetectorConfig())
    picked = concurrent_trades([pkg], stream)
    assert [r.investor for r in picked] == [2]


def test_uniform_pdf_binomial():
    rng = np.random.default_rng(0)
    n, n_bins = 48_000, 48
    cells = rng.integers(0, 14400, n)
    trades = [tr(CLOCK.wall_time(int(c))) for c in cells]
    pdf = transaction_time_pdf(trades, n_bins)
    p = 1 / n_bins
    sigma = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(pdf - p) < 3.5 * sigma)


def test_single_transaction_pdf():
    pdf = transaction_time_pdf([tr(36000)], 48)
    assert pdf.sum() == 1.0 and pdf.max() == 1.0


@given(st.lists(st.integers(0, 14399), min_size=1, max_size=200))
@settings(max_examples=50)
def test_pdf_sums_to_one(cells):
    pdf = transaction_time_pdf([tr(CLOCK.wall_time(c)) for c in cells], 48)
    assert abs(pdf.sum() - 1) < 1e-12


def test_endpoint_pdfs_full_day():
    trades = [tr(34200)] + [tr(40000 + i) for i in range(5)] + [tr(54000)]
    (pkg,) = detect_packages(prepare_stream(trades), DetectorConfig())
    ini, fin = endpoint_time_pdfs([pkg] * 3)
    assert ini[0] == 1.0 and fin[-1] == 1.0
    assert ini.sum() == 1.0 and fin.sum() == 1.0


def test_afternoon_start_mode():
    cfg = SynthConfig(seed=3, n_days=5, packages_per_stock=300, start_window=(0.5, 0.6),
                      t_scale=300)
    records, _ = generate_market(cfg)
    pkgs = detect_packages(prepare_stream(records), DetectorConfig())
    ini, _ = endpoint_time_pdfs(pkgs, 48)
    assert int(np.argmax(ini)) in (24, 25, 26, 27, 28)

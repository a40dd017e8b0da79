import csv
from dataclasses import replace
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordc_exec.data import (
    HEADER,
    SyntheticDayConfig,
    generate_synthetic_day,
    load_snapshot_day,
    meta_path,
    split_day,
    synthetic_splits,
    write_snapshot_day,
)
from ordc_exec.lob import DayMeta


def test_header_is_exact():
    expected = "ts,ap1,ap2,ap3,ap4,ap5,av1,av2,av3,av4,av5,bp1,bp2,bp3,bp4,bp5,bv1,bv2,bv3,bv4,bv5,last,ihigh,ilow,ivol"
    assert ",".join(HEADER) == expected


def test_round_trip_is_bit_exact(tmp_path):
    snaps, meta = generate_synthetic_day(SyntheticDayConfig(n_snapshots=300, seed=3))
    path = tmp_path / "day.csv"
    write_snapshot_day(path, snaps, meta)
    back, meta2 = load_snapshot_day(path)
    assert meta2 == meta
    assert len(back) == len(snaps)
    for a, b in zip(snaps, back):
        assert a.timestamp == b.timestamp
        assert a.asks == b.asks and a.bids == b.bids
        assert (a.last_price, a.interval_high_trade, a.interval_low_trade) == (
            b.last_price, b.interval_high_trade, b.interval_low_trade)
        assert a.volume_at_or_above(a.interval_high_trade) == b.volume_at_or_above(b.interval_high_trade)


def _write_rows(path, rows, header=HEADER):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    meta_path(path).write_text('{"open": "10.00", "prev_vol": 0.1, "prev_volume": 1000}')


def _row(ts, bid="10.00", ask="10.01"):
    b, a = Decimal(bid), Decimal(ask)
    t = Decimal("0.01")
    return ([ts] + [str(a + i * t) for i in range(5)] + ["100"] * 5 + [str(b - i * t) for i in range(5)]
            + ["100"] * 5 + [str(b), str(a), str(b), "10"])


def test_three_rows_in_order(tmp_path):
    path = tmp_path / "d.csv"
    _write_rows(path, [_row(0), _row(3), _row(6)])
    snaps, meta = load_snapshot_day(path)
    assert [s.timestamp for s in snaps] == [0, 3, 6]
    assert meta == DayMeta(Decimal("10.00"), 0.1, 1000)


def test_crossed_row_names_the_row(tmp_path):
    path = tmp_path / "d.csv"
    _write_rows(path, [_row(0), _row(3, bid="10.01", ask="10.01")])
    with pytest.raises(ValueError, match="invalid row 2"):
        load_snapshot_day(path)


def test_schema_mismatch(tmp_path):
    path = tmp_path / "d.csv"
    _write_rows(path, [_row(0)[:-1]], header=HEADER[:-1])
    with pytest.raises(ValueError, match="schema mismatch"):
        load_snapshot_day(path)


def test_out_of_order_timestamps(tmp_path):
    path = tmp_path / "d.csv"
    _write_rows(path, [_row(3), _row(0)])
    with pytest.raises(ValueError, match="invalid row 2"):
        load_snapshot_day(path)


def test_frozen_market():
    snaps, _ = generate_synthetic_day(SyntheticDayConfig(mid_volatility_ticks=0.0, n_snapshots=200))
    assert len({s.mid for s in snaps}) == 1


def test_generator_invariants_over_ten_thousand_snapshots():
    cfg = SyntheticDayConfig(n_snapshots=10_000, seed=8, spread_mean_ticks=2.0, spread_noise_ticks=0.8)
    snaps, meta = generate_synthetic_day(cfg)
    assert len(snaps) == 10_000
    for s in snaps:
        # LobSnapshot construction already enforced the book invariants; check the trade summary too
        assert s.best_ask > s.best_bid
        if s.interval_traded_volume:
            assert s.interval_low_trade <= s.interval_high_trade
            assert s.volume_at_or_above(s.interval_high_trade) > 0
        assert all((lv.price / cfg.tick) == int(lv.price / cfg.tick) for lv in s.asks + s.bids)
    assert meta.prev_day_volatility > 0 and meta.prev_day_total_volume > 0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), spread=st.floats(1.0, 4.0), noise=st.floats(0.0, 1.0))
def test_spread_floor_and_trades_inside_quotes(seed, spread, noise):
    cfg = SyntheticDayConfig(n_snapshots=300, seed=seed, spread_mean_ticks=spread, spread_noise_ticks=noise)
    snaps, _ = generate_synthetic_day(cfg)
    for prev, s in zip(snaps, snaps[1:]):
        assert s.spread >= cfg.tick
        if s.interval_traded_volume:
            lo = min(prev.best_bid, s.best_bid)
            hi = max(prev.best_ask, s.best_ask)
            assert lo <= s.interval_low_trade <= s.interval_high_trade <= hi


def test_same_seed_same_day():
    cfg = SyntheticDayConfig(n_snapshots=500, seed=21)
    a, ma = generate_synthetic_day(cfg)
    b, mb = generate_synthetic_day(cfg)
    assert a == b and ma == mb
    c, _ = generate_synthetic_day(replace(cfg, seed=22))
    assert a != c


def test_spread_mean_is_stationary():
    cfg = SyntheticDayConfig(seed=4, spread_mean_ticks=2.0, spread_noise_ticks=0.5)
    snaps, _ = generate_synthetic_day(cfg)
    spreads = np.array([float(s.spread) for s in snaps])
    first, second = spreads[: len(spreads) // 2].mean(), spreads[len(spreads) // 2:].mean()
    assert abs(first - second) / spreads.mean() < 0.10


def test_config_validation():
    with pytest.raises(ValueError, match="one tick"):
        SyntheticDayConfig(spread_mean_ticks=0.5)
    with pytest.raises(ValueError):
        SyntheticDayConfig(depths=(1, 2, 3))
    with pytest.raises(ValueError):
        SyntheticDayConfig(depths=(0, 1, 1, 1, 1))


def test_split_day_and_splits():
    snaps, _ = generate_synthetic_day(SyntheticDayConfig(n_snapshots=1300, seed=1))
    parts = split_day(snaps, 601)
    assert [len(p) for p in parts] == [601, 601]
    assert parts[1][0] is snaps[601]
    base = SyntheticDayConfig(n_snapshots=700)
    sp = synthetic_splits(base, {"train": 2, "test": 1}, 601, seed=0)
    assert {k: len(v) for k, v in sp.items()} == {"train": 2, "test": 1}
    again = synthetic_splits(base, {"train": 2, "test": 1}, 601, seed=0)
    assert sp["test"][0][0] == again["test"][0][0]
    assert sp["train"][0][0] != sp["train"][1][0]

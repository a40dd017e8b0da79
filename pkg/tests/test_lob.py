from decimal import Decimal
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import book
from ordc_exec.lob import (
    SNAPSHOT_FEATURES,
    DayMeta,
    Fill,
    LobSnapshot,
    Order,
    OrderKind,
    PriceLevel,
    Side,
    denormalize_price,
    execute_market_order,
    make_levels,
    match_limit_order_interval,
    mid_and_spread,
    normalize_price,
    normalize_snapshot,
    temporary_impact,
    to_price,
)


def walk_oracle(levels, qty):
    """Exact level walk with Fractions, independent of the Decimal implementation."""
    left, cash, done = qty, Fraction(0), 0
    for price, vol in levels:
        take = min(left, vol)
        cash += Fraction(str(price)) * take
        done += take
        left -= take
    return done, cash


def test_mid_and_spread_on_reference_book(appendix_a_book):
    mid, spread = mid_and_spread(appendix_a_book)
    assert mid == Decimal("29.06")
    assert spread == Decimal("0.10")


def test_minimal_spread_and_symmetric_mid():
    s = book("10.00", spread_ticks=1)
    assert s.spread == Decimal("0.01")
    asks = make_levels([101, 102, 103, 104, 105], [1] * 5)
    bids = make_levels([99, 98, 97, 96, 95], [1] * 5)
    assert LobSnapshot(0, asks, bids, Decimal(99), Decimal(99)).mid == 100


def test_sell_500_on_reference_book(appendix_a_book):
    fill = execute_market_order(appendix_a_book, Side.SELL, 500)
    assert fill.per_level == ((Decimal("29.01"), 100), (Decimal("29.00"), 300), (Decimal("28.99"), 100))
    assert fill.avg_price == Decimal("29.00")
    assert temporary_impact(fill, appendix_a_book.mid) == Decimal("0.06")


def test_sell_100_single_level(appendix_a_book):
    fill = execute_market_order(appendix_a_book, Side.SELL, 100)
    assert fill.avg_price == Decimal("29.01")
    assert temporary_impact(fill, appendix_a_book.mid) == Decimal("0.05")


def test_empty_market_order(appendix_a_book):
    fill = execute_market_order(appendix_a_book, Side.SELL, 0)
    assert fill.executed_qty == 0 and fill.per_level == () and fill.avg_price is None
    with pytest.raises(ValueError, match="no execution"):
        temporary_impact(fill, appendix_a_book.mid)


def test_impact_zero_when_filled_at_mid():
    fill = Fill(Side.SELL, ((Decimal("10.005"), 10),))
    assert temporary_impact(fill, Decimal("10.005")) == 0


def test_book_exhaustion_gives_partial_fill(appendix_a_book):
    fill = execute_market_order(appendix_a_book, Side.SELL, 10_000)
    assert fill.executed_qty == sum(lv.volume for lv in appendix_a_book.bids)


def test_buy_walks_asks(appendix_a_book):
    fill = execute_market_order(appendix_a_book, Side.BUY, 250)
    assert fill.per_level == ((Decimal("29.11"), 200), (Decimal("29.12"), 50))
    assert temporary_impact(fill, appendix_a_book.mid) == fill.avg_price - appendix_a_book.mid


@settings(max_examples=200, deadline=None)
@given(
    vols=st.lists(st.integers(0, 2000), min_size=5, max_size=5),
    q1=st.integers(0, 12000),
    q2=st.integers(0, 12000),
)
def test_market_order_matches_walk_oracle_and_is_monotone(vols, q1, q2):
    bids = make_levels(["29.01", "29.00", "28.99", "28.98", "28.97"], vols)
    asks = make_levels(["29.11", "29.12", "29.13", "29.14", "29.15"], [100] * 5)
    snap = LobSnapshot(0, asks, bids, Decimal("29.11"), Decimal("29.01"))
    lo, hi = sorted((q1, q2))
    f_lo, f_hi = execute_market_order(snap, Side.SELL, lo), execute_market_order(snap, Side.SELL, hi)
    done, cash = walk_oracle([(lv.price, lv.volume) for lv in bids], hi)
    assert f_hi.executed_qty == done
    assert Fraction(str(f_hi.notional)) == cash
    assert f_lo.executed_qty <= f_hi.executed_qty
    if f_lo.executed_qty and f_hi.executed_qty:
        # selling more can only lower the average price
        assert f_hi.avg_price <= f_lo.avg_price
    assert f_hi.executed_qty == sum(q for _, q in f_hi.per_level)


def test_marketable_limit_stops_at_price(appendix_a_book):
    fill = execute_market_order(appendix_a_book, Side.SELL, 1000, limit_price=Decimal("29.00"))
    assert fill.per_level == ((Decimal("29.01"), 100), (Decimal("29.00"), 300))


def limit_sell(qty, price):
    return Order(Side.SELL, OrderKind.LIMIT, qty, Decimal(price))


def test_limit_full_fill_when_high_exceeds():
    snap = book("29.00", high="29.10", vol_at_high=50)
    fill = match_limit_order_interval(limit_sell(300, "29.05"), snap)
    assert fill.per_level == ((Decimal("29.05"), 300),)


def test_limit_no_fill_when_price_not_reached():
    snap = book("29.00", high="29.10", vol_at_high=50)
    assert match_limit_order_interval(limit_sell(300, "29.20"), snap).executed_qty == 0


def test_limit_partial_fill_at_the_high():
    snap = book("29.00", high="29.10", vol_at_high=1000)
    assert match_limit_order_interval(limit_sell(800, "29.10"), snap, 0.5).executed_qty == 500
    # cap larger than the order: the order quantity binds
    assert match_limit_order_interval(limit_sell(300, "29.10"), snap, 0.5).executed_qty == 300


def test_limit_zero_volume_interval_gives_nothing():
    snap = book("29.00", high="29.10")
    assert match_limit_order_interval(limit_sell(100, "29.05"), snap).executed_qty == 0


@settings(max_examples=300, deadline=None)
@given(
    limit_ticks=st.integers(-20, 20),
    high_ticks=st.integers(-20, 20),
    qty=st.integers(1, 5000),
    vol=st.integers(1, 5000),
    cap=st.sampled_from([0.1, 0.25, 0.5, 1.0]),
)
def test_limit_rule_trichotomy(limit_ticks, high_ticks, qty, vol, cap):
    base = Decimal("30.00")
    high = base + high_ticks * Decimal("0.01")
    price = base + limit_ticks * Decimal("0.01")
    snap = book("29.50", high=str(high), low="29.00", vol_at_high=vol)
    # the volume-at-or-above map is keyed by the high; a limit at the high reads it
    fill = match_limit_order_interval(limit_sell(qty, str(price)), snap, cap)
    if high > price:
        expected = qty
    elif high == price:
        expected = min(qty, int(Fraction(str(cap)) * vol))
    else:
        expected = 0
    assert fill.executed_qty == expected
    assert all(p == price for p, _ in fill.per_level)


def test_buy_limit_mirrors_against_low():
    asks = make_levels(["29.11", "29.12", "29.13", "29.14", "29.15"], [100] * 5)
    bids = make_levels(["29.01", "29.00", "28.99", "28.98", "28.97"], [100] * 5)
    snap = LobSnapshot(0, asks, bids, Decimal("29.10"), Decimal("29.00"), {}, None, {Decimal("29.00"): 400})
    order = Order(Side.BUY, OrderKind.LIMIT, 300, Decimal("29.00"))
    assert match_limit_order_interval(order, snap, 0.5).executed_qty == 200
    order = Order(Side.BUY, OrderKind.LIMIT, 300, Decimal("29.05"))
    assert match_limit_order_interval(order, snap).executed_qty == 300


def test_snapshot_invariants():
    asks = make_levels(["10.01", "10.02", "10.03", "10.04", "10.05"], [1] * 5)
    bids = make_levels(["10.01", "10.00", "9.99", "9.98", "9.97"], [1] * 5)
    with pytest.raises(ValueError, match="crossed"):
        LobSnapshot(0, asks, bids, Decimal(10), Decimal(10))
    bad_asks = make_levels(["10.02", "10.02", "10.03", "10.04", "10.05"], [1] * 5)
    good_bids = make_levels(["10.00", "9.99", "9.98", "9.97", "9.96"], [1] * 5)
    with pytest.raises(ValueError, match="ascending"):
        LobSnapshot(0, bad_asks, good_bids, Decimal(10), Decimal(10))
    with pytest.raises(ValueError, match="levels"):
        LobSnapshot(0, asks[:4], good_bids, Decimal(10), Decimal(10))
    with pytest.raises(ValueError, match="low"):
        LobSnapshot(0, bad_asks[1:] + (PriceLevel(Decimal("10.06"), 1),), good_bids, Decimal("10.00"),
                    Decimal("10.05"), {Decimal("10.00"): 5})
    # with no traded volume the high/low pair is not checked
    LobSnapshot(0, bad_asks[1:] + (PriceLevel(Decimal("10.06"), 1),), good_bids, Decimal("10.00"), Decimal("10.05"))


def test_order_and_level_validation():
    with pytest.raises(ValueError):
        Order(Side.SELL, OrderKind.LIMIT, 0, Decimal(1))
    with pytest.raises(ValueError):
        Order(Side.SELL, OrderKind.MARKET, 1, Decimal(1))
    with pytest.raises(ValueError):
        Order(Side.SELL, OrderKind.LIMIT, 1)
    with pytest.raises(ValueError):
        PriceLevel(Decimal(0), 1)
    with pytest.raises(ValueError):
        PriceLevel(Decimal(1), -1)
    with pytest.raises(ValueError, match="degenerate"):
        DayMeta(Decimal(10), 0.0, 1)


def test_to_price_rounds_half_up():
    assert to_price(Decimal("29.005")) == Decimal("29.01")
    assert to_price(Decimal("29.0049")) == Decimal("29.00")
    assert to_price(10) == Decimal("10.00")


def test_normalization_values(meta):
    snap = book("20.10", high="20.11", vol_at_high=500)
    v = normalize_snapshot(snap, meta)
    names = list(SNAPSHOT_FEATURES)
    assert v[names.index("bp1")] == pytest.approx((20.10 - 20.0) / 0.2)
    assert v[names.index("av1")] == pytest.approx(1000 / 1_000_000)
    assert v[names.index("ivol")] == pytest.approx(500 / 1_000_000)
    assert v[names.index("ihigh")] == pytest.approx((20.11 - 20.0) / 0.2)


@given(p=st.floats(0.01, 1e4), vol=st.floats(1e-3, 1e3), open_=st.floats(0.01, 1e4))
def test_normalize_round_trip(p, vol, open_):
    meta = DayMeta(Decimal(str(open_)), vol, 1)
    z = normalize_price(p, meta)
    assert denormalize_price(z, meta) == pytest.approx(p, rel=1e-9, abs=1e-9)


def test_normalize_rejects_degenerate_meta():
    class Fake:
        open_price = Decimal(1)
        prev_day_volatility = 0.0
        prev_day_total_volume = 1

    with pytest.raises(ValueError, match="degenerate"):
        normalize_snapshot(book("10.00"), Fake())


def test_feature_vector_is_finite(meta):
    assert np.all(np.isfinite(normalize_snapshot(book("20.00"), meta)))

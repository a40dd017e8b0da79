from decimal import Decimal

import pytest

from ordc_exec.data import SyntheticDayConfig, generate_synthetic_day
from ordc_exec.lob import DayMeta, LobSnapshot, make_levels

TICK = Decimal("0.01")


def book(bid: str, spread_ticks: int = 1, ts: float = 0.0, depth: int = 1000, high=None, low=None, vol_at_high=0):
    """Five levels either side, one tick apart, with an optional trade summary."""
    b = Decimal(bid)
    a = b + spread_ticks * TICK
    asks = make_levels([a + i * TICK for i in range(5)], [depth] * 5)
    bids = make_levels([b - i * TICK for i in range(5)], [depth] * 5)
    high = a if high is None else Decimal(high)
    low = b if low is None else Decimal(low)
    return LobSnapshot(ts, asks, bids, high, low, {high: vol_at_high} if vol_at_high else {})


@pytest.fixture
def appendix_a_book():
    # the printed table has Bid 4/5 out of order; the next two ticks down keep it valid
    asks = make_levels(["29.11", "29.12", "29.13", "29.14", "29.15"], [200, 100, 1000, 2000, 10000])
    bids = make_levels(["29.01", "29.00", "28.99", "28.98", "28.97"], [100, 300, 800, 1100, 1900])
    return LobSnapshot(0.0, asks, bids, Decimal("29.11"), Decimal("29.01"))


@pytest.fixture
def meta():
    return DayMeta(Decimal("20.00"), 0.2, 1_000_000)


@pytest.fixture(scope="session")
def small_day():
    return generate_synthetic_day(SyntheticDayConfig(n_snapshots=1300, seed=11))

"""Limit order book snapshots and the matching rules used by the simulator.

Prices are ``Decimal`` values on a fixed tick grid so that level walks and
average prices are exact; volumes are integer share counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

DEFAULT_TICK = Decimal("0.01")
N_LEVELS = 5


class Side(Enum):
    BUY = "buy"
    SELL = "sell"


class OrderKind(Enum):
    MARKET = "market"
    LIMIT = "limit"


def to_price(value, tick: Decimal = DEFAULT_TICK) -> Decimal:
    """Convert ``value`` to a Decimal on the tick grid (half-up rounding)."""
    d = value if isinstance(value, Decimal) else Decimal(str(value))
    steps = (d / tick).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    return (steps * tick).quantize(tick)


@dataclass(frozen=True, slots=True)
class PriceLevel:
    price: Decimal
    volume: int

    def __post_init__(self) -> None:
        if not isinstance(self.price, Decimal):
            object.__setattr__(self, "price", Decimal(str(self.price)))
        if self.price <= 0:
            raise ValueError(f"price must be positive, got {self.price}")
        if self.volume < 0:
            raise ValueError(f"volume must be non-negative, got {self.volume}")


@dataclass(frozen=True, slots=True)
class DayMeta:
    open_price: Decimal
    prev_day_volatility: float
    prev_day_total_volume: int

    def __post_init__(self) -> None:
        if not isinstance(self.open_price, Decimal):
            object.__setattr__(self, "open_price", Decimal(str(self.open_price)))
        if self.open_price <= 0 or self.prev_day_volatility <= 0 or self.prev_day_total_volume <= 0:
            raise ValueError("degenerate day metadata")


@dataclass(frozen=True, slots=True)
class LobSnapshot:
    """Five-level book plus a summary of trades since the previous snapshot.

    ``interval_volume_at_or_above`` maps a price to the shares traded at that
    price or higher during the interval; lookups of absent prices return 0.
    The ``..._at_or_below`` mapping is the buy-side mirror.
    """

    timestamp: float
    asks: tuple[PriceLevel, ...]
    bids: tuple[PriceLevel, ...]
    interval_high_trade: Decimal
    interval_low_trade: Decimal
    interval_volume_at_or_above: Mapping[Decimal, int] = field(default_factory=dict)
    last_price: Optional[Decimal] = None
    interval_volume_at_or_below: Mapping[Decimal, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "asks", tuple(self.asks))
        object.__setattr__(self, "bids", tuple(self.bids))
        if len(self.asks) != N_LEVELS or len(self.bids) != N_LEVELS:
            raise ValueError(f"expected {N_LEVELS} levels per side")
        if self.asks[0].price <= self.bids[0].price:
            raise ValueError(
                f"crossed or locked book: ask1={self.asks[0].price} bid1={self.bids[0].price}"
            )
        for lo, hi in zip(self.asks, self.asks[1:]):
            if hi.price <= lo.price:
                raise ValueError("ask prices must be strictly ascending")
        for hi, lo in zip(self.bids, self.bids[1:]):
            if lo.price >= hi.price:
                raise ValueError("bid prices must be strictly descending")
        if self.interval_traded_volume > 0 and self.interval_low_trade > self.interval_high_trade:
            raise ValueError("interval low trade exceeds interval high trade")
        if self.last_price is None:
            object.__setattr__(self, "last_price", self.mid)

    @property
    def best_ask(self) -> Decimal:
        return self.asks[0].price

    @property
    def best_bid(self) -> Decimal:
        return self.bids[0].price

    @property
    def mid(self) -> Decimal:
        return (self.best_ask + self.best_bid) / 2

    @property
    def spread(self) -> Decimal:
        return self.best_ask - self.best_bid

    @property
    def interval_traded_volume(self) -> int:
        return max(
            sum(self.interval_volume_at_or_above.values(), 0),
            sum(self.interval_volume_at_or_below.values(), 0),
        )

    def volume_at_or_above(self, price: Decimal) -> int:
        return int(self.interval_volume_at_or_above.get(price, 0))

    def volume_at_or_below(self, price: Decimal) -> int:
        return int(self.interval_volume_at_or_below.get(price, 0))


@dataclass(frozen=True, slots=True)
class Order:
    side: Side
    kind: OrderKind
    quantity: int
    limit_price: Optional[Decimal] = None

    def __post_init__(self) -> None:
        if self.quantity <= 0:
            raise ValueError("order quantity must be positive")
        if (self.kind is OrderKind.LIMIT) != (self.limit_price is not None):
            raise ValueError("limit_price is required for limit orders and only for them")


@dataclass(frozen=True, slots=True)
class Fill:
    side: Side
    per_level: tuple[tuple[Decimal, int], ...] = ()

    @property
    def executed_qty(self) -> int:
        return sum(q for _, q in self.per_level)

    @property
    def notional(self) -> Decimal:
        return sum((p * q for p, q in self.per_level), Decimal(0))

    @property
    def avg_price(self) -> Optional[Decimal]:
        qty = self.executed_qty
        if qty == 0:
            return None
        return self.notional / qty


def mid_and_spread(snapshot: LobSnapshot) -> tuple[Decimal, Decimal]:
    return snapshot.mid, snapshot.spread


def execute_market_order(
    snapshot: LobSnapshot,
    side: Side,
    qty: int,
    limit_price: Optional[Decimal] = None,
) -> Fill:
    """Walk the opposite side best-first until ``qty`` is filled or depth runs out.

    With ``limit_price`` only levels at or better than it are consumed, which
    is how a marketable limit order takes the crossing part of the book.
    """
    if qty < 0:
        raise ValueError("quantity must be non-negative")
    levels = snapshot.bids if side is Side.SELL else snapshot.asks
    remaining = qty
    taken = []
    for level in levels:
        if remaining == 0:
            break
        if limit_price is not None:
            if side is Side.SELL and level.price < limit_price:
                break
            if side is Side.BUY and level.price > limit_price:
                break
        q = min(remaining, level.volume)
        if q > 0:
            taken.append((level.price, q))
            remaining -= q
    return Fill(side, tuple(taken))


def temporary_impact(fill: Fill, mid: Decimal) -> Decimal:
    """Gap between the pre-trade mid and the fill's average price, signed as a cost."""
    avg = fill.avg_price
    if avg is None:
        raise ValueError("no execution")
    return mid - avg if fill.side is Side.SELL else avg - mid


def match_limit_order_interval(order: Order, snapshot: LobSnapshot, fill_cap_ratio: float = 0.5) -> Fill:
    """Resolve a resting limit order against one interval's trade summary.

    A sell fills completely when trades printed strictly above its price,
    partially (capped at ``fill_cap_ratio`` of the volume traded at or above
    it) when the interval high equals its price, and not at all otherwise.
    """
    if order.kind is not OrderKind.LIMIT:
        raise ValueError("order must be a limit order")
    if not 0 < fill_cap_ratio <= 1:
        raise ValueError("fill_cap_ratio must lie in (0, 1]")
    price = order.limit_price
    if order.side is Side.SELL:
        extreme, available = snapshot.interval_high_trade, snapshot.volume_at_or_above(price)
        better = extreme > price
    else:
        extreme, available = snapshot.interval_low_trade, snapshot.volume_at_or_below(price)
        better = extreme < price
    if snapshot.interval_traded_volume == 0:
        return Fill(order.side)
    if better:
        return Fill(order.side, ((price, order.quantity),))
    if extreme == price:
        cap = math.floor(Decimal(str(fill_cap_ratio)) * available)
        q = min(order.quantity, cap)
        return Fill(order.side, ((price, q),) if q > 0 else ())
    return Fill(order.side)


SNAPSHOT_FEATURES = (
    [f"ap{i}" for i in range(1, 6)]
    + [f"av{i}" for i in range(1, 6)]
    + [f"bp{i}" for i in range(1, 6)]
    + [f"bv{i}" for i in range(1, 6)]
    + ["last", "ihigh", "ilow", "ivol"]
)
_PRICE_MASK = np.array([name[0:2] in ("ap", "bp") or name in ("last", "ihigh", "ilow") for name in SNAPSHOT_FEATURES])


def raw_snapshot_vector(snapshot: LobSnapshot) -> np.ndarray:
    ivol = snapshot.volume_at_or_above(snapshot.interval_high_trade)
    values = (
        [lv.price for lv in snapshot.asks]
        + [lv.volume for lv in snapshot.asks]
        + [lv.price for lv in snapshot.bids]
        + [lv.volume for lv in snapshot.bids]
        + [snapshot.last_price, snapshot.interval_high_trade, snapshot.interval_low_trade, ivol]
    )
    return np.array([float(v) for v in values])


def normalize_price(price, meta: DayMeta) -> float:
    return (float(price) - float(meta.open_price)) / meta.prev_day_volatility


def denormalize_price(z: float, meta: DayMeta) -> float:
    return z * meta.prev_day_volatility + float(meta.open_price)


def normalize_snapshot(snapshot: LobSnapshot, meta: DayMeta) -> np.ndarray:
    """Z-score price features around the open and scale volumes by yesterday's volume."""
    if meta.prev_day_volatility <= 0 or meta.prev_day_total_volume <= 0:
        raise ValueError("degenerate day metadata")
    raw = raw_snapshot_vector(snapshot)
    out = raw / meta.prev_day_total_volume
    out[_PRICE_MASK] = (raw[_PRICE_MASK] - float(meta.open_price)) / meta.prev_day_volatility
    return out


def make_levels(prices: Sequence, volumes: Sequence[int]) -> tuple[PriceLevel, ...]:
    return tuple(PriceLevel(Decimal(str(p)), int(v)) for p, v in zip(prices, volumes))

"""Snapshot CSV files and a seeded synthetic LOB day generator."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from decimal import Decimal
from pathlib import Path
from typing import Sequence

import numpy as np

from .lob import DEFAULT_TICK, DayMeta, LobSnapshot, PriceLevel

HEADER = (
    ["ts"]
    + [f"ap{i}" for i in range(1, 6)]
    + [f"av{i}" for i in range(1, 6)]
    + [f"bp{i}" for i in range(1, 6)]
    + [f"bv{i}" for i in range(1, 6)]
    + ["last", "ihigh", "ilow", "ivol"]
)


def meta_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def _row(s: LobSnapshot) -> list[str]:
    return (
        [repr(float(s.timestamp))]
        + [str(lv.price) for lv in s.asks]
        + [str(lv.volume) for lv in s.asks]
        + [str(lv.price) for lv in s.bids]
        + [str(lv.volume) for lv in s.bids]
        + [str(s.last_price), str(s.interval_high_trade), str(s.interval_low_trade)]
        + [str(s.volume_at_or_above(s.interval_high_trade))]
    )


def write_snapshot_day(path, snapshots: Sequence[LobSnapshot], meta: DayMeta) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for s in snapshots:
            writer.writerow(_row(s))
    meta_path(path).write_text(
        json.dumps(
            {
                "open": str(meta.open_price),
                "prev_vol": meta.prev_day_volatility,
                "prev_volume": meta.prev_day_total_volume,
            }
        )
    )


def _parse(rec: dict, n: int) -> LobSnapshot:
    try:
        asks = tuple(PriceLevel(Decimal(rec[f"ap{i}"]), int(rec[f"av{i}"])) for i in range(1, 6))
        bids = tuple(PriceLevel(Decimal(rec[f"bp{i}"]), int(rec[f"bv{i}"])) for i in range(1, 6))
        high, low, ivol = Decimal(rec["ihigh"]), Decimal(rec["ilow"]), int(rec["ivol"])
        return LobSnapshot(
            timestamp=float(rec["ts"]),
            asks=asks,
            bids=bids,
            interval_high_trade=high,
            interval_low_trade=low,
            interval_volume_at_or_above={high: ivol} if ivol else {},
            last_price=Decimal(rec["last"]),
        )
    except (ValueError, ArithmeticError) as exc:
        raise ValueError(f"invalid row {n}: {exc}") from exc


def load_snapshot_day(path) -> tuple[list[LobSnapshot], DayMeta]:
    """Read a day file and its ``<stem>.meta.json`` sibling.

    Rows are numbered from 1 after the header in error messages.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HEADER:
            raise ValueError(f"schema mismatch: expected columns {','.join(HEADER)}")
        snapshots = []
        for n, values in enumerate(reader, start=1):
            if len(values) != len(HEADER):
                raise ValueError(f"invalid row {n}: expected {len(HEADER)} fields")
            snapshots.append(_parse(dict(zip(HEADER, values)), n))
    for n, (a, b) in enumerate(zip(snapshots, snapshots[1:]), start=2):
        if b.timestamp < a.timestamp:
            raise ValueError(f"invalid row {n}: timestamps out of order")
    doc = json.loads(meta_path(path).read_text())
    meta = DayMeta(Decimal(str(doc["open"])), float(doc["prev_vol"]), int(doc["prev_volume"]))
    return snapshots, meta


@dataclass(frozen=True)
class SyntheticDayConfig:
    """Random-walk mid, integer-tick spread, per-level depths and Poisson trade flow."""

    initial_mid: float = 20.0
    mid_volatility_ticks: float = 0.5  # std of the mid change per snapshot, in ticks
    spread_mean_ticks: float = 1.0
    spread_reversion: float = 0.2
    spread_noise_ticks: float = 0.0
    depths: tuple[int, ...] = (500, 800, 1000, 1200, 1500)
    depth_jitter: float = 0.3
    trade_intensity: float = 300.0  # mean shares traded per side per snapshot
    n_snapshots: int = 4800
    snapshot_interval: float = 3.0
    tick: Decimal = DEFAULT_TICK
    seed: int = 0
    prev_day_volume_multiple: float = 1.0

    def __post_init__(self) -> None:
        if self.spread_mean_ticks < 1:
            raise ValueError("spread floor is one tick")
        if len(self.depths) != 5 or min(self.depths) <= 0:
            raise ValueError("need five positive depths")
        if self.mid_volatility_ticks < 0 or self.trade_intensity < 0:
            raise ValueError("volatility and trade intensity must be non-negative")
        if not isinstance(self.tick, Decimal):
            object.__setattr__(self, "tick", Decimal(str(self.tick)))


def generate_synthetic_day(config: SyntheticDayConfig) -> tuple[list[LobSnapshot], DayMeta]:
    """One seeded day of snapshots.

    The bid sits at ``floor(mid - spread/2)`` and the ask ``spread`` ticks
    above it, so an odd spread is never widened by rounding. Trades in each
    interval print at the previous and current best quotes.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_snapshots
    tick = config.tick
    mid0 = config.initial_mid / float(tick)
    mids = mid0 + np.concatenate([[0.0], np.cumsum(rng.normal(0.0, config.mid_volatility_ticks, n - 1))])

    spreads = np.empty(n, dtype=np.int64)
    s = config.spread_mean_ticks
    for i in range(n):
        s = s + config.spread_reversion * (config.spread_mean_ticks - s) + config.spread_noise_ticks * rng.normal()
        spreads[i] = max(1, int(round(s)))
    bids = np.floor(mids - spreads / 2.0).astype(np.int64)
    bids = np.maximum(bids, 5)
    asks = bids + spreads

    depth = np.asarray(config.depths, dtype=float)
    jitter = rng.uniform(1 - config.depth_jitter, 1 + config.depth_jitter, size=(n, 2, 5))
    vols = np.maximum(1, np.rint(depth * jitter)).astype(np.int64)
    buy_vol = rng.poisson(config.trade_intensity, size=n)
    sell_vol = rng.poisson(config.trade_intensity, size=n)
    split = rng.uniform(size=n)

    def px(ticks: int) -> Decimal:
        return Decimal(int(ticks)) * tick

    snapshots = []
    last = px(bids[0]) + (px(asks[0]) - px(bids[0])) / 2
    for i in range(n):
        a_levels = tuple(PriceLevel(px(asks[i] + j), int(vols[i, 0, j])) for j in range(5))
        b_levels = tuple(PriceLevel(px(bids[i] - j), int(vols[i, 1, j])) for j in range(5))
        prev = max(i - 1, 0)
        # buyer-initiated flow lifts the asks seen during the interval, sellers hit the bids
        buy_at = {}
        if buy_vol[i]:
            first = int(round(buy_vol[i] * split[i]))
            for price, q in ((asks[prev], first), (asks[i], buy_vol[i] - first)):
                if q:
                    buy_at[price] = buy_at.get(price, 0) + q
        sell_at = {}
        if sell_vol[i]:
            first = int(round(sell_vol[i] * split[i]))
            for price, q in ((bids[prev], first), (bids[i], sell_vol[i] - first)):
                if q:
                    sell_at[price] = sell_at.get(price, 0) + q
        traded = sorted(set(buy_at) | set(sell_at))
        if traded:
            high, low = traded[-1], traded[0]
            vol_high = buy_at.get(high, 0) + sell_at.get(high, 0)
            vol_low = buy_at.get(low, 0) + sell_at.get(low, 0)
            last = px(asks[i]) if buy_at else px(bids[i])
            snap = LobSnapshot(
                timestamp=i * config.snapshot_interval,
                asks=a_levels,
                bids=b_levels,
                interval_high_trade=px(high),
                interval_low_trade=px(low),
                interval_volume_at_or_above={px(high): vol_high},
                last_price=last,
                interval_volume_at_or_below={px(low): vol_low},
            )
        else:
            snap = LobSnapshot(
                timestamp=i * config.snapshot_interval,
                asks=a_levels,
                bids=b_levels,
                interval_high_trade=last,
                interval_low_trade=last,
                last_price=last,
            )
        snapshots.append(snap)

    open_price = snapshots[0].mid
    # a frozen market still needs a positive volatility to normalize against
    day_vol = max(config.mid_volatility_ticks, 0.5) * float(tick) * math.sqrt(n)
    prev_volume = max(1, int(round(2 * config.trade_intensity * n * config.prev_day_volume_multiple)))
    return snapshots, DayMeta(open_price, day_vol, prev_volume)


def split_day(snapshots: Sequence[LobSnapshot], slice_length: int) -> list[list[LobSnapshot]]:
    """Non-overlapping slices of ``slice_length`` snapshots (the tail is dropped)."""
    return [list(snapshots[i : i + slice_length]) for i in range(0, len(snapshots) - slice_length + 1, slice_length)]


def synthetic_splits(
    base: SyntheticDayConfig,
    days_per_split: dict[str, int],
    slice_length: int,
    seed: int,
    slices_per_day: int | None = None,
) -> dict[str, list[tuple[list[LobSnapshot], DayMeta]]]:
    """Generate fresh days for every split; day seeds come from one root seed."""
    root = np.random.SeedSequence(seed)
    out = {}
    for (name, n_days), child in zip(days_per_split.items(), root.spawn(len(days_per_split))):
        items = []
        for day_seq in child.spawn(n_days):
            day_seed = int(day_seq.generate_state(1)[0])
            snaps, meta = generate_synthetic_day(replace(base, seed=day_seed))
            for sl in split_day(snaps, slice_length)[:slices_per_day]:
                items.append((sl, meta))
        out[name] = items
    return out

"""Episodic sell-side execution environment replayed from LOB snapshots.

An episode covers ``horizon_steps`` decisions, one per ``decision_interval``;
between decisions the resting limit order is matched snapshot by snapshot.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .features import context_features
from .lob import (
    DEFAULT_TICK,
    DayMeta,
    Fill,
    LobSnapshot,
    Order,
    OrderKind,
    Side,
    execute_market_order,
    match_limit_order_interval,
    normalize_price,
    to_price,
)

PRICE_OFFSETS_BP: tuple[int, ...] = (
    (-50, -40, -30, -25, -20, -15) + tuple(range(-10, 11)) + (15, 20, 25, 30, 40, 50)
)
VOLUME_MULTIPLIERS: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)


@dataclass(frozen=True)
class EpisodeConfig:
    horizon_steps: int = 30
    decision_interval: int = 60
    snapshot_interval: int = 3
    target_volume: int = 10_000
    mo_delay: float = 3.0
    beta: float = 0.1
    discount: float = 0.99
    fill_cap_ratio: float = 0.5
    tick: Decimal = DEFAULT_TICK
    # "normalized" z-scores r1 prices against the day; "raw" uses currency.
    reward_price: str = "normalized"
    # Express r1/r2 volumes as fractions of target_volume instead of shares.
    reward_volume_fraction: bool = False

    def __post_init__(self) -> None:
        if self.decision_interval % self.snapshot_interval:
            raise ValueError("decision_interval must be a multiple of snapshot_interval")
        if self.target_volume <= 0:
            raise ValueError("target_volume must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be positive")
        if self.reward_price not in ("normalized", "raw"):
            raise ValueError("reward_price must be 'normalized' or 'raw'")
        if not isinstance(self.tick, Decimal):
            object.__setattr__(self, "tick", Decimal(str(self.tick)))

    @classmethod
    def from_meta(cls, meta: DayMeta, fraction: float = 0.005, **kwargs) -> "EpisodeConfig":
        """Size the program as ``fraction`` of the previous day's volume."""
        target = int(Fraction(str(fraction)) * meta.prev_day_total_volume)
        return cls(target_volume=target, **kwargs)

    @property
    def snapshots_per_step(self) -> int:
        return self.decision_interval // self.snapshot_interval

    @property
    def min_slice_length(self) -> int:
        return self.horizon_steps * self.snapshots_per_step + 1

    @property
    def twap_volume(self) -> Fraction:
        return Fraction(self.target_volume, self.horizon_steps)


@dataclass(frozen=True)
class PrivateState:
    remaining_steps: int
    remaining_inventory: int


@dataclass(frozen=True)
class ExecAction:
    price_offset_bp: float
    volume_multiplier: float

    def __post_init__(self) -> None:
        if self.price_offset_bp not in PRICE_OFFSETS_BP or self.volume_multiplier not in VOLUME_MULTIPLIERS:
            raise ValueError(f"invalid action: {self.price_offset_bp} bp x {self.volume_multiplier}")

    @property
    def index(self) -> int:
        return PRICE_OFFSETS_BP.index(self.price_offset_bp) * len(VOLUME_MULTIPLIERS) + VOLUME_MULTIPLIERS.index(
            self.volume_multiplier
        )


ACTIONS: tuple[ExecAction, ...] = tuple(ExecAction(p, v) for p in PRICE_OFFSETS_BP for v in VOLUME_MULTIPLIERS)


@dataclass(frozen=True)
class Observation:
    context: np.ndarray
    state: PrivateState
    mid: Decimal
    mid_return: float
    step: int


@dataclass(frozen=True)
class StepResult:
    reward: float
    observation: Observation
    done: bool
    fills: tuple[Fill, ...]


@dataclass(frozen=True)
class StepRecord:
    step: int
    quoted_price: Decimal
    quoted_volume: int
    executed_qty: int
    avg_price: Optional[Decimal]
    reward: float
    inventory: int
    decision_mid: Decimal
    cash: Decimal
    forced_qty: int = 0


RECORD_COLUMNS = ("step", "quoted_price", "quoted_volume", "executed_qty", "avg_price", "reward", "inventory")


@dataclass
class EpisodeRecord:
    target_volume: int
    steps: list[StepRecord] = field(default_factory=list)

    @property
    def executed_volume(self) -> int:
        return sum(s.executed_qty for s in self.steps)

    @property
    def cash(self) -> Decimal:
        return sum((s.cash for s in self.steps), Decimal(0))

    def rows(self) -> list[dict]:
        return [
            {
                "step": s.step,
                "quoted_price": str(s.quoted_price),
                "quoted_volume": s.quoted_volume,
                "executed_qty": s.executed_qty,
                "avg_price": "" if s.avg_price is None else str(s.avg_price),
                "reward": repr(s.reward),
                "inventory": s.inventory,
            }
            for s in self.steps
        ]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS)
            writer.writeheader()
            writer.writerows(self.rows())


def trading_cost(record: EpisodeRecord) -> float:
    """Cost in basis points of the average sell price against the decision-time mid TWAP."""
    volume = record.executed_volume
    if volume == 0:
        raise ValueError("nothing executed")
    avg = record.cash / volume
    twap = sum((s.decision_mid for s in record.steps), Decimal(0)) / len(record.steps)
    return float((twap - avg) / twap * 10_000)


def quote_price(best_ask: Decimal, offset_bp: float, tick: Decimal) -> Decimal:
    return to_price(best_ask * (1 + Decimal(str(offset_bp)) / 10_000), tick)


def quoted_volume(action: ExecAction, config: EpisodeConfig) -> int:
    q = Fraction(str(action.volume_multiplier)) * config.twap_volume
    return math.floor(q + Fraction(1, 2))


def sweep_bids(snapshot: LobSnapshot, qty: int) -> Fill:
    """Market sell that must complete: depth beyond the visible book trades at the last bid level."""
    fill = execute_market_order(snapshot, Side.SELL, qty)
    rest = qty - fill.executed_qty
    if rest == 0:
        return fill
    per_level = list(fill.per_level)
    worst = snapshot.bids[-1].price
    if per_level and per_level[-1][0] == worst:
        per_level[-1] = (worst, per_level[-1][1] + rest)
    else:
        per_level.append((worst, rest))
    return Fill(Side.SELL, tuple(per_level))


class ExecutionEnv:
    """Single-episode simulator; one instance is not safe to share across threads."""

    def __init__(self, config: EpisodeConfig):
        self.config = config
        self._slice: Sequence[LobSnapshot] = ()
        self._meta: Optional[DayMeta] = None
        self.state: Optional[PrivateState] = None
        self.record: Optional[EpisodeRecord] = None

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.remaining_steps == 0

    def reset(self, day_slice: Sequence[LobSnapshot], meta: DayMeta) -> Observation:
        cfg = self.config
        if len(day_slice) < cfg.min_slice_length:
            raise ValueError(f"slice too short: {len(day_slice)} < {cfg.min_slice_length} snapshots")
        self._slice = day_slice
        self._meta = meta
        self.state = PrivateState(cfg.horizon_steps, cfg.target_volume)
        self.record = EpisodeRecord(cfg.target_volume)
        return self._observe(0)

    def _observe(self, step: int) -> Observation:
        per = self.config.snapshots_per_step
        k = step * per
        window = self._slice[max(0, k - per) : k + 1]
        prev_mid, mid = window[0].mid, window[-1].mid
        return Observation(
            context=context_features(window, self._meta),
            state=self.state,
            mid=mid,
            mid_return=float((mid - prev_mid) / prev_mid),
            step=step,
        )

    def _delayed_index(self, k: int) -> int:
        target = self._slice[k].timestamp + self.config.mo_delay
        for j in range(k, len(self._slice)):
            if self._slice[j].timestamp >= target:
                return j
        return len(self._slice) - 1

    def _price_units(self, price: Decimal) -> float:
        if self.config.reward_price == "raw":
            return float(price)
        return normalize_price(price, self._meta)

    def step(self, action: ExecAction) -> StepResult:
        cfg = self.config
        if self.state is None:
            raise RuntimeError("call reset() first")
        if self.done:
            raise RuntimeError("episode is done")
        if not isinstance(action, ExecAction):
            raise ValueError("invalid action")
        t = cfg.horizon_steps - self.state.remaining_steps
        per = cfg.snapshots_per_step
        k = t * per
        decision = self._slice[k]
        inventory = self.state.remaining_inventory

        quote = quote_price(decision.best_ask, action.price_offset_bp, cfg.tick)
        qty = min(quoted_volume(action, cfg), inventory)
        fills: list[Fill] = []
        left = qty
        if left > 0 and quote < decision.best_bid:
            mo = execute_market_order(self._slice[self._delayed_index(k)], Side.SELL, left, limit_price=quote)
            if mo.executed_qty:
                fills.append(mo)
                left -= mo.executed_qty
        for i in range(k + 1, k + per + 1):
            if left == 0:
                break
            lo = match_limit_order_interval(Order(Side.SELL, OrderKind.LIMIT, left, quote), self._slice[i], cfg.fill_cap_ratio)
            if lo.executed_qty:
                fills.append(lo)
                left -= lo.executed_qty
        # unfilled remainder is withdrawn here
        inventory -= qty - left
        remaining_steps = self.state.remaining_steps - 1
        forced = 0
        if remaining_steps == 0 and inventory > 0:
            sweep = sweep_bids(self._slice[k + per], inventory)
            fills.append(sweep)
            forced = inventory
            inventory = 0

        executed = sum(f.executed_qty for f in fills)
        cash = sum((f.notional for f in fills), Decimal(0))
        avg = cash / executed if executed else None
        self.state = PrivateState(remaining_steps, inventory)

        scale = cfg.target_volume if cfg.reward_volume_fraction else 1
        r1 = (executed / scale) * self._price_units(avg) if executed else 0.0
        if cfg.reward_price == "raw" and not cfg.reward_volume_fraction:
            r1 = float(cash)
        twap_inventory = Fraction(cfg.target_volume * remaining_steps, cfg.horizon_steps)
        r2 = float((inventory - twap_inventory) / scale) ** 2
        reward = r1 - cfg.beta * r2

        self.record.steps.append(
            StepRecord(t, quote, qty, executed, avg, reward, inventory, decision.mid, cash, forced)
        )
        obs = self._observe(t + 1)
        return StepResult(reward, obs, remaining_steps == 0, tuple(fills))

    def step_discrete(self, action_index: int):
        result = self.step(ACTIONS[action_index])
        return result.observation, result.reward, result.done


def run_episode(policy, day_slice: Sequence[LobSnapshot], meta: DayMeta, config: EpisodeConfig) -> EpisodeRecord:
    """Roll ``policy(observation, config) -> ExecAction`` through one slice."""
    env = ExecutionEnv(config)
    obs = env.reset(day_slice, meta)
    while True:
        result = env.step(policy(obs, config))
        obs = result.observation
        if result.done:
            return env.record


def twap_schedule(config: EpisodeConfig, remaining_steps: int) -> Fraction:
    return Fraction(config.target_volume * remaining_steps, config.horizon_steps)

"""Execution baselines, tabular Q-learning over aggregated contexts, and the backtest harness."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .env import (
    ACTIONS,
    EpisodeConfig,
    ExecAction,
    ExecutionEnv,
    Observation,
    PrivateState,
    run_episode,
    trading_cost,
)
from .features import BinConfig, LinearEncoder, encode_and_bin, encoder_from_json, encoder_to_json
from .lob import DayMeta, LobSnapshot

TWAP_ACTION = ExecAction(0, 1.0)


def twap_policy(state: PrivateState, config: EpisodeConfig) -> ExecAction:
    """Equal slices quoted at the best ask; the final sweep handles any remainder."""
    return TWAP_ACTION


def momentum_policy(state: PrivateState, recent_return: float, config: EpisodeConfig) -> ExecAction:
    """Sell more after the mid has risen, less after it has fallen."""
    if recent_return > 0:
        return ExecAction(0, 1.5)
    if recent_return < 0:
        return ExecAction(0, 0.5)
    return TWAP_ACTION


def twap_agent(obs: Observation, config: EpisodeConfig) -> ExecAction:
    return twap_policy(obs.state, config)


def momentum_agent(obs: Observation, config: EpisodeConfig) -> ExecAction:
    # the first observation's window is a single snapshot, so its return is 0
    return momentum_policy(obs.state, obs.mid_return, config)


# -- discretization ----------------------------------------------------------

@dataclass(frozen=True)
class BucketConfig:
    steps_per_time_bucket: int = 5
    inventory_buckets: int = 10

    def __post_init__(self) -> None:
        if self.steps_per_time_bucket < 1 or self.inventory_buckets < 1:
            raise ValueError("bucket sizes must be positive")

    def time_buckets(self, horizon_steps: int) -> int:
        return -(-horizon_steps // self.steps_per_time_bucket)

    def time_bucket(self, state: PrivateState, horizon_steps: int) -> int:
        t = horizon_steps - state.remaining_steps
        return min(t // self.steps_per_time_bucket, self.time_buckets(horizon_steps) - 1)

    def inventory_bucket(self, state: PrivateState, target_volume: int) -> int:
        b = state.remaining_inventory * self.inventory_buckets // target_volume
        return min(int(b), self.inventory_buckets - 1)


@dataclass(frozen=True)
class ExecutionDiscretizer:
    """Maps an observation to (latent id, time bucket, inventory bucket)."""

    encoder: LinearEncoder
    bins: BinConfig
    config: EpisodeConfig
    buckets: BucketConfig = BucketConfig()

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.bins.n_ids, self.buckets.time_buckets(self.config.horizon_steps), self.buckets.inventory_buckets)

    def __call__(self, obs: Observation) -> tuple[int, int, int]:
        return (
            encode_and_bin(self.encoder, obs.context, self.bins),
            self.buckets.time_bucket(obs.state, self.config.horizon_steps),
            self.buckets.inventory_bucket(obs.state, self.config.target_volume),
        )


# -- Q-learning --------------------------------------------------------------

@dataclass(frozen=True)
class QSchedule:
    """Step size per (cell, action) after its n-th visit, and a linearly decaying epsilon.

    With ``lr_horizon`` H set the step is ``(1+H)/(H+n)`` (rescaled linear);
    otherwise ``1/(1+n)^lr_power``.
    """

    lr_power: float = 0.8
    lr_horizon: Optional[float] = None
    epsilon_start: float = 0.3
    epsilon_end: float = 0.05
    optimistic: bool = False
    # rewards are affinely mapped from reward_bounds into [0, r_max] and clipped
    reward_bounds: tuple[float, float] = (0.0, 1.0)
    r_max: float = 1.0
    max_steps: Optional[int] = None

    def __post_init__(self) -> None:
        lo, hi = self.reward_bounds
        if not hi > lo:
            raise ValueError("reward_bounds must be increasing")
        if not 0 <= self.epsilon_end <= 1 or not 0 <= self.epsilon_start <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.lr_horizon is not None and self.lr_horizon < 0:
            raise ValueError("lr_horizon must be non-negative")
        if self.r_max <= 0 or not 0.5 < self.lr_power <= 1:
            raise ValueError("need r_max > 0 and lr_power in (0.5, 1]")

    def epsilon(self, episode: int, episodes: int) -> float:
        frac = episode / max(1, episodes - 1)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac

    def learning_rate(self, n: int) -> float:
        if self.lr_horizon is not None:
            return (1 + self.lr_horizon) / (self.lr_horizon + n)
        return 1.0 / (1 + n) ** self.lr_power

    def scale_reward(self, r: float) -> float:
        lo, hi = self.reward_bounds
        return min(max((r - lo) / (hi - lo), 0.0), 1.0) * self.r_max


def _greedy(q: np.ndarray, visits: np.ndarray) -> int:
    """Argmax; ties go to the least-visited action, then the lowest index."""
    best = np.flatnonzero(q == q.max())
    if best.size == 1:
        return int(best[0])
    return int(best[np.argmin(visits[best])])


@dataclass(frozen=True)
class TabularQAgent:
    """Greedy policy over a learned table ``Q[cell..., action]``."""

    q: np.ndarray
    visits: np.ndarray
    discretize: Callable
    gamma: float
    schedule: QSchedule = QSchedule()

    @property
    def q_max(self) -> float:
        return self.schedule.r_max / (1 - self.gamma)

    def action_index(self, obs) -> int:
        cell = self.discretize(obs)
        return _greedy(self.q[cell], self.visits[cell])

    def __call__(self, obs, config: Optional[EpisodeConfig] = None) -> ExecAction:
        return ACTIONS[self.action_index(obs)]


def tabular_q_learn(
    env_factory: Callable,
    discretize: Callable,
    table_shape: Sequence[int],
    n_actions: int,
    gamma: float,
    episodes: int,
    seed: int,
    schedule: QSchedule = QSchedule(),
) -> TabularQAgent:
    """Epsilon-greedy Q-learning.

    ``env_factory(rng)`` returns ``(env, first_observation)``; the env exposes
    ``step_discrete(a) -> (observation, reward, done)``. Training is
    single-threaded and the returned agent holds copies of the tables.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    shape = tuple(table_shape) + (n_actions,)
    q_max = schedule.r_max / (1 - gamma)
    q = np.full(shape, q_max if schedule.optimistic else 0.0)
    visits = np.zeros(shape, dtype=np.int64)
    for ep in range(episodes):
        eps = schedule.epsilon(ep, episodes)
        env, obs = env_factory(rng)
        cell = discretize(obs)
        steps = 0
        while True:
            if rng.random() < eps:
                a = int(rng.integers(n_actions))
            else:
                a = _greedy(q[cell], visits[cell])
            obs, reward, done = env.step_discrete(a)
            steps += 1
            idx = cell + (a,)
            visits[idx] += 1
            eta = schedule.learning_rate(int(visits[idx]))
            r = schedule.scale_reward(reward)
            next_cell = None if done else discretize(obs)
            target = r if done else r + gamma * q[next_cell].max()
            q[idx] = min(max(q[idx] + eta * (target - q[idx]), 0.0), q_max)
            if done or (schedule.max_steps is not None and steps >= schedule.max_steps):
                break
            cell = next_cell
    assert np.all((q >= 0) & (q <= q_max))
    return TabularQAgent(q.copy(), visits.copy(), discretize, gamma, schedule)


def execution_env_factory(slices: Sequence[tuple[Sequence[LobSnapshot], DayMeta]], config: EpisodeConfig):
    """Uniformly pick a training slice per episode."""
    if not slices:
        raise ValueError("no training slices")

    def make(rng: np.random.Generator):
        day_slice, meta = slices[int(rng.integers(len(slices)))]
        env = ExecutionEnv(config)
        return env, env.reset(day_slice, meta)

    return make


def train_execution_agent(
    slices: Sequence[tuple[Sequence[LobSnapshot], DayMeta]],
    discretizer: ExecutionDiscretizer,
    config: EpisodeConfig,
    episodes: int,
    seed: int,
    schedule: QSchedule = QSchedule(),
) -> TabularQAgent:
    return tabular_q_learn(
        execution_env_factory(slices, config),
        discretizer,
        discretizer.shape,
        len(ACTIONS),
        config.discount,
        episodes,
        seed,
        schedule,
    )


# -- backtest ----------------------------------------------------------------

def _worker_count(requested: Optional[int]) -> int:
    cap = os.environ.get("ORDC_EXEC_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


@dataclass
class BacktestReport:
    costs: dict[str, list[float]]
    train_split: str = "train"
    eval_split: str = "test"
    summary: dict = field(init=False)

    def __post_init__(self) -> None:
        self.summary = {}
        for name, cs in self.costs.items():
            arr = np.asarray(cs, dtype=float)
            self.summary[name] = {"mean": float(arr.mean()), "std": float(arr.std()), "n": int(arr.size)}

    @property
    def gap(self) -> float:
        return self.summary[self.eval_split]["mean"] - self.summary[self.train_split]["mean"]

    def rows(self) -> list[dict]:
        return [
            {"split": name, "episode_id": i, "cost_bp": repr(c)}
            for name, cs in self.costs.items()
            for i, c in enumerate(cs)
        ]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=("split", "episode_id", "cost_bp"))
            w.writeheader()
            w.writerows(self.rows())

    def summary_json(self) -> dict:
        return {
            "splits": self.summary,
            "train_split": self.train_split,
            "eval_split": self.eval_split,
            "gap": self.gap,
        }

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary_json(), indent=2))


def backtest(
    agent,
    splits: dict[str, Sequence[tuple[Sequence[LobSnapshot], DayMeta]]],
    config: EpisodeConfig,
    train_split: str = "train",
    eval_split: Optional[str] = None,
    workers: Optional[int] = 1,
) -> BacktestReport:
    """Roll ``agent(obs, config)`` once per slice of every split and collect trading costs."""
    if train_split not in splits:
        raise ValueError(f"missing split {train_split!r}")
    if eval_split is None:
        others = [s for s in splits if s != train_split]
        if not others:
            raise ValueError("need an evaluation split")
        eval_split = "test" if "test" in others else others[-1]
    for name, items in splits.items():
        if not items:
            raise ValueError(f"empty split {name!r}")

    def cost(item) -> float:
        return trading_cost(run_episode(agent, item[0], item[1], config))

    costs = {}
    n = _worker_count(workers)
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            for name, items in splits.items():
                costs[name] = list(pool.map(cost, items))
    else:
        for name, items in splits.items():
            costs[name] = [cost(it) for it in items]
    return BacktestReport(costs, train_split, eval_split)


def standard_error(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=float)
    return float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else math.inf


# -- persistence -------------------------------------------------------------

def save_tabular_agent(directory, agent: TabularQAgent) -> None:
    """Write ``q_table.npz`` and ``agent.json`` (encoder, bins, buckets, schedule)."""
    disc = agent.discretize
    if not isinstance(disc, ExecutionDiscretizer):
        raise ValueError("only execution agents can be saved")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.savez(d / "q_table.npz", q=agent.q, visits=agent.visits)
    doc = {
        "gamma": agent.gamma,
        "encoder": encoder_to_json(disc.encoder, disc.bins),
        "buckets": {
            "steps_per_time_bucket": disc.buckets.steps_per_time_bucket,
            "inventory_buckets": disc.buckets.inventory_buckets,
        },
        "schedule": {
            "lr_power": agent.schedule.lr_power,
            "lr_horizon": agent.schedule.lr_horizon,
            "epsilon_start": agent.schedule.epsilon_start,
            "epsilon_end": agent.schedule.epsilon_end,
            "optimistic": agent.schedule.optimistic,
            "reward_bounds": list(agent.schedule.reward_bounds),
            "r_max": agent.schedule.r_max,
            "max_steps": agent.schedule.max_steps,
        },
    }
    (d / "agent.json").write_text(json.dumps(doc, indent=2))


def load_tabular_agent(directory, config: EpisodeConfig) -> TabularQAgent:
    d = Path(directory)
    doc = json.loads((d / "agent.json").read_text())
    encoder, bins = encoder_from_json(doc["encoder"])
    if bins is None:
        raise ValueError("saved agent has no bin edges")
    sched = dict(doc["schedule"])
    sched["reward_bounds"] = tuple(sched["reward_bounds"])
    disc = ExecutionDiscretizer(encoder, bins, config, BucketConfig(**doc["buckets"]))
    tables = np.load(d / "q_table.npz")
    if tables["q"].shape != disc.shape + (len(ACTIONS),):
        raise ValueError("q table shape does not match the episode config")
    return TabularQAgent(tables["q"], tables["visits"], disc, float(doc["gamma"]), QSchedule(**sched))

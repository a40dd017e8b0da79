"""Single-price Brownian liquidation task.

Each episode is 61 prices: the agent sees the 30 increments up to p_30 and
splits one unit of inventory over t = 31..60. Reward is the discounted
execution value minus that of a uniform split, so uniform scores exactly 0.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

N_OBS = 30
N_EXEC = 30
GAMMA = math.exp(math.log(0.5) / 30)
DISCOUNTS = GAMMA ** np.arange(N_EXEC)
UNIFORM = np.full(N_EXEC, 1.0 / N_EXEC)


@dataclass(frozen=True)
class BrownianConfig:
    alpha: float
    sigma: float
    initial_price: float = 0.0  # price at t = 30, the last observed step

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class ToyEpisode:
    prices: np.ndarray

    @property
    def context(self) -> np.ndarray:
        return np.diff(self.prices[: N_OBS + 1])

    @property
    def exec_prices(self) -> np.ndarray:
        return self.prices[N_OBS + 1 :]


@dataclass
class ToyDataset:
    """Paths as a ``(n, 61)`` array with per-path config ids and split labels."""

    prices: np.ndarray
    config_ids: np.ndarray
    splits: np.ndarray
    configs: list[BrownianConfig] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.prices)

    @property
    def contexts(self) -> np.ndarray:
        return np.diff(self.prices[:, : N_OBS + 1], axis=1)

    @property
    def exec_prices(self) -> np.ndarray:
        return self.prices[:, N_OBS + 1 :]

    @property
    def episodes(self) -> list[ToyEpisode]:
        return [ToyEpisode(p) for p in self.prices]

    def split(self, name: str) -> "ToyDataset":
        mask = self.splits == name
        return ToyDataset(self.prices[mask], self.config_ids[mask], self.splits[mask], self.configs)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["split", "config_id"] + [f"p{t}" for t in range(N_OBS + N_EXEC + 1)])
            for s, c, row in zip(self.splits, self.config_ids, self.prices):
                w.writerow([s, int(c)] + [repr(float(v)) for v in row])
        Path(path).with_suffix(".configs.json").write_text(json.dumps([asdict(c) for c in self.configs]))

    @classmethod
    def read_csv(cls, path) -> "ToyDataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        cfg_path = Path(path).with_suffix(".configs.json")
        configs = [BrownianConfig(**c) for c in json.loads(cfg_path.read_text())] if cfg_path.exists() else []
        return cls(
            prices=np.array([[float(v) for v in r[2:]] for r in rows]),
            config_ids=np.array([int(r[1]) for r in rows]),
            splits=np.array([r[0] for r in rows]),
            configs=configs,
        )


def generate_paths(
    configs: Sequence[BrownianConfig],
    n_per_config: int,
    seed: int,
    eval_per_config: int = 0,
) -> ToyDataset:
    """``n_per_config`` train and ``eval_per_config`` eval paths per config; one RNG stream per config."""
    if n_per_config < 1:
        raise ValueError("n_per_config must be at least 1")
    prices, ids, splits = [], [], []
    streams = np.random.SeedSequence(seed).spawn(len(configs))
    for cid, (cfg, seq) in enumerate(zip(configs, streams)):
        rng = np.random.default_rng(seq)
        for split, n in (("train", n_per_config), ("eval", eval_per_config)):
            if n == 0:
                continue
            steps = cfg.alpha + cfg.sigma * rng.standard_normal((n, N_OBS + N_EXEC))
            path = np.concatenate([np.zeros((n, 1)), np.cumsum(steps, axis=1)], axis=1)
            path += cfg.initial_price - path[:, [N_OBS]]
            prices.append(path)
            ids += [cid] * n
            splits += [split] * n
    return ToyDataset(np.concatenate(prices), np.array(ids), np.array(splits), list(configs))


def check_allocation(allocation: np.ndarray) -> None:
    a = np.asarray(allocation)
    if a.shape[-1] != N_EXEC or np.any(a < 0) or np.any(np.abs(a.sum(axis=-1) - 1) > 1e-9):
        raise ValueError("allocation must be a non-negative 30-vector summing to 1")


def toy_rewards(exec_prices: np.ndarray, allocations: np.ndarray) -> np.ndarray:
    """Vectorized reward over rows of ``(n, 30)`` execution prices and allocations."""
    check_allocation(allocations)
    w = np.asarray(allocations) - UNIFORM
    return (w * DISCOUNTS * exec_prices).sum(axis=-1)


def toy_reward(episode: ToyEpisode, allocation) -> float:
    a = np.asarray(allocation, dtype=float)
    check_allocation(a)
    p = episode.exec_prices
    return float(np.dot(DISCOUNTS * a, p) - np.dot(DISCOUNTS, p) / N_EXEC)


def estimate_drift_vol(context) -> tuple[float, float]:
    c = np.asarray(context, dtype=float)
    return float(c.mean()), float(c.std())


# -- agents ------------------------------------------------------------------

TIME_RAMP = (np.arange(N_OBS + 1, N_OBS + N_EXEC + 1) - N_OBS) / N_OBS


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class AggregatedAgent:
    """Allocation driven only by the drift/volatility estimate of the context."""

    weights: np.ndarray

    def allocate(self, contexts: np.ndarray) -> np.ndarray:
        c = np.atleast_2d(contexts)
        alpha_hat = c.mean(axis=1, keepdims=True)
        sigma_hat = c.std(axis=1, keepdims=True)
        w0, w1, w2 = self.weights
        return softmax(w0 + w1 * alpha_hat * TIME_RAMP + w2 * sigma_hat * TIME_RAMP)


@dataclass(frozen=True)
class CEMConfig:
    population: int = 64
    elite_frac: float = 0.1
    iterations: int = 50
    init_std: float = 1.0
    # extra variance added after each refit, decaying linearly to 0
    extra_noise: float = 25.0
    seed: int = 0


def cross_entropy_search(fitness, dim: int, cfg: CEMConfig) -> np.ndarray:
    """Maximize ``fitness(w)`` with a diagonal-Gaussian cross-entropy method.

    The added noise keeps the sampling distribution from collapsing before
    the mean has travelled far from its N(0, 1) start.
    """
    rng = np.random.default_rng(cfg.seed)
    mean = np.zeros(dim)
    std = np.full(dim, cfg.init_std)
    n_elite = max(1, int(round(cfg.population * cfg.elite_frac)))
    for i in range(cfg.iterations):
        pop = mean + std * rng.standard_normal((cfg.population, dim))
        scores = np.array([fitness(w) for w in pop])
        elite = pop[np.argsort(scores, kind="stable")[-n_elite:]]
        mean = elite.mean(axis=0)
        std = np.sqrt(elite.var(axis=0) + cfg.extra_noise * (1 - (i + 1) / cfg.iterations))
    return mean


def train_aggregated_agent(train: ToyDataset, cem: CEMConfig = CEMConfig()) -> AggregatedAgent:
    if len(train) == 0:
        raise ValueError("empty training set")
    contexts, prices = train.contexts, train.exec_prices

    def fitness(w):
        return float(toy_rewards(prices, AggregatedAgent(w).allocate(contexts)).mean())

    return AggregatedAgent(cross_entropy_search(fitness, 3, cem))


@dataclass
class MemorizingAgent:
    """Nearest stored training context, then sell everything at that path's best discounted price."""

    contexts: np.ndarray
    peak_steps: np.ndarray  # index into 31..60

    def allocate(self, contexts: np.ndarray) -> np.ndarray:
        c = np.atleast_2d(contexts)
        d2 = (c**2).sum(1)[:, None] - 2 * c @ self.contexts.T + (self.contexts**2).sum(1)[None, :]
        nearest = np.argmin(d2, axis=1)
        out = np.zeros((len(c), N_EXEC))
        out[np.arange(len(c)), self.peak_steps[nearest]] = 1.0
        return out


def train_memorizing_baseline(train: ToyDataset) -> MemorizingAgent:
    if len(train) == 0:
        raise ValueError("empty training set")
    # np.argmax returns the first maximum, so ties go to the earliest step
    peaks = np.argmax(DISCOUNTS * train.exec_prices, axis=1)
    return MemorizingAgent(train.contexts.copy(), peaks)


class UniformAgent:
    def allocate(self, contexts: np.ndarray) -> np.ndarray:
        return np.tile(UNIFORM, (len(np.atleast_2d(contexts)), 1))


@dataclass(frozen=True)
class GapReport:
    train_mean: float
    train_std: float
    eval_mean: float
    eval_std: float
    n_train: int
    n_eval: int
    seed: Optional[int] = None

    @property
    def gap(self) -> float:
        return self.train_mean - self.eval_mean


def evaluate_gap(agent, dataset: ToyDataset, seed: Optional[int] = None) -> GapReport:
    train, ev = dataset.split("train"), dataset.split("eval")
    if len(train) == 0 or len(ev) == 0:
        raise ValueError("both splits must be non-empty")
    r_train = toy_rewards(train.exec_prices, agent.allocate(train.contexts))
    r_eval = toy_rewards(ev.exec_prices, agent.allocate(ev.contexts))
    return GapReport(
        float(r_train.mean()), float(r_train.std()), float(r_eval.mean()), float(r_eval.std()), len(train), len(ev), seed
    )


DEFAULT_GRID = tuple(BrownianConfig(a, 1.5) for a in (-1.0, -0.5, 0.0, 0.5, 1.0))


def overfitting_comparison(
    train_size: int = 1000,
    eval_size: int = 1000,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    configs: Sequence[BrownianConfig] = DEFAULT_GRID,
    cem: CEMConfig = CEMConfig(),
) -> list[dict]:
    """Rows of (agent, seed, train/eval mean and std, gap) for both learners on fresh data per seed."""
    rows = []
    per_train = max(1, train_size // len(configs))
    per_eval = max(1, eval_size // len(configs))
    for seed in seeds:
        data_seed, cem_seed = np.random.SeedSequence(seed).generate_state(2)
        ds = generate_paths(configs, per_train, int(data_seed), eval_per_config=per_eval)
        agents = {
            "aggregated": train_aggregated_agent(ds.split("train"), replace(cem, seed=int(cem_seed))),
            "memorizing": train_memorizing_baseline(ds.split("train")),
        }
        for name, agent in agents.items():
            rep = evaluate_gap(agent, ds, seed)
            rows.append(
                {
                    "agent": name,
                    "seed": seed,
                    "train_mean": rep.train_mean,
                    "train_std": rep.train_std,
                    "eval_mean": rep.eval_mean,
                    "eval_std": rep.eval_std,
                    "gap": rep.gap,
                }
            )
    return rows


REPORT_COLUMNS = ("agent", "split", "seed", "mean", "std", "gap")


def report_rows(comparison: list[dict]) -> list[dict]:
    """Long format: one row per (agent, split, seed)."""
    out = []
    for r in comparison:
        for split in ("train", "eval"):
            out.append(
                {
                    "agent": r["agent"],
                    "split": split,
                    "seed": r["seed"],
                    "mean": r[f"{split}_mean"],
                    "std": r[f"{split}_std"],
                    "gap": r["gap"],
                }
            )
    return out

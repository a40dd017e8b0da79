from decimal import Decimal
from fractions import Fraction

import numpy as np
import pytest

from conftest import book
from ordc_exec.agents import (
    BacktestReport,
    BucketConfig,
    ExecutionDiscretizer,
    QSchedule,
    backtest,
    load_tabular_agent,
    momentum_agent,
    momentum_policy,
    save_tabular_agent,
    standard_error,
    tabular_q_learn,
    train_execution_agent,
    twap_agent,
    twap_policy,
)
from ordc_exec.data import SyntheticDayConfig, synthetic_splits
from ordc_exec.env import ACTIONS, EpisodeConfig, ExecAction, ExecutionEnv, PrivateState, run_episode, trading_cost
from ordc_exec.features import build_training_set, fit_bins, fit_linear_encoder
from ordc_exec.lob import DayMeta
from ordc_exec.theory import OrdcModel, build_hard_instance, ordc_env_factory, value_iteration

META = DayMeta("20.00", 0.2, 1_000_000)


def frozen_slice(n=601, spread_ticks=1, lift=0):
    high = Decimal("20.00") + (spread_ticks + lift) * Decimal("0.01")
    return [book("20.00", spread_ticks, 3.0 * i, 1000, str(high), "20.00", 1) for i in range(n)]


def test_twap_quotes_equal_slices():
    cfg = EpisodeConfig(target_volume=3000)
    rec = run_episode(twap_agent, frozen_slice(), META, cfg)
    quoted = [s.quoted_volume for s in rec.steps]
    assert quoted[:-1] == [100] * 29
    for t in range(1, 30):
        assert sum(quoted[:t]) == t * Fraction(3000, 30)
    assert twap_policy(PrivateState(30, 3000), cfg) == ExecAction(0, 1.0)


def test_twap_cost_on_constant_book_is_half_spread():
    cfg = EpisodeConfig(target_volume=3000)
    rec = run_episode(twap_agent, frozen_slice(lift=1), META, cfg)
    assert trading_cost(rec) == pytest.approx(-float(Fraction(1, 200) / Fraction("20.005") * 10_000), abs=1e-9)


def test_momentum_rule():
    cfg = EpisodeConfig()
    s = PrivateState(10, 1000)
    assert momentum_policy(s, 0.01, cfg).volume_multiplier == 1.5
    assert momentum_policy(s, -0.01, cfg).volume_multiplier == 0.5
    assert momentum_policy(s, 0.0, cfg) == twap_policy(s, cfg)
    assert all(momentum_policy(s, r, cfg).price_offset_bp == 0 for r in (-1, 0, 1))


def test_momentum_is_twap_on_flat_market():
    cfg = EpisodeConfig(target_volume=3000)
    a = run_episode(momentum_agent, frozen_slice(lift=1), META, cfg)
    b = run_episode(twap_agent, frozen_slice(lift=1), META, cfg)
    assert a.rows() == b.rows()


def test_bucket_shapes():
    b = BucketConfig()
    assert b.time_buckets(30) == 6
    assert b.time_bucket(PrivateState(30, 0), 30) == 0 and b.time_bucket(PrivateState(1, 0), 30) == 5
    assert b.inventory_bucket(PrivateState(1, 10_000), 10_000) == 9
    assert b.inventory_bucket(PrivateState(1, 999), 10_000) == 0
    with pytest.raises(ValueError):
        BucketConfig(0, 1)


def test_q_learning_matches_value_iteration_on_hard_instance():
    model = build_hard_instance(2, 0.1, 0.1, [0, 1], gamma=0.8, num_actions=2)
    q_star = value_iteration(model, tol=1e-12)
    agent = tabular_q_learn(
        ordc_env_factory(model), lambda o: o, (6, 1), 2, 0.8, 16_000, seed=0,
        schedule=QSchedule(lr_horizon=5, max_steps=6),
    )
    assert np.max(np.abs(agent.q - q_star)) < 0.05


def test_zero_reward_env_keeps_q_at_zero():
    base = build_hard_instance(1, 0.5, 0.2, [1], num_actions=3)
    model = OrdcModel(base.P_x, base.P_s, np.zeros_like(base.r), base.gamma)
    agent = tabular_q_learn(ordc_env_factory(model), lambda o: o, (3, 1), 3, 0.9, 200, seed=1,
                            schedule=QSchedule(max_steps=10))
    assert np.all(agent.q == 0)


def test_optimistic_greedy_tries_every_action():
    model = build_hard_instance(2, 0.3, 0.3, [0, 1], num_actions=4)
    sched = QSchedule(epsilon_start=0.0, epsilon_end=0.0, optimistic=True, max_steps=10)
    agent = tabular_q_learn(ordc_env_factory(model), lambda o: o, (6, 1), 4, 0.9, 300, seed=2, schedule=sched)
    visited = agent.visits.sum(axis=-1) > 0
    assert visited.any()
    assert np.all(agent.visits[visited] >= 1)


def test_q_table_bounds_hold_with_clipping():
    model = build_hard_instance(2, 0.5, 0.3, [0, 1], num_actions=2)
    sched = QSchedule(reward_bounds=(0.0, 0.5), r_max=1.0, optimistic=True, max_steps=8)
    agent = tabular_q_learn(ordc_env_factory(model), lambda o: o, (6, 1), 2, 0.9, 300, seed=3, schedule=sched)
    assert np.all(agent.q >= 0) and np.all(agent.q <= agent.q_max)


def test_schedule_validation():
    with pytest.raises(ValueError):
        QSchedule(reward_bounds=(1.0, 0.0))
    with pytest.raises(ValueError):
        QSchedule(epsilon_start=1.5)
    with pytest.raises(ValueError):
        QSchedule(lr_power=0.3)
    s = QSchedule(reward_bounds=(-1.0, 1.0), r_max=2.0)
    assert s.scale_reward(-5) == 0 and s.scale_reward(0) == 1.0 and s.scale_reward(5) == 2.0
    assert QSchedule(lr_horizon=9).learning_rate(1) == 1.0


@pytest.fixture(scope="module")
def splits():
    return synthetic_splits(SyntheticDayConfig(n_snapshots=1202), {"train": 3, "test": 2}, 601, seed=7)


def _discretizer(splits, cfg):
    xs, ys = zip(*(build_training_set(s, m, cfg.snapshots_per_step, cfg.horizon_steps) for s, m in splits["train"]))
    X, Y = np.concatenate(xs), np.concatenate(ys)
    enc = fit_linear_encoder(X, Y, 1.0, standardize=True)
    return ExecutionDiscretizer(enc, fit_bins(enc.predict(X), stats=[0, 3]), cfg)


def test_execution_agent_round_trip(tmp_path, splits):
    cfg = EpisodeConfig.from_meta(splits["train"][0][1], reward_volume_fraction=True)
    disc = _discretizer(splits, cfg)
    assert disc.shape == (9, 6, 10)
    agent = train_execution_agent(splits["train"], disc, cfg, 20, seed=0, schedule=QSchedule(reward_bounds=(-0.05, 0.05)))
    assert agent.q.shape == (9, 6, 10, 132)
    env = ExecutionEnv(cfg)
    obs = env.reset(*splits["test"][0])
    assert agent(obs, cfg) in ACTIONS
    save_tabular_agent(tmp_path / "m", agent)
    back = load_tabular_agent(tmp_path / "m", cfg)
    assert np.array_equal(back.q, agent.q)
    r1 = backtest(agent, splits, cfg)
    r2 = backtest(back, splits, cfg)
    assert r1.costs == r2.costs


def test_save_requires_execution_discretizer(tmp_path):
    model = build_hard_instance(1, 0.5, 0.2, [1])
    agent = tabular_q_learn(ordc_env_factory(model), lambda o: o, (3, 1), 1, 0.9, 5, seed=0,
                            schedule=QSchedule(max_steps=3))
    with pytest.raises(ValueError):
        save_tabular_agent(tmp_path, agent)


def test_backtest_report_arithmetic(splits, tmp_path):
    cfg = EpisodeConfig.from_meta(splits["train"][0][1])
    rep = backtest(twap_agent, splits, cfg)
    assert rep.gap == rep.summary["test"]["mean"] - rep.summary["train"]["mean"]
    assert rep.summary["train"]["n"] == 6 and rep.summary["test"]["n"] == 4
    rep.write_csv(tmp_path / "bt.csv")
    rep.write_summary(tmp_path / "s.json")
    lines = (tmp_path / "bt.csv").read_text().splitlines()
    assert lines[0] == "split,episode_id,cost_bp" and len(lines) == 11
    again = backtest(twap_agent, splits, cfg, workers=4)
    assert again.costs == rep.costs


def test_backtest_rejects_empty_split(splits):
    cfg = EpisodeConfig.from_meta(splits["train"][0][1])
    with pytest.raises(ValueError, match="empty split"):
        backtest(twap_agent, {"train": splits["train"], "test": []}, cfg)
    with pytest.raises(ValueError):
        backtest(twap_agent, {"train": splits["train"]}, cfg)


def test_gap_in_report_is_eval_minus_train():
    rep = BacktestReport({"train": [1.0, 3.0], "valid": [0.0], "test": [5.0, 7.0]})
    assert rep.gap == 6.0 - 2.0
    assert rep.summary_json()["gap"] == rep.gap


@pytest.mark.slow
def test_same_distribution_gap_vanishes():
    sp = synthetic_splits(SyntheticDayConfig(), {"train": 72, "test": 72}, 601, seed=11)
    cfg = EpisodeConfig.from_meta(sp["train"][0][1])
    assert len(sp["train"]) + len(sp["test"]) >= 1000
    rep = backtest(twap_agent, sp, cfg, workers=4)
    se = np.hypot(standard_error(rep.costs["train"]), standard_error(rep.costs["test"]))
    assert abs(rep.gap) <= 2 * se

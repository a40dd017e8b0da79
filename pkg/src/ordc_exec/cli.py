"""Command-line entry point: ``ordc-exec <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Every run writes ``run.json`` next to its outputs with the resolved config
and the per-component seeds. Component seeds derive from the root seed as
``SeedSequence([root, crc32(component)]).generate_state(1)[0]``.

Exit codes: 0 success, 1 usage or config error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import zlib
from dataclasses import asdict
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import agents, data, env, features, theory, toy

log = logging.getLogger("ordc_exec")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(Exception):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EpisodeSection(_Section):
    horizon_steps: int = 30
    decision_interval: int = 60
    snapshot_interval: int = 3
    target_fraction: float = 0.005
    mo_delay: float = 3.0
    beta: float = 0.1
    discount: float = 0.99
    fill_cap_ratio: float = 0.5
    reward_price: Literal["normalized", "raw"] = "normalized"
    reward_volume_fraction: bool = True


class DataSection(_Section):
    data_dir: Optional[str] = None
    days: dict[str, int] = Field(default_factory=lambda: {"train": 4, "test": 2})
    slices_per_day: Optional[int] = None
    n_snapshots: int = 4800
    initial_mid: float = 20.0
    mid_volatility_ticks: float = 0.5
    spread_mean_ticks: float = 1.0
    spread_noise_ticks: float = 0.0
    trade_intensity: float = 300.0


class FeatureSection(_Section):
    ridge_lambda: float = 1.0
    standardize: bool = True
    quantiles: list[float] = Field(default_factory=lambda: [1 / 3, 2 / 3])
    binned_stats: list[int] = Field(default_factory=lambda: [0, 3])


class TabularSection(_Section):
    episodes: int = 200
    lr_power: float = 0.8
    lr_horizon: Optional[float] = None
    epsilon_start: float = 0.3
    epsilon_end: float = 0.05
    optimistic: bool = False
    reward_bounds: tuple[float, float] = (-0.05, 0.05)
    steps_per_time_bucket: int = 5
    inventory_buckets: int = 10


class BacktestSection(_Section):
    agent: Literal["twap", "momentum", "tabular"] = "twap"
    model_dir: Optional[str] = None
    train_split: str = "train"
    eval_split: Optional[str] = None
    workers: Optional[int] = None


class ToySection(_Section):
    train_size: int = 1000
    eval_size: int = 1000
    seeds: int = 5
    alphas: list[float] = Field(default_factory=lambda: [-1.0, -0.5, 0.0, 0.5, 1.0])
    sigma: float = 1.5
    population: int = 64
    elite_frac: float = 0.1
    iterations: int = 50
    extra_noise: float = 25.0


class TheorySection(_Section):
    K: int = 4
    p: float = 0.5
    alpha: float = 0.3
    gamma: float = 0.9
    delta: float = 0.1
    n_grid: list[int] = Field(default_factory=lambda: [100, 1000, 10_000, 100_000])
    trials: int = 50
    lemma_trials: int = 100
    max_dim: int = 6
    M: int = 20
    rollout_horizon: int = 200
    estimator_trials: int = 500


class ExperimentConfig(_Section):
    seed: int = Field(default=0, ge=0, lt=2**64)
    out: str = "out"
    episode: EpisodeSection = Field(default_factory=EpisodeSection)
    data: DataSection = Field(default_factory=DataSection)
    features: FeatureSection = Field(default_factory=FeatureSection)
    tabular: TabularSection = Field(default_factory=TabularSection)
    backtest: BacktestSection = Field(default_factory=BacktestSection)
    toy: ToySection = Field(default_factory=ToySection)
    theory: TheorySection = Field(default_factory=TheorySection)


def component_seed(root: int, name: str) -> int:
    seq = np.random.SeedSequence([root, zlib.crc32(name.encode())])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


COMPONENTS = ("data", "tabular", "toy", "theory")


# -- argument parsing --------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="root seed (u64)")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ordc-exec", description="LOB execution simulator and ORDC experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write synthetic LOB days or toy paths")
    _common(p)
    p.add_argument("--kind", choices=("lob", "toy"), default="lob")

    p = sub.add_parser("features", help="fit the context encoder and bins")
    _common(p)
    p.add_argument("--data-dir")

    p = sub.add_parser("train-tabular", help="train a tabular Q agent on the train split")
    _common(p)
    p.add_argument("--data-dir")
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("backtest", help="roll an agent over every split")
    _common(p)
    p.add_argument("--data-dir")
    p.add_argument("--agent", choices=("twap", "momentum", "tabular"))
    p.add_argument("--model-dir")

    p = sub.add_parser("toy", help="aggregated vs memorizing agents on the Brownian task")
    _common(p)
    p.add_argument("--train-size", type=int)
    p.add_argument("--eval-size", type=int)
    p.add_argument("--seeds", type=int)

    p = sub.add_parser("theory", help="hard instance, lemma check, sample complexity, estimators")
    _common(p)
    p.add_argument("--hard-instance", action="store_true")
    p.add_argument("--check-lemma", action="store_true")
    p.add_argument("--sample-complexity", action="store_true")
    p.add_argument("--estimators", action="store_true")
    p.add_argument("--trials", type=int)
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out"] = args.out
    overrides = {
        "data": {"data_dir": getattr(args, "data_dir", None)},
        "tabular": {"episodes": getattr(args, "episodes", None)},
        "backtest": {"agent": getattr(args, "agent", None), "model_dir": getattr(args, "model_dir", None)},
        "toy": {
            "train_size": getattr(args, "train_size", None),
            "eval_size": getattr(args, "eval_size", None),
            "seeds": getattr(args, "seeds", None),
        },
    }
    if args.command == "theory" and args.trials is not None:
        overrides["theory"] = {"trials": args.trials, "lemma_trials": args.trials, "estimator_trials": args.trials}
    merged = cfg.model_dump()
    merged.update(updates)
    for section, values in overrides.items():
        merged[section].update({k: v for k, v in values.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


# -- shared plumbing ---------------------------------------------------------

def _write_csv(path: Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        w.writerows(rows)


def _day_config(cfg: ExperimentConfig) -> data.SyntheticDayConfig:
    d = cfg.data
    return data.SyntheticDayConfig(
        initial_mid=d.initial_mid,
        mid_volatility_ticks=d.mid_volatility_ticks,
        spread_mean_ticks=d.spread_mean_ticks,
        spread_noise_ticks=d.spread_noise_ticks,
        trade_intensity=d.trade_intensity,
        n_snapshots=d.n_snapshots,
        snapshot_interval=float(cfg.episode.snapshot_interval),
    )


def _slice_length(cfg: ExperimentConfig) -> int:
    e = cfg.episode
    return e.horizon_steps * (e.decision_interval // e.snapshot_interval) + 1


def _splits(cfg: ExperimentConfig, seeds: dict) -> dict:
    if cfg.data.data_dir is None:
        return data.synthetic_splits(
            _day_config(cfg), cfg.data.days, _slice_length(cfg), seeds["data"], cfg.data.slices_per_day
        )
    root = Path(cfg.data.data_dir)
    out = {}
    for split_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        items = []
        for f in sorted(split_dir.glob("*.csv")):
            snaps, meta = data.load_snapshot_day(f)
            for sl in data.split_day(snaps, _slice_length(cfg))[: cfg.data.slices_per_day]:
                items.append((sl, meta))
        out[split_dir.name] = items
    if not out:
        raise ConfigError(f"no split directories under {root}")
    return out


def _episode_config(cfg: ExperimentConfig, splits: dict) -> env.EpisodeConfig:
    e = cfg.episode
    first = next(iter(splits.values()))
    if not first:
        raise ValueError("empty split")
    return env.EpisodeConfig.from_meta(
        first[0][1],
        fraction=e.target_fraction,
        horizon_steps=e.horizon_steps,
        decision_interval=e.decision_interval,
        snapshot_interval=e.snapshot_interval,
        mo_delay=e.mo_delay,
        beta=e.beta,
        discount=e.discount,
        fill_cap_ratio=e.fill_cap_ratio,
        reward_price=e.reward_price,
        reward_volume_fraction=e.reward_volume_fraction,
    )


def _fit_features(cfg: ExperimentConfig, train, ep: env.EpisodeConfig):
    xs, ys = [], []
    for sl, meta in train:
        x, y = features.build_training_set(sl, meta, ep.snapshots_per_step, ep.horizon_steps)
        xs.append(x)
        ys.append(y)
    X, Y = np.concatenate(xs), np.concatenate(ys)
    f = cfg.features
    enc = features.fit_linear_encoder(X, Y, f.ridge_lambda, standardize=f.standardize)
    bins = features.fit_bins(enc.predict(X), f.quantiles, f.binned_stats)
    return enc, bins, X, Y


# -- subcommands -------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig, args, out: Path, seeds: dict) -> dict:
    if args.kind == "toy":
        t = cfg.toy
        configs = [toy.BrownianConfig(a, t.sigma) for a in t.alphas]
        ds = toy.generate_paths(
            configs, max(1, t.train_size // len(configs)), seeds["toy"], max(1, t.eval_size // len(configs))
        )
        ds.write_csv(out / "toy.csv")
        return {"paths": len(ds)}
    root = np.random.SeedSequence(seeds["data"])
    base = _day_config(cfg)
    counts = {}
    for (name, n_days), child in zip(cfg.data.days.items(), root.spawn(len(cfg.data.days))):
        d = out / "data" / name
        d.mkdir(parents=True, exist_ok=True)
        for i, day_seq in enumerate(child.spawn(n_days)):
            snaps, meta = data.generate_synthetic_day(
                data.SyntheticDayConfig(**{**asdict(base), "seed": int(day_seq.generate_state(1)[0])})
            )
            data.write_snapshot_day(d / f"day_{i:03d}.csv", snaps, meta)
        counts[name] = n_days
    return {"days": counts}


def cmd_features(cfg: ExperimentConfig, args, out: Path, seeds: dict) -> dict:
    splits = _splits(cfg, seeds)
    ep = _episode_config(cfg, splits)
    enc, bins, X, Y = _fit_features(cfg, splits["train"], ep)
    features.save_encoder(out / "encoder.json", enc, bins)
    pred = enc.predict(X)
    rows = []
    for i, name in enumerate(features.STAT_NAMES):
        resid = Y[:, i] - pred[:, i]
        ss = float(((Y[:, i] - Y[:, i].mean()) ** 2).sum())
        rows.append(
            {
                "stat": name,
                "target_mean": float(Y[:, i].mean()),
                "target_std": float(Y[:, i].std()),
                "r2": 1 - float((resid**2).sum()) / ss if ss > 0 else float("nan"),
                "bins": len(bins.edges[i]) + 1,
            }
        )
    _write_csv(out / "stats.csv", rows, ("stat", "target_mean", "target_std", "r2", "bins"))
    ids = bins.cell_to_id(bins.cells(pred))
    counts = np.bincount(ids, minlength=bins.n_ids)
    _write_csv(
        out / "latent_counts.csv",
        [{"latent_id": i, "count": int(c)} for i, c in enumerate(counts)],
        ("latent_id", "count"),
    )
    return {"samples": int(len(X)), "latent_ids": bins.n_ids}


def _schedule(cfg: ExperimentConfig) -> agents.QSchedule:
    t = cfg.tabular
    return agents.QSchedule(
        lr_power=t.lr_power,
        lr_horizon=t.lr_horizon,
        epsilon_start=t.epsilon_start,
        epsilon_end=t.epsilon_end,
        optimistic=t.optimistic,
        reward_bounds=tuple(t.reward_bounds),
    )


def _write_report(report: agents.BacktestReport, out: Path) -> dict:
    report.write_csv(out / "backtest.csv")
    report.write_summary(out / "summary.json")
    return report.summary_json()


def cmd_train_tabular(cfg: ExperimentConfig, args, out: Path, seeds: dict) -> dict:
    splits = _splits(cfg, seeds)
    ep = _episode_config(cfg, splits)
    enc, bins, _, _ = _fit_features(cfg, splits["train"], ep)
    t = cfg.tabular
    disc = agents.ExecutionDiscretizer(enc, bins, ep, agents.BucketConfig(t.steps_per_time_bucket, t.inventory_buckets))
    agent = agents.train_execution_agent(splits["train"], disc, ep, t.episodes, seeds["tabular"], _schedule(cfg))
    agents.save_tabular_agent(out / "model", agent)
    b = cfg.backtest
    report = agents.backtest(agent, splits, ep, b.train_split, b.eval_split, b.workers)
    return _write_report(report, out)


def cmd_backtest(cfg: ExperimentConfig, args, out: Path, seeds: dict) -> dict:
    splits = _splits(cfg, seeds)
    ep = _episode_config(cfg, splits)
    b = cfg.backtest
    if b.agent == "tabular":
        if b.model_dir is None:
            raise ConfigError("the tabular agent needs --model-dir")
        agent = agents.load_tabular_agent(b.model_dir, ep)
    else:
        agent = {"twap": agents.twap_agent, "momentum": agents.momentum_agent}[b.agent]
    report = agents.backtest(agent, splits, ep, b.train_split, b.eval_split, b.workers)
    return _write_report(report, out)


def cmd_toy(cfg: ExperimentConfig, args, out: Path, seeds: dict) -> dict:
    t = cfg.toy
    run_seeds = [int(s) for s in np.random.SeedSequence(seeds["toy"]).generate_state(t.seeds, dtype=np.uint32)]
    cem = toy.CEMConfig(population=t.population, elite_frac=t.elite_frac, iterations=t.iterations, extra_noise=t.extra_noise)
    comparison = toy.overfitting_comparison(
        t.train_size, t.eval_size, run_seeds, [toy.BrownianConfig(a, t.sigma) for a in t.alphas], cem
    )
    _write_csv(out / "toy_report.csv", toy.report_rows(comparison), toy.REPORT_COLUMNS)
    means = {}
    for name in ("aggregated", "memorizing"):
        rows = [r for r in comparison if r["agent"] == name]
        means[name] = {
            "eval_mean": float(np.mean([r["eval_mean"] for r in rows])),
            "gap": float(np.mean([r["gap"] for r in rows])),
        }
    return {"run_seeds": run_seeds, "means": means}


def cmd_theory(cfg: ExperimentConfig, args, out: Path, seeds: dict) -> dict:
    th = cfg.theory
    chosen = [args.hard_instance, args.check_lemma, args.sample_complexity, args.estimators]
    if not any(chosen):
        chosen = [True] * 4
    root = np.random.SeedSequence(seeds["theory"])
    s_hard, s_lemma, s_rate, s_est = (int(s.generate_state(1)[0]) for s in root.spawn(4))
    result = {}
    flags = [k % 2 for k in range(th.K)]

    if chosen[0]:
        model = theory.build_hard_instance(th.K, th.p, th.alpha, flags, th.gamma)
        q = theory.value_iteration(model)
        closed = theory.HardInstance(th.K, th.p, th.alpha, tuple(flags)).q_star_c0(th.gamma)
        rows = [
            {"chain": k, "flag": flags[k], "q_value_iteration": float(q[k, 0, 0]), "q_closed_form": float(closed[k])}
            for k in range(th.K)
        ]
        _write_csv(out / "hard_instance.csv", rows, ("chain", "flag", "q_value_iteration", "q_closed_form"))
        result["hard_instance_max_dev"] = max(abs(r["q_value_iteration"] - r["q_closed_form"]) for r in rows)

    if chosen[1]:
        rng = np.random.default_rng(s_lemma)
        rows = []
        for trial in range(th.lemma_trials):
            X, S, A = (int(v) for v in rng.integers(1, th.max_dim + 1, size=3))
            model = theory.random_model(rng, X, S, A)
            P_hat = rng.dirichlet(np.ones(X), size=X)
            joint, latent = theory.l1_factorization_check(model.P_x, P_hat, model.P_s)
            rows.append({"trial": trial, "X": X, "S": S, "A": A, "max_deviation": float(np.max(np.abs(joint - latent)))})
        _write_csv(out / "lemma.csv", rows, ("trial", "X", "S", "A", "max_deviation"))
        result["lemma_max_deviation"] = max(r["max_deviation"] for r in rows)

    if chosen[2]:
        model = theory.build_hard_instance(th.K, th.p, th.alpha, flags, th.gamma)
        sc = theory.sample_complexity_experiment(model, th.n_grid, th.trials, th.delta, s_rate)
        _write_csv(out / "sample_complexity.csv", sc.rows, ("N", "trial", "error", "bound"))
        _write_csv(out / "sample_complexity_summary.csv", sc.summary, ("N", "mean_error", "bound", "coverage"))
        result["slope"] = sc.slope
        result["constant"] = sc.constant

    if chosen[3]:
        model = theory.build_hard_instance(th.K, th.p, th.alpha, flags, th.gamma, num_states=2, num_actions=2)
        stats, single, pooled = theory.illustrative_estimators(
            model, theory.uniform_policy(model), (0, 0, 0), th.M, th.rollout_horizon, th.estimator_trials, s_est
        )
        _write_csv(
            out / "estimators.csv",
            [{"trial": i, "single": float(a), "pooled": float(b)} for i, (a, b) in enumerate(zip(single, pooled))],
            ("trial", "single", "pooled"),
        )
        result["variance_ratio"] = stats.variance_ratio
        result["M"] = th.M
    return result


COMMANDS = {
    "gen-data": cmd_gen_data,
    "features": cmd_features,
    "train-tabular": cmd_train_tabular,
    "backtest": cmd_backtest,
    "toy": cmd_toy,
    "theory": cmd_theory,
}


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seeds = {name: component_seed(cfg.seed, name) for name in COMPONENTS}
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        record = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
                  "config": cfg.model_dump(), "seeds": seeds}
        (out / "run.json").write_text(json.dumps(record, indent=2))
        result = COMMANDS[args.command](cfg, args, out, seeds)
        record["result"] = result
        (out / "run.json").write_text(json.dumps(record, indent=2, default=float))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure inside a run is a runtime error
        log.error("%s failed: %s", args.command, exc)
        return EXIT_RUNTIME
    log.info("%s done, outputs in %s", args.command, out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Tabular models with a latent context that evolves independently of the agent.

Dynamics factorize as ``P(x', s' | x, s, a) = P_x(x' | x) * P_s(s' | x, s, a)``.
This module builds the three-group chain family used for the lower bound,
plans in such models, estimates ``P_x`` from samples, and runs the Monte-Carlo
experiments that measure how plug-in planning error shrinks with data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

ROW_TOL = 1e-12


@dataclass(frozen=True)
class OrdcModel:
    """Arrays: ``P_x[x, x']``, ``P_s[x, s, a, s']``, ``r[x, s, a]``."""

    P_x: np.ndarray
    P_s: np.ndarray
    r: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        X = self.P_x.shape[0]
        if self.P_x.shape != (X, X):
            raise ValueError("P_x must be square")
        if self.P_s.ndim != 4 or self.P_s.shape[0] != X or self.P_s.shape[1] != self.P_s.shape[3]:
            raise ValueError("P_s must have shape (|X|, |S|, |A|, |S|)")
        if self.r.shape != self.P_s.shape[:3]:
            raise ValueError("r must have shape (|X|, |S|, |A|)")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        for name, P in (("P_x", self.P_x), ("P_s", self.P_s)):
            if np.any(P < 0) or np.max(np.abs(P.sum(axis=-1) - 1)) > ROW_TOL:
                raise ValueError(f"{name} rows must be probability vectors")
        if np.any(self.r < 0) or np.any(self.r > 1):
            raise ValueError("rewards must lie in [0, 1]")

    @property
    def num_latent(self) -> int:
        return self.P_x.shape[0]

    @property
    def num_states(self) -> int:
        return self.P_s.shape[1]

    @property
    def num_actions(self) -> int:
        return self.P_s.shape[2]

    def with_latent_transitions(self, P_x: np.ndarray) -> "OrdcModel":
        return OrdcModel(P_x, self.P_s, self.r, self.gamma)

    def joint_transitions(self) -> np.ndarray:
        """``P[x, s, a, x', s']`` from the factorized form."""
        return np.einsum("xy,xsaz->xsayz", self.P_x, self.P_s)


def random_model(rng: np.random.Generator, X: int, S: int, A: int, gamma: float = 0.9) -> OrdcModel:
    P_x = rng.dirichlet(np.ones(X), size=X)
    P_s = rng.dirichlet(np.ones(S), size=(X, S, A))
    return OrdcModel(P_x, P_s, rng.uniform(size=(X, S, A)), gamma)


# -- lower-bound family ------------------------------------------------------

@dataclass(frozen=True)
class HardInstance:
    """Three groups of ``K`` contexts: C0 -> C1 (self-loop w.p. p_M) -> C2 (absorbing).

    Context indices: C0 = ``0..K-1``, C1 = ``K..2K-1``, C2 = ``2K..3K-1``.
    """

    K: int
    p: float
    alpha: float
    flags: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be positive")
        if not 0 < self.p < self.p + self.alpha < 1:
            raise ValueError("need 0 < p < p + alpha < 1")
        object.__setattr__(self, "flags", tuple(int(bool(f)) for f in self.flags))
        if len(self.flags) != self.K:
            raise ValueError("need one flag per chain")

    @property
    def self_loop(self) -> np.ndarray:
        return np.where(np.asarray(self.flags) == 1, self.p + self.alpha, self.p)

    def q_star_c0(self, gamma: float) -> np.ndarray:
        return gamma / (1 - gamma * self.self_loop)


def build_hard_instance(
    K: int,
    p: float,
    alpha: float,
    flags: Sequence[int],
    gamma: float = 0.9,
    num_states: int = 1,
    num_actions: int = 1,
) -> OrdcModel:
    inst = HardInstance(K, p, alpha, tuple(flags))
    n = 3 * K
    P_x = np.zeros((n, n))
    for k, pm in enumerate(inst.self_loop):
        P_x[k, K + k] = 1.0
        P_x[K + k, K + k] = pm
        P_x[K + k, 2 * K + k] = 1.0 - pm
        P_x[2 * K + k, 2 * K + k] = 1.0
    # the agent's state never moves; reward depends on the context only
    P_s = np.broadcast_to(np.eye(num_states)[None, :, None, :], (n, num_states, num_actions, num_states)).copy()
    r = np.zeros((n, num_states, num_actions))
    r[K : 2 * K] = 1.0
    return OrdcModel(P_x, P_s, r, gamma)


# -- estimation --------------------------------------------------------------

def estimate_from_counts(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    totals = counts.sum(axis=1)
    empty = np.flatnonzero(totals == 0)
    if empty.size:
        raise ValueError(f"no samples for latent {int(empty[0])}")
    return counts / totals[:, None]


def estimate_latent_transitions(samples: Iterable[tuple[int, int]], num_latent: int) -> np.ndarray:
    """Count-based estimate ``count(x, x') / count(x)``."""
    counts = np.zeros((num_latent, num_latent))
    for x, y in samples:
        counts[x, y] += 1
    return estimate_from_counts(counts)


def sample_transition_counts(P_x: np.ndarray, n_per_latent: int, rng: np.random.Generator) -> np.ndarray:
    """Generative-model draw: ``n_per_latent`` next-latent samples from every row."""
    return np.stack([rng.multinomial(n_per_latent, row / row.sum()) for row in P_x])


def l1_factorization_check(P_x: np.ndarray, P_x_hat: np.ndarray, P_s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L1 errors of the full joint transition and of the latent row, per ``(x, s, a)``.

    The joint distance is computed by expanding both joint distributions
    explicitly, not through the factorized shortcut.
    """
    X, S, A, _ = P_s.shape
    joint = np.zeros((X, S, A))
    latent = np.zeros((X, S, A))
    for x in range(X):
        row_err = np.abs(P_x[x] - P_x_hat[x]).sum()
        for s in range(S):
            for a in range(A):
                p = np.outer(P_x[x], P_s[x, s, a])
                q = np.outer(P_x_hat[x], P_s[x, s, a])
                joint[x, s, a] = np.abs(p - q).sum()
                latent[x, s, a] = row_err
    return joint, latent


# -- planning ----------------------------------------------------------------

class ConvergenceError(RuntimeError):
    def __init__(self, residual: float, iters: int):
        super().__init__(f"value iteration did not converge in {iters} iterations (residual {residual:.3e})")
        self.residual = residual


def _backup(model: OrdcModel, Q: np.ndarray, policy: Optional[np.ndarray]) -> np.ndarray:
    V = Q.max(axis=2) if policy is None else np.sum(policy * Q, axis=2)
    ev = np.einsum("xy,xsaz,yz->xsa", model.P_x, model.P_s, V)
    return model.r + model.gamma * ev


def value_iteration(
    model: OrdcModel,
    tol: float = 1e-10,
    max_iters: int = 100_000,
    policy: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Q over ``(x, s, a)``: optimal, or for ``policy[x, s, a]`` when one is given.

    Iterates until successive iterates differ by at most ``tol`` in sup norm,
    so the Bellman residual of the returned table is at most ``gamma * tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    Q = np.zeros_like(model.r, dtype=float)
    residual = math.inf
    for _ in range(max_iters):
        Q_next = _backup(model, Q, policy)
        residual = float(np.max(np.abs(Q_next - Q)))
        Q = Q_next
        if residual <= tol:
            return Q
    raise ConvergenceError(residual, max_iters)


def bellman_residual(model: OrdcModel, Q: np.ndarray, policy: Optional[np.ndarray] = None) -> float:
    return float(np.max(np.abs(_backup(model, Q, policy) - Q)))


def policy_evaluation_exact(model: OrdcModel, policy: np.ndarray) -> np.ndarray:
    """Solve ``(I - gamma P^pi) Q = r`` directly over state-action pairs."""
    X, S, A = model.r.shape
    n = X * S * A
    P = model.joint_transitions().reshape(n, X * S)
    Ppi = np.einsum("iz,za->iza", P, policy.reshape(X * S, A)).reshape(n, n)
    return np.linalg.solve(np.eye(n) - model.gamma * Ppi, model.r.reshape(n)).reshape(X, S, A)


def greedy_policy(Q: np.ndarray) -> np.ndarray:
    pi = np.zeros_like(Q)
    idx = np.argmax(Q, axis=2)
    np.put_along_axis(pi, idx[..., None], 1.0, axis=2)
    return pi


def uniform_policy(model: OrdcModel) -> np.ndarray:
    return np.full(model.r.shape, 1.0 / model.num_actions)


# -- experiments -------------------------------------------------------------

def bound_base(num_latent: int, gamma: float, delta: float, n: int) -> float:
    """``gamma/(1-gamma)^2 * sqrt(|X| log(|X|/delta) / N)`` without the constant."""
    return gamma / (1 - gamma) ** 2 * math.sqrt(num_latent * math.log(num_latent / delta) / n)


@dataclass
class SampleComplexityResult:
    rows: list[dict]  # N, trial, error, bound
    summary: list[dict]  # N, mean_error, bound, coverage
    constant: float
    slope: float


def sample_complexity_experiment(
    model: OrdcModel,
    n_grid: Sequence[int],
    trials: int,
    delta: float = 0.1,
    seed: int = 0,
    tol: float = 1e-10,
) -> SampleComplexityResult:
    """Plug-in planning error ``||Q* - Q_hat*||_inf`` versus samples per latent context.

    The bound constant is calibrated at the smallest N as the ``1 - delta``
    quantile of error / bound shape, then reused unchanged at larger N.
    """
    n_grid = sorted(int(n) for n in n_grid)
    q_star = value_iteration(model, tol=tol)
    root = np.random.SeedSequence(seed)
    errors = {}
    for n, seq in zip(n_grid, root.spawn(len(n_grid))):
        errs = []
        for trial_seq in seq.spawn(trials):
            rng = np.random.default_rng(trial_seq)
            P_hat = estimate_from_counts(sample_transition_counts(model.P_x, n, rng))
            q_hat = value_iteration(model.with_latent_transitions(P_hat), tol=tol)
            errs.append(float(np.max(np.abs(q_star - q_hat))))
        errors[n] = np.array(errs)

    X = model.num_latent
    base0 = bound_base(X, model.gamma, delta, n_grid[0])
    constant = float(np.quantile(errors[n_grid[0]], 1 - delta) / base0)
    rows, summary = [], []
    for n in n_grid:
        bound = constant * bound_base(X, model.gamma, delta, n)
        for trial, e in enumerate(errors[n]):
            rows.append({"N": n, "trial": trial, "error": e, "bound": bound})
        summary.append(
            {
                "N": n,
                "mean_error": float(errors[n].mean()),
                "bound": bound,
                "coverage": float(np.mean(errors[n] <= bound)),
            }
        )
    means = np.array([s["mean_error"] for s in summary])
    if len(n_grid) > 1 and np.all(means > 0):
        slope = float(np.polyfit(np.log(n_grid), np.log(means), 1)[0])
    else:
        slope = float("nan")
    return SampleComplexityResult(rows, summary, constant, slope)


def plug_in_bound_gap(model: OrdcModel, P_x_hat: np.ndarray, policy: Optional[np.ndarray] = None) -> tuple[float, float]:
    """``(||Q^pi - Q_hat^pi||_inf, gamma/(1-gamma)^2 * max_x ||P_x - P_x_hat||_1)``."""
    pi = uniform_policy(model) if policy is None else policy
    q = policy_evaluation_exact(model, pi)
    q_hat = policy_evaluation_exact(model.with_latent_transitions(P_x_hat), pi)
    lhs = float(np.max(np.abs(q - q_hat)))
    rhs = model.gamma / (1 - model.gamma) ** 2 * float(np.max(np.abs(model.P_x - P_x_hat).sum(axis=1)))
    return lhs, rhs


def rollout_returns(
    model: OrdcModel,
    policy: np.ndarray,
    start: tuple[int, int, int],
    n: int,
    horizon: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Discounted returns of ``n`` independent rollouts from ``(x, s, a)``, truncated at ``horizon``."""
    x = np.full(n, start[0])
    s = np.full(n, start[1])
    a = np.full(n, start[2])
    cx = np.cumsum(model.P_x, axis=1)
    cs = np.cumsum(model.P_s, axis=3)
    cpi = np.cumsum(policy, axis=2)
    total = np.zeros(n)
    disc = 1.0
    for _ in range(horizon):
        total += disc * model.r[x, s, a]
        disc *= model.gamma
        u = rng.random((3, n))
        s_next = (u[1][:, None] > cs[x, s, a]).sum(axis=1)
        x = (u[0][:, None] > cx[x]).sum(axis=1)
        s = np.minimum(s_next, model.num_states - 1)
        x = np.minimum(x, model.num_latent - 1)
        a = np.minimum((u[2][:, None] > cpi[x, s]).sum(axis=1), model.num_actions - 1)
    return total


@dataclass(frozen=True)
class EstimatorStats:
    single_mean: float
    single_var: float
    pooled_mean: float
    pooled_var: float

    @property
    def variance_ratio(self) -> float:
        return self.pooled_var / self.single_var if self.single_var > 0 else float("nan")


def illustrative_estimators(
    model: OrdcModel,
    policy: np.ndarray,
    start: tuple[int, int, int],
    M: int,
    rollout_horizon: int,
    trials: int,
    seed: int = 0,
) -> tuple[EstimatorStats, np.ndarray, np.ndarray]:
    """Single-sequence return versus the mean of ``M`` returns sharing the start's latent context.

    Returns the across-trial statistics and the per-trial estimates.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    rng = np.random.default_rng(seed)
    returns = rollout_returns(model, policy, start, trials * M, rollout_horizon, rng).reshape(trials, M)
    single = returns[:, 0]
    pooled = returns.mean(axis=1)
    stats = EstimatorStats(float(single.mean()), float(single.var()), float(pooled.mean()), float(pooled.var()))
    return stats, single, pooled


def per_context_vs_pooled_error(
    K: int,
    p: float,
    alpha: float,
    gamma: float,
    samples_per_chain: int,
    trials: int,
    seed: int = 0,
) -> tuple[float, float]:
    """Mean sup error on C0 values of a learner that estimates every chain alone vs. one pooling by group.

    With the group labels known, all chains sharing a self-loop probability
    share their samples, which is what knowing the latent map buys.
    """
    rng = np.random.default_rng(seed)
    flags = np.arange(K) % 2
    inst = HardInstance(K, p, alpha, tuple(flags))
    truth = inst.q_star_c0(gamma)
    alone, pooled = [], []
    for _ in range(trials):
        stays = rng.binomial(samples_per_chain, inst.self_loop)
        p_alone = stays / samples_per_chain
        p_pool = np.empty(K)
        for g in (0, 1):
            mask = flags == g
            if mask.any():
                p_pool[mask] = stays[mask].sum() / (samples_per_chain * mask.sum())
        alone.append(np.max(np.abs(gamma / (1 - gamma * p_alone) - truth)))
        pooled.append(np.max(np.abs(gamma / (1 - gamma * p_pool) - truth)))
    return float(np.mean(alone)), float(np.mean(pooled))


class OrdcEnv:
    """Simulator over an :class:`OrdcModel` with uniform random starts, for tabular learners."""

    def __init__(self, model: OrdcModel, rng: np.random.Generator):
        self.model = model
        self.rng = rng
        self._cx = np.cumsum(model.P_x, axis=1)
        self._cs = np.cumsum(model.P_s, axis=3)
        self.x = 0
        self.s = 0

    def reset(self) -> tuple[int, int]:
        self.x = int(self.rng.integers(self.model.num_latent))
        self.s = int(self.rng.integers(self.model.num_states))
        return self.x, self.s

    def step_discrete(self, a: int):
        m = self.model
        reward = float(m.r[self.x, self.s, a])
        u, v = self.rng.random(2)
        s_next = min(int(np.searchsorted(self._cs[self.x, self.s, a], v, side="right")), m.num_states - 1)
        self.x = min(int(np.searchsorted(self._cx[self.x], u, side="right")), m.num_latent - 1)
        self.s = s_next
        return (self.x, self.s), reward, False


def ordc_env_factory(model: OrdcModel):
    def make(rng: np.random.Generator):
        env = OrdcEnv(model, rng)
        return env, env.reset()

    return make

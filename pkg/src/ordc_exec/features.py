"""Hand-crafted future statistics, a ridge-regression context encoder, and binning.

The encoder predicts eight statistics of the *future* price/spread path from
the *current* context; binning those predictions gives a small discrete
latent-context id that tabular learners can index.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .lob import DayMeta, LobSnapshot, normalize_price, normalize_snapshot

STAT_NAMES = (
    "d_avg_twap",
    "d_max_twap",
    "d_min_twap",
    "twap_vol",
    "d_avg_sprd",
    "d_max_sprd",
    "d_min_sprd",
    "sprd_vol",
)


@dataclass(frozen=True)
class FutureStats:
    d_avg_twap: float
    d_max_twap: float
    d_min_twap: float
    twap_vol: float
    d_avg_sprd: float
    d_max_sprd: float
    d_min_sprd: float
    sprd_vol: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in STAT_NAMES])


def future_statistics(future_twaps, future_spreads, current_twap: float, current_spread: float) -> FutureStats:
    twaps = np.asarray(future_twaps, dtype=float)
    spreads = np.asarray(future_spreads, dtype=float)
    if twaps.size == 0 or spreads.size == 0:
        raise ValueError("future series must be non-empty")
    return FutureStats(
        d_avg_twap=float(twaps.mean() - current_twap),
        d_max_twap=float(twaps.max() - current_twap),
        d_min_twap=float(twaps.min() - current_twap),
        twap_vol=float(twaps.std()),
        d_avg_sprd=float(spreads.mean() - current_spread),
        d_max_sprd=float(spreads.max() - current_spread),
        d_min_sprd=float(spreads.min() - current_spread),
        sprd_vol=float(spreads.std()),
    )


# -- context windows ---------------------------------------------------------

def window_twap(window: Sequence[LobSnapshot], meta: DayMeta) -> float:
    """Mean normalized mid price over a window of snapshots."""
    return float(np.mean([normalize_price(s.mid, meta) for s in window]))


def window_spread(window: Sequence[LobSnapshot], meta: DayMeta) -> float:
    """Mean spread over the window, in volatility units."""
    return float(np.mean([float(s.spread) for s in window])) / meta.prev_day_volatility


CONTEXT_EXTRA = ("twap", "spread", "mid_return")


def context_features(window: Sequence[LobSnapshot], meta: DayMeta) -> np.ndarray:
    """Normalized last snapshot of ``window`` plus window twap, spread and mid return."""
    last = window[-1]
    first_mid = float(window[0].mid)
    ret = (float(last.mid) - first_mid) / first_mid
    extra = np.array([window_twap(window, meta), window_spread(window, meta), ret])
    return np.concatenate([normalize_snapshot(last, meta), extra])


def step_series(snapshots: Sequence[LobSnapshot], meta: DayMeta, per_step: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-step twap and spread series over consecutive windows of ``per_step`` snapshots."""
    n_steps = (len(snapshots) - 1) // per_step
    twaps = np.empty(n_steps)
    spreads = np.empty(n_steps)
    for t in range(n_steps):
        window = snapshots[t * per_step + 1 : (t + 1) * per_step + 1]
        twaps[t] = window_twap(window, meta)
        spreads[t] = window_spread(window, meta)
    return twaps, spreads


def build_training_set(
    day_slice: Sequence[LobSnapshot],
    meta: DayMeta,
    per_step: int,
    horizon: int,
    future_window_steps: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(context features, future statistics) pairs at each decision point of an episode slice.

    The future window defaults to the rest of the episode; the final decision
    has no future and is skipped.
    """
    twaps, spreads = step_series(day_slice, meta, per_step)
    xs, ys = [], []
    for t in range(horizon - 1):
        k = t * per_step
        window = day_slice[max(0, k - per_step) : k + 1]
        x = context_features(window, meta)
        end = horizon if future_window_steps is None else min(horizon, t + 1 + future_window_steps)
        fut_t, fut_s = twaps[t + 1 : end], spreads[t + 1 : end]
        if fut_t.size == 0:
            continue
        cur_t, cur_s = window_twap(window, meta), window_spread(window, meta)
        xs.append(x)
        ys.append(future_statistics(fut_t, fut_s, cur_t, cur_s).as_array())
    return np.array(xs), np.array(ys)


# -- encoder -----------------------------------------------------------------

@dataclass
class LinearEncoder:
    """Ridge map from context features to future statistics: ``(x - mean)/scale @ W + intercept``."""

    weights: np.ndarray
    ridge_lambda: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    intercept: np.ndarray

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[0]

    def predict(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.shape[-1] != self.feature_dim:
            raise ValueError(f"expected {self.feature_dim} features, got {x.shape[-1]}")
        return (x - self.feature_mean) / self.feature_scale @ self.weights + self.intercept


def fit_linear_encoder(features, targets, ridge_lambda: float, standardize: bool = False) -> LinearEncoder:
    """Closed-form ridge regression, ``argmin ||XW - Y||^2 + lambda ||W||^2``.

    With ``standardize`` the columns are centred and scaled first and an
    (unpenalised) intercept is fitted; otherwise the fit has no intercept.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] < 1 or X.shape[0] != Y.shape[0]:
        raise ValueError("features and targets need the same, non-zero number of rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite entries in training data")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be non-negative")
    d = X.shape[1]
    if standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        intercept = Y.mean(axis=0)
        Xs, Ys = (X - mean) / scale, Y - intercept
    else:
        mean, scale, intercept = np.zeros(d), np.ones(d), np.zeros(Y.shape[1])
        Xs, Ys = X, Y
    gram = Xs.T @ Xs + ridge_lambda * np.eye(d)
    if ridge_lambda == 0 and np.linalg.matrix_rank(Xs) < d:
        raise ValueError("rank deficient; increase lambda")
    W = np.linalg.solve(gram, Xs.T @ Ys)
    return LinearEncoder(W, float(ridge_lambda), mean, scale, intercept)


def ridge_objective(encoder: LinearEncoder, features, targets, weights: Optional[np.ndarray] = None) -> float:
    W = encoder.weights if weights is None else weights
    X = (np.asarray(features, dtype=float) - encoder.feature_mean) / encoder.feature_scale
    R = X @ W + encoder.intercept - np.asarray(targets, dtype=float)
    return float(np.sum(R**2) + encoder.ridge_lambda * np.sum(W**2))


# -- binning -----------------------------------------------------------------

@dataclass(frozen=True)
class BinConfig:
    """Per-statistic bin edges; an empty edge list puts that statistic in a single cell."""

    edges: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", tuple(tuple(float(e) for e in es) for es in self.edges))
        for es in self.edges:
            if any(b <= a for a, b in zip(es, es[1:])):
                raise ValueError("bin edges must be strictly increasing")

    @property
    def radices(self) -> tuple[int, ...]:
        return tuple(len(es) + 1 for es in self.edges)

    @property
    def strides(self) -> tuple[int, ...]:
        out, acc = [], 1
        for r in self.radices:
            out.append(acc)
            acc *= r
        return tuple(out)

    @property
    def n_ids(self) -> int:
        return int(np.prod(self.radices))

    def cells(self, predictions) -> np.ndarray:
        p = np.atleast_2d(np.asarray(predictions, dtype=float))
        if p.shape[1] != len(self.edges):
            raise ValueError(f"expected {len(self.edges)} statistics, got {p.shape[1]}")
        return np.stack(
            [np.searchsorted(np.asarray(es), p[:, i], side="right") for i, es in enumerate(self.edges)],
            axis=1,
        )

    def cell_to_id(self, cells) -> np.ndarray:
        return np.asarray(cells) @ np.asarray(self.strides)

    def id_to_cell(self, idx: int) -> tuple[int, ...]:
        return tuple((idx // s) % r for s, r in zip(self.strides, self.radices))


def fit_bins(predictions, quantiles: Sequence[float] = (1 / 3, 2 / 3), stats: Optional[Sequence[int]] = None) -> BinConfig:
    """Quantile edges for the chosen statistics (all by default); others get one cell."""
    p = np.atleast_2d(np.asarray(predictions, dtype=float))
    chosen = range(p.shape[1]) if stats is None else stats
    edges = []
    for i in range(p.shape[1]):
        if i in chosen:
            es = np.unique(np.quantile(p[:, i], quantiles))
            edges.append(tuple(es))
        else:
            edges.append(())
    return BinConfig(tuple(edges))


def encode_and_bin(encoder: LinearEncoder, features, bins: BinConfig):
    """Latent context id(s) for one feature vector or a batch of them."""
    x = np.asarray(features, dtype=float)
    ids = bins.cell_to_id(bins.cells(encoder.predict(np.atleast_2d(x))))
    return int(ids[0]) if x.ndim == 1 else ids


def aggregation_consistency(ids, labels) -> dict:
    """Share of each label's contexts falling in that label's most common bin."""
    ids, labels = np.asarray(ids), np.asarray(labels)
    out = {}
    for lab in np.unique(labels):
        _, counts = np.unique(ids[labels == lab], return_counts=True)
        out[lab.item()] = float(counts.max() / counts.sum())
    return out


# -- persistence -------------------------------------------------------------

def encoder_to_json(encoder: LinearEncoder, bins: Optional[BinConfig] = None) -> dict:
    doc = {
        "feature_dim": encoder.feature_dim,
        "n_outputs": encoder.weights.shape[1],
        "weights": encoder.weights.ravel(order="C").tolist(),
        "ridge_lambda": encoder.ridge_lambda,
        "feature_mean": encoder.feature_mean.tolist(),
        "feature_scale": encoder.feature_scale.tolist(),
        "intercept": encoder.intercept.tolist(),
    }
    if bins is not None:
        doc["bin_edges"] = [list(es) for es in bins.edges]
    return doc


def encoder_from_json(doc: dict) -> tuple[LinearEncoder, Optional[BinConfig]]:
    d, k = doc["feature_dim"], doc["n_outputs"]
    enc = LinearEncoder(
        weights=np.array(doc["weights"], dtype=float).reshape(d, k),
        ridge_lambda=float(doc["ridge_lambda"]),
        feature_mean=np.array(doc["feature_mean"], dtype=float),
        feature_scale=np.array(doc["feature_scale"], dtype=float),
        intercept=np.array(doc["intercept"], dtype=float),
    )
    bins = BinConfig(tuple(tuple(es) for es in doc["bin_edges"])) if "bin_edges" in doc else None
    return enc, bins


def save_encoder(path, encoder: LinearEncoder, bins: Optional[BinConfig] = None) -> None:
    Path(path).write_text(json.dumps(encoder_to_json(encoder, bins), indent=2))


def load_encoder(path) -> tuple[LinearEncoder, Optional[BinConfig]]:
    return encoder_from_json(json.loads(Path(path).read_text()))

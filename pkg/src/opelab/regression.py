"""Reward-model fitting: one-step regression on observed rewards and the
two-step procedure that first fits a pairwise residual model on within-context
reward differences (bias step), then fits a per-cluster baseline on the
residuals (variance step), plus K-fold cross-fitting.

Fitted models are materialized as prediction matrices over the finite
(context, action) grid they were trained for.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .core import ActionCatalog, ContextSet, LoggedDataset, _frozen
from .nn import ReluNet, make_optimizer

TABULAR_BASELINE_LIMIT = 4096


class TrainingDiverged(RuntimeError):
    """A training loss became non-finite."""


class InsufficientDataError(ValueError):
    """Fewer records than cross-fitting folds."""


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters shared by every reward-model fit.

    `baseline_family="auto"` uses the exact tabular per-(context, cluster)
    least-squares baseline whenever the grid is small, a feedforward model on
    (context features, cluster) otherwise.
    """

    family: str = "feedforward"          # "feedforward" | "linear"
    hidden: tuple = (64, 64, 64)
    activation: str = "relu"
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 256
    loss: str = "squared"                # "squared" | "cross_entropy"
    optimizer: str = "adam"              # "adam" | "sgd"
    seed: int = 0
    cross_fit_folds: int = 3
    pair_mode: str = "auto"              # "auto" | "same_cluster" | "same_context"
    max_pairs_per_context: int = 50
    baseline_family: str = "auto"        # "auto" | "tabular" | "feedforward"

    def __post_init__(self):
        if self.family not in ("feedforward", "linear"):
            raise ValueError("family must be 'feedforward' or 'linear'")
        if self.activation != "relu":
            raise ValueError("only the 'relu' activation is supported")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.loss not in ("squared", "cross_entropy"):
            raise ValueError("loss must be 'squared' or 'cross_entropy'")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.cross_fit_folds < 2:
            raise ValueError("cross_fit_folds must be >= 2")
        if self.pair_mode not in ("auto", "same_cluster", "same_context"):
            raise ValueError("unknown pair_mode")
        if self.max_pairs_per_context < 1:
            raise ValueError("max_pairs_per_context must be positive")
        if self.baseline_family not in ("auto", "tabular", "feedforward"):
            raise ValueError("unknown baseline_family")

    def net_hidden(self) -> tuple:
        return () if self.family == "linear" else self.hidden


def featurize(contexts: ContextSet, catalog: ActionCatalog, x: int, a: int) -> np.ndarray:
    """Dense feature vector for one (context, action) pair: context features
    followed by a one-hot action block and a one-hot cluster block."""
    vec = np.zeros(contexts.context_dim + catalog.num_actions + catalog.num_clusters)
    vec[: contexts.context_dim] = contexts.features[x]
    vec[contexts.context_dim + a] = 1.0
    vec[contexts.context_dim + catalog.num_actions + int(catalog.clusters_for(x)[a])] = 1.0
    return vec


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class RegressionModel:
    """Evaluable reward model over a fixed finite (context, action) grid."""

    def predict_matrix(self, contexts: ContextSet, catalog: ActionCatalog) -> np.ndarray:
        raise NotImplementedError

    def predict_records(self, data: LoggedDataset) -> np.ndarray:
        matrix = self.predict_matrix(data.contexts, data.catalog)
        return matrix[data.context_id, data.action_id]


@dataclass(frozen=True)
class MatrixModel(RegressionModel):
    """Model backed by a full prediction matrix, optionally carrying its
    additive decomposition into a cluster baseline and a per-action residual.

    When decomposed, `values` is constructed as baseline[x, phi(x, a)] +
    residual[x, a], so the identity holds exactly.
    """

    values: np.ndarray
    baseline: Optional[np.ndarray] = None      # (num_contexts, num_clusters)
    residual: Optional[np.ndarray] = None      # (num_contexts, num_actions)
    fallback_used: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.baseline is not None:
            object.__setattr__(self, "baseline", _frozen(self.baseline))
        if self.residual is not None:
            object.__setattr__(self, "residual", _frozen(self.residual))

    @classmethod
    def decomposed(cls, baseline, residual, catalog: ActionCatalog, **kw) -> "MatrixModel":
        baseline = np.asarray(baseline, dtype=np.float64)
        residual = np.asarray(residual, dtype=np.float64)
        if catalog.context_dependent:
            values = np.take_along_axis(baseline, catalog.cluster_of, axis=1) + residual
        else:
            values = baseline[:, catalog.cluster_of] + residual
        return cls(values=values, baseline=baseline, residual=residual, **kw)

    @classmethod
    def constant(cls, num_contexts: int, num_actions: int, value: float = 0.0) -> "MatrixModel":
        return cls(np.full((num_contexts, num_actions), float(value)))

    def predict_matrix(self, contexts, catalog) -> np.ndarray:
        expected = (contexts.num_contexts, catalog.num_actions)
        if self.values.shape != expected:
            raise ValueError(
                f"model covers grid {self.values.shape}, asked for {expected}"
            )
        return self.values


@dataclass(frozen=True)
class CrossFitModel(RegressionModel):
    """K-fold cross-fitted model: record i is predicted by the model trained
    without fold i % K; whole-grid queries average the fold models."""

    fold_models: tuple
    num_records: int

    @property
    def num_folds(self) -> int:
        return len(self.fold_models)

    @property
    def fallback_used(self) -> bool:
        return any(getattr(m, "fallback_used", False) for m in self.fold_models)

    def predict_matrix(self, contexts, catalog) -> np.ndarray:
        stacked = np.stack([m.predict_matrix(contexts, catalog) for m in self.fold_models])
        return stacked.mean(axis=0)

    def predict_records(self, data: LoggedDataset) -> np.ndarray:
        if data.n != self.num_records:
            raise ValueError(
                "cross-fitted predictions are only defined for the dataset the "
                f"model was fit on ({self.num_records} records, got {data.n})"
            )
        folds = np.arange(data.n) % self.num_folds
        out = np.empty(data.n)
        for k, model in enumerate(self.fold_models):
            mask = folds == k
            matrix = model.predict_matrix(data.contexts, data.catalog)
            out[mask] = matrix[data.context_id[mask], data.action_id[mask]]
        return out


# ---------------------------------------------------------------------------
# Training helpers
# ---------------------------------------------------------------------------


def _train_net(net: ReluNet, batches_fn, cfg: LearnerConfig, n: int, rng) -> ReluNet:
    """Minibatch loop shared by all fits. `batches_fn(idx)` must return the
    (loss, grads) pair for the records selected by `idx`."""
    opt = make_optimizer(cfg.optimizer, cfg.learning_rate)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, grads = batches_fn(idx)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss {loss}")
            opt.step(net.params, grads)
    return net


def _predict_grid(net: ReluNet, contexts: ContextSet, catalog: ActionCatalog) -> np.ndarray:
    """Evaluate a (context features, action, cluster) net on the whole grid,
    chunked over contexts to bound memory."""
    na = catalog.num_actions
    out = np.empty((contexts.num_contexts, na))
    action_ids = np.arange(na)
    chunk = max(1, 65536 // na)
    for start in range(0, contexts.num_contexts, chunk):
        stop = min(start + chunk, contexts.num_contexts)
        rows = stop - start
        dense = np.repeat(contexts.features[start:stop], na, axis=0)
        acts = np.tile(action_ids, rows)
        if catalog.context_dependent:
            clus = catalog.cluster_of[start:stop].reshape(-1)
        else:
            clus = np.tile(catalog.cluster_of, rows)
        out[start:stop] = net.predict(dense, (acts, clus)).reshape(rows, na)
    return out


def _sigmoid_matrix(values: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-values))


def _target_scaling(y: np.ndarray, loss: str):
    """Training targets are standardized for the squared loss (and mapped
    back at prediction time); cross-entropy targets stay on [0, 1]."""
    if loss == "cross_entropy":
        return 0.0, 1.0
    sd = float(y.std())
    return float(y.mean()), sd if sd > 1e-12 else 1.0


def fit_one_step(data: LoggedDataset, cfg: LearnerConfig) -> MatrixModel:
    """Plain regression of observed rewards on (context, action) features by
    minibatch gradient descent; deterministic given cfg.seed."""
    if data.n < 1:
        raise InsufficientDataError("cannot fit on an empty dataset")
    contexts, catalog = data.contexts, data.catalog
    net = ReluNet(
        dense_dim=contexts.context_dim,
        cat_sizes=(catalog.num_actions, catalog.num_clusters),
        hidden=cfg.net_hidden(),
        seed=cfg.seed,
    )
    dense = contexts.features[data.context_id]
    cats = (data.action_id, data.cluster_id)
    mu, sd = _target_scaling(data.reward, cfg.loss)
    y = (data.reward - mu) / sd
    rng = np.random.default_rng(cfg.seed + 1)

    def batch(idx):
        return net.loss_and_grads(dense[idx], (cats[0][idx], cats[1][idx]), y[idx], cfg.loss)

    _train_net(net, batch, cfg, data.n, rng)
    values = mu + sd * _predict_grid(net, contexts, catalog)
    if cfg.loss == "cross_entropy":
        values = _sigmoid_matrix(values)
    return MatrixModel(values=values)


# ---------------------------------------------------------------------------
# Pair dataset and the two-step fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairDataset:
    """Record pairs sharing a context (and a cluster, in same-cluster mode),
    used to fit the pairwise residual model on reward differences."""

    data: LoggedDataset
    rec_a: np.ndarray
    rec_b: np.ndarray
    mode: str

    def __post_init__(self):
        object.__setattr__(self, "rec_a", _frozen(self.rec_a, dtype=np.int64))
        object.__setattr__(self, "rec_b", _frozen(self.rec_b, dtype=np.int64))

    def __len__(self) -> int:
        return self.rec_a.shape[0]

    @property
    def context_id(self) -> np.ndarray:
        return self.data.context_id[self.rec_a]

    @property
    def action_a(self) -> np.ndarray:
        return self.data.action_id[self.rec_a]

    @property
    def action_b(self) -> np.ndarray:
        return self.data.action_id[self.rec_b]

    @property
    def reward_a(self) -> np.ndarray:
        return self.data.reward[self.rec_a]

    @property
    def reward_b(self) -> np.ndarray:
        return self.data.reward[self.rec_b]


def build_pair_dataset(
    data: LoggedDataset,
    catalog: ActionCatalog,
    mode: str = "same_cluster",
    max_pairs_per_context: Optional[int] = 50,
    seed: int = 0,
) -> PairDataset:
    """All unordered record pairs sharing a context; in same-cluster mode the
    two records must also share a cluster and carry distinct action ids.

    Pairs are deduplicated by record-index pair. When a context exceeds
    `max_pairs_per_context`, a uniform subsample is kept (deterministic given
    `seed`). An empty result is returned as an empty PairDataset; callers fall
    back to one-step regression.
    """
    if mode not in ("same_cluster", "same_context"):
        raise ValueError("mode must be 'same_cluster' or 'same_context'")
    rng = np.random.default_rng(seed)
    rec_a_all, rec_b_all = [], []
    order = np.argsort(data.context_id, kind="stable")
    boundaries = np.flatnonzero(np.diff(data.context_id[order])) + 1
    for group in np.split(order, boundaries):
        if mode == "same_cluster":
            sub_keys = data.cluster_id[group]
            pairs = []
            for c in np.unique(sub_keys):
                members = group[sub_keys == c]
                for i in range(members.size):
                    for j in range(i + 1, members.size):
                        a, b = members[i], members[j]
                        if data.action_id[a] != data.action_id[b]:
                            pairs.append((a, b))
        else:
            pairs = [
                (group[i], group[j])
                for i in range(group.size)
                for j in range(i + 1, group.size)
            ]
        if not pairs:
            continue
        if max_pairs_per_context is not None and len(pairs) > max_pairs_per_context:
            keep = rng.choice(len(pairs), size=max_pairs_per_context, replace=False)
            pairs = [pairs[k] for k in sorted(keep)]
        for a, b in pairs:
            rec_a_all.append(a)
            rec_b_all.append(b)
    return PairDataset(
        data=data,
        rec_a=np.asarray(rec_a_all, dtype=np.int64),
        rec_b=np.asarray(rec_b_all, dtype=np.int64),
        mode=mode,
    )


def fit_pairwise(pairs: PairDataset, cfg: LearnerConfig) -> MatrixModel:
    """Fit the pairwise residual model on reward differences: minimizes
    squared loss between r_a - r_b and h(x, a) - h(x, b)."""
    if len(pairs) == 0:
        raise InsufficientDataError("cannot fit a pairwise model without pairs")
    if cfg.loss != "squared":
        raise ValueError("pairwise fitting supports the squared loss only")
    data = pairs.data
    contexts, catalog = data.contexts, data.catalog
    net = ReluNet(
        dense_dim=contexts.context_dim,
        cat_sizes=(catalog.num_actions, catalog.num_clusters),
        hidden=cfg.net_hidden(),
        seed=cfg.seed,
    )
    dense = contexts.features[data.context_id]
    raw_target = pairs.reward_a - pairs.reward_b
    # Scale (not center) the difference targets; centering would bias the
    # antisymmetric structure.
    sd = float(raw_target.std())
    sd = sd if sd > 1e-12 else 1.0
    target = raw_target / sd
    rng = np.random.default_rng(cfg.seed + 2)

    def batch(idx):
        ra, rb = pairs.rec_a[idx], pairs.rec_b[idx]
        return net.pairwise_loss_and_grads(
            dense[ra],
            (data.action_id[ra], data.cluster_id[ra]),
            dense[rb],
            (data.action_id[rb], data.cluster_id[rb]),
            target[idx],
        )

    _train_net(net, batch, cfg, len(pairs), rng)
    return MatrixModel(values=sd * _predict_grid(net, contexts, catalog))


@dataclass(frozen=True)
class BaselineModel:
    """Per-(context, cluster) baseline value table."""

    values: np.ndarray   # (num_contexts, num_clusters)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    def as_action_matrix(self, catalog: ActionCatalog) -> np.ndarray:
        if catalog.context_dependent:
            return np.take_along_axis(self.values, catalog.cluster_of, axis=1)
        return self.values[:, catalog.cluster_of]


def _fit_baseline_tabular(data, residual_target, catalog) -> np.ndarray:
    nx = data.contexts.num_contexts
    nc = catalog.num_clusters
    sums = np.zeros((nx, nc))
    counts = np.zeros((nx, nc))
    np.add.at(sums, (data.context_id, data.cluster_id), residual_target)
    np.add.at(counts, (data.context_id, data.cluster_id), 1.0)
    total = counts.sum()
    global_mean = sums.sum() / total if total else 0.0
    ctx_counts = counts.sum(axis=1)
    ctx_means = np.where(ctx_counts > 0, sums.sum(axis=1) / np.maximum(ctx_counts, 1), global_mean)
    values = np.broadcast_to(ctx_means[:, None], (nx, nc)).copy()
    seen = counts > 0
    values[seen] = sums[seen] / counts[seen]
    return values


def fit_baseline(
    data: LoggedDataset,
    h: Optional[RegressionModel],
    catalog: ActionCatalog,
    cfg: LearnerConfig,
) -> BaselineModel:
    """Fit the per-cluster baseline on residual targets r - h(x, a).

    The tabular family is the exact least-squares solution (cell means, with
    context-level then global fallbacks for empty cells); the feedforward
    family trains on (context features, cluster) inputs.
    """
    if data.n < 1:
        raise InsufficientDataError("cannot fit on an empty dataset")
    residual_target = data.reward.astype(np.float64)
    if h is not None:
        residual_target = residual_target - h.predict_records(data)
    contexts = data.contexts
    family = cfg.baseline_family
    if family == "auto":
        small = contexts.num_contexts * catalog.num_clusters <= TABULAR_BASELINE_LIMIT
        family = "tabular" if small else "feedforward"
    if family == "tabular":
        return BaselineModel(_fit_baseline_tabular(data, residual_target, catalog))
    net = ReluNet(
        dense_dim=contexts.context_dim,
        cat_sizes=(catalog.num_clusters,),
        hidden=cfg.net_hidden(),
        seed=cfg.seed,
    )
    dense = contexts.features[data.context_id]
    mu, sd = _target_scaling(residual_target, "squared")
    y = (residual_target - mu) / sd
    rng = np.random.default_rng(cfg.seed + 3)

    def batch(idx):
        return net.loss_and_grads(dense[idx], (data.cluster_id[idx],), y[idx], "squared")

    _train_net(net, batch, cfg, data.n, rng)
    cluster_ids = np.arange(catalog.num_clusters)
    values = np.empty((contexts.num_contexts, catalog.num_clusters))
    for x in range(contexts.num_contexts):
        dense_row = np.repeat(contexts.features[x : x + 1], catalog.num_clusters, axis=0)
        values[x] = mu + sd * net.predict(dense_row, (cluster_ids,))
    return BaselineModel(values)


def two_step_fit(
    data: LoggedDataset,
    catalog: ActionCatalog,
    cfg: LearnerConfig,
    mode: Optional[str] = None,
) -> MatrixModel:
    """Pairwise residual fit followed by the per-cluster baseline fit; the
    result predicts baseline[x, phi(x, a)] + residual[x, a] exactly.

    With no usable pairs the fit falls back to one-step regression and flags
    it via `fallback_used`. In "auto" mode, same-cluster pairing relaxes to
    same-context pairing when it yields fewer than one pair per cluster.
    """
    mode = cfg.pair_mode if mode is None else mode
    if mode == "auto":
        pairs = build_pair_dataset(
            data, catalog, "same_cluster", cfg.max_pairs_per_context, cfg.seed
        )
        if len(pairs) < catalog.num_clusters:
            pairs = build_pair_dataset(
                data, catalog, "same_context", cfg.max_pairs_per_context, cfg.seed
            )
    else:
        pairs = build_pair_dataset(data, catalog, mode, cfg.max_pairs_per_context, cfg.seed)
    if len(pairs) == 0:
        one_step = fit_one_step(data, cfg)
        return replace(one_step, fallback_used=True)
    h = fit_pairwise(pairs, cfg)
    g = fit_baseline(data, h, catalog, cfg)
    return MatrixModel.decomposed(baseline=g.values, residual=h.values, catalog=catalog)


def cross_fit(
    data: LoggedDataset,
    K: int,
    fitter: Callable[[LoggedDataset], RegressionModel],
) -> CrossFitModel:
    """K-fold cross-fitting with folds assigned by record index modulo K."""
    if K < 2:
        raise ValueError("cross-fitting requires K >= 2")
    if data.n < K:
        raise InsufficientDataError(f"need at least K={K} records, got {data.n}")
    folds = np.arange(data.n) % K
    models = tuple(fitter(data.subset(np.flatnonzero(folds != k))) for k in range(K))
    return CrossFitModel(fold_models=models, num_records=data.n)

"""Point estimators of the target-policy value from logged bandit data.

All estimators are sample means of per-record terms over immutable inputs.
Vanilla importance weights use the propensities recorded in the log; cluster
and embedding marginal weights are computed from the logging policy attached
to the dataset, evaluated only at logged records so that deficient-support
experiments measure bias rather than fail.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    ActionCatalog,
    LoggedDataset,
    Policy,
    SupportViolation,
    cluster_marginal_table,
    embedding_marginal_table,
)
from .regression import RegressionModel

ESTIMATOR_KINDS = (
    "dm",
    "ips",
    "dr",
    "mips",
    "offcem",
    "plus_clustering",
    "plus_regression",
    "clustering_onestep",
)
MODEL_KINDS = frozenset({"dm", "dr", "offcem", "plus_regression", "clustering_onestep"})


class MissingLoggingPolicy(ValueError):
    """The dataset carries no logging policy but the estimator needs its
    cluster or embedding marginals."""


@dataclass(frozen=True)
class EstimatorSpec:
    """An estimator kind plus its attached reward model and optional weight
    clipping threshold (clipping is off by default)."""

    kind: str
    model: Optional[RegressionModel] = None
    clip: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.kind in MODEL_KINDS and self.model is None:
            raise ValueError(f"estimator {self.kind!r} requires a reward model")
        if self.clip is not None and self.clip <= 0:
            raise ValueError("clip threshold must be positive")


def _clipped(w: np.ndarray, clip: Optional[float]) -> np.ndarray:
    return w if clip is None else np.minimum(w, clip)


def _target_probs(data: LoggedDataset, pi: Policy) -> np.ndarray:
    if pi.probs.shape != (data.contexts.num_contexts, data.catalog.num_actions):
        raise ValueError("target policy shape does not match the dataset's world")
    return pi.probs[data.context_id, data.action_id]


def _vanilla_weights(data: LoggedDataset, pi: Policy, clip=None) -> np.ndarray:
    """w(x_i, a_i) = pi(a_i|x_i) / propensity_i for every record."""
    target = _target_probs(data, pi)
    bad = np.flatnonzero((target > 0) & (data.propensity <= 0))
    if bad.size:
        i = int(bad[0])
        raise SupportViolation("action", data.context_id[i], data.action_id[i])
    return _clipped(target / data.propensity, clip)


def _require_logging_policy(data: LoggedDataset) -> Policy:
    if data.logging_policy is None:
        raise MissingLoggingPolicy(
            "cluster/embedding marginal weights need the logging policy table; "
            "attach one to the dataset"
        )
    return data.logging_policy


def _marginal_weights(
    data: LoggedDataset, pi: Policy, catalog: ActionCatalog, space: str, clip=None
) -> np.ndarray:
    """Per-record marginal importance weights over clusters or embeddings."""
    pi0 = _require_logging_policy(data)
    if space == "cluster":
        num = cluster_marginal_table(pi, catalog)
        den = cluster_marginal_table(pi0, catalog)
        ids = data.cluster_id
    else:
        num = embedding_marginal_table(pi, catalog)
        den = embedding_marginal_table(pi0, catalog)
        ids = data.embedding_id
    num_r = num[data.context_id, ids]
    den_r = den[data.context_id, ids]
    bad = np.flatnonzero((num_r > 0) & (den_r <= 0))
    if bad.size:
        i = int(bad[0])
        raise SupportViolation(space, data.context_id[i], ids[i])
    w = np.divide(num_r, den_r, out=np.zeros_like(num_r), where=den_r > 0)
    return _clipped(w, clip)


def _model_terms(data: LoggedDataset, pi: Policy, model: RegressionModel):
    """Per-record model predictions and the per-record expectation of the
    model under the target policy, sum_a pi(a|x_i) f(x_i, a), computed by
    exact summation over all actions."""
    matrix = model.predict_matrix(data.contexts, data.catalog)
    under_target = np.einsum("xa,xa->x", pi.probs, matrix)
    return model.predict_records(data), under_target[data.context_id]


def estimate_dm(data: LoggedDataset, pi: Policy, model: RegressionModel) -> float:
    """Direct method: (1/n) sum_i sum_a pi(a|x_i) f(x_i, a).

    Purely model-based; no importance weighting, so its accuracy is exactly
    the accuracy of the reward model.
    """
    _, dm = _model_terms(data, pi, model)
    return float(np.mean(dm))


def estimate_ips(data: LoggedDataset, pi: Policy, clip: Optional[float] = None) -> float:
    """Inverse propensity scoring: (1/n) sum_i w(x_i, a_i) r_i.

    Unbiased under full action support but with variance that grows with the
    range of the vanilla importance weights.
    """
    w = _vanilla_weights(data, pi, clip)
    return float(np.mean(w * data.reward))


def estimate_dr(
    data: LoggedDataset, pi: Policy, model: RegressionModel, clip: Optional[float] = None
) -> float:
    """Doubly robust: (1/n) sum_i { w(x_i, a_i) (r_i - f(x_i, a_i)) + f(x_i, pi) },
    with f(x, pi) = sum_a pi(a|x) f(x, a).

    The reward model acts as a control variate on top of vanilla importance
    weighting.
    """
    w = _vanilla_weights(data, pi, clip)
    preds, dm = _model_terms(data, pi, model)
    return float(np.mean(w * (data.reward - preds) + dm))


def estimate_mips(
    data: LoggedDataset, pi: Policy, catalog: ActionCatalog, clip: Optional[float] = None
) -> float:
    """Marginal importance weighting over action embeddings:
    (1/n) sum_i w(x_i, e_i) r_i with w(x, e) = pi(e|x) / pi0(e|x)."""
    w = _marginal_weights(data, pi, catalog, "embedding", clip)
    return float(np.mean(w * data.reward))


def estimate_offcem(
    data: LoggedDataset,
    pi: Policy,
    catalog: ActionCatalog,
    model: RegressionModel,
    clip: Optional[float] = None,
) -> float:
    """Cluster-weighted doubly robust estimate:
    (1/n) sum_i { w(x_i, phi(x_i, a_i)) (r_i - f(x_i, a_i)) + f(x_i, pi) }.

    Importance weighting happens in the (much smaller) cluster space while the
    reward model absorbs the per-action residual effect; with a model that
    preserves within-cluster reward differences the estimate is unbiased.
    """
    w = _marginal_weights(data, pi, catalog, "cluster", clip)
    preds, dm = _model_terms(data, pi, model)
    return float(np.mean(w * (data.reward - preds) + dm))


def estimate_ablation(
    data: LoggedDataset,
    pi: Policy,
    catalog: ActionCatalog,
    model: Optional[RegressionModel],
    kind: str,
    clip: Optional[float] = None,
) -> float:
    """Ablations isolating the two ingredients of the cluster-weighted
    estimator:

    - "plus_clustering": (1/n) sum_i w(x_i, phi(x_i, a_i)) r_i (no model);
    - "plus_regression": (1/n) sum_i { w(x_i, e_i) (r_i - f(x_i, a_i)) + f(x_i, pi) };
    - "clustering_onestep": the cluster-weighted formula with a one-step
      reward model in place of the two-step one.
    """
    if kind == "plus_clustering":
        w = _marginal_weights(data, pi, catalog, "cluster", clip)
        return float(np.mean(w * data.reward))
    if kind == "plus_regression":
        if model is None:
            raise ValueError("plus_regression requires a reward model")
        w = _marginal_weights(data, pi, catalog, "embedding", clip)
        preds, dm = _model_terms(data, pi, model)
        return float(np.mean(w * (data.reward - preds) + dm))
    if kind == "clustering_onestep":
        if model is None:
            raise ValueError("clustering_onestep requires a reward model")
        return estimate_offcem(data, pi, catalog, model, clip)
    raise ValueError(f"unknown ablation kind {kind!r}")


def estimate(data: LoggedDataset, pi: Policy, spec: EstimatorSpec) -> float:
    """Dispatch a single estimate from an EstimatorSpec."""
    kind, model, clip = spec.kind, spec.model, spec.clip
    if kind == "dm":
        return estimate_dm(data, pi, model)
    if kind == "ips":
        return estimate_ips(data, pi, clip)
    if kind == "dr":
        return estimate_dr(data, pi, model, clip)
    if kind == "mips":
        return estimate_mips(data, pi, data.catalog, clip)
    if kind == "offcem":
        return estimate_offcem(data, pi, data.catalog, model, clip)
    return estimate_ablation(data, pi, data.catalog, model, kind, clip)

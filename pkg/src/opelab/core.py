"""Domain types for finite contextual-bandit worlds and the three
importance-weight families (vanilla, cluster-marginal, embedding-marginal).

Everything here is tabular and exact: contexts, actions, clusters and
embeddings are finite, policies are row-stochastic matrices, and all
operations are pure functions over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# Absolute tolerance for row-stochasticity checks; double-precision row sums
# over <= 1e4 actions stay well inside this.
ROW_SUM_ATOL = 1e-9


class DimensionError(ValueError):
    """Array shapes passed to an operation do not agree."""


class SupportViolation(RuntimeError):
    """The target policy puts mass where the logging policy has none.

    Attributes:
        kind: space the violation lives in ("action", "cluster" or "embedding").
        context_id: offending context.
        index: offending action / cluster / embedding id.
    """

    def __init__(self, kind: str, context_id: int, index: int):
        self.kind = kind
        self.context_id = int(context_id)
        self.index = int(index)
        super().__init__(
            f"{kind} support violation: target policy has positive mass on "
            f"{kind} {self.index} at context {self.context_id} where the "
            f"logging policy has none"
        )


class DegeneratePolicyError(ValueError):
    """A policy row lost all of its probability mass."""


def _frozen(values, dtype=None) -> np.ndarray:
    """Defensive copy with the writeable flag cleared."""
    out = np.array(values, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ActionCatalog:
    """Action side of the world: embeddings plus the action-clustering map.

    Attributes:
        embeddings: (num_actions, embed_dims) int array of categorical action
            embeddings. Embeddings are deterministic per action and do not
            depend on the context.
        cluster_of: cluster id for every action; shape (num_actions,) for a
            context-independent clustering or (num_contexts, num_actions) for
            a clustering that may depend on the context. Ids must be dense in
            [0, num_clusters).
    """

    embeddings: np.ndarray
    cluster_of: np.ndarray
    num_actions: int = field(init=False)
    num_clusters: int = field(init=False)
    num_embeddings: int = field(init=False)
    embedding_ids: np.ndarray = field(init=False)

    def __post_init__(self):
        emb = _frozen(self.embeddings, dtype=np.int64)
        clusters = _frozen(self.cluster_of, dtype=np.int64)
        if emb.ndim != 2:
            raise DimensionError("embeddings must be 2-D (num_actions, embed_dims)")
        if clusters.ndim not in (1, 2):
            raise DimensionError("cluster_of must be 1-D or 2-D")
        num_actions = emb.shape[0]
        if clusters.shape[-1] != num_actions:
            raise DimensionError(
                f"cluster_of covers {clusters.shape[-1]} actions, embeddings "
                f"cover {num_actions}"
            )
        if clusters.min() < 0:
            raise ValueError("cluster ids must be nonnegative")
        num_clusters = int(clusters.max()) + 1
        present = np.unique(clusters)
        if present.size != num_clusters:
            raise ValueError("cluster ids must be dense in [0, num_clusters)")
        # Dense id per distinct embedding vector; row order of first occurrence.
        _, first_idx, inverse = np.unique(
            emb, axis=0, return_index=True, return_inverse=True
        )
        order = np.argsort(np.argsort(first_idx))
        embedding_ids = _frozen(order[inverse], dtype=np.int64)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "cluster_of", clusters)
        object.__setattr__(self, "num_actions", num_actions)
        object.__setattr__(self, "num_clusters", num_clusters)
        object.__setattr__(self, "num_embeddings", int(embedding_ids.max()) + 1)
        object.__setattr__(self, "embedding_ids", embedding_ids)

    @classmethod
    def from_clusters(cls, cluster_of, embeddings=None) -> "ActionCatalog":
        """Catalog from a cluster map alone; defaults to one distinct
        embedding per action."""
        cluster_of = np.asarray(cluster_of, dtype=np.int64)
        num_actions = cluster_of.shape[-1]
        if embeddings is None:
            embeddings = np.arange(num_actions, dtype=np.int64).reshape(-1, 1)
        return cls(embeddings=embeddings, cluster_of=cluster_of)

    @property
    def context_dependent(self) -> bool:
        return self.cluster_of.ndim == 2

    def clusters_for(self, context_id: int) -> np.ndarray:
        """Cluster id of every action at the given context."""
        if self.context_dependent:
            return self.cluster_of[context_id]
        return self.cluster_of

    def clusters_at(self, context_ids: np.ndarray, action_ids: np.ndarray) -> np.ndarray:
        """Vectorized cluster lookup for (context, action) pairs."""
        if self.context_dependent:
            return self.cluster_of[context_ids, action_ids]
        return self.cluster_of[action_ids]


@dataclass(frozen=True)
class ContextSet:
    """Finite context space with features and a sampling distribution.

    Attributes:
        features: (num_contexts, context_dim) real feature matrix.
        weights: context probabilities p(x); nonnegative, summing to one.
    """

    features: np.ndarray
    weights: np.ndarray
    num_contexts: int = field(init=False)
    context_dim: int = field(init=False)

    def __post_init__(self):
        features = _frozen(self.features, dtype=np.float64)
        weights = _frozen(self.weights, dtype=np.float64)
        if features.ndim != 2:
            raise DimensionError("features must be 2-D (num_contexts, context_dim)")
        if weights.ndim != 1 or weights.shape[0] != features.shape[0]:
            raise DimensionError("weights must be 1-D and match num_contexts")
        if weights.min() < 0:
            raise ValueError("context weights must be nonnegative")
        if abs(weights.sum() - 1.0) > ROW_SUM_ATOL:
            raise ValueError("context weights must sum to 1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "num_contexts", features.shape[0])
        object.__setattr__(self, "context_dim", features.shape[1])

    @classmethod
    def uniform(cls, features) -> "ContextSet":
        features = np.asarray(features, dtype=np.float64)
        n = features.shape[0]
        return cls(features=features, weights=np.full(n, 1.0 / n))


@dataclass(frozen=True)
class Policy:
    """Conditional action distribution as a row-stochastic table.

    Attributes:
        probs: (num_contexts, num_actions) matrix with probs[x, a] = pi(a|x).
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise DimensionError("probs must be 2-D (num_contexts, num_actions)")
        if probs.min() < 0 or probs.max() > 1 + ROW_SUM_ATOL:
            raise ValueError("policy entries must lie in [0, 1]")
        row_sums = probs.sum(axis=1)
        if np.abs(row_sums - 1.0).max() > ROW_SUM_ATOL:
            raise ValueError("policy rows must sum to 1")
        object.__setattr__(self, "probs", probs)

    @property
    def num_contexts(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, num_contexts: int, num_actions: int) -> "Policy":
        return cls(np.full((num_contexts, num_actions), 1.0 / num_actions))

    @classmethod
    def point_mass(cls, num_contexts: int, num_actions: int, action) -> "Policy":
        """Deterministic policy; `action` is a scalar or one id per context."""
        probs = np.zeros((num_contexts, num_actions))
        probs[np.arange(num_contexts), action] = 1.0
        return cls(probs)


@dataclass(frozen=True)
class RewardTable:
    """Expected rewards q(x, a) plus the reward-noise specification.

    Attributes:
        q: (num_contexts, num_actions) expected rewards.
        noise: Gaussian standard deviation sigma(x, a); scalar or a matrix
            broadcastable to q's shape. Ignored in Bernoulli mode.
        bernoulli: when True, rewards are Bernoulli(q) and q must lie in [0, 1].
    """

    q: np.ndarray
    noise: np.ndarray = 0.0
    bernoulli: bool = False

    def __post_init__(self):
        q = _frozen(self.q, dtype=np.float64)
        noise = _frozen(self.noise, dtype=np.float64)
        if q.ndim != 2:
            raise DimensionError("q must be 2-D (num_contexts, num_actions)")
        np.broadcast_shapes(noise.shape, q.shape)
        if noise.min() < 0:
            raise ValueError("reward noise must be nonnegative")
        if self.bernoulli and (q.min() < 0 or q.max() > 1):
            raise ValueError("Bernoulli rewards require q in [0, 1]")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "noise", noise)

    @property
    def num_contexts(self) -> int:
        return self.q.shape[0]

    @property
    def num_actions(self) -> int:
        return self.q.shape[1]

    def sigma_matrix(self) -> np.ndarray:
        """Per-(x, a) reward standard deviation as a full matrix."""
        if self.bernoulli:
            return np.sqrt(self.q * (1.0 - self.q))
        return np.broadcast_to(self.noise, self.q.shape)

    @property
    def noiseless(self) -> bool:
        return (not self.bernoulli) and float(np.max(self.noise)) == 0.0


@dataclass(frozen=True)
class LoggedDataset:
    """n logged interaction records plus references to the world they live in.

    Propensities are stored as sampled rather than recomputed, so that
    deficient-support experiments keep exactly the probabilities used during
    logging. `logging_policy` is optional; estimators that need cluster or
    embedding marginals of the logging policy require it.
    """

    context_id: np.ndarray
    action_id: np.ndarray
    embedding_id: np.ndarray
    cluster_id: np.ndarray
    propensity: np.ndarray
    reward: np.ndarray
    contexts: ContextSet
    catalog: ActionCatalog
    logging_policy: Optional[Policy] = None

    def __post_init__(self):
        context_id = _frozen(self.context_id, dtype=np.int64)
        action_id = _frozen(self.action_id, dtype=np.int64)
        embedding_id = _frozen(self.embedding_id, dtype=np.int64)
        cluster_id = _frozen(self.cluster_id, dtype=np.int64)
        propensity = _frozen(self.propensity, dtype=np.float64)
        reward = _frozen(self.reward, dtype=np.float64)
        n = context_id.shape[0]
        for name, arr in (
            ("action_id", action_id),
            ("embedding_id", embedding_id),
            ("cluster_id", cluster_id),
            ("propensity", propensity),
            ("reward", reward),
        ):
            if arr.shape != (n,):
                raise DimensionError(f"{name} must have shape ({n},)")
        if n and propensity.min() <= 0:
            raise ValueError("every logged propensity must be positive")
        if n:
            expected_cluster = self.catalog.clusters_at(context_id, action_id)
            if not np.array_equal(cluster_id, expected_cluster):
                raise ValueError("cluster_id disagrees with the catalog clustering")
            if not np.array_equal(embedding_id, self.catalog.embedding_ids[action_id]):
                raise ValueError("embedding_id disagrees with the catalog embeddings")
        object.__setattr__(self, "context_id", context_id)
        object.__setattr__(self, "action_id", action_id)
        object.__setattr__(self, "embedding_id", embedding_id)
        object.__setattr__(self, "cluster_id", cluster_id)
        object.__setattr__(self, "propensity", propensity)
        object.__setattr__(self, "reward", reward)

    @property
    def n(self) -> int:
        return self.context_id.shape[0]

    def subset(self, indices) -> "LoggedDataset":
        """New dataset restricted to the given record indices."""
        indices = np.asarray(indices)
        return LoggedDataset(
            context_id=self.context_id[indices],
            action_id=self.action_id[indices],
            embedding_id=self.embedding_id[indices],
            cluster_id=self.cluster_id[indices],
            propensity=self.propensity[indices],
            reward=self.reward[indices],
            contexts=self.contexts,
            catalog=self.catalog,
            logging_policy=self.logging_policy,
        )


# ---------------------------------------------------------------------------
# Exact policy value and importance weights
# ---------------------------------------------------------------------------


def policy_value(policy: Policy, rewards: RewardTable, contexts: ContextSet) -> float:
    """Exact value sum_x p(x) sum_a pi(a|x) q(x, a)."""
    if policy.probs.shape != rewards.q.shape:
        raise DimensionError(
            f"policy {policy.probs.shape} and rewards {rewards.q.shape} disagree"
        )
    if policy.num_contexts != contexts.num_contexts:
        raise DimensionError("policy and context set disagree on num_contexts")
    per_context = np.einsum("xa,xa->x", policy.probs, rewards.q)
    return float(contexts.weights @ per_context)


def _ratio(num: float, den: float, kind: str, x: int, idx: int) -> float:
    """num/den with the 0/0 -> 0 convention; positive/zero is a support error."""
    if den > 0.0:
        return num / den
    if num == 0.0:
        return 0.0
    raise SupportViolation(kind, x, idx)


def vanilla_weight(pi: Policy, pi0: Policy, x: int, a: int) -> float:
    """Vanilla importance weight w(x, a) = pi(a|x) / pi0(a|x)."""
    return _ratio(pi.probs[x, a], pi0.probs[x, a], "action", x, a)


def cluster_marginal(policy: Policy, catalog: ActionCatalog, x: int) -> np.ndarray:
    """Cluster marginal pi(c|x) = sum_a 1{phi(x, a) = c} pi(a|x)."""
    if policy.num_actions != catalog.num_actions:
        raise DimensionError("policy and catalog disagree on num_actions")
    return np.bincount(
        catalog.clusters_for(x), weights=policy.probs[x], minlength=catalog.num_clusters
    )


def cluster_weight(pi: Policy, pi0: Policy, catalog: ActionCatalog, x: int, c: int) -> float:
    """Cluster importance weight w(x, c) = pi(c|x) / pi0(c|x)."""
    num = cluster_marginal(pi, catalog, x)[c]
    den = cluster_marginal(pi0, catalog, x)[c]
    return _ratio(num, den, "cluster", x, c)


def embedding_marginal(policy: Policy, catalog: ActionCatalog, x: int) -> np.ndarray:
    """Embedding marginal pi(e|x) under deterministic per-action embeddings."""
    if policy.num_actions != catalog.num_actions:
        raise DimensionError("policy and catalog disagree on num_actions")
    return np.bincount(
        catalog.embedding_ids, weights=policy.probs[x], minlength=catalog.num_embeddings
    )


def embedding_marginal_weight(
    pi: Policy, pi0: Policy, catalog: ActionCatalog, x: int, e: int
) -> float:
    """Marginal importance weight w(x, e) = pi(e|x) / pi0(e|x)."""
    num = embedding_marginal(pi, catalog, x)[e]
    den = embedding_marginal(pi0, catalog, x)[e]
    return _ratio(num, den, "embedding", x, e)


def cluster_marginal_table(policy: Policy, catalog: ActionCatalog) -> np.ndarray:
    """All cluster marginals at once; shape (num_contexts, num_clusters)."""
    if policy.num_actions != catalog.num_actions:
        raise DimensionError("policy and catalog disagree on num_actions")
    if not catalog.context_dependent:
        onehot = np.zeros((catalog.num_actions, catalog.num_clusters))
        onehot[np.arange(catalog.num_actions), catalog.cluster_of] = 1.0
        return policy.probs @ onehot
    out = np.empty((policy.num_contexts, catalog.num_clusters))
    for x in range(policy.num_contexts):
        out[x] = np.bincount(
            catalog.cluster_of[x], weights=policy.probs[x], minlength=catalog.num_clusters
        )
    return out


def embedding_marginal_table(policy: Policy, catalog: ActionCatalog) -> np.ndarray:
    """All embedding marginals at once; shape (num_contexts, num_embeddings)."""
    if policy.num_actions != catalog.num_actions:
        raise DimensionError("policy and catalog disagree on num_actions")
    onehot = np.zeros((catalog.num_actions, catalog.num_embeddings))
    onehot[np.arange(catalog.num_actions), catalog.embedding_ids] = 1.0
    return policy.probs @ onehot

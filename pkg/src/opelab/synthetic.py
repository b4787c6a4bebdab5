"""Synthetic logged-bandit environment generator.

Builds a finite world whose expected reward decomposes additively into a
cluster-level effect plus a per-action residual effect, then derives softmax
logging policies, epsilon-greedy target policies, and i.i.d. logged datasets
from it. Everything is deterministic given the seeds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .core import (
    ActionCatalog,
    ContextSet,
    DegeneratePolicyError,
    LoggedDataset,
    Policy,
    RewardTable,
    _frozen,
)

SeedLike = Union[int, np.random.SeedSequence]


@dataclass(frozen=True)
class EnvironmentSpec:
    """Knobs of the synthetic world.

    `embed_mode="categorical"` samples a categorical embedding vector per
    action; `"unique"` gives every action its own one-dimensional embedding
    id, which makes embedding-marginal weighting coincide with vanilla
    importance weighting.
    """

    num_contexts: int = 200
    context_dim: int = 10
    num_actions: int = 1000
    num_clusters: int = 50
    embed_dims: int = 10
    embed_cardinality: int = 5
    reward_noise: float = 3.0
    reward_mode: str = "gaussian"
    embed_mode: str = "categorical"
    master_seed: int = 0

    def __post_init__(self):
        for name in (
            "num_contexts",
            "context_dim",
            "num_actions",
            "num_clusters",
            "embed_dims",
            "embed_cardinality",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.num_clusters > self.num_actions:
            raise ValueError("num_clusters cannot exceed num_actions")
        if self.reward_noise < 0:
            raise ValueError("reward_noise must be nonnegative")
        if self.reward_mode not in ("gaussian", "bernoulli"):
            raise ValueError("reward_mode must be 'gaussian' or 'bernoulli'")
        if self.embed_mode not in ("categorical", "unique"):
            raise ValueError("embed_mode must be 'categorical' or 'unique'")


@dataclass(frozen=True)
class EnvironmentLatent:
    """Raw reward-model parameters, kept so q = g + h can be re-derived."""

    quad: np.ndarray        # (num_clusters, d_x, d_x) quadratic term of the cluster base
    lin: np.ndarray         # (num_clusters, d_x)
    const: np.ndarray       # (num_clusters,)
    context_offsets: np.ndarray   # (4,) amplitudes of the threshold indicators
    cross: np.ndarray       # (num_clusters, d_x, num_actions) context-action interaction
    theta_ctx: np.ndarray   # (num_clusters, d_x)
    theta_act: np.ndarray   # (num_clusters, num_actions)
    reward_scale: float = 1.0     # affine squash applied in bernoulli mode
    reward_offset: float = 0.0


@dataclass(frozen=True)
class SyntheticEnvironment:
    """A generated world: contexts, catalog, rewards, and the additive pieces.

    The identity q = g_values[:, cluster_of] + h_values holds exactly because
    the reward table is constructed as that sum.
    """

    spec: EnvironmentSpec
    contexts: ContextSet
    catalog: ActionCatalog
    rewards: RewardTable
    g_values: np.ndarray    # (num_contexts, num_clusters) cluster effect
    h_values: np.ndarray    # (num_contexts, num_actions) residual effect
    latent: EnvironmentLatent

    def __post_init__(self):
        object.__setattr__(self, "g_values", _frozen(self.g_values))
        object.__setattr__(self, "h_values", _frozen(self.h_values))


def _context_shift(features: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Sum of thresholded-indicator offsets; a pure function of the context."""
    d = features.shape[1]

    def seg(lo, hi):
        # 1-based inclusive dimension ranges, clamped to available dims.
        return features[:, max(lo - 1, 0) : min(hi, d)].sum(axis=1)

    shift = np.zeros(features.shape[0])
    shift += offsets[0] * (seg(1, 3) < 1.5)
    shift += offsets[1] * (seg(3, 8) < -0.5)
    shift += offsets[2] * (seg(2, 3) > 3.0)
    shift += offsets[3] * (seg(5, 10) < 1.0)
    return shift


def _clusters_from_embeddings(embeddings: np.ndarray, num_clusters: int) -> np.ndarray:
    """Sort actions by embedding lexicographic order and split into
    num_clusters contiguous, (near-)equal-size groups."""
    num_actions = embeddings.shape[0]
    order = np.lexsort(embeddings.T[::-1])
    base, extra = divmod(num_actions, num_clusters)
    sizes = np.full(num_clusters, base, dtype=np.int64)
    sizes[:extra] += 1
    labels_sorted = np.repeat(np.arange(num_clusters), sizes)
    cluster_of = np.empty(num_actions, dtype=np.int64)
    cluster_of[order] = labels_sorted
    return cluster_of


def make_environment(spec: EnvironmentSpec) -> SyntheticEnvironment:
    """Build the synthetic world deterministically from spec.master_seed.

    The expected reward is q(x, a) = g(x, c_a) + h_{c_a}(x, a) where the
    cluster effect is a per-cluster quadratic in the context plus shared
    context-threshold offsets (amplitudes uniform on [-3, 3]), and the
    residual effect is x' M_c onehot_a + theta_ctx_c' x + theta_act_c'
    onehot_a with all entries uniform on [-1, 1], drawn per cluster.
    """
    root = np.random.SeedSequence(spec.master_seed)
    rng_feat, rng_embed, rng_g, rng_u, rng_h = (
        np.random.default_rng(s) for s in root.spawn(5)
    )
    nx, dx = spec.num_contexts, spec.context_dim
    na, nc = spec.num_actions, spec.num_clusters

    features = rng_feat.standard_normal((nx, dx))
    contexts = ContextSet.uniform(features)

    if spec.embed_mode == "unique":
        embeddings = np.arange(na, dtype=np.int64).reshape(-1, 1)
    else:
        embeddings = rng_embed.integers(0, spec.embed_cardinality, size=(na, spec.embed_dims))
    cluster_of = _clusters_from_embeddings(embeddings, nc)
    catalog = ActionCatalog(embeddings=embeddings, cluster_of=cluster_of)

    # Degree-2 polynomial cluster base with the quadratic and linear orders
    # normalized so each contributes O(1) regardless of context_dim, plus a
    # dominant per-cluster level. Cluster levels carry most of the variation
    # across clusters and are learnable from data; the polynomial part is a
    # smaller cluster-context interaction.
    quad = rng_g.uniform(-1.0, 1.0, size=(nc, dx, dx))
    lin = rng_g.uniform(-1.0, 1.0, size=(nc, dx))
    const = rng_g.uniform(-12.0, 12.0, size=nc)
    g_values = (
        np.einsum("xi,cij,xj->xc", features, quad, features) / dx
        + features @ lin.T / np.sqrt(dx)
        + const[None, :]
    )
    offsets = rng_u.uniform(-3.0, 3.0, size=4)
    g_values = g_values + _context_shift(features, offsets)[:, None]

    cross = rng_h.uniform(-1.0, 1.0, size=(nc, dx, na))
    theta_ctx = rng_h.uniform(-1.0, 1.0, size=(nc, dx))
    theta_act = rng_h.uniform(-1.0, 1.0, size=(nc, na))
    h_values = np.empty((nx, na))
    for c in range(nc):
        members = np.flatnonzero(cluster_of == c)
        h_values[:, members] = (
            features @ cross[c][:, members]
            + (features @ theta_ctx[c])[:, None]
            + theta_act[c][members][None, :]
        )

    # Affine squash of the cluster effect keeps the additive decomposition
    # exact: Gaussian mode shifts expected rewards to be nonnegative (reward
    # scales like ratings or revenue), Bernoulli mode maps them into [0, 1].
    raw = g_values[:, cluster_of] + h_values
    lo, hi = float(raw.min()), float(raw.max())
    if spec.reward_mode == "bernoulli":
        scale = 1.0 / (hi - lo) if hi > lo else 1.0
        offset = -lo * scale
    else:
        scale = 1.0
        offset = -lo
    g_values = g_values * scale + offset
    h_values = h_values * scale
    q = g_values[:, cluster_of] + h_values
    if spec.reward_mode == "bernoulli":
        q = np.clip(q, 0.0, 1.0)
        rewards = RewardTable(q=q, noise=0.0, bernoulli=True)
    else:
        rewards = RewardTable(q=q, noise=spec.reward_noise, bernoulli=False)

    latent = EnvironmentLatent(
        quad=quad,
        lin=lin,
        const=const,
        context_offsets=offsets,
        cross=cross,
        theta_ctx=theta_ctx,
        theta_act=theta_act,
        reward_scale=scale,
        reward_offset=offset,
    )
    return SyntheticEnvironment(
        spec=spec,
        contexts=contexts,
        catalog=catalog,
        rewards=rewards,
        g_values=g_values,
        h_values=h_values,
        latent=latent,
    )


def softmax_logging(rewards: RewardTable, beta: float = -0.1) -> Policy:
    """Logging policy pi0(a|x) proportional to exp(beta * q(x, a))."""
    if not np.all(np.isfinite(rewards.q)):
        raise ValueError("softmax_logging requires finite expected rewards")
    logits = beta * rewards.q
    logits = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(logits)
    return Policy(expd / expd.sum(axis=1, keepdims=True))


def epsilon_target(rewards: RewardTable, epsilon: float = 0.2) -> Policy:
    """Epsilon-greedy target policy around the per-context argmax of q.

    Ties are broken toward the lowest action id.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    nx, na = rewards.q.shape
    probs = np.full((nx, na), epsilon / na)
    best = np.argmax(rewards.q, axis=1)
    probs[np.arange(nx), best] += 1.0 - epsilon
    return Policy(probs)


def apply_unsupported(
    policy: Policy,
    unsupported: Iterable[int],
    catalog: Optional[ActionCatalog] = None,
) -> Policy:
    """Zero the policy on the given actions and renormalize each row.

    When a catalog is provided, warns if some cluster is left with no
    supported action (cluster-weighted estimation then loses that cluster).
    """
    unsupported = np.asarray(sorted(set(int(a) for a in unsupported)), dtype=np.int64)
    if unsupported.size == 0:
        return policy
    probs = np.array(policy.probs, copy=True)
    probs[:, unsupported] = 0.0
    row_sums = probs.sum(axis=1)
    if np.any(row_sums <= 0):
        dead = int(np.flatnonzero(row_sums <= 0)[0])
        raise DegeneratePolicyError(
            f"removing {unsupported.size} actions leaves context {dead} with no mass"
        )
    if catalog is not None:
        keep = np.ones(catalog.num_actions, dtype=bool)
        keep[unsupported] = False
        if catalog.context_dependent:
            covered = np.zeros(catalog.num_clusters, dtype=bool)
            for x in range(catalog.cluster_of.shape[0]):
                covered |= np.isin(np.arange(catalog.num_clusters), catalog.cluster_of[x][keep])
            missing = np.flatnonzero(~covered)
        else:
            covered = np.unique(catalog.cluster_of[keep])
            missing = np.setdiff1d(np.arange(catalog.num_clusters), covered)
        if missing.size:
            warnings.warn(
                f"clusters {missing.tolist()} have no supported action left; "
                "cluster-weighted estimates will ignore them",
                stacklevel=2,
            )
    return Policy(probs / row_sums[:, None])


def sample_logged_data(
    env: SyntheticEnvironment, pi0: Policy, n: int, seed: SeedLike
) -> LoggedDataset:
    """Draw n i.i.d. records (x, a, e_a, c_a, pi0(a|x), r) from the world.

    Context/action draws and reward draws use split RNG streams, and the
    environment itself is never touched, so replications with different n or
    seed share the identical world.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    draw_rng, reward_rng = (np.random.default_rng(s) for s in root.spawn(2))

    contexts, catalog, rewards = env.contexts, env.catalog, env.rewards
    xs = draw_rng.choice(contexts.num_contexts, size=n, p=contexts.weights)
    cdf = np.cumsum(pi0.probs, axis=1)
    u = draw_rng.random(n)
    acts = np.minimum((cdf[xs] <= u[:, None]).sum(axis=1), catalog.num_actions - 1)
    # Rounding at the top of the CDF can land on a zero-probability action;
    # redraw those few records exactly.
    bad = np.flatnonzero(pi0.probs[xs, acts] <= 0)
    for i in bad:
        acts[i] = draw_rng.choice(catalog.num_actions, p=pi0.probs[xs[i]])

    q_drawn = rewards.q[xs, acts]
    if rewards.bernoulli:
        r = (reward_rng.random(n) < q_drawn).astype(np.float64)
    else:
        sigma = np.broadcast_to(rewards.noise, rewards.q.shape)[xs, acts]
        r = q_drawn + sigma * reward_rng.standard_normal(n)
    return LoggedDataset(
        context_id=xs,
        action_id=acts,
        embedding_id=catalog.embedding_ids[acts],
        cluster_id=catalog.clusters_at(xs, acts),
        propensity=pi0.probs[xs, acts],
        reward=r,
        contexts=contexts,
        catalog=catalog,
        logging_policy=pi0,
    )

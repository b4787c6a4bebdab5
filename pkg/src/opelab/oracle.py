"""Exact ground truth on tiny instances.

On a small finite world with finitely many reward outcomes, every estimator
here is a sample mean of i.i.d. per-record terms, so its exact expectation
and variance follow from enumerating all (context, action, reward) outcomes.
Closed-form bias and variance expressions are implemented separately so the
two routes can be checked against each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    ActionCatalog,
    ContextSet,
    Policy,
    RewardTable,
    SupportViolation,
    cluster_marginal,
    cluster_marginal_table,
    embedding_marginal,
    embedding_marginal_table,
    policy_value,
    vanilla_weight,
    cluster_weight,
    embedding_marginal_weight,
)
from .estimators import MODEL_KINDS, EstimatorSpec
from .regression import CrossFitModel, MatrixModel, RegressionModel

MAX_ORACLE_CONTEXTS = 10
MAX_ORACLE_ACTIONS = 20


class NotEnumerable(ValueError):
    """The estimator's per-record term is not a fixed function of (x, a, r)."""


class LocalCorrectnessError(ValueError):
    """The model does not preserve within-cluster reward differences, so the
    requested closed form does not apply."""


@dataclass(frozen=True)
class TinyInstance:
    """A fully enumerable world: finite reward support, explicit policies,
    and a fixed (not data-fitted) reward model."""

    contexts: ContextSet
    catalog: ActionCatalog
    rewards: RewardTable
    pi0: Policy
    pi: Policy
    model: RegressionModel

    def __post_init__(self):
        if self.contexts.num_contexts > MAX_ORACLE_CONTEXTS:
            raise ValueError(f"oracle instances allow at most {MAX_ORACLE_CONTEXTS} contexts")
        if self.catalog.num_actions > MAX_ORACLE_ACTIONS:
            raise ValueError(f"oracle instances allow at most {MAX_ORACLE_ACTIONS} actions")
        if not self.rewards.bernoulli and not self.rewards.noiseless:
            raise ValueError(
                "oracle instances need finite reward support: Bernoulli or "
                "noiseless Gaussian rewards"
            )

    def spec(self, kind: str, clip: Optional[float] = None) -> EstimatorSpec:
        """EstimatorSpec for this instance's model."""
        model = self.model if kind in MODEL_KINDS else None
        return EstimatorSpec(kind=kind, model=model, clip=clip)

    def value(self) -> float:
        return policy_value(self.pi, self.rewards, self.contexts)

    def model_matrix(self) -> np.ndarray:
        return self.model.predict_matrix(self.contexts, self.catalog)


def _reward_outcomes(rewards: RewardTable, x: int, a: int):
    """Finite support of p(r|x, a) as (value, probability) pairs."""
    q = rewards.q[x, a]
    if rewards.bernoulli:
        return ((1.0, q), (0.0, 1.0 - q))
    return ((q, 1.0),)


def _per_record_term(inst: TinyInstance, spec: EstimatorSpec):
    """Return term(x, a, r): the estimator's contribution from one record.

    Weights are evaluated with the scalar weight definitions, independently of
    the vectorized estimator implementations.
    """
    if isinstance(spec.model, CrossFitModel):
        raise NotEnumerable("cross-fitted models are data-dependent; cannot enumerate")
    kind = spec.kind
    model = spec.model
    f = model.predict_matrix(inst.contexts, inst.catalog) if model is not None else None
    if f is not None:
        under_target = np.einsum("xa,xa->x", inst.pi.probs, f)

    def clip(w):
        return w if spec.clip is None else min(w, spec.clip)

    def weight(x, a):
        if kind in ("ips", "dr"):
            return clip(vanilla_weight(inst.pi, inst.pi0, x, a))
        if kind in ("offcem", "clustering_onestep", "plus_clustering"):
            c = int(inst.catalog.clusters_for(x)[a])
            return clip(cluster_weight(inst.pi, inst.pi0, inst.catalog, x, c))
        if kind in ("mips", "plus_regression"):
            e = int(inst.catalog.embedding_ids[a])
            return clip(embedding_marginal_weight(inst.pi, inst.pi0, inst.catalog, x, e))
        return 0.0

    if kind == "dm":
        return lambda x, a, r: under_target[x]
    if kind in ("ips", "mips", "plus_clustering"):
        return lambda x, a, r: weight(x, a) * r
    if kind in ("dr", "offcem", "clustering_onestep", "plus_regression"):
        return lambda x, a, r: weight(x, a) * (r - f[x, a]) + under_target[x]
    raise ValueError(f"unknown estimator kind {kind!r}")


def _term_moments(inst: TinyInstance, spec: EstimatorSpec):
    """First and second moment of the per-record term under
    p(x) pi0(a|x) p(r|x, a), by exhaustive enumeration."""
    term = _per_record_term(inst, spec)
    first = 0.0
    second = 0.0
    for x in range(inst.contexts.num_contexts):
        px = inst.contexts.weights[x]
        if px == 0.0:
            continue
        for a in range(inst.catalog.num_actions):
            pa = inst.pi0.probs[x, a]
            if pa == 0.0:
                continue
            for r, pr in _reward_outcomes(inst.rewards, x, a):
                if pr == 0.0:
                    continue
                t = term(x, a, r)
                w = px * pa * pr
                first += w * t
                second += w * t * t
    return first, second


def exact_mean(inst: TinyInstance, spec: EstimatorSpec) -> float:
    """Exact expectation of the estimator over logged datasets."""
    first, _ = _term_moments(inst, spec)
    return first


def exact_variance(inst: TinyInstance, spec: EstimatorSpec, n: int) -> float:
    """Exact variance of the estimator over logged datasets of size n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    first, second = _term_moments(inst, spec)
    return (second - first * first) / n


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def local_correctness_gap(
    q: np.ndarray, model_values: np.ndarray, catalog: ActionCatalog
) -> float:
    """Largest within-cluster spread of q - f across all (context, cluster)
    cells; zero means the model preserves every within-cluster reward
    difference exactly."""
    q = np.asarray(q, dtype=np.float64)
    delta = q - np.asarray(model_values, dtype=np.float64)
    worst = 0.0
    for x in range(q.shape[0]):
        clusters = catalog.clusters_for(x)
        for c in range(catalog.num_clusters):
            within = delta[x, clusters == c]
            if within.size > 1:
                worst = max(worst, float(within.max() - within.min()))
    return worst


def is_locally_correct(inst: TinyInstance, tol: float = 1e-9) -> bool:
    return local_correctness_gap(inst.rewards.q, inst.model_matrix(), inst.catalog) <= tol


def bias_closed_form(inst: TinyInstance) -> float:
    """Closed-form bias of the cluster-weighted estimator with inst.model.

    Sums, over contexts and clusters weighted by p(x) pi(c|x), the pairwise
    within-cluster terms
        (dq(x,a,b) - df(x,a,b)) * (pi0(a|x,c) pi(b|x,c) - pi0(b|x,c) pi(a|x,c)),
    which is the division-free expansion of
        pi0(a|x,c) pi0(b|x,c) (dq - df) (pi(b|x,c)/pi0(b|x,c) - pi(a|x,c)/pi0(a|x,c)).
    """
    f = inst.model_matrix()
    q = inst.rewards.q
    total = 0.0
    for x in range(inst.contexts.num_contexts):
        px = inst.contexts.weights[x]
        if px == 0.0:
            continue
        clusters = inst.catalog.clusters_for(x)
        marg_pi = cluster_marginal(inst.pi, inst.catalog, x)
        marg_pi0 = cluster_marginal(inst.pi0, inst.catalog, x)
        for c in range(inst.catalog.num_clusters):
            pc = marg_pi[c]
            if pc == 0.0:
                continue
            if marg_pi0[c] == 0.0:
                raise SupportViolation("cluster", x, c)
            members = np.flatnonzero(clusters == c)
            pi0_cond = inst.pi0.probs[x, members] / marg_pi0[c]
            pi_cond = inst.pi.probs[x, members] / pc
            inner = 0.0
            for i in range(members.size):
                for j in range(i + 1, members.size):
                    a, b = members[i], members[j]
                    ddiff = (q[x, a] - q[x, b]) - (f[x, a] - f[x, b])
                    inner += ddiff * (pi0_cond[i] * pi_cond[j] - pi0_cond[j] * pi_cond[i])
            total += px * pc * inner
    return total


def _check_cluster_support(inst: TinyInstance):
    marg_pi = cluster_marginal_table(inst.pi, inst.catalog)
    marg_pi0 = cluster_marginal_table(inst.pi0, inst.catalog)
    bad = (marg_pi > 0) & (marg_pi0 == 0) & (inst.contexts.weights[:, None] > 0)
    if np.any(bad):
        x, c = np.argwhere(bad)[0]
        raise SupportViolation("cluster", x, c)


def _check_action_support(inst: TinyInstance):
    bad = (
        (inst.pi.probs > 0)
        & (inst.pi0.probs == 0)
        & (inst.contexts.weights[:, None] > 0)
    )
    if np.any(bad):
        x, a = np.argwhere(bad)[0]
        raise SupportViolation("action", x, a)


def _check_embedding_support(inst: TinyInstance):
    marg_pi = embedding_marginal_table(inst.pi, inst.catalog)
    marg_pi0 = embedding_marginal_table(inst.pi0, inst.catalog)
    bad = (marg_pi > 0) & (marg_pi0 == 0) & (inst.contexts.weights[:, None] > 0)
    if np.any(bad):
        x, e = np.argwhere(bad)[0]
        raise SupportViolation("embedding", x, e)


def _value_dispersion_term(inst: TinyInstance) -> float:
    """Var over p(x) of the per-context target value sum_a pi(a|x) q(x, a)."""
    vals = np.einsum("xa,xa->x", inst.pi.probs, inst.rewards.q)
    mean = float(inst.contexts.weights @ vals)
    return float(inst.contexts.weights @ (vals * vals)) - mean * mean


def _cluster_weight_matrix(inst: TinyInstance) -> np.ndarray:
    """w(x, phi(x, a)) for every (x, a), with 0/0 treated as 0."""
    marg_pi = cluster_marginal_table(inst.pi, inst.catalog)
    marg_pi0 = cluster_marginal_table(inst.pi0, inst.catalog)
    ratio = np.divide(marg_pi, marg_pi0, out=np.zeros_like(marg_pi), where=marg_pi0 > 0)
    if inst.catalog.context_dependent:
        return np.take_along_axis(ratio, inst.catalog.cluster_of, axis=1)
    return ratio[:, inst.catalog.cluster_of]


def variance_closed_form_offcem(inst: TinyInstance, n: int) -> float:
    """Closed-form variance of the cluster-weighted estimator, valid when
    inst.model preserves within-cluster reward differences:

        (1/n) { E[w(x, phi)^2 sigma^2(x, a)]
                + E_x[ Var_{pi0(a|x)}[ w(x, phi) (q - f)(x, a) ] ]
                + Var_x[ E_pi[q(x, a)] ] }.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_cluster_support(inst)
    gap = local_correctness_gap(inst.rewards.q, inst.model_matrix(), inst.catalog)
    if gap > 1e-9:
        raise LocalCorrectnessError(
            f"model violates within-cluster difference preservation (gap {gap:.3g})"
        )
    w = _cluster_weight_matrix(inst)
    sigma2 = inst.rewards.sigma_matrix() ** 2
    delta = inst.rewards.q - inst.model_matrix()
    p0 = inst.pi0.probs
    px = inst.contexts.weights
    noise_term = float(px @ np.einsum("xa,xa->x", p0, w * w * sigma2))
    wd = w * delta
    mean_wd = np.einsum("xa,xa->x", p0, wd)
    var_wd = np.einsum("xa,xa->x", p0, wd * wd) - mean_wd * mean_wd
    weight_term = float(px @ var_wd)
    return (noise_term + weight_term + _value_dispersion_term(inst)) / n


def variance_closed_form_dr(inst: TinyInstance, n: int) -> float:
    """Closed-form variance of the vanilla-weighted doubly robust estimator
    with inst.model as the reward model; the plain importance-weighting
    variance is the special case of an all-zero model."""
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_action_support(inst)
    w = np.divide(
        inst.pi.probs, inst.pi0.probs, out=np.zeros_like(inst.pi.probs), where=inst.pi0.probs > 0
    )
    sigma2 = inst.rewards.sigma_matrix() ** 2
    delta = inst.rewards.q - inst.model_matrix()
    p0 = inst.pi0.probs
    px = inst.contexts.weights
    noise_term = float(px @ np.einsum("xa,xa->x", p0, w * w * sigma2))
    wd = w * delta
    mean_wd = np.einsum("xa,xa->x", p0, wd)
    var_wd = np.einsum("xa,xa->x", p0, wd * wd) - mean_wd * mean_wd
    weight_term = float(px @ var_wd)
    return (noise_term + weight_term + _value_dispersion_term(inst)) / n


def variance_closed_form_ips(inst: TinyInstance, n: int) -> float:
    """DR closed form with a zero model."""
    zero = MatrixModel.constant(inst.contexts.num_contexts, inst.catalog.num_actions)
    shadow = TinyInstance(
        contexts=inst.contexts,
        catalog=inst.catalog,
        rewards=inst.rewards,
        pi0=inst.pi0,
        pi=inst.pi,
        model=zero,
    )
    return variance_closed_form_dr(shadow, n)


def mips_variance_reduction(inst: TinyInstance, n: int) -> float:
    """Variance saved by embedding-marginal weighting relative to vanilla
    importance weighting:

        (1/n) E_{p(x) pi0(e|x)}[ E[r^2 | x, e] * Var_{pi0(a|x,e)}[ w(x, a) ] ],

    which is nonnegative by construction. It equals Var(vanilla) -
    Var(marginal) when the reward distribution depends on the action only
    through its embedding.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_embedding_support(inst)
    q = inst.rewards.q
    if inst.rewards.bernoulli:
        second_moment = q
    else:
        second_moment = q * q + inst.rewards.sigma_matrix() ** 2
    total = 0.0
    for x in range(inst.contexts.num_contexts):
        px = inst.contexts.weights[x]
        if px == 0.0:
            continue
        marg0 = embedding_marginal(inst.pi0, inst.catalog, x)
        for e in range(inst.catalog.num_embeddings):
            pe = marg0[e]
            if pe == 0.0:
                continue
            members = np.flatnonzero(inst.catalog.embedding_ids == e)
            cond = inst.pi0.probs[x, members] / pe
            w = np.array([vanilla_weight(inst.pi, inst.pi0, x, int(a)) for a in members])
            r2 = float(cond @ second_moment[x, members])
            var_w = float(cond @ (w * w)) - float(cond @ w) ** 2
            total += px * pe * r2 * var_w
    return total / n


# ---------------------------------------------------------------------------
# Random instances for property suites
# ---------------------------------------------------------------------------


def _dense_labels(rng, n_items: int, n_groups: int) -> np.ndarray:
    """Random assignment of items to groups with every group nonempty."""
    labels = np.concatenate(
        [np.arange(n_groups), rng.integers(0, n_groups, size=n_items - n_groups)]
    )
    return rng.permutation(labels)


def random_tiny_instance(
    rng: np.random.Generator,
    max_contexts: int = 5,
    max_actions: int = 12,
    max_clusters: int = 4,
    embedding_mediated: bool = True,
    sparse_target: bool = True,
) -> TinyInstance:
    """Random Bernoulli-reward instance with a full-support logging policy.

    With `embedding_mediated=True` the expected reward depends on the action
    only through its embedding, which makes embedding-marginal weighting
    unbiased and the variance-reduction identity exact. The clustering is
    context-dependent for half of the instances.
    """
    nx = int(rng.integers(1, max_contexts + 1))
    na = int(rng.integers(2, max_actions + 1))
    nc = int(rng.integers(1, min(max_clusters, na) + 1))
    ne = int(rng.integers(1, na + 1))

    weights = rng.uniform(0.2, 1.0, size=nx)
    contexts = ContextSet(features=rng.normal(size=(nx, 2)), weights=weights / weights.sum())

    embedding_labels = _dense_labels(rng, na, ne)
    if rng.random() < 0.5:
        cluster_of = np.vstack(
            [_dense_labels(rng, na, nc)] + [rng.integers(0, nc, size=na) for _ in range(nx - 1)]
        )
    else:
        cluster_of = _dense_labels(rng, na, nc)
    catalog = ActionCatalog(embeddings=embedding_labels.reshape(-1, 1), cluster_of=cluster_of)

    if embedding_mediated:
        q = rng.uniform(0.05, 0.95, size=(nx, ne))[:, embedding_labels]
    else:
        q = rng.uniform(0.05, 0.95, size=(nx, na))
    rewards = RewardTable(q=q, bernoulli=True)

    p0 = rng.uniform(0.1, 1.0, size=(nx, na))
    pi0 = Policy(p0 / p0.sum(axis=1, keepdims=True))
    p = rng.uniform(0.0, 1.0, size=(nx, na)) * (rng.random(size=(nx, na)) > 0.3)
    if sparse_target:
        for x in range(nx):
            if p[x].sum() == 0.0:
                p[x, rng.integers(0, na)] = 1.0
    else:
        p = p + 0.05
    pi = Policy(p / p.sum(axis=1, keepdims=True))

    model = MatrixModel(rng.uniform(-0.5, 1.5, size=(nx, na)))
    return TinyInstance(
        contexts=contexts, catalog=catalog, rewards=rewards, pi0=pi0, pi=pi, model=model
    )


def locally_correct_model(inst: TinyInstance, rng: np.random.Generator) -> MatrixModel:
    """q plus a random per-(context, cluster) offset; preserves within-cluster
    reward differences by construction."""
    delta = rng.uniform(-1.0, 1.0, size=(inst.contexts.num_contexts, inst.catalog.num_clusters))
    if inst.catalog.context_dependent:
        shift = np.take_along_axis(delta, inst.catalog.cluster_of, axis=1)
    else:
        shift = delta[:, inst.catalog.cluster_of]
    return MatrixModel(inst.rewards.q + shift)

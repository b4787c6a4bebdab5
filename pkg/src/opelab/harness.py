"""Experiment orchestration: sweep configuration, replicated simulation,
MSE decomposition against the exact policy value, and report serialization.

Replications use disjoint counter-style RNG streams keyed by (master seed,
cell index, replication index), the environment is held fixed across the
replications of a cell, and report assembly is an ordered reduction, so a
given configuration produces byte-identical CSV output regardless of the
worker-thread count.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

from .core import (
    ActionCatalog,
    ContextSet,
    LoggedDataset,
    Policy,
    SupportViolation,
    policy_value,
)
from .estimators import (
    ESTIMATOR_KINDS,
    MODEL_KINDS,
    EstimatorSpec,
    MissingLoggingPolicy,
    estimate,
)
from .regression import (
    InsufficientDataError,
    LearnerConfig,
    MatrixModel,
    TrainingDiverged,
    cross_fit,
    fit_one_step,
    two_step_fit,
)
from .synthetic import (
    EnvironmentSpec,
    SyntheticEnvironment,
    apply_unsupported,
    epsilon_target,
    make_environment,
    sample_logged_data,
    softmax_logging,
)

SWEEP_AXES = (
    "n",
    "num_actions",
    "num_unsupported",
    "epsilon",
    "beta",
    "sigma",
    "num_clusters",
)

REPORT_HEADER = (
    "sweep_axis,sweep_value,estimator,mse,squared_bias,variance,"
    "relative_mse,replications,true_value"
)
LONG_HEADER = "sweep_axis,sweep_value,estimator,replication,estimate"

# Two-step models use the two-step pipeline; every other model kind shares a
# single cross-fitted one-step regression per replication.
TWO_STEP_KINDS = frozenset({"offcem"})
ONE_STEP_KINDS = MODEL_KINDS - TWO_STEP_KINDS


class ConfigError(ValueError):
    """Bad experiment configuration or malformed input file."""


@dataclass(frozen=True)
class EstimatorRequest:
    """One estimator column of the report.

    `model_source="fitted"` fits the reward model from each replication's
    logged data (cross-fitted); `"true"` plugs in the environment's exact
    expected-reward table, which is useful for calibration runs.
    """

    kind: str
    clip: Optional[float] = None
    model_source: str = "fitted"
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ConfigError(f"unknown estimator kind {self.kind!r}")
        if self.model_source not in ("fitted", "true"):
            raise ConfigError("model_source must be 'fitted' or 'true'")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        name = self.kind
        if self.model_source == "true":
            name += "_true"
        if self.clip is not None:
            name += f"_clip{self.clip:g}"
        return name


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of a sweep; mirrors the JSON config file field for
    field. Non-swept axes take their baseline values from this object."""

    environment: EnvironmentSpec
    sweep_axis: str
    sweep_values: tuple
    estimators: tuple
    learner: LearnerConfig = LearnerConfig()
    replications: int = 300
    master_seed: int = 0
    n: int = 3000
    epsilon: float = 0.2
    beta: float = -0.1
    num_unsupported: int = 0
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep_axis must be one of {SWEEP_AXES}")
        if len(self.sweep_values) == 0:
            raise ConfigError("sweep_values must be nonempty")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if len(self.estimators) == 0:
            raise ConfigError("estimator list must be nonempty")
        names = [r.name for r in self.estimators]
        if len(set(names)) != len(names):
            raise ConfigError(f"estimator names must be unique, got {names}")
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        object.__setattr__(self, "estimators", tuple(self.estimators))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["environment"] = asdict(self.environment)
        out["learner"] = asdict(self.learner)
        out["learner"]["hidden"] = list(self.learner.hidden)
        out["sweep_values"] = list(self.sweep_values)
        out["estimators"] = [asdict(r) for r in self.estimators]
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        data = dict(raw)
        try:
            env = EnvironmentSpec(**data.pop("environment", {}))
            learner_raw = dict(data.pop("learner", {}))
            if "hidden" in learner_raw:
                learner_raw["hidden"] = tuple(learner_raw["hidden"])
            learner = LearnerConfig(**learner_raw)
            requests = []
            for item in data.pop("estimators", []):
                if isinstance(item, str):
                    requests.append(EstimatorRequest(kind=item))
                else:
                    requests.append(EstimatorRequest(**item))
            data["sweep_values"] = tuple(data.get("sweep_values", ()))
            return cls(environment=env, learner=learner, estimators=tuple(requests), **data)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class ReportRow:
    sweep_value: float
    estimator: str
    mse: float
    squared_bias: float
    variance: float
    relative_mse: float
    replications: int
    true_value: float
    error: Optional[str] = None


@dataclass(frozen=True)
class ExperimentReport:
    """Per-(sweep value, estimator) accuracy summary plus the raw replicate
    estimates, so confidence bands can be recomputed downstream."""

    sweep_axis: str
    rows: tuple
    replicate_estimates: tuple   # aligned with rows; one tuple of floats each
    config: dict
    config_hash: str
    master_seed: int
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "sweep_axis": self.sweep_axis,
            "rows": [asdict(r) for r in self.rows],
            "replicate_estimates": [list(e) for e in self.replicate_estimates],
            "config": self.config,
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "wall_time_s": self.wall_time_s,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentReport":
        return cls(
            sweep_axis=raw["sweep_axis"],
            rows=tuple(ReportRow(**r) for r in raw["rows"]),
            replicate_estimates=tuple(tuple(e) for e in raw["replicate_estimates"]),
            config=raw["config"],
            config_hash=raw["config_hash"],
            master_seed=raw["master_seed"],
            wall_time_s=raw["wall_time_s"],
        )

    def row(self, sweep_value, estimator: str) -> ReportRow:
        for r in self.rows:
            if r.estimator == estimator and r.sweep_value == sweep_value:
                return r
        raise KeyError(f"no report row for ({sweep_value}, {estimator})")

    def estimates(self, sweep_value, estimator: str) -> np.ndarray:
        for r, est in zip(self.rows, self.replicate_estimates):
            if r.estimator == estimator and r.sweep_value == sweep_value:
                return np.asarray(est)
        raise KeyError(f"no report row for ({sweep_value}, {estimator})")


def mse_decomposition(estimates: Sequence[float], true_value: float):
    """(mse, squared_bias, variance) of a replicate set against the truth.

    bias is the mean estimate minus the truth, variance is the population
    variance of the replicates, and mse is defined as their sum so the
    decomposition identity holds exactly.
    """
    values = np.asarray(estimates, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot decompose an empty estimate list")
    bias = float(values.mean()) - true_value
    centered = values - values.mean()
    variance = float(np.mean(centered * centered))
    squared_bias = bias * bias
    return squared_bias + variance, squared_bias, variance


# ---------------------------------------------------------------------------
# Sweep execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _CellSetup:
    value: float
    env: SyntheticEnvironment
    pi0: Policy
    pi: Policy
    true_value: float
    n: int


def _cell_parameters(cfg: ExperimentConfig, value):
    env_spec = cfg.environment
    n, eps, beta, unsup = cfg.n, cfg.epsilon, cfg.beta, cfg.num_unsupported
    axis = cfg.sweep_axis
    if axis == "n":
        n = int(value)
    elif axis == "epsilon":
        eps = float(value)
    elif axis == "beta":
        beta = float(value)
    elif axis == "num_unsupported":
        unsup = int(value)
    elif axis == "num_actions":
        env_spec = replace(env_spec, num_actions=int(value))
    elif axis == "sigma":
        env_spec = replace(env_spec, reward_noise=float(value))
    elif axis == "num_clusters":
        env_spec = replace(env_spec, num_clusters=int(value))
    return env_spec, n, eps, beta, unsup


def pick_unsupported(
    catalog: ActionCatalog, count: int, seed: np.random.SeedSequence
) -> np.ndarray:
    """Deterministically choose actions to strip from the logging policy while
    leaving every cluster at least one supported action."""
    if count <= 0:
        return np.empty(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    clusters = catalog.cluster_of if not catalog.context_dependent else catalog.cluster_of[0]
    remaining = np.bincount(clusters, minlength=catalog.num_clusters)
    chosen = []
    for a in rng.permutation(catalog.num_actions):
        if len(chosen) == count:
            break
        c = clusters[a]
        if remaining[c] > 1:
            chosen.append(a)
            remaining[c] -= 1
    if len(chosen) < count:
        warnings.warn(
            f"only {len(chosen)} of {count} actions can be unsupported while "
            "keeping every cluster covered",
            stacklevel=2,
        )
    return np.asarray(sorted(chosen), dtype=np.int64)


def _build_cell(cfg: ExperimentConfig, cell_index: int, value) -> _CellSetup:
    env_spec, n, eps, beta, unsup = _cell_parameters(cfg, value)
    env = make_environment(replace(env_spec, master_seed=env_spec.master_seed))
    pi0 = softmax_logging(env.rewards, beta)
    if unsup > 0:
        dropped = pick_unsupported(
            env.catalog, unsup, np.random.SeedSequence([cfg.master_seed, cell_index])
        )
        pi0 = apply_unsupported(pi0, dropped, env.catalog)
    pi = epsilon_target(env.rewards, eps)
    true_v = policy_value(pi, env.rewards, env.contexts)
    return _CellSetup(value=value, env=env, pi0=pi0, pi=pi, true_value=true_v, n=n)


def replication_seed(master_seed: int, cell_index: int, rep: int) -> np.random.SeedSequence:
    """Disjoint stream per (cell, replication)."""
    return np.random.SeedSequence([master_seed, cell_index, rep])


def _fit_models(data: LoggedDataset, cfg: ExperimentConfig):
    """Fit each model family at most once per replication."""
    kinds = {r.kind for r in cfg.estimators if r.model_source == "fitted"}
    models = {}
    if kinds & ONE_STEP_KINDS:
        models["one_step"] = cross_fit(
            data, cfg.learner.cross_fit_folds, lambda d: fit_one_step(d, cfg.learner)
        )
    if kinds & TWO_STEP_KINDS:
        models["two_step"] = cross_fit(
            data,
            cfg.learner.cross_fit_folds,
            lambda d: two_step_fit(d, data.catalog, cfg.learner),
        )
    return models


def _model_for(request: EstimatorRequest, models: dict, env: SyntheticEnvironment):
    if request.kind not in MODEL_KINDS:
        return None
    if request.model_source == "true":
        return MatrixModel(env.rewards.q)
    return models["two_step" if request.kind in TWO_STEP_KINDS else "one_step"]


def _run_replication(setup: _CellSetup, cfg: ExperimentConfig, cell_index: int, rep: int):
    """One replication: sample data, fit models, evaluate every estimator.

    Returns {estimator name: (estimate, error tag)} where a failed estimator
    yields (nan, tag) instead of aborting the sweep.
    """
    seed = replication_seed(cfg.master_seed, cell_index, rep)
    data = sample_logged_data(setup.env, setup.pi0, setup.n, seed)
    out = {}
    try:
        models = _fit_models(data, cfg)
        fit_error = None
    except (TrainingDiverged, InsufficientDataError) as exc:
        models = {}
        fit_error = f"{type(exc).__name__}: {exc}"
    for request in cfg.estimators:
        if fit_error is not None and request.kind in MODEL_KINDS and request.model_source == "fitted":
            out[request.name] = (float("nan"), fit_error)
            continue
        spec = EstimatorSpec(
            kind=request.kind,
            model=_model_for(request, models, setup.env),
            clip=request.clip,
        )
        try:
            out[request.name] = (estimate(data, setup.pi, spec), None)
        except (SupportViolation, MissingLoggingPolicy, ValueError) as exc:
            out[request.name] = (float("nan"), f"{type(exc).__name__}: {exc}")
    return out


def run_single(cfg: ExperimentConfig, cell_index: int, rep: int) -> dict:
    """Run one replication of one sweep cell in isolation; the result matches
    the corresponding entries of a full run_sweep byte for byte."""
    if not 0 <= cell_index < len(cfg.sweep_values):
        raise ConfigError("cell_index out of range")
    setup = _build_cell(cfg, cell_index, cfg.sweep_values[cell_index])
    return _run_replication(setup, cfg, cell_index, rep)


def run_sweep(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Execute the full sweep and aggregate MSE / squared bias / variance per
    (sweep value, estimator) cell against the exact policy value."""
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    started = time.perf_counter()
    rows = []
    replicate_estimates = []
    # Pin BLAS pools to one thread so results do not depend on worker count.
    limiter = (
        threadpool_limits(limits=1) if threadpool_limits is not None else contextlib.nullcontext()
    )
    with limiter:
        for cell_index, value in enumerate(cfg.sweep_values):
            setup = _build_cell(cfg, cell_index, value)

            def work(rep, _setup=setup, _cell=cell_index):
                return _run_replication(_setup, cfg, _cell, rep)

            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    results = list(pool.map(work, range(cfg.replications)))
            else:
                results = [work(rep) for rep in range(cfg.replications)]

            for request in cfg.estimators:
                values = np.array([results[r][request.name][0] for r in range(cfg.replications)])
                tags = sorted(
                    {
                        results[r][request.name][1]
                        for r in range(cfg.replications)
                        if results[r][request.name][1] is not None
                    }
                )
                if tags or not np.all(np.isfinite(values)):
                    mse = squared_bias = variance = rel = float("nan")
                    error = "; ".join(tags) if tags else "non-finite estimate"
                else:
                    mse, squared_bias, variance = mse_decomposition(values, setup.true_value)
                    rel = mse / setup.true_value**2 if setup.true_value != 0 else float("nan")
                    error = None
                rows.append(
                    ReportRow(
                        sweep_value=float(value),
                        estimator=request.name,
                        mse=mse,
                        squared_bias=squared_bias,
                        variance=variance,
                        relative_mse=rel,
                        replications=cfg.replications,
                        true_value=setup.true_value,
                        error=error,
                    )
                )
                replicate_estimates.append(tuple(float(v) for v in values))
    return ExperimentReport(
        sweep_axis=cfg.sweep_axis,
        rows=tuple(rows),
        replicate_estimates=tuple(replicate_estimates),
        config=cfg.to_dict(),
        config_hash=cfg.config_hash(),
        master_seed=cfg.master_seed,
        wall_time_s=time.perf_counter() - started,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    """Shortest round-trip float formatting; deterministic across runs."""
    return repr(float(x))


def emit_report(report: ExperimentReport, out_dir, formats=("csv", "json", "long")) -> list:
    """Write report.csv (fixed header), report.json (full config and rows)
    and estimates_long.csv (one row per replicate, plot-ready)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if "csv" in formats:
            path = out / "report.csv"
            lines = [REPORT_HEADER]
            for r in report.rows:
                lines.append(
                    ",".join(
                        (
                            report.sweep_axis,
                            _fmt(r.sweep_value),
                            r.estimator,
                            _fmt(r.mse),
                            _fmt(r.squared_bias),
                            _fmt(r.variance),
                            _fmt(r.relative_mse),
                            str(r.replications),
                            _fmt(r.true_value),
                        )
                    )
                )
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
        if "json" in formats:
            path = out / "report.json"
            path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
            written.append(path)
        if "long" in formats:
            path = out / "estimates_long.csv"
            lines = [LONG_HEADER]
            for r, estimates in zip(report.rows, report.replicate_estimates):
                for rep, value in enumerate(estimates):
                    lines.append(
                        ",".join(
                            (
                                report.sweep_axis,
                                _fmt(r.sweep_value),
                                r.estimator,
                                str(rep),
                                _fmt(value),
                            )
                        )
                    )
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
        return written
    except OSError as exc:
        raise OSError(f"cannot write report under {out}: {exc}") from exc


def load_report(path) -> ExperimentReport:
    with open(path) as fh:
        return ExperimentReport.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# CSV and model file formats used by the command-line interface
# ---------------------------------------------------------------------------

LOGGED_DATA_HEADER = "context_id,action_id,embedding_id,cluster_id,propensity,reward"


def write_logged_data_csv(data: LoggedDataset, path) -> None:
    lines = [LOGGED_DATA_HEADER]
    for i in range(data.n):
        lines.append(
            f"{data.context_id[i]},{data.action_id[i]},{data.embedding_id[i]},"
            f"{data.cluster_id[i]},{_fmt(data.propensity[i])},{_fmt(data.reward[i])}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_logged_data_csv(
    path,
    contexts: ContextSet,
    catalog: ActionCatalog,
    logging_policy: Optional[Policy] = None,
) -> LoggedDataset:
    """Parse the fixed-schema logged-data CSV (header required)."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read logged data {path}: {exc}") from exc
    if not lines or lines[0].strip() != LOGGED_DATA_HEADER:
        raise ConfigError(
            f"{path}: first line must be the header '{LOGGED_DATA_HEADER}'"
        )
    cols = [[], [], [], [], [], []]
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise ConfigError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        try:
            for j in range(4):
                cols[j].append(int(parts[j]))
            cols[4].append(float(parts[4]))
            cols[5].append(float(parts[5]))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    try:
        return LoggedDataset(
            context_id=np.array(cols[0], dtype=np.int64),
            action_id=np.array(cols[1], dtype=np.int64),
            embedding_id=np.array(cols[2], dtype=np.int64),
            cluster_id=np.array(cols[3], dtype=np.int64),
            propensity=np.array(cols[4]),
            reward=np.array(cols[5]),
            contexts=contexts,
            catalog=catalog,
            logging_policy=logging_policy,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


CATALOG_HEADER = "action_id,embedding_id,cluster_id"


def write_catalog_csv(catalog: ActionCatalog, path) -> None:
    """Persist the catalog as ids; embedding vectors collapse to their ids and
    only context-independent clusterings are representable in this format."""
    if catalog.context_dependent:
        raise ValueError("the catalog CSV format holds context-independent clusterings only")
    lines = [CATALOG_HEADER]
    for a in range(catalog.num_actions):
        lines.append(f"{a},{catalog.embedding_ids[a]},{catalog.cluster_of[a]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_catalog_csv(path) -> ActionCatalog:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read catalog {path}: {exc}") from exc
    if not lines or lines[0].strip() != CATALOG_HEADER:
        raise ConfigError(f"{path}: first line must be the header '{CATALOG_HEADER}'")
    rows = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            a, e, c = (int(p) for p in line.split(","))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
        rows[a] = (e, c)
    if sorted(rows) != list(range(len(rows))):
        raise ConfigError(f"{path}: action ids must be exactly 0..{len(rows) - 1}")
    emb = np.array([rows[a][0] for a in range(len(rows))], dtype=np.int64).reshape(-1, 1)
    clusters = np.array([rows[a][1] for a in range(len(rows))], dtype=np.int64)
    try:
        return ActionCatalog(embeddings=emb, cluster_of=clusters)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


POLICY_HEADER = "context_id,action_id,probability"


def write_policy_csv(policy: Policy, path) -> None:
    lines = [POLICY_HEADER]
    for x in range(policy.num_contexts):
        for a in range(policy.num_actions):
            p = policy.probs[x, a]
            if p != 0.0:
                lines.append(f"{x},{a},{_fmt(p)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_policy_csv(path, num_contexts: int, num_actions: int) -> Policy:
    """Long-format policy table; omitted (context, action) pairs are zero."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read policy {path}: {exc}") from exc
    if not lines or lines[0].strip() != POLICY_HEADER:
        raise ConfigError(f"{path}: first line must be the header '{POLICY_HEADER}'")
    probs = np.zeros((num_contexts, num_actions))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            xs, as_, ps = line.split(",")
            x, a, p = int(xs), int(as_), float(ps)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
        if not (0 <= x < num_contexts and 0 <= a < num_actions):
            raise ConfigError(f"{path}:{lineno}: id out of range")
        probs[x, a] = p
    try:
        return Policy(probs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def policy_csv_extent(path) -> tuple:
    """(max context id + 1, max action id + 1) mentioned in a policy CSV."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read policy {path}: {exc}") from exc
    if not lines or lines[0].strip() != POLICY_HEADER:
        raise ConfigError(f"{path}: first line must be the header '{POLICY_HEADER}'")
    max_x = max_a = -1
    for line in lines[1:]:
        if not line.strip():
            continue
        xs, as_, _ = line.split(",")
        max_x = max(max_x, int(xs))
        max_a = max(max_a, int(as_))
    if max_x < 0:
        raise ConfigError(f"{path}: policy file has no rows")
    return max_x + 1, max_a + 1


def read_model_file(path) -> MatrixModel:
    """Reward-model file: JSON {"values": [[...]]} or an .npz with 'values'."""
    path = Path(path)
    try:
        if path.suffix == ".npz":
            with np.load(path) as archive:
                return MatrixModel(np.asarray(archive["values"], dtype=np.float64))
        with open(path) as fh:
            payload = json.load(fh)
        return MatrixModel(np.asarray(payload["values"], dtype=np.float64))
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load model file {path}: {exc}") from exc


def write_model_file(model: MatrixModel, path) -> None:
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, values=np.asarray(model.values))
    else:
        path.write_text(json.dumps({"values": np.asarray(model.values).tolist()}) + "\n")

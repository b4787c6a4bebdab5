"""Command-line interface.

Subcommands:
  simulate  run a replicated sweep from a JSON config and write reports
  estimate  evaluate one estimator on CSV inputs
  oracle    check closed-form bias/variance expressions against enumeration

Exit codes: 0 success, 1 configuration error, 2 runtime/estimator error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import (
    ActionCatalog,
    ContextSet,
    Policy,
    RewardTable,
    SupportViolation,
)
from .estimators import EstimatorSpec, MissingLoggingPolicy, estimate
from .harness import (
    ConfigError,
    ExperimentConfig,
    emit_report,
    policy_csv_extent,
    read_catalog_csv,
    read_logged_data_csv,
    read_model_file,
    read_policy_csv,
    run_sweep,
)
from .oracle import (
    LocalCorrectnessError,
    MatrixModel,
    TinyInstance,
    bias_closed_form,
    exact_mean,
    exact_variance,
    is_locally_correct,
    mips_variance_reduction,
    variance_closed_form_dr,
    variance_closed_form_ips,
    variance_closed_form_offcem,
)
from .regression import TrainingDiverged

ORACLE_TOL = 1e-10


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="opelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a replicated estimator sweep")
    sim.add_argument("--config", required=True, help="JSON experiment config")
    sim.add_argument("--out", default=None, help="output directory")
    sim.add_argument("--seed", type=int, default=None, help="override master seed")
    sim.add_argument("--reps", type=int, default=None, help="override replication count")
    sim.add_argument("--threads", type=int, default=1, help="worker threads")

    est = sub.add_parser("estimate", help="evaluate one estimator on CSV inputs")
    est.add_argument("--data", required=True, help="logged-data CSV")
    est.add_argument("--policy", required=True, help="target-policy CSV")
    est.add_argument("--catalog", required=True, help="action-catalog CSV")
    est.add_argument("--estimator", required=True, help="estimator kind")
    est.add_argument("--model", default=None, help="reward-model file (json or npz)")
    est.add_argument(
        "--logging-policy",
        default=None,
        help="logging-policy CSV (needed for marginal-weight estimators)",
    )
    est.add_argument("--clip", type=float, default=None, help="weight clipping threshold")

    orc = sub.add_parser("oracle", help="closed form vs enumeration checks")
    orc.add_argument("--instance", required=True, help="tiny-instance JSON")
    orc.add_argument(
        "--check",
        required=True,
        choices=("bias", "variance", "mips-reduction", "all"),
    )
    return parser


def _cmd_simulate(args) -> int:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
    cfg = ExperimentConfig.from_dict(raw)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.reps is not None:
        cfg = replace(cfg, replications=args.reps)
    out_dir = args.out or cfg.out_dir or "."
    report = run_sweep(cfg, threads=args.threads)
    paths = emit_report(report, out_dir)
    for path in paths:
        print(path)
    print(f"rows={len(report.rows)} wall_time_s={report.wall_time_s:.2f}")
    return 0


def _cmd_estimate(args) -> int:
    catalog = read_catalog_csv(args.catalog)
    num_contexts, policy_actions = policy_csv_extent(args.policy)
    if policy_actions > catalog.num_actions:
        raise ConfigError(
            f"policy mentions action {policy_actions - 1} but the catalog has "
            f"{catalog.num_actions} actions"
        )
    contexts = ContextSet.uniform(np.zeros((num_contexts, 0)))
    pi = read_policy_csv(args.policy, num_contexts, catalog.num_actions)
    logging_policy = None
    if args.logging_policy is not None:
        logging_policy = read_policy_csv(args.logging_policy, num_contexts, catalog.num_actions)
    data = read_logged_data_csv(args.data, contexts, catalog, logging_policy)
    model = read_model_file(args.model) if args.model else None
    try:
        spec = EstimatorSpec(kind=args.estimator, model=model, clip=args.clip)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    value = estimate(data, pi, spec)
    print(json.dumps({"estimator": args.estimator, "estimate": value, "n": data.n}))
    return 0


def _instance_from_json(path) -> tuple:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read instance {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"instance {path} is not valid JSON: {exc}") from exc
    try:
        q = np.asarray(raw["q"], dtype=np.float64)
        nx, na = q.shape
        clusters = np.asarray(raw["clusters"], dtype=np.int64)
        embeddings = np.asarray(
            raw.get("embeddings", list(range(na))), dtype=np.int64
        ).reshape(na, 1)
        weights = np.asarray(raw.get("context_weights", np.full(nx, 1.0 / nx)), dtype=np.float64)
        features = np.asarray(
            raw.get("context_features", np.zeros((nx, 1))), dtype=np.float64
        )
        mode = raw.get("reward_mode", "bernoulli")
        if mode not in ("bernoulli", "noiseless"):
            raise ConfigError("reward_mode must be 'bernoulli' or 'noiseless'")
        rewards = RewardTable(q=q, noise=0.0, bernoulli=mode == "bernoulli")
        inst = TinyInstance(
            contexts=ContextSet(features=features, weights=weights),
            catalog=ActionCatalog(embeddings=embeddings, cluster_of=clusters),
            rewards=rewards,
            pi0=Policy(np.asarray(raw["pi0"], dtype=np.float64)),
            pi=Policy(np.asarray(raw["pi"], dtype=np.float64)),
            model=MatrixModel(np.asarray(raw["model"], dtype=np.float64)),
        )
        return inst, int(raw.get("n", 1))
    except KeyError as exc:
        raise ConfigError(f"instance {path} is missing field {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"instance {path}: {exc}") from exc


def _cmd_oracle(args) -> int:
    inst, n = _instance_from_json(args.instance)
    checks = ("bias", "variance", "mips-reduction") if args.check == "all" else (args.check,)
    results = {}
    ok = True
    value = inst.value()
    if "bias" in checks:
        closed = bias_closed_form(inst)
        enumerated = exact_mean(inst, inst.spec("offcem")) - value
        good = abs(closed - enumerated) <= ORACLE_TOL
        results["bias"] = {
            "closed_form": closed,
            "enumerated": enumerated,
            "ok": good,
        }
        ok &= good
    if "variance" in checks:
        entry = {}
        enum_off = exact_variance(inst, inst.spec("offcem"), n)
        entry["offcem_enumerated"] = enum_off
        if is_locally_correct(inst):
            closed_off = variance_closed_form_offcem(inst, n)
            entry["offcem_closed_form"] = closed_off
            entry["offcem_ok"] = abs(closed_off - enum_off) <= ORACLE_TOL
            ok &= entry["offcem_ok"]
        else:
            entry["offcem_closed_form"] = None
            entry["note"] = "model is not locally correct; closed form skipped"
        closed_dr = variance_closed_form_dr(inst, n)
        enum_dr = exact_variance(inst, inst.spec("dr"), n)
        entry["dr_closed_form"] = closed_dr
        entry["dr_enumerated"] = enum_dr
        entry["dr_ok"] = abs(closed_dr - enum_dr) <= ORACLE_TOL
        ok &= entry["dr_ok"]
        closed_ips = variance_closed_form_ips(inst, n)
        enum_ips = exact_variance(inst, inst.spec("ips"), n)
        entry["ips_closed_form"] = closed_ips
        entry["ips_enumerated"] = enum_ips
        entry["ips_ok"] = abs(closed_ips - enum_ips) <= ORACLE_TOL
        ok &= entry["ips_ok"]
        results["variance"] = entry
    if "mips-reduction" in checks:
        reduction = mips_variance_reduction(inst, n)
        enumerated = exact_variance(inst, inst.spec("ips"), n) - exact_variance(
            inst, inst.spec("mips"), n
        )
        good = reduction >= -1e-12 and abs(reduction - enumerated) <= ORACLE_TOL
        results["mips-reduction"] = {
            "closed_form": reduction,
            "enumerated": enumerated,
            "ok": good,
        }
        ok &= good
    print(json.dumps({"true_value": value, "n": n, "checks": results}, indent=2))
    return 0 if ok else 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "estimate":
            return _cmd_estimate(args)
        return _cmd_oracle(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (
        SupportViolation,
        MissingLoggingPolicy,
        TrainingDiverged,
        LocalCorrectnessError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

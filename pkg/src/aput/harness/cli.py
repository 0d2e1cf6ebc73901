"""Command-line entry point: ``aput <subcommand> [options]``.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure
(non-convergence, divergence, impossible observation).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

from ..a2c import A2CPolicy, RandomPolicy, StopPolicy, evaluate, train
from ..belief import Belief
from ..dp import ValueTable, greedy_policy, value_iteration, verify_value_certificate
from ..env import PrivacyEnv, TraceWriter
from ..errors import (ConfigurationError, ConvergenceError, IngestionError, SizeError,
                      TrainingDivergedError, UsageError, ZeroLikelihoodError)
from ..mi import brute_force_trajectory_mi, enumerated_chain_mi, instantaneous_mi, uniform_release
from ..model import ObservationModel, build_synthetic, check_identifiability, desk_instance, \
    fit_from_csv, read_records
from .config import ExperimentConfig
from .sweep import run_put_sweep


EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
CONFIG_ERRORS = (ConfigurationError, IngestionError, UsageError, SizeError)
NUMERIC_ERRORS = (ConvergenceError, TrainingDivergedError, ZeroLikelihoodError)

log = logging.getLogger("aput")


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _env(cfg: ExperimentConfig, threshold=None):
    model = cfg.build_model()
    th = cfg.thresholds[0] if threshold is None else threshold
    return PrivacyEnv(model, cfg.build_prior(model), cfg.build_costs(), cfg.build_privacy(th))


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_model(args, cfg):
    if args.desk or cfg.model_source == "desk":
        model = desk_instance()
    else:
        seed = cfg.model_seed if args.seed is None else args.seed
        model = build_synthetic(seed, args.n_actions or cfg.n_actions,
                                args.n_secret or cfg.n_secret, args.n_useful or cfg.n_useful,
                                args.n_obs or cfg.n_obs, cfg.sigma_lo, cfg.sigma_hi)
    out = args.out or "model.json"
    model.save(out)
    print(f"wrote {out}: {model.n_actions} actions, N={model.n_secret}, M={model.n_useful}, "
          f"|Z|={model.n_obs}")
    return EXIT_OK


def cmd_fit_model(args, cfg):
    try:
        with open(args.csv, newline="", encoding="utf-8") as fh:
            records = read_records(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {args.csv}: {exc}") from exc
    n_obs = args.n_obs or cfg.n_obs
    smoothing = cfg.smoothing if args.smoothing is None else args.smoothing
    model = fit_from_csv(records, n_obs, smoothing)
    out = args.out or "model.json"
    model.save(out)
    print(f"fitted {len(records)} readings into {model.n_actions} actions x {n_obs} bins; wrote {out}")
    return EXIT_OK


def cmd_check_model(args, cfg):
    try:
        model = ObservationModel.load(args.model)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {args.model}: {exc}") from exc
    report = check_identifiability(model)
    print(report.format())
    if args.out:
        Path(args.out).write_text(report.format() + "\n")
    return EXIT_OK


def cmd_solve_dp(args, cfg):
    env = _env(cfg, args.threshold)
    r = args.resolution or cfg.dp_resolution
    table = value_iteration(env.model, env.costs, env.privacy, resolution=r, tol=args.tol)
    cert = verify_value_certificate(table, env.model, env.costs, env.privacy, tol=args.tol)
    start = Belief(env.prior_joint)
    summary = {
        "resolution": r, "iterations": table.iterations, "residual": table.residual,
        "value_at_prior": table.value(start), "action_at_prior": table.action(start),
        "certificate_ok": cert.ok, "certificate_max_violation": cert.max_violation,
        "certificate_tolerance": cert.tolerance, "projection_slack": cert.projection_slack,
    }
    if args.out:
        table.save(args.out)
    _emit(summary)
    return EXIT_OK


def cmd_train(args, cfg):
    env = _env(cfg, args.threshold)
    a2c = cfg.a2c_config(cfg.seed)
    if args.episodes:
        a2c.episodes = args.episodes
    policy, tlog = train(env, a2c, log_fn=lambda ep, rec: log.info(
        "episode %d: mean cost %.3f, tau %.2f, violations %.3f", ep, rec["mean_cost"],
        rec["mean_tau"], rec["violation_rate"]))
    out = Path(args.out or "policy.json")
    policy.save(out)
    log_path = out.with_name(out.stem + "_log.csv")
    log_path.write_text(tlog.to_csv(metadata=cfg.metadata()))
    print(f"wrote {out} and {log_path}")
    return EXIT_OK


def _load_policy(spec, env):
    if spec == "random":
        return RandomPolicy(env.n_actions)
    if spec == "stop":
        return StopPolicy(env.n_actions)
    try:
        doc = json.loads(Path(spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read policy {spec}: {exc}") from exc
    if "actor" in doc:
        return A2CPolicy.from_dict(doc)
    return greedy_policy(ValueTable.from_dict(doc))


def cmd_evaluate(args, cfg):
    env = _env(cfg, args.threshold)
    policy = _load_policy(args.policy, env)
    n = args.episodes or cfg.eval_episodes
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            metrics = evaluate(policy, env, n, seed=cfg.seed, trace=TraceWriter(fh))
    else:
        metrics = evaluate(policy, env, n, seed=cfg.seed)
    _emit(asdict(metrics), args.out)
    return EXIT_OK


def cmd_put_sweep(args, cfg):
    out = args.out or cfg.out_dir
    curve = run_put_sweep(cfg, out, progress=lambda s: log.info(s))
    best = curve.best_gap()
    print(f"wrote put_curve.csv, breakdown.csv, put_curve.svg to {out}")
    if best is not None:
        print(f"best threshold {best[0]:g}: learned gap {best[1]:.3f}, random gap {best[2]:.3f}")
    return EXIT_OK


def cmd_mi_oracle(args, cfg):
    model = cfg.build_model()
    prior = cfg.build_prior(model)
    policy = uniform_release(model.n_actions)
    belief = Belief(prior.joint)
    result = {
        "horizon": args.horizon,
        "trajectory_mi": brute_force_trajectory_mi(model, prior, policy, args.horizon),
        "chain_rule_mi": enumerated_chain_mi(model, prior, policy, args.horizon),
        "instantaneous_mi_at_prior": instantaneous_mi(belief, policy(belief), model),
    }
    _emit(result, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (flat schema)")
    common.add_argument("--seed", type=int, help="master seed; overrides config and APUT_SEED")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true", help="progress logging")

    p = argparse.ArgumentParser(prog="aput", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("gen-model", parents=[common], help="write a synthetic or desk model")
    s.add_argument("--desk", action="store_true", help="the 2x2 desk instance")
    s.add_argument("--n-actions", type=int)
    s.add_argument("--n-secret", type=int)
    s.add_argument("--n-useful", type=int)
    s.add_argument("--n-obs", type=int)
    s.set_defaults(func=cmd_gen_model)

    s = sub.add_parser("fit-model", parents=[common], help="fit a model from labeled CSV readings")
    s.add_argument("csv", help="CSV with header action,reading,secret,useful")
    s.add_argument("--n-obs", type=int, help="equal-frequency bins per action")
    s.add_argument("--smoothing", type=float, help="additive smoothing per bin")
    s.set_defaults(func=cmd_fit_model)

    s = sub.add_parser("check-model", parents=[common], help="identifiability report")
    s.add_argument("model", help="model JSON")
    s.set_defaults(func=cmd_check_model)

    s = sub.add_parser("solve-dp", parents=[common], help="grid value iteration and certificate")
    s.add_argument("--threshold", type=float, help="privacy threshold (default: first in grid)")
    s.add_argument("--resolution", type=int, help="simplex lattice resolution r")
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_solve_dp)

    s = sub.add_parser("train", parents=[common], help="train an actor-critic policy")
    s.add_argument("--threshold", type=float)
    s.add_argument("--episodes", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="evaluate a frozen policy")
    s.add_argument("--policy", default="random",
                   help="policy JSON, value-table JSON, 'random' or 'stop'")
    s.add_argument("--threshold", type=float)
    s.add_argument("--episodes", type=int)
    s.add_argument("--trace", help="write a per-step trace CSV")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("put-sweep", parents=[common], help="privacy-utility sweep over thresholds")
    s.set_defaults(func=cmd_put_sweep)

    s = sub.add_parser("mi-oracle", parents=[common],
                       help="exact trajectory MI under the uniform release policy")
    s.add_argument("--horizon", type=int, default=3)
    s.set_defaults(func=cmd_mi_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            cfg = ExperimentConfig.load(args.config, args.seed)
            return args.func(args, cfg)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

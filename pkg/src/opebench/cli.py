"""Command-line front end.

    opebench synth      --n-actions 4 --n-rounds 1000 --seed 7 --out logs.csv
    opebench fit-reward --data logs.csv --seed 0 --out model.json
    opebench ope        --data logs.csv --policy policy.json --estimators ipw dr --reward-model model.json --seed 0
    opebench benchmark  --synthetic --n-rounds 5000 --seed 0 --out table.csv
    opebench benchmark  --data-a random.csv --policy-a uniform.json --data-b bts.csv --policy-b bts.json --seed 0

Datasets default to ``$OPE_BENCH_DATA_DIR`` laid out as ``<root>/<behavior>/<campaign>/<campaign>.csv``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import (
    BanditFeedback,
    SyntheticConfig,
    behavior_probs,
    generate_synthetic,
    load_obd,
    write_obd,
)
from .estimators import DEFAULT_GRID, ESTIMATOR_NAMES, EstimatorSpec, fit_mrdr, run_estimator
from .policies import load_policy, uniform_dist
from .protocol import ProtocolConfig, run_protocol, write_reports_csv
from .reward_model import ConvergenceWarning, FitConfig, RewardModel, cross_fit_split, fit_logistic, predict_q

DATA_ENV = "OPE_BENCH_DATA_DIR"


class CLIError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--seed", type=int, required=True, help="master random seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for simulation and bootstrap")
    p.add_argument("--out", type=Path, required=out_required, help="output path")
    p.add_argument("--format", choices=("json", "csv"), default=None, help="output format (default: from --out suffix)")


def _add_dataset(p: argparse.ArgumentParser, flag: str = "--data") -> None:
    p.add_argument(flag, type=Path, default=None, help=f"OBD-schema CSV or dataset root (default ${DATA_ENV})")
    p.add_argument("--campaign", choices=("all", "men", "women"), default="all")
    p.add_argument("--behavior", choices=("random", "bts"), default="random", help="logging policy of --data")


def _add_grid(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, nargs="+", default=list(DEFAULT_GRID), help="Switch thresholds")
    p.add_argument("--lambda", dest="lambdas", type=float, nargs="+", default=list(DEFAULT_GRID), help="DRos lambdas")
    p.add_argument("--C", type=float, default=1000.0, help="inverse L2 strength of the reward model")


def _add_synth_env(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-actions", type=int, default=4)
    p.add_argument("--dim-context", type=int, default=3)
    p.add_argument("--len-list", type=int, default=1)
    p.add_argument("--n-rounds", type=int, default=1000)
    p.add_argument("--reward-type", choices=("logistic", "quadratic", "constant"), default="logistic")
    p.add_argument("--temperature", type=float, default=1.0, help="softmax temperature of the logging policy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opebench", description="Off-policy evaluation benchmark toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic logged bandit feedback")
    _add_synth_env(p)
    p.add_argument("--logging-policy", choices=("uniform", "softmax"), default="uniform")
    _add_common(p, out_required=True)

    p = sub.add_parser("fit-reward", help="fit a logistic reward model and save it as JSON")
    _add_dataset(p)
    p.add_argument("--C", type=float, default=1000.0)
    _add_common(p, out_required=True)

    p = sub.add_parser("ope", help="estimate an evaluation policy's value from one log")
    _add_dataset(p)
    p.add_argument("--policy", type=Path, required=True, help="evaluation policy JSON document")
    p.add_argument("--estimators", nargs="+", default=["ipw"], help=f"subset of {', '.join(ESTIMATOR_NAMES)}")
    p.add_argument("--reward-model", type=Path, help="reward model JSON (needed by model-based estimators)")
    p.add_argument("--fit-reward-model", action="store_true", help="fit q_hat on a 30%% split and estimate on the rest")
    _add_grid(p)
    _add_common(p)

    p = sub.add_parser("benchmark", help="run the bootstrap protocol in both directions")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--synthetic", action="store_true", help="simulate both logs from one synthetic environment")
    p.add_argument("--data-a", type=Path, help="log collected by policy A")
    p.add_argument("--policy-a", type=Path, help="policy A JSON document")
    p.add_argument("--data-b", type=Path, help="log collected by policy B")
    p.add_argument("--policy-b", type=Path, help="policy B JSON document")
    p.add_argument("--name-a", default=None)
    p.add_argument("--name-b", default=None)
    src.add_argument("--data-dir", type=Path, help="OBD root holding random/ and bts/ logs")
    p.add_argument("--bts-policy", type=Path, help="Thompson-sampling policy JSON for --data-dir runs")
    p.add_argument("--campaign", choices=("all", "men", "women"), default="all")
    _add_synth_env(p)
    p.add_argument("--mode", choices=("in", "out", "both"), default=None)
    p.add_argument("--split-point", type=int, default=None, help="record index separating past from future")
    p.add_argument("--bootstrap", type=int, default=30, help="bootstrap replications B")
    p.add_argument("--estimators", nargs="+", default=None, help="restrict the estimator list")
    _add_grid(p)
    _add_common(p, out_required=True)
    return parser


def _resolve_data(path: Optional[Path]) -> Path:
    if path is not None:
        return path
    env = os.environ.get(DATA_ENV)
    if not env:
        raise CLIError(f"no dataset given and ${DATA_ENV} is not set")
    return Path(env)


def _load(path: Optional[Path], campaign: str, behavior: str) -> BanditFeedback:
    try:
        return load_obd(_resolve_data(path), campaign=campaign, behavior_policy=behavior)
    except FileNotFoundError as exc:
        raise CLIError(str(exc)) from exc


def _fmt(args) -> str:
    if args.format:
        return args.format
    if args.out is not None and args.out.suffix.lower() == ".csv":
        return "csv"
    return "json"


def _specs(names: Sequence[str], taus, lambdas) -> list[EstimatorSpec]:
    specs = []
    for raw in names:
        name = raw.lower()
        if ":" in name:
            specs.append(EstimatorSpec.parse(name))
        elif name in ("switch-dr", "switch-ipw"):
            specs += [EstimatorSpec(name, tau=float(t)) for t in taus]
        elif name == "dros":
            specs += [EstimatorSpec(name, lambda_=float(lam)) for lam in lambdas]
        else:
            specs.append(EstimatorSpec(name))
    return specs


def _behavior_builder(fb: BanditFeedback) -> np.ndarray:
    """Distribution reproducing the logged propensities (remaining mass spread uniformly)."""
    n, k = fb.n_rounds, fb.n_actions
    if fb.behavior_probs is not None:
        probs = np.asarray(fb.behavior_probs)
    else:
        rest = (1.0 - fb.propensities) / max(k - 1, 1)
        probs = np.repeat(rest[:, None], k, axis=1)
        probs[np.arange(n), fb.actions] = fb.propensities
    return np.repeat(probs[:, :, None], fb.len_list, axis=2)


def _policy_builder(path: Path, seed: int):
    doc = json.loads(Path(path).read_text())
    if doc.get("type") == "behavior":
        return _behavior_builder
    return load_policy(doc, seed=seed)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(
        n_actions=args.n_actions,
        dim_context=args.dim_context,
        len_list=args.len_list,
        reward_type=args.reward_type,
        behavior=args.logging_policy,
        behavior_temperature=args.temperature,
        seed=args.seed,
    ).resolved()
    fb, truth = generate_synthetic(cfg, args.n_rounds)
    try:
        write_obd(fb, args.out)
    except OSError as exc:
        raise CLIError(f"cannot write {args.out}: {exc}") from exc
    sidecar = args.out.with_name(args.out.name.split(".")[0] + ".truth.json")
    uniform = uniform_dist(fb.n_rounds, fb.n_actions, fb.len_list)
    doc = {
        "config": cfg.to_dict(),
        "n_rounds": fb.n_rounds,
        "policy_value": {
            "uniform": truth.policy_value(uniform),
            "logging_policy": truth.policy_value(behavior_probs(cfg, fb.contexts)),
        },
        "empirical_mean_reward": float(fb.rewards.mean()),
    }
    sidecar.write_text(json.dumps(doc, indent=2))
    print(f"wrote {fb.n_rounds} records to {args.out} and ground truth to {sidecar}")
    return 0


def cmd_fit_reward(args) -> int:
    fb = _load(args.data, args.campaign, args.behavior)
    model = fit_logistic(fb, FitConfig(C=args.C, seed=args.seed))
    model.save(args.out)
    print(f"fitted reward model on {fb.n_rounds} records -> {args.out}")
    return 0


def cmd_ope(args) -> int:
    fb = _load(args.data, args.campaign, args.behavior)
    specs = _specs(args.estimators, args.tau, args.lambdas)
    builder = _policy_builder(args.policy, args.seed)
    fit_cfg = FitConfig(C=args.C, seed=args.seed)
    eval_fb, model, mrdr = fb, None, None
    if args.fit_reward_model:
        train, eval_fb = cross_fit_split(fb, 0.3, args.seed)
        if any(s.needs_reward_model for s in specs):
            model = fit_logistic(train, fit_cfg)
        if any(s.name == "mrdr" for s in specs):
            mrdr = fit_mrdr(train, builder(train), fit_cfg)
    elif args.reward_model is not None:
        model = RewardModel.load(args.reward_model)
    elif any(s.name == "mrdr" for s in specs):
        mrdr = fit_mrdr(fb, builder(fb), fit_cfg)
    try:
        dist = builder(eval_fb)
        q_table = predict_q(model, eval_fb)[1] if model is not None else None
    except ValueError as exc:
        raise CLIError(f"evaluation policy does not fit the data: {exc}") from exc
    baseline = float(eval_fb.rewards.mean())
    rows = []
    for spec in specs:
        if spec.needs_reward_model and q_table is None:
            raise CLIError(f"estimator {spec.label} needs a reward model: pass --reward-model or --fit-reward-model")
        res = run_estimator(spec, eval_fb, dist, q_table, mrdr)
        ratio = res.estimate / baseline if baseline != 0 else float("nan")
        rows.append(res.to_dict() | {"label": spec.label, "ratio_to_logged_mean": ratio})
        print(f"{spec.label:24s} estimate={res.estimate:.6f}  ratio={ratio:.6f}")
    if args.out is not None:
        if _fmt(args) == "csv":
            with open(args.out, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["estimator", "tau", "lambda", "estimate", "ratio_to_logged_mean"])
                for spec, row in zip(specs, rows):
                    w.writerow(
                        [
                            spec.name,
                            "" if spec.tau is None else f"{spec.tau:g}",
                            "" if spec.lambda_ is None else f"{spec.lambda_:g}",
                            repr(row["estimate"]),
                            repr(row["ratio_to_logged_mean"]),
                        ]
                    )
        else:
            doc = {"n_rounds": eval_fb.n_rounds, "logged_mean_reward": baseline, "estimates": rows}
            Path(args.out).write_text(json.dumps(doc, indent=2))
    return 0


def _synthetic_pair(args):
    base = SyntheticConfig(
        n_actions=args.n_actions,
        dim_context=args.dim_context,
        len_list=args.len_list,
        reward_type=args.reward_type,
        seed=args.seed,
    ).resolved()
    cfg_a = base
    cfg_b = dataclasses.replace(base, behavior="softmax", behavior_temperature=args.temperature)
    ss = np.random.SeedSequence(args.seed)
    seed_a, seed_b = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    fb_a, _ = generate_synthetic(cfg_a, args.n_rounds, random_state=seed_a)
    fb_b, _ = generate_synthetic(cfg_b, args.n_rounds, random_state=seed_b)
    build_a = lambda fb: uniform_dist(fb.n_rounds, fb.n_actions, fb.len_list)  # noqa: E731

    def build_b(fb):
        p = behavior_probs(cfg_b, fb.contexts)
        return np.repeat(p[:, :, None], fb.len_list, axis=2)

    return ("uniform", fb_a, build_a), ("softmax", fb_b, build_b)


def cmd_benchmark(args) -> int:
    if args.synthetic:
        side_a, side_b = _synthetic_pair(args)
    elif args.data_dir is not None or (args.data_a is None and os.environ.get(DATA_ENV)):
        root = _resolve_data(args.data_dir)
        if args.bts_policy is None:
            raise CLIError("--bts-policy is required to replicate the Thompson-sampling policy")
        fb_r = _load(root, args.campaign, "random")
        fb_t = _load(root, args.campaign, "bts")
        side_a = ("random", fb_r, lambda fb: uniform_dist(fb.n_rounds, fb.n_actions, fb.len_list))
        side_b = ("bts", fb_t, _policy_builder(args.bts_policy, args.seed))
    else:
        needed = {"--data-a": args.data_a, "--policy-a": args.policy_a, "--data-b": args.data_b, "--policy-b": args.policy_b}
        missing = [k for k, v in needed.items() if v is None]
        if missing:
            raise CLIError(f"missing {', '.join(missing)} (or use --synthetic / --data-dir)")
        side_a = (args.name_a or "A", _load(args.data_a, args.campaign, "random"), _policy_builder(args.policy_a, args.seed))
        side_b = (args.name_b or "B", _load(args.data_b, args.campaign, "bts"), _policy_builder(args.policy_b, args.seed))

    mode = args.mode or ("both" if args.split_point is not None else "in")
    modes = {"in": ["in_sample"], "out": ["out_sample"], "both": ["in_sample", "out_sample"]}[mode]
    if "out_sample" in modes and args.split_point is None:
        raise CLIError("out-sample mode needs --split-point")
    names = args.estimators or ["dm", "ipw", "snipw", "dr", "sndr", "switch-dr", "dros", "mrdr"]
    specs = _specs(names, args.tau, args.lambdas)
    fit_cfg = FitConfig(C=args.C, seed=args.seed)

    reports, all_warnings = [], []
    for (name_b, fb_b, _), (name_e, fb_e, build_e) in ((side_a, side_b), (side_b, side_a)):
        for m in modes:
            cfg = ProtocolConfig(
                mode=m,
                split_point=args.split_point,
                n_bootstrap=args.bootstrap,
                estimators=tuple(specs),
                fit_config=fit_cfg,
                seed=args.seed,
                n_jobs=args.threads,
                direction=f"{name_b}->{name_e}",
            )
            report = run_protocol(fb_b, fb_e, build_e, cfg)
            reports.append(report)
            all_warnings += [f"{cfg.direction} {m}: {w}" for w in report.warnings]
            print(f"{cfg.direction} {m}: V_on={report.v_on:.6f}")
            for s in report.summaries:
                print(f"  {s.spec.label:24s} {s.mean:.5f} +- {s.std:.5f}")
    if _fmt(args) == "csv":
        write_reports_csv(reports, args.out)
        if all_warnings:
            Path(str(args.out) + ".warnings.json").write_text(json.dumps({"warnings": all_warnings}, indent=2))
    else:
        doc = {"reports": [r.to_dict() for r in reports], "warnings": all_warnings}
        Path(args.out).write_text(json.dumps(doc, indent=2))
    if all_warnings:
        print(f"{len(all_warnings)} warning(s); see the report", file=sys.stderr)
    return 0


COMMANDS = {"synth": cmd_synth, "fit-reward": cmd_fit_reward, "ope": cmd_ope, "benchmark": cmd_benchmark}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default", ConvergenceWarning)
            return COMMANDS[args.command](args)
    except (CLIError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

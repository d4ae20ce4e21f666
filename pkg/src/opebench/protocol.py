"""Bootstrap benchmark scoring OPE estimators against on-policy ground truth."""
from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .data import BanditFeedback, DataError, bootstrap_sample, split_by_time
from .estimators import EstimatorSpec, default_estimators, fit_mrdr, run_estimator
from .policies import ActionDistBuilder
from .reward_model import FitConfig, cross_fit_split, fit_logistic, predict_q

__all__ = [
    "CSV_HEADER",
    "EstimatorSummary",
    "ProtocolConfig",
    "ProtocolReport",
    "aggregate",
    "on_policy_value",
    "relative_ee",
    "run_protocol",
    "write_reports_csv",
]

CSV_HEADER = ["estimator", "tau", "lambda", "direction", "mode", "mean_relative_ee", "std_relative_ee"]
MODES = ("in_sample", "out_sample")


def on_policy_value(test: BanditFeedback) -> float:
    """Empirical mean reward of data logged by the evaluation policy itself."""
    if test.n_rounds == 0:
        raise DataError("on-policy estimation needs a non-empty test set")
    return float(np.mean(test.rewards))


def relative_ee(estimate: float, v_on: float) -> float:
    if v_on == 0:
        raise ZeroDivisionError("relative-EE is undefined for a zero ground-truth value")
    return abs((estimate - v_on) / v_on)


def aggregate(values: Sequence[float]) -> tuple[float, float]:
    """Mean and unbiased (B - 1) standard deviation."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("the standard deviation needs at least two values")
    mean = float(np.mean(v))
    return mean, float(math.sqrt(np.sum((v - mean) ** 2) / (v.size - 1)))


@dataclass(frozen=True)
class ProtocolConfig:
    """Settings of one protocol run.

    ``split_point`` is the record index ``t~``: out-sample mode evaluates on
    behavior records ``[0, t~)`` and tests on evaluation records ``[t~, T)``.
    """

    mode: str = "in_sample"
    split_point: Optional[int] = None
    n_bootstrap: int = 30
    estimators: tuple = field(default_factory=lambda: tuple(default_estimators()))
    fit_config: FitConfig = field(default_factory=FitConfig)
    train_fraction: float = 0.3
    seed: int = 0
    n_jobs: int = 1
    direction: str = ""

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.n_bootstrap < 1:
            raise ValueError("n_bootstrap must be at least 1")
        if self.mode == "out_sample" and (self.split_point is None or self.split_point < 1):
            raise ValueError("out-sample mode needs a positive split_point")
        if not self.estimators:
            raise ValueError("at least one estimator is required")
        object.__setattr__(self, "estimators", tuple(self.estimators))


@dataclass
class EstimatorSummary:
    spec: EstimatorSpec
    values: list  # relative-EE per replication, None where the estimator failed
    mean: float
    std: float
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "estimator": self.spec.name,
            "label": self.spec.label,
            "tau": self.spec.tau,
            "lambda": self.spec.lambda_,
            "mean_relative_ee": _nan_to_none(self.mean),
            "std_relative_ee": _nan_to_none(self.std),
            "values": self.values,
            "failures": self.failures,
        }


def _nan_to_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


@dataclass
class ProtocolReport:
    v_on: float
    summaries: list
    metadata: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __getitem__(self, label: str) -> EstimatorSummary:
        for s in self.summaries:
            if s.spec.label == label or (s.spec.name == label and s.spec.tau is None and s.spec.lambda_ is None):
                return s
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "v_on": self.v_on,
            "metadata": self.metadata,
            "warnings": self.warnings,
            "estimators": [s.to_dict() for s in self.summaries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolReport":
        summaries = []
        for e in d["estimators"]:
            spec = EstimatorSpec(e["estimator"], tau=e.get("tau"), lambda_=e.get("lambda"))
            mean = e["mean_relative_ee"]
            std = e["std_relative_ee"]
            summaries.append(
                EstimatorSummary(
                    spec,
                    list(e["values"]),
                    float("nan") if mean is None else mean,
                    float("nan") if std is None else std,
                    list(e.get("failures", [])),
                )
            )
        return cls(d["v_on"], summaries, dict(d.get("metadata", {})), list(d.get("warnings", [])))

    def csv_rows(self) -> list[list]:
        direction = self.metadata.get("direction", "")
        mode = self.metadata.get("mode", "")
        rows = []
        for s in self.summaries:
            rows.append(
                [
                    s.spec.name,
                    "" if s.spec.tau is None else f"{s.spec.tau:g}",
                    "" if s.spec.lambda_ is None else f"{s.spec.lambda_:g}",
                    direction,
                    mode,
                    repr(s.mean),
                    repr(s.std),
                ]
            )
        return rows

    def save_json(self, path: Union[str, os.PathLike]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def write_reports_csv(reports: Iterable[ProtocolReport], path: Union[str, os.PathLike]) -> None:
    """One row per (estimator, hyperparameter, direction, mode)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for report in reports:
            writer.writerows(report.csv_rows())


def _define_sets(d_behavior, d_evaluation, cfg: ProtocolConfig):
    if d_behavior.n_rounds == 0 or d_evaluation.n_rounds == 0:
        raise DataError("both datasets must be non-empty")
    if cfg.mode == "in_sample":
        return d_behavior, d_evaluation
    d_ev, _ = split_by_time(d_behavior, cfg.split_point)
    _, d_te = split_by_time(d_evaluation, cfg.split_point)
    return d_ev, d_te


def _replicate(d_ev, builder, cfg: ProtocolConfig, v_on: float, seed) -> tuple[dict, list]:
    """One bootstrap replication: {label: relative-EE or failure reason}, warnings."""
    boot_seed, split_seed = seed.spawn(2)
    out: dict = {}
    notes: list = []
    specs = cfg.estimators
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            boot = bootstrap_sample(d_ev, boot_seed)
            train, ev = cross_fit_split(boot, cfg.train_fraction, split_seed)
            dist = builder(ev)
        except Exception as exc:  # noqa: BLE001
            return {s.label: f"replication setup failed: {exc}" for s in specs}, notes
        q_table = mrdr_model = None
        model_error = mrdr_error = None
        if any(s.needs_reward_model for s in specs):
            try:
                _, q_table = predict_q(fit_logistic(train, cfg.fit_config), ev)
            except Exception as exc:  # noqa: BLE001
                model_error = f"reward model: {exc}"
        if any(s.name == "mrdr" for s in specs):
            try:
                mrdr_model = fit_mrdr(train, builder(train), cfg.fit_config)
            except Exception as exc:  # noqa: BLE001
                mrdr_error = f"mrdr model: {exc}"
        for s in specs:
            if s.needs_reward_model and model_error:
                out[s.label] = model_error
                continue
            if s.name == "mrdr" and mrdr_error:
                out[s.label] = mrdr_error
                continue
            try:
                res = run_estimator(s, ev, dist, q_table, mrdr_model)
                out[s.label] = relative_ee(res.estimate, v_on)
            except Exception as exc:  # noqa: BLE001
                out[s.label] = f"{type(exc).__name__}: {exc}"
    notes.extend(str(w.message) for w in caught)
    return out, notes


def run_protocol(
    d_behavior: BanditFeedback,
    d_evaluation: BanditFeedback,
    eval_dist_builder: ActionDistBuilder,
    cfg: Optional[ProtocolConfig] = None,
) -> ProtocolReport:
    """Score every configured estimator by bootstrap relative-EE.

    ``eval_dist_builder`` maps a feedback batch to the evaluation policy's
    action distribution on its records. Replication ``b`` draws its seed from
    ``SeedSequence(cfg.seed).spawn(B)[b]``, so results do not depend on
    ``cfg.n_jobs``. A failing estimator is recorded for that replication and
    excluded from its aggregates.
    """
    cfg = cfg or ProtocolConfig()
    d_ev, d_te = _define_sets(d_behavior, d_evaluation, cfg)
    v_on = on_policy_value(d_te)
    if v_on == 0:
        raise ZeroDivisionError("on-policy value is zero; relative-EE is undefined")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_bootstrap)
    work = lambda b: _replicate(d_ev, eval_dist_builder, cfg, v_on, seeds[b])  # noqa: E731
    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            results = list(pool.map(work, range(cfg.n_bootstrap)))
    else:
        results = [work(b) for b in range(cfg.n_bootstrap)]

    summaries = []
    report_warnings: list = []
    for b, (_, notes) in enumerate(results):
        for note in sorted(set(notes)):
            report_warnings.append(f"replication {b}: {note}")
    for spec in cfg.estimators:
        values, failures = [], []
        for b, (res, _) in enumerate(results):
            v = res[spec.label]
            if isinstance(v, str):
                values.append(None)
                failures.append({"replication": b, "reason": v})
            else:
                values.append(float(v))
        ok = [v for v in values if v is not None]
        if len(ok) >= 2:
            mean, std = aggregate(ok)
        elif len(ok) == 1:
            mean, std = ok[0], float("nan")
        else:
            mean = std = float("nan")
        if failures:
            report_warnings.append(f"{spec.label}: {len(failures)} of {cfg.n_bootstrap} replications failed")
        summaries.append(EstimatorSummary(spec, values, mean, std, failures))

    meta = {
        "mode": cfg.mode,
        "direction": cfg.direction,
        "split_point": cfg.split_point,
        "n_bootstrap": cfg.n_bootstrap,
        "train_fraction": cfg.train_fraction,
        "seed": cfg.seed,
        "C": cfg.fit_config.C,
        "n_ev": d_ev.n_rounds,
        "n_te": d_te.n_rounds,
    }
    for name, part in (("ev", d_ev), ("te", d_te)):
        if part.timestamps is not None:
            meta[f"{name}_time_range"] = [int(part.timestamps.min()), int(part.timestamps.max())]
    return ProtocolReport(v_on, summaries, meta, report_warnings)

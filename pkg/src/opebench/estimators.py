"""Off-policy estimators of a policy value from logged bandit feedback.

Every estimator takes the logged feedback ``fb`` and the evaluation policy's
action distribution ``action_dist`` of shape ``(n_rounds, n_actions, len_list)``;
the model-based ones also take a reward table ``q_hat`` of shape
``(n_rounds, n_actions)`` (see :func:`opebench.reward_model.predict_q`).
Probabilities are read at each record's logged position.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import BanditFeedback
from .policies import check_action_dist
from .reward_model import (
    ConvergenceWarning,
    FitConfig,
    RewardModel,
    _descend,
    _logit,
    _sigmoid,
    fit_logistic,
    predict_q,
)

__all__ = [
    "DEFAULT_GRID",
    "ESTIMATOR_NAMES",
    "EstimatorResult",
    "EstimatorSpec",
    "MrdrModel",
    "default_estimators",
    "estimate_dm",
    "estimate_dr",
    "estimate_dros",
    "estimate_ipw",
    "estimate_mrdr",
    "estimate_sndr",
    "estimate_snipw",
    "estimate_switch_dr",
    "estimate_switch_ipw",
    "fit_mrdr",
    "importance_weights",
    "mrdr_objective",
    "run_estimator",
    "shrink_weights",
]

DEFAULT_GRID = (5.0, 10.0, 50.0, 100.0, 500.0, 1000.0)
MRDR_MAX_MOVE = 1.0


@dataclass(frozen=True)
class EstimatorResult:
    name: str
    estimate: float
    hyperparams: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not np.isfinite(self.estimate):
            raise FloatingPointError(f"{self.name} produced a non-finite estimate")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "estimate": float(self.estimate),
            "hyperparams": dict(self.hyperparams),
            "diagnostics": {k: float(v) for k, v in self.diagnostics.items()},
        }


class MrdrModel(RewardModel):
    """Reward model fitted to minimize the variance of the DR estimate."""


def _pi_at_position(fb: BanditFeedback, action_dist: np.ndarray, validate: bool = True) -> np.ndarray:
    dist = check_action_dist(action_dist) if validate else np.asarray(action_dist, dtype=float)
    if dist.ndim != 3:
        raise ValueError("action_dist must be 3-d (n_rounds, n_actions, len_list)")
    if dist.shape[0] != fb.n_rounds or dist.shape[1] != fb.n_actions or dist.shape[2] < fb.len_list:
        raise ValueError(
            f"action_dist shape {dist.shape} does not match feedback "
            f"({fb.n_rounds}, {fb.n_actions}, {fb.len_list})"
        )
    return dist[np.arange(fb.n_rounds), :, fb.positions]


def _weights_from_pi(fb: BanditFeedback, pi: np.ndarray) -> np.ndarray:
    w = pi[np.arange(fb.n_rounds), fb.actions] / fb.propensities
    bad = np.flatnonzero(~np.isfinite(w))
    if bad.size:
        raise FloatingPointError(f"non-finite importance weight at record {int(bad[0])}")
    return w


def importance_weights(fb: BanditFeedback, action_dist: np.ndarray) -> np.ndarray:
    """``w_t = pi_e(a_t | x_t, k_t) / pi_b(a_t | x_t, k_t)``."""
    return _weights_from_pi(fb, _pi_at_position(fb, action_dist))


def _require_q(name: str, fb: BanditFeedback, q_hat) -> np.ndarray:
    if q_hat is None:
        raise ValueError(f"{name} requires a reward model (q_hat table), none was given")
    q = np.asarray(q_hat, dtype=float)
    if q.shape != (fb.n_rounds, fb.n_actions):
        raise ValueError(f"{name}: q_hat has shape {q.shape}, expected {(fb.n_rounds, fb.n_actions)}")
    return q


def _weight_stats(w: np.ndarray) -> dict:
    return {"max_weight": float(w.max()), "mean_weight": float(w.mean())}


def _dr_parts(fb, action_dist, q_hat, name):
    pi = _pi_at_position(fb, action_dist)
    q = _require_q(name, fb, q_hat)
    w = _weights_from_pi(fb, pi)
    q_pi = np.sum(q * pi, axis=1)
    q_obs = q[np.arange(fb.n_rounds), fb.actions]
    return w, q_pi, fb.rewards - q_obs


def estimate_dm(fb: BanditFeedback, action_dist: np.ndarray, q_hat: np.ndarray) -> EstimatorResult:
    pi = _pi_at_position(fb, action_dist)
    q = _require_q("dm", fb, q_hat)
    return EstimatorResult("dm", float(np.mean(np.sum(q * pi, axis=1))))


def estimate_ipw(fb: BanditFeedback, action_dist: np.ndarray) -> EstimatorResult:
    w = importance_weights(fb, action_dist)
    return EstimatorResult("ipw", float(np.mean(w * fb.rewards)), diagnostics=_weight_stats(w))


def estimate_snipw(fb: BanditFeedback, action_dist: np.ndarray) -> EstimatorResult:
    w = importance_weights(fb, action_dist)
    mean_w = np.mean(w)
    if mean_w == 0:
        raise ZeroDivisionError("snipw: the evaluation policy puts no mass on any logged action")
    # a convex combination of the weighted rewards; clamp away rounding overshoot
    r = fb.rewards[w > 0]
    est = min(max(float(np.mean(w * fb.rewards) / mean_w), float(r.min())), float(r.max()))
    return EstimatorResult("snipw", est, diagnostics=_weight_stats(w))


def estimate_dr(fb: BanditFeedback, action_dist: np.ndarray, q_hat: np.ndarray) -> EstimatorResult:
    w, q_pi, resid = _dr_parts(fb, action_dist, q_hat, "dr")
    return EstimatorResult("dr", float(np.mean(q_pi + w * resid)), diagnostics=_weight_stats(w))


def estimate_sndr(fb: BanditFeedback, action_dist: np.ndarray, q_hat: np.ndarray) -> EstimatorResult:
    w, q_pi, resid = _dr_parts(fb, action_dist, q_hat, "sndr")
    mean_w = np.mean(w)
    if mean_w == 0:
        raise ZeroDivisionError("sndr: the evaluation policy puts no mass on any logged action")
    return EstimatorResult("sndr", float(np.mean(q_pi + w * resid / mean_w)), diagnostics=_weight_stats(w))


def estimate_switch_dr(
    fb: BanditFeedback, action_dist: np.ndarray, q_hat: np.ndarray, tau: float
) -> EstimatorResult:
    """DR on records with ``w <= tau``, DM elsewhere."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    w, q_pi, resid = _dr_parts(fb, action_dist, q_hat, "switch-dr")
    keep = (w <= tau).astype(float)
    diag = _weight_stats(w) | {"frac_above_tau": float(np.mean(w > tau))}
    return EstimatorResult("switch-dr", float(np.mean(q_pi + w * resid * keep)), {"tau": tau}, diag)


def estimate_switch_ipw(
    fb: BanditFeedback,
    action_dist: np.ndarray,
    q_hat: np.ndarray,
    tau: float,
    behavior_probs: Optional[np.ndarray] = None,
) -> EstimatorResult:
    """IPW on records with ``w <= tau``; DM over every action whose weight exceeds tau.

    The DM branch needs ``pi_b(a | x_t, k_t)`` for all actions, taken from
    ``behavior_probs`` or ``fb.behavior_probs``.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    pi = _pi_at_position(fb, action_dist)
    q = _require_q("switch-ipw", fb, q_hat)
    pb = behavior_probs if behavior_probs is not None else fb.behavior_probs
    if pb is None:
        raise ValueError("switch-ipw needs behavior probabilities for every action")
    pb = np.asarray(pb, dtype=float)
    if pb.shape != (fb.n_rounds, fb.n_actions):
        raise ValueError(f"behavior_probs must have shape {(fb.n_rounds, fb.n_actions)}")
    if np.any(pb <= 0):
        raise ValueError("switch-ipw needs strictly positive behavior probabilities")
    w_full = pi / pb
    w = _weights_from_pi(fb, pi)
    dm_part = np.sum(q * pi * (w_full > tau), axis=1)
    ipw_part = w * fb.rewards * (w <= tau)
    diag = _weight_stats(w) | {"frac_above_tau": float(np.mean(w > tau)), "max_weight_full": float(w_full.max())}
    return EstimatorResult("switch-ipw", float(np.mean(dm_part + ipw_part)), {"tau": tau}, diag)


def shrink_weights(w: np.ndarray, lambda_: float) -> np.ndarray:
    """Optimistic shrinkage ``lambda * w / (w**2 + lambda)``; zero at ``lambda = 0``."""
    if lambda_ < 0:
        raise ValueError("lambda must be non-negative")
    if lambda_ == 0:
        return np.zeros_like(w)
    if np.isinf(lambda_):
        return w.copy()
    return lambda_ * w / (w**2 + lambda_)


def estimate_dros(
    fb: BanditFeedback, action_dist: np.ndarray, q_hat: np.ndarray, lambda_: float
) -> EstimatorResult:
    w, q_pi, resid = _dr_parts(fb, action_dist, q_hat, "dros")
    w_o = shrink_weights(w, lambda_)
    diag = _weight_stats(w) | {"max_shrunk_weight": float(w_o.max())}
    return EstimatorResult("dros", float(np.mean(q_pi + w_o * resid)), {"lambda": lambda_}, diag)


# ---------------------------------------------------------------------------
# MRDR
# ---------------------------------------------------------------------------


def mrdr_objective(fb: BanditFeedback, pi: np.ndarray, w: np.ndarray, theta: np.ndarray, b: float):
    """Empirical variance of the per-record DR terms under a logistic q_hat.

    ``pi`` is the evaluation policy at the logged positions, ``(n, n_actions)``.
    Returns ``(variance, d/d theta, d/d intercept)``.
    """
    d = fb.dim_context
    rows = np.arange(fb.n_rounds)
    z = (fb.contexts @ theta[:d] + b)[:, None] + theta[d:][None, :]
    q = _sigmoid(z)
    dq = q * (1.0 - q)
    phi = np.sum(pi * q, axis=1) + w * (fb.rewards - q[rows, fb.actions])
    dev = phi - phi.mean()
    var = float(np.mean(dev**2))
    # d phi_t / d z_ta
    G = pi * dq
    G[rows, fb.actions] -= w * dq[rows, fb.actions]
    H = (2.0 / fb.n_rounds) * dev[:, None] * G
    h_row = H.sum(axis=1)
    g_theta = np.concatenate([fb.contexts.T @ h_row, H.sum(axis=0)])
    return var, g_theta, float(h_row.sum())


def fit_mrdr(
    fb: BanditFeedback,
    action_dist: np.ndarray,
    config: Optional[FitConfig] = None,
    init: Optional[RewardModel] = None,
) -> MrdrModel:
    """Fit a logistic q_hat by gradient descent on the DR variance objective.

    Starts from ``init`` (by default the likelihood fit on the same data, or a
    constant model when rewards are single-class), so the returned model's DR
    variance never exceeds the starting point's.
    """
    config = config or FitConfig()
    pi = _pi_at_position(fb, action_dist)
    w = _weights_from_pi(fb, pi)
    if init is None:
        y = fb.rewards
        if np.all((y == 0) | (y == 1)) and y.min() != y.max():
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                init = fit_logistic(fb, config)
        else:
            init = RewardModel(
                np.zeros(fb.dim_context), np.zeros(fb.n_actions), _logit(float(np.mean(y))), config.C
            )
    theta, b, info = _descend(
        lambda t, c: mrdr_objective(fb, pi, w, t, c), init.theta, init.intercept, config, max_move=MRDR_MAX_MOVE
    )
    if not info["converged"]:
        warnings.warn(f"MRDR fit did not converge in {config.max_iter} iterations", ConvergenceWarning)
    info["objective"] = "dr_variance"
    d = fb.dim_context
    return MrdrModel(theta[:d], theta[d:], b, config.C, info)


def estimate_mrdr(fb: BanditFeedback, action_dist: np.ndarray, model: RewardModel) -> EstimatorResult:
    _, q = predict_q(model, fb)
    res = estimate_dr(fb, action_dist, q)
    return EstimatorResult("mrdr", res.estimate, diagnostics=res.diagnostics)


# ---------------------------------------------------------------------------
# estimator specs
# ---------------------------------------------------------------------------

ESTIMATOR_NAMES = ("dm", "ipw", "snipw", "dr", "sndr", "switch-dr", "switch-ipw", "dros", "mrdr")
_DISPLAY = {
    "dm": "DM",
    "ipw": "IPW",
    "snipw": "SNIPW",
    "dr": "DR",
    "sndr": "SNDR",
    "switch-dr": "Switch-DR",
    "switch-ipw": "Switch-IPW",
    "dros": "DRos",
    "mrdr": "MRDR",
}


@dataclass(frozen=True)
class EstimatorSpec:
    """An estimator name plus its hyperparameter (``tau`` for Switch, ``lambda_`` for DRos)."""

    name: str
    tau: Optional[float] = None
    lambda_: Optional[float] = None

    def __post_init__(self) -> None:
        if self.name not in ESTIMATOR_NAMES:
            raise ValueError(f"unknown estimator {self.name!r}; choose from {ESTIMATOR_NAMES}")
        if self.name.startswith("switch") and self.tau is None:
            raise ValueError(f"{self.name} needs tau")
        if self.name == "dros" and self.lambda_ is None:
            raise ValueError("dros needs lambda_")

    @property
    def label(self) -> str:
        base = _DISPLAY[self.name]
        if self.tau is not None:
            return f"{base} (tau={self.tau:g})"
        if self.lambda_ is not None:
            return f"{base} (lambda={self.lambda_:g})"
        return base

    @property
    def needs_reward_model(self) -> bool:
        return self.name not in ("ipw", "snipw", "mrdr")

    @classmethod
    def parse(cls, text: str) -> "EstimatorSpec":
        """Parse ``name`` or ``name:value`` such as ``switch-dr:100``."""
        name, _, value = text.strip().lower().partition(":")
        if not value:
            return cls(name)
        if name == "dros":
            return cls(name, lambda_=float(value))
        return cls(name, tau=float(value))


def default_estimators(
    taus: Sequence[float] = DEFAULT_GRID, lambdas: Sequence[float] = DEFAULT_GRID
) -> list[EstimatorSpec]:
    """The benchmark's estimator list: DM, IPW, SNIPW, DR, SNDR, Switch-DR grid, DRos grid, MRDR."""
    specs = [EstimatorSpec(n) for n in ("dm", "ipw", "snipw", "dr", "sndr")]
    specs += [EstimatorSpec("switch-dr", tau=float(t)) for t in taus]
    specs += [EstimatorSpec("dros", lambda_=float(lam)) for lam in lambdas]
    specs.append(EstimatorSpec("mrdr"))
    return specs


def run_estimator(
    spec: EstimatorSpec,
    fb: BanditFeedback,
    action_dist: np.ndarray,
    q_hat: Optional[np.ndarray] = None,
    mrdr_model: Optional[RewardModel] = None,
) -> EstimatorResult:
    name = spec.name
    if name == "ipw":
        return estimate_ipw(fb, action_dist)
    if name == "snipw":
        return estimate_snipw(fb, action_dist)
    if name == "mrdr":
        if mrdr_model is None:
            raise ValueError("mrdr requires a fitted MRDR model, none was given")
        return estimate_mrdr(fb, action_dist, mrdr_model)
    if q_hat is None:
        raise ValueError(f"{name} requires a reward model (q_hat table), none was given")
    if name == "dm":
        return estimate_dm(fb, action_dist, q_hat)
    if name == "dr":
        return estimate_dr(fb, action_dist, q_hat)
    if name == "sndr":
        return estimate_sndr(fb, action_dist, q_hat)
    if name == "switch-dr":
        return estimate_switch_dr(fb, action_dist, q_hat, spec.tau)
    if name == "switch-ipw":
        return estimate_switch_ipw(fb, action_dist, q_hat, spec.tau)
    return estimate_dros(fb, action_dist, q_hat, spec.lambda_)


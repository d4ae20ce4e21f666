"""Logistic reward models q_hat(x, a), their accuracy metrics, and the cross-fit split."""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .data import BanditFeedback, DataError

__all__ = [
    "ConvergenceWarning",
    "FitConfig",
    "RewardModel",
    "auc",
    "cross_fit_split",
    "fit_logistic",
    "fit_weighted_logistic",
    "logistic_objective",
    "predict_q",
    "rce",
]

LOG_CLIP = 1e-12


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    ``C`` is the inverse L2 strength with the scikit-learn convention
    (``C * sum(loss) + ||w||^2 / 2``); the intercept is not penalized.
    """

    C: float = 1000.0
    max_iter: int = 5000
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class _Dense:
    def __init__(self, X: np.ndarray):
        self.X = X
        self.n, self.dim = X.shape

    def dot(self, theta):
        return self.X @ theta

    def tdot(self, g):
        return self.X.T @ g


class _ContextAction:
    """Implicit design matrix ``[contexts | one_hot(actions)]``."""

    def __init__(self, contexts: np.ndarray, actions: np.ndarray, n_actions: int):
        self.contexts = contexts
        self.actions = actions
        self.n_actions = n_actions
        self.n, self.d = contexts.shape
        self.dim = self.d + n_actions

    def dot(self, theta):
        return self.contexts @ theta[: self.d] + theta[self.d :][self.actions]

    def tdot(self, g):
        return np.concatenate([self.contexts.T @ g, np.bincount(self.actions, weights=g, minlength=self.n_actions)])


def logistic_objective(feats, y, sw, theta, b, C):
    """Mean weighted log-loss plus ``||theta||^2 / (2 C n)`` and its gradient."""
    n = feats.n
    z = feats.dot(theta) + b
    loss = np.logaddexp(0.0, z) - y * z
    f = float(np.dot(sw, loss) / n + np.dot(theta, theta) / (2.0 * C * n))
    r = sw * (_sigmoid(z) - y) / n
    g_theta = feats.tdot(r) + theta / (C * n)
    return f, g_theta, float(r.sum())


def _descend(objective, theta0: np.ndarray, b0: float, config: FitConfig, max_move: Optional[float] = None):
    """Full-batch gradient descent with Armijo backtracking.

    The trial step is a Barzilai-Borwein estimate; backtracking keeps the
    objective monotonically non-increasing. ``max_move`` bounds the parameter
    change per iteration, which keeps non-convex objectives from leaping onto
    flat saturated regions.
    """
    theta, b = theta0.astype(float).copy(), float(b0)
    f, g_t, g_b = objective(theta, b)
    history = [f]
    step = 1.0
    prev = None
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        gnorm2 = float(np.dot(g_t, g_t) + g_b * g_b)
        if np.sqrt(gnorm2) < config.tol:
            converged = True
            it -= 1
            break
        if prev is not None:
            s = np.append(theta - prev[0], b - prev[1])
            yv = np.append(g_t - prev[2], g_b - prev[3])
            sy = float(np.dot(s, yv))
            if sy > 0:
                step = min(float(np.dot(s, s)) / sy, 1e6)
        if max_move is not None:
            step = min(step, max_move / np.sqrt(gnorm2))
        while True:
            theta_new = theta - step * g_t
            b_new = b - step * g_b
            f_new, g_t_new, g_b_new = objective(theta_new, b_new)
            if f_new <= f - 1e-4 * step * gnorm2 or step < 1e-14:
                break
            step *= 0.5
        if f_new > f:
            # line search exhausted: stay put
            break
        prev = (theta, b, g_t, g_b)
        theta, b, f, g_t, g_b = theta_new, b_new, f_new, g_t_new, g_b_new
        history.append(f)
    else:
        gnorm = float(np.sqrt(np.dot(g_t, g_t) + g_b * g_b))
        converged = gnorm < config.tol
    return theta, b, {"iterations": it, "final_loss": f, "converged": converged, "history": history}


def _logit(p: float) -> float:
    p = min(max(p, LOG_CLIP), 1 - LOG_CLIP)
    return float(np.log(p / (1 - p)))


def fit_weighted_logistic(X, y, sample_weight, config: Optional[FitConfig] = None):
    """Fit ``P(y=1|x) = sigmoid(x @ w + b)`` with per-sample weights.

    Returns ``(w, b, info)``.
    """
    config = config or FitConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    sw = np.ones_like(y) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    feats = _Dense(X)
    b0 = _logit(float(np.dot(sw, y) / sw.sum()))
    w, b, info = _descend(
        lambda t, c: logistic_objective(feats, y, sw, t, c, config.C), np.zeros(feats.dim), b0, config
    )
    if not info["converged"]:
        warnings.warn(f"logistic fit did not converge in {config.max_iter} iterations", ConvergenceWarning)
    return w, b, info


@dataclass(frozen=True)
class RewardModel:
    """``q_hat(x, a) = sigmoid(x @ coef_context + coef_action[a] + intercept)``."""

    coef_context: np.ndarray
    coef_action: np.ndarray
    intercept: float
    C: float = 1000.0
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def n_actions(self) -> int:
        return int(np.asarray(self.coef_action).shape[0])

    @property
    def dim_context(self) -> int:
        return int(np.asarray(self.coef_context).shape[0])

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.coef_context, self.coef_action])

    def logits(self, contexts: np.ndarray) -> np.ndarray:
        """Logit table, shape (n, n_actions)."""
        base = np.asarray(contexts, dtype=float) @ self.coef_context + self.intercept
        return base[:, None] + np.asarray(self.coef_action)[None, :]

    def to_dict(self) -> dict:
        meta = {k: v for k, v in self.metadata.items() if k != "history"}
        return {
            "kind": type(self).__name__,
            "coef_context": np.asarray(self.coef_context).tolist(),
            "coef_action": np.asarray(self.coef_action).tolist(),
            "intercept": float(self.intercept),
            "C": self.C,
            "metadata": meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardModel":
        return cls(
            np.asarray(d["coef_context"], dtype=float),
            np.asarray(d["coef_action"], dtype=float),
            float(d["intercept"]),
            float(d.get("C", 1000.0)),
            dict(d.get("metadata", {})),
        )

    def save(self, path: Union[str, os.PathLike]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "RewardModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _split_theta(theta, d):
    return theta[:d], theta[d:]


def fit_logistic(fb: BanditFeedback, config: Optional[FitConfig] = None) -> RewardModel:
    """Fit q_hat by L2-penalized logistic regression on ``[context, one_hot(action)]``.

    Non-convergence is reported through ``metadata["converged"]`` and a
    :class:`ConvergenceWarning`, not an exception.
    """
    config = config or FitConfig()
    y = fb.rewards
    if not np.all((y == 0) | (y == 1)):
        raise DataError("fit_logistic needs binary rewards")
    if y.min() == y.max():
        raise DataError("fit_logistic needs both positive and negative rewards")
    feats = _ContextAction(fb.contexts, fb.actions, fb.n_actions)
    sw = np.ones_like(y)
    theta, b, info = _descend(
        lambda t, c: logistic_objective(feats, y, sw, t, c, config.C),
        np.zeros(feats.dim),
        _logit(float(y.mean())),
        config,
    )
    if not info["converged"]:
        warnings.warn(f"reward model did not converge in {config.max_iter} iterations", ConvergenceWarning)
    w_ctx, w_act = _split_theta(theta, fb.dim_context)
    info["objective"] = "log_likelihood"
    return RewardModel(w_ctx, w_act, b, config.C, info)


def predict_q(model: RewardModel, fb: BanditFeedback) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(q_hat(x_t, a_t), q_hat(x_t, a) for all a)``."""
    if fb.dim_context != model.dim_context or fb.n_actions != model.n_actions:
        raise ValueError(
            f"model expects {model.dim_context} context dims and {model.n_actions} actions, "
            f"feedback has {fb.dim_context} and {fb.n_actions}"
        )
    table = _sigmoid(model.logits(fb.contexts))
    return table[np.arange(fb.n_rounds), fb.actions], table


def cross_fit_split(fb: BanditFeedback, fraction: float = 0.3, seed=None) -> tuple[BanditFeedback, BanditFeedback]:
    """Random partition into a ``floor(fraction * n)`` training part and the rest."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    n_train = int(np.floor(fraction * fb.n_rounds))
    if n_train == 0 or n_train == fb.n_rounds:
        raise DataError(f"fraction {fraction} of {fb.n_rounds} records leaves an empty part")
    perm = np.random.default_rng(seed).permutation(fb.n_rounds)
    return fb.take(np.sort(perm[:n_train])), fb.take(np.sort(perm[n_train:]))


def _check_binary(labels: np.ndarray) -> np.ndarray:
    y = np.asarray(labels, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    if y.size == 0 or y.min() == y.max():
        raise ValueError("labels must contain both classes")
    return y


def rce(predictions, labels) -> float:
    """Relative cross entropy against predicting the label mean everywhere."""
    y = _check_binary(labels)
    q = np.clip(np.asarray(predictions, dtype=float), LOG_CLIP, 1 - LOG_CLIP)
    naive = np.clip(y.mean(), LOG_CLIP, 1 - LOG_CLIP)
    ll = np.sum(y * np.log(q) + (1 - y) * np.log(1 - q))
    ll_naive = np.sum(y * np.log(naive) + (1 - y) * np.log(1 - naive))
    return float(1.0 - ll / ll_naive)


def auc(predictions, labels, tie_correction: bool = False) -> float:
    """Fraction of (positive, negative) pairs ranked strictly correctly.

    Ties count zero unless ``tie_correction`` adds one half per tied pair.
    """
    y = _check_binary(labels)
    s = np.asarray(predictions, dtype=float)
    pos = s[y == 1]
    neg = np.sort(s[y == 0])
    below = np.searchsorted(neg, pos, side="left").sum()
    score = float(below)
    if tie_correction:
        ties = (np.searchsorted(neg, pos, side="right") - np.searchsorted(neg, pos, side="left")).sum()
        score += 0.5 * float(ties)
    return score / (pos.size * neg.size)

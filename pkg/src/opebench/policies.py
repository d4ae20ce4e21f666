"""Decision-making policies and their action-choice distributions.

An action distribution is a float array of shape ``(n_rounds, n_actions, len_list)``
holding ``pi_e(a | x_t, k)``. Context-free policies return a read-only view
broadcast along the round axis, so even million-round distributions are cheap.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from .data import BanditFeedback, DataError
from .reward_model import FitConfig, fit_weighted_logistic

__all__ = [
    "ActionDistBuilder",
    "BetaPosteriorState",
    "DeterministicPolicy",
    "SoftmaxPolicy",
    "bts_select",
    "bts_update",
    "check_action_dist",
    "compute_batch_action_dist",
    "context_free_builder",
    "ipw_learner_fit",
    "load_policy",
    "policy_to_action_dist",
    "save_policy",
    "uniform_dist",
]

ActionDistBuilder = Callable[[BanditFeedback], np.ndarray]

SIM_CHUNK = 10_000


def check_action_dist(action_dist: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    """Validate shape, non-negativity and per-(round, position) normalization."""
    dist = np.asarray(action_dist, dtype=float)
    if dist.ndim != 3:
        raise ValueError(f"action_dist must be 3-d (n_rounds, n_actions, len_list), got ndim={dist.ndim}")
    if dist.size and dist.min() < 0:
        raise ValueError("action_dist has negative entries")
    sums = dist.sum(axis=1)
    if sums.size and np.max(np.abs(sums - 1.0)) > atol:
        r, k = np.unravel_index(np.argmax(np.abs(sums - 1.0)), sums.shape)
        raise ValueError(f"action_dist does not sum to 1 at round {r}, position {k} (sum={sums[r, k]!r})")
    return dist


def uniform_dist(n_rounds: int, n_actions: int, len_list: int = 1) -> np.ndarray:
    if min(n_rounds, n_actions, len_list) < 1:
        raise ValueError("n_rounds, n_actions and len_list must be positive")
    base = np.full((1, n_actions, len_list), 1.0 / n_actions)
    return np.broadcast_to(base, (n_rounds, n_actions, len_list))


def context_free_builder(probs: np.ndarray) -> ActionDistBuilder:
    """Builder that broadcasts a fixed ``(n_actions, len_list)`` table over any feedback."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim == 1:
        probs = probs[:, None]
    check_action_dist(probs[None])

    def build(fb: BanditFeedback) -> np.ndarray:
        if probs.shape != (fb.n_actions, fb.len_list):
            raise ValueError(
                f"policy covers {probs.shape} (actions, positions), feedback has "
                f"{(fb.n_actions, fb.len_list)}"
            )
        return np.broadcast_to(probs[None], (fb.n_rounds,) + probs.shape)

    return build


# ---------------------------------------------------------------------------
# Bernoulli Thompson sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BetaPosteriorState:
    """Beta posterior of each arm's click probability.

    ``alpha`` / ``beta`` are prior parameters, scalars or per-action arrays.
    """

    successes: np.ndarray
    failures: np.ndarray
    alpha: Union[float, np.ndarray] = 1.0
    beta: Union[float, np.ndarray] = 1.0

    def __post_init__(self) -> None:
        s = np.asarray(self.successes, dtype=float)
        f = np.asarray(self.failures, dtype=float)
        if s.ndim != 1 or s.shape != f.shape:
            raise ValueError("successes and failures must be 1-d arrays of equal length")
        if np.any(s < 0) or np.any(f < 0):
            raise ValueError("success and failure counts must be non-negative")
        a = np.broadcast_to(np.asarray(self.alpha, dtype=float), s.shape)
        b = np.broadcast_to(np.asarray(self.beta, dtype=float), s.shape)
        if np.any(a <= 0) or np.any(b <= 0):
            raise ValueError("prior parameters must be positive")
        for name, v in (("successes", s), ("failures", f), ("alpha", a), ("beta", b)):
            v = np.array(v)
            v.flags.writeable = False
            object.__setattr__(self, name, v)

    @classmethod
    def fresh(cls, n_actions: int, alpha=1.0, beta=1.0) -> "BetaPosteriorState":
        return cls(np.zeros(n_actions), np.zeros(n_actions), alpha, beta)

    @property
    def n_actions(self) -> int:
        return int(self.successes.shape[0])

    def posterior_mean(self) -> np.ndarray:
        a = self.successes + self.alpha
        return a / (a + self.failures + self.beta)

    def to_dict(self) -> dict:
        return {
            "type": "bts",
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "successes": self.successes.tolist(),
            "failures": self.failures.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BetaPosteriorState":
        return cls(d["successes"], d["failures"], d.get("alpha", 1.0), d.get("beta", 1.0))


def _top_k(draws: np.ndarray, k: int) -> np.ndarray:
    # stable sort on the negated draws: ties go to the lower action index
    return np.argsort(-draws, axis=-1, kind="stable")[..., :k]


def bts_select(state: BetaPosteriorState, len_list: int, rng: np.random.Generator) -> np.ndarray:
    """Recommend the ``len_list`` arms with the highest posterior draws, best first."""
    if len_list > state.n_actions:
        raise ValueError(f"cannot fill {len_list} slots with {state.n_actions} actions")
    draws = rng.beta(state.successes + state.alpha, state.failures + state.beta)
    return _top_k(draws, len_list)


def bts_update(state: BetaPosteriorState, action: int, reward) -> BetaPosteriorState:
    if reward not in (0, 1):
        raise ValueError(f"reward must be binary, got {reward!r}")
    s = state.successes.copy()
    f = state.failures.copy()
    if reward == 1:
        s[action] += 1
    else:
        f[action] += 1
    return BetaPosteriorState(s, f, state.alpha, state.beta)


def _simulate_chunk(state: BetaPosteriorState, n: int, len_list: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    a = state.successes + state.alpha
    b = state.failures + state.beta
    draws = rng.beta(a, b, size=(n, state.n_actions))
    top = _top_k(draws, len_list)
    counts = np.zeros((state.n_actions, len_list))
    for k in range(len_list):
        counts[:, k] = np.bincount(top[:, k], minlength=state.n_actions)
    return counts


def compute_batch_action_dist(
    state: BetaPosteriorState,
    n_sim: int = 100_000,
    n_rounds: int = 1,
    len_list: int = 1,
    seed=None,
    n_jobs: int = 1,
) -> np.ndarray:
    """Monte-Carlo estimate of ``P(action a shown at position k)`` under Thompson sampling.

    Simulations run in fixed-size chunks, each with its own child seed, so the
    result does not depend on ``n_jobs``. The ``(n_actions, len_list)`` table is
    broadcast over ``n_rounds``.
    """
    if n_sim < 1:
        raise ValueError("n_sim must be at least 1")
    if len_list > state.n_actions:
        raise ValueError(f"cannot fill {len_list} slots with {state.n_actions} actions")
    sizes = [SIM_CHUNK] * (n_sim // SIM_CHUNK)
    if n_sim % SIM_CHUNK:
        sizes.append(n_sim % SIM_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    work = lambda i: _simulate_chunk(state, sizes[i], len_list, seeds[i])  # noqa: E731
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(i) for i in range(len(sizes))]
    probs = np.sum(parts, axis=0) / n_sim
    return np.broadcast_to(probs[None], (n_rounds, state.n_actions, len_list))


# ---------------------------------------------------------------------------
# context-dependent policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SoftmaxPolicy:
    """Stochastic policy ``softmax((x @ coef + intercept) / temperature)``, same at every position."""

    coef: np.ndarray
    intercept: np.ndarray
    temperature: float = 1.0

    def probs(self, contexts: np.ndarray) -> np.ndarray:
        z = (np.asarray(contexts, dtype=float) @ np.asarray(self.coef) + self.intercept) / self.temperature
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def action_dist(self, fb: BanditFeedback) -> np.ndarray:
        p = self.probs(fb.contexts)
        return np.repeat(p[:, :, None], fb.len_list, axis=2)

    def to_dict(self) -> dict:
        return {
            "type": "softmax",
            "coef": np.asarray(self.coef).tolist(),
            "intercept": np.asarray(self.intercept).tolist(),
            "temperature": self.temperature,
        }


@dataclass(frozen=True)
class DeterministicPolicy:
    """Argmax of per-action linear scores; the same action fills every position.

    Actions that never earned a positive weight in training keep ``-inf`` scores.
    """

    coef: np.ndarray
    intercept: np.ndarray
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def n_actions(self) -> int:
        return int(np.asarray(self.intercept).shape[0])

    def scores(self, contexts: np.ndarray) -> np.ndarray:
        return np.asarray(contexts, dtype=float) @ np.asarray(self.coef) + np.asarray(self.intercept)

    def predict(self, contexts: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(contexts), axis=1)

    def to_dict(self) -> dict:
        intercept = np.asarray(self.intercept, dtype=float)
        return {
            "type": "deterministic",
            "coef": np.asarray(self.coef).tolist(),
            "intercept": [None if not np.isfinite(v) else float(v) for v in intercept],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeterministicPolicy":
        intercept = np.array([-np.inf if v is None else v for v in d["intercept"]], dtype=float)
        return cls(np.asarray(d["coef"], dtype=float), intercept)


def ipw_learner_fit(fb: BanditFeedback, config: Optional[FitConfig] = None) -> DeterministicPolicy:
    """Learn a deterministic policy maximizing the IPW value estimate.

    Maximizing ``E_D[1{pi(x_t)=a_t} r_t / pi_b]`` is cost-sensitive
    classification: each record votes for its logged action with weight
    ``r_t / pi_b(a_t|x_t)``. One weighted logistic scorer per action is fit
    one-vs-rest; the policy takes the argmax score. Weights are normalized to
    mean one, so rescaling the rewards leaves the fitted policy unchanged.
    """
    config = config or FitConfig()
    sample_weight = fb.rewards / fb.propensities
    if not np.any(sample_weight > 0):
        raise DataError("all rewards are zero: the IPW objective is degenerate")
    d = fb.dim_context
    coef = np.zeros((d, fb.n_actions))
    intercept = np.full(fb.n_actions, -np.inf)
    if fb.n_actions == 1:
        intercept[0] = 0.0
        return DeterministicPolicy(coef, intercept)
    keep = sample_weight > 0
    X = fb.contexts[keep]
    sw = sample_weight[keep] / sample_weight[keep].mean()
    acts = fb.actions[keep]
    for a in range(fb.n_actions):
        y = (acts == a).astype(float)
        if not y.any():
            continue
        if y.all():
            # every rewarded record chose a: it dominates all other actions
            intercept[:] = -np.inf
            intercept[a] = 0.0
            coef[:] = 0.0
            return DeterministicPolicy(coef, intercept)
        w, b, _ = fit_weighted_logistic(X, y, sw, config)
        coef[:, a] = w
        intercept[a] = b
    return DeterministicPolicy(coef, intercept)


def policy_to_action_dist(policy: DeterministicPolicy, contexts: np.ndarray, len_list: int = 1) -> np.ndarray:
    contexts = np.asarray(contexts, dtype=float)
    if contexts.shape[0] == 0:
        raise ValueError("contexts must be non-empty")
    chosen = policy.predict(contexts)
    dist = np.zeros((contexts.shape[0], policy.n_actions, len_list))
    dist[np.arange(contexts.shape[0]), chosen, :] = 1.0
    return dist


# ---------------------------------------------------------------------------
# policy documents
# ---------------------------------------------------------------------------


def save_policy(policy, path: Union[str, os.PathLike], **extra) -> None:
    doc = policy.to_dict() if hasattr(policy, "to_dict") else dict(policy)
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2))


def load_policy(source: Union[str, os.PathLike, dict], seed=None) -> ActionDistBuilder:
    """Build an action-distribution builder from a policy JSON document.

    Supported ``type`` values: ``uniform``, ``bts`` (optional ``n_sim``),
    ``softmax``, ``deterministic`` and ``table`` (explicit ``probs`` of shape
    ``(n_actions, len_list)``).
    """
    doc = source if isinstance(source, dict) else json.loads(Path(source).read_text())
    kind = doc.get("type")
    if kind == "uniform":
        return lambda fb: uniform_dist(fb.n_rounds, fb.n_actions, fb.len_list)
    if kind == "table":
        return context_free_builder(np.asarray(doc["probs"], dtype=float))
    if kind == "bts":
        state = BetaPosteriorState.from_dict(doc)
        n_sim = int(doc.get("n_sim", 100_000))
        sim_seed = doc.get("seed", seed)
        cache: dict[int, np.ndarray] = {}

        def build(fb: BanditFeedback) -> np.ndarray:
            if state.n_actions != fb.n_actions:
                raise ValueError(f"policy has {state.n_actions} actions, feedback has {fb.n_actions}")
            if fb.len_list not in cache:
                cache[fb.len_list] = compute_batch_action_dist(state, n_sim, 1, fb.len_list, seed=sim_seed)[0]
            return np.broadcast_to(cache[fb.len_list][None], (fb.n_rounds, fb.n_actions, fb.len_list))

        return build
    if kind == "softmax":
        pol = SoftmaxPolicy(
            np.asarray(doc["coef"], dtype=float),
            np.asarray(doc["intercept"], dtype=float),
            float(doc.get("temperature", 1.0)),
        )
        return pol.action_dist
    if kind == "deterministic":
        det = DeterministicPolicy.from_dict(doc)
        return lambda fb: policy_to_action_dist(det, fb.contexts, fb.len_list)
    raise ValueError(f"unknown policy type {kind!r}")

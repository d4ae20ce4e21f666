"""Logged bandit feedback: container, OBD-schema IO, synthetic generation and resampling."""
from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

__all__ = [
    "BanditFeedback",
    "ConfigError",
    "DataError",
    "SchemaError",
    "SyntheticConfig",
    "SyntheticGroundTruth",
    "behavior_probs",
    "bootstrap_sample",
    "classification_to_bandit",
    "concat_feedback",
    "expected_reward",
    "generate_synthetic",
    "load_obd",
    "split_by_time",
    "write_obd",
]

CAMPAIGN_N_ITEMS = {"all": 80, "men": 34, "women": 46}
BEHAVIOR_POLICIES = ("random", "bts")

# canonical column name -> accepted aliases (the public OBD release uses the latter)
CORE_COLUMNS = {
    "timestamp": ("timestamp",),
    "item_id": ("item_id",),
    "position": ("position",),
    "click_indicator": ("click_indicator", "click"),
    "action_prob": ("action_prob", "propensity_score"),
}
USER_FEATURE_PREFIX = "user_feature_"
AFFINITY_PREFIX = "user-item_affinity_"
CONTEXT_PREFIX = "context_"


class SchemaError(ValueError):
    """Input file does not follow the expected column schema."""


class DataError(ValueError):
    """Input records violate a value constraint."""


class ConfigError(ValueError):
    """Invalid synthetic-data configuration."""


def _frozen(a: np.ndarray) -> np.ndarray:
    v = a.view()
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class BanditFeedback:
    """A batch of logged bandit records at (impression, position) granularity.

    Parameters
    ----------
    n_actions: int
        Number of actions (items).

    len_list: int
        Number of positions per impression.

    contexts: array-like, shape (n_rounds, dim_context)
        Context vector of each record.

    actions: array-like, shape (n_rounds,)
        Action chosen by the behavior policy.

    positions: array-like, shape (n_rounds,)
        0-based slot the action was shown in.

    rewards: array-like, shape (n_rounds,)
        Observed rewards.

    propensities: array-like, shape (n_rounds,)
        Behavior probability of the logged action at its position.

    timestamps: array-like, shape (n_rounds,), optional
        Ordering key of each record.

    behavior_probs: array-like, shape (n_rounds, n_actions), optional
        Behavior probabilities of every action at the record's position. Only
        known for simulated data; needed by Switch-IPW.
    """

    n_actions: int
    len_list: int
    contexts: np.ndarray
    actions: np.ndarray
    positions: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray
    timestamps: Optional[np.ndarray] = None
    behavior_probs: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        set_ = lambda name, value: object.__setattr__(self, name, value)  # noqa: E731
        contexts = np.asarray(self.contexts, dtype=float)
        if contexts.ndim == 1:
            contexts = contexts.reshape(-1, 1)
        if contexts.ndim != 2:
            raise DataError("contexts must be a 2-d matrix")
        set_("contexts", _frozen(contexts))
        set_("actions", _frozen(np.asarray(self.actions, dtype=np.int64)))
        set_("positions", _frozen(np.asarray(self.positions, dtype=np.int64)))
        set_("rewards", _frozen(np.asarray(self.rewards, dtype=float)))
        set_("propensities", _frozen(np.asarray(self.propensities, dtype=float)))
        if self.timestamps is not None:
            set_("timestamps", _frozen(np.asarray(self.timestamps)))
        if self.behavior_probs is not None:
            set_("behavior_probs", _frozen(np.asarray(self.behavior_probs, dtype=float)))
        self._validate()

    def _validate(self) -> None:
        n = self.actions.shape[0]
        if self.n_actions < 1 or self.len_list < 1:
            raise DataError("n_actions and len_list must be positive")
        arrays = {
            "contexts": self.contexts,
            "positions": self.positions,
            "rewards": self.rewards,
            "propensities": self.propensities,
        }
        if self.timestamps is not None:
            arrays["timestamps"] = self.timestamps
        if self.behavior_probs is not None:
            arrays["behavior_probs"] = self.behavior_probs
        for name, arr in arrays.items():
            if arr.shape[0] != n:
                raise DataError(f"{name} has {arr.shape[0]} records, expected {n}")
        if n == 0:
            return
        if not np.all(self.propensities > 0):
            idx = int(np.flatnonzero(~(self.propensities > 0))[0])
            raise DataError(f"propensity must be strictly positive (record {idx})")
        if self.actions.min() < 0 or self.actions.max() >= self.n_actions:
            raise DataError(f"actions must lie in [0, {self.n_actions})")
        if self.positions.min() < 0 or self.positions.max() >= self.len_list:
            raise DataError(f"positions must lie in [0, {self.len_list})")
        if self.behavior_probs is not None and self.behavior_probs.shape[1] != self.n_actions:
            raise DataError("behavior_probs must have one column per action")

    @property
    def n_rounds(self) -> int:
        return int(self.actions.shape[0])

    @property
    def dim_context(self) -> int:
        return int(self.contexts.shape[1])

    def is_time_ordered(self) -> bool:
        if self.timestamps is None or self.n_rounds < 2:
            return True
        return bool(np.all(self.timestamps[1:] >= self.timestamps[:-1]))

    def take(self, indices) -> "BanditFeedback":
        """Subset (or resample) records by integer index."""
        idx = np.asarray(indices, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return BanditFeedback(
            n_actions=self.n_actions,
            len_list=self.len_list,
            contexts=self.contexts[idx],
            actions=self.actions[idx],
            positions=self.positions[idx],
            rewards=self.rewards[idx],
            propensities=self.propensities[idx],
            timestamps=pick(self.timestamps),
            behavior_probs=pick(self.behavior_probs),
            metadata=dict(self.metadata),
        )


def concat_feedback(*parts: BanditFeedback) -> BanditFeedback:
    """Concatenate feedback batches that share action/position spaces."""
    if not parts:
        raise DataError("nothing to concatenate")
    first = parts[0]
    for p in parts[1:]:
        if (p.n_actions, p.len_list, p.dim_context) != (first.n_actions, first.len_list, first.dim_context):
            raise DataError("feedback batches have incompatible shapes")
    cat = lambda name: (  # noqa: E731
        None
        if any(getattr(p, name) is None for p in parts)
        else np.concatenate([getattr(p, name) for p in parts])
    )
    return BanditFeedback(
        n_actions=first.n_actions,
        len_list=first.len_list,
        contexts=cat("contexts"),
        actions=cat("actions"),
        positions=cat("positions"),
        rewards=cat("rewards"),
        propensities=cat("propensities"),
        timestamps=cat("timestamps"),
        behavior_probs=cat("behavior_probs"),
        metadata=dict(first.metadata),
    )


# ---------------------------------------------------------------------------
# OBD log schema
# ---------------------------------------------------------------------------


def _resolve_obd_path(path: Union[str, os.PathLike], campaign: str, behavior_policy: str) -> Path:
    p = Path(path)
    if p.is_dir():
        for name in (f"{campaign}.csv", f"{campaign}.csv.gz"):
            for cand in (p / behavior_policy / campaign / name, p / name):
                if cand.exists():
                    return cand
        raise FileNotFoundError(f"no {campaign}.csv under {p} for behavior policy {behavior_policy!r}")
    return p


def _stable_bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def _hash_categoricals(df: pd.DataFrame, columns: list[str], dim: int) -> np.ndarray:
    out = np.zeros((len(df), dim))
    rows = np.arange(len(df))
    for col in columns:
        codes, uniques = pd.factorize(df[col].astype(str), sort=False)
        buckets = np.array([_stable_bucket(f"{col}={u}", dim) for u in uniques], dtype=np.int64)
        np.add.at(out, (rows, buckets[codes]), 1.0)
    return out


def _parse_timestamps(col: pd.Series) -> np.ndarray:
    if pd.api.types.is_numeric_dtype(col):
        return col.to_numpy()
    parsed = pd.to_datetime(col, utc=True).dt.tz_localize(None)
    return parsed.to_numpy().astype("datetime64[ns]").astype(np.int64)


def load_obd(
    path: Union[str, os.PathLike],
    campaign: str = "all",
    behavior_policy: str = "random",
    n_actions: Optional[int] = None,
    hash_dim: int = 64,
) -> BanditFeedback:
    """Load an Open-Bandit-Dataset-schema CSV (optionally gzipped).

    ``path`` is either a CSV file or a dataset root laid out as
    ``<root>/<behavior_policy>/<campaign>/<campaign>.csv``.

    Categorical ``user_feature_*`` columns are feature-hashed into ``hash_dim``
    buckets; numeric ``user-item_affinity_*`` and ``context_*`` columns are
    appended verbatim. Positions are remapped from 1-based to 0-based.
    """
    if campaign not in CAMPAIGN_N_ITEMS:
        raise ValueError(f"campaign must be one of {sorted(CAMPAIGN_N_ITEMS)}, got {campaign!r}")
    if behavior_policy not in BEHAVIOR_POLICIES:
        raise ValueError(f"behavior_policy must be one of {BEHAVIOR_POLICIES}, got {behavior_policy!r}")
    file = _resolve_obd_path(path, campaign, behavior_policy)
    df = pd.read_csv(file, compression="infer", float_precision="round_trip")
    df = df.drop(columns=[c for c in df.columns if str(c).startswith("Unnamed")])

    resolved = {}
    for canonical, aliases in CORE_COLUMNS.items():
        found = next((a for a in aliases if a in df.columns), None)
        if found is None:
            raise SchemaError(f"missing column {canonical!r} in {file}")
        resolved[canonical] = df[found]

    prob = resolved["action_prob"].to_numpy(dtype=float)
    bad = np.flatnonzero(~(prob > 0))
    if bad.size:
        raise DataError(f"action_prob must be > 0 (row {int(bad[0])})")
    position = resolved["position"].to_numpy(dtype=np.int64)
    if position.size and position.min() < 1:
        raise DataError(f"positions must be 1-based (row {int(np.argmin(position))})")
    item = resolved["item_id"].to_numpy(dtype=np.int64)
    if item.size and item.min() < 0:
        raise DataError(f"item_id must be non-negative (row {int(np.argmin(item))})")

    user_cols = [c for c in df.columns if c.startswith(USER_FEATURE_PREFIX)]
    numeric_cols = [c for c in df.columns if c.startswith(AFFINITY_PREFIX) or c.startswith(CONTEXT_PREFIX)]
    blocks = []
    if user_cols:
        blocks.append(_hash_categoricals(df, user_cols, hash_dim))
    if numeric_cols:
        blocks.append(df[numeric_cols].to_numpy(dtype=float))
    contexts = np.hstack(blocks) if blocks else np.zeros((len(df), 1))

    if n_actions is None:
        n_actions = max(CAMPAIGN_N_ITEMS[campaign], int(item.max()) + 1 if item.size else 1)
    return BanditFeedback(
        n_actions=n_actions,
        len_list=int(position.max()) if position.size else 1,
        contexts=contexts,
        actions=item,
        positions=position - 1,
        rewards=resolved["click_indicator"].to_numpy(dtype=float),
        propensities=prob,
        timestamps=_parse_timestamps(resolved["timestamp"]),
        metadata={"campaign": campaign, "behavior_policy": behavior_policy, "source": str(file)},
    )


def write_obd(fb: BanditFeedback, path: Union[str, os.PathLike]) -> Path:
    """Write feedback in the OBD column order; contexts go to ``context_*`` columns.

    Timestamps default to the row index. Floats are written with round-trip precision.
    """
    path = Path(path)
    ts = fb.timestamps if fb.timestamps is not None else np.arange(fb.n_rounds)
    cols = {
        "timestamp": ts,
        "item_id": fb.actions,
        "position": fb.positions + 1,
        "click_indicator": fb.rewards,
        "action_prob": fb.propensities,
    }
    for j in range(fb.dim_context):
        cols[f"{CONTEXT_PREFIX}{j}"] = fb.contexts[:, j]
    df = pd.DataFrame(cols)
    if np.all(fb.rewards == np.round(fb.rewards)):
        df["click_indicator"] = fb.rewards.astype(np.int64)
    df.to_csv(path, index=False, float_format=None, compression="infer", lineterminator="\n")
    return path


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

REWARD_TYPES = ("logistic", "quadratic", "constant")
BEHAVIOR_TYPES = ("uniform", "softmax")


@dataclass(frozen=True)
class SyntheticConfig:
    """Environment and logging policy of a synthetic bandit problem.

    Reward means are ``sigmoid(f(x) @ reward_coef + reward_intercept)`` with
    ``f(x) = x`` for ``"logistic"`` and ``f(x) = x**2 - 1`` for ``"quadratic"``;
    ``"constant"`` uses ``constant_reward`` everywhere. A softmax behavior
    policy scores actions with ``x @ behavior_coef`` (reward logits when
    ``behavior_coef`` is None). Coefficients left as None are drawn from
    ``seed``; call :meth:`resolved` to pin them before sharing an environment.
    """

    n_actions: int = 4
    dim_context: int = 3
    len_list: int = 1
    reward_type: str = "logistic"
    reward_coef: Optional[np.ndarray] = None
    reward_intercept: Optional[np.ndarray] = None
    constant_reward: float = 0.5
    behavior: str = "uniform"
    behavior_coef: Optional[np.ndarray] = None
    behavior_temperature: float = 1.0
    propensity_floor: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_actions < 2:
            raise ConfigError("n_actions must be at least 2")
        if self.dim_context < 1:
            raise ConfigError("dim_context must be at least 1")
        if not 1 <= self.len_list <= self.n_actions:
            raise ConfigError("len_list must lie in [1, n_actions]")
        if self.reward_type not in REWARD_TYPES:
            raise ConfigError(f"reward_type must be one of {REWARD_TYPES}")
        if self.behavior not in BEHAVIOR_TYPES:
            raise ConfigError(f"behavior must be one of {BEHAVIOR_TYPES}")
        if self.behavior_temperature <= 0:
            raise ConfigError("behavior_temperature must be positive")
        if not 0 <= self.propensity_floor < 1.0 / self.n_actions + 1e-12:
            raise ConfigError("propensity_floor must lie in [0, 1/n_actions]")
        if not 0.0 <= self.constant_reward <= 1.0:
            raise ConfigError("constant_reward must lie in [0, 1]")
        shapes = {
            "reward_coef": (self.dim_context, self.n_actions),
            "reward_intercept": (self.n_actions,),
            "behavior_coef": (self.dim_context, self.n_actions),
        }
        for name, shape in shapes.items():
            value = getattr(self, name)
            if value is not None:
                arr = np.asarray(value, dtype=float)
                if arr.shape != shape:
                    raise ConfigError(f"{name} must have shape {shape}, got {arr.shape}")
                object.__setattr__(self, name, _frozen(arr))

    def resolved(self) -> "SyntheticConfig":
        """Return a copy with every random coefficient drawn and fixed."""
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0]))
        coef = rng.normal(size=(self.dim_context, self.n_actions))
        intercept = rng.normal(scale=0.5, size=self.n_actions)
        return dataclasses.replace(
            self,
            reward_coef=self.reward_coef if self.reward_coef is not None else coef,
            reward_intercept=self.reward_intercept if self.reward_intercept is not None else intercept,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        return cls(**d)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def expected_reward(config: SyntheticConfig, contexts: np.ndarray) -> np.ndarray:
    """Exact mean reward ``q(x, a)``, shape (n, n_actions)."""
    cfg = config.resolved()
    contexts = np.asarray(contexts, dtype=float)
    if cfg.reward_type == "constant":
        return np.full((contexts.shape[0], cfg.n_actions), float(cfg.constant_reward))
    feats = contexts if cfg.reward_type == "logistic" else contexts**2 - 1.0
    return _sigmoid(feats @ cfg.reward_coef + cfg.reward_intercept)


def behavior_probs(config: SyntheticConfig, contexts: np.ndarray) -> np.ndarray:
    """Action probabilities of the configured logging policy, shape (n, n_actions)."""
    cfg = config.resolved()
    n = np.asarray(contexts).shape[0]
    if cfg.behavior == "uniform":
        return np.full((n, cfg.n_actions), 1.0 / cfg.n_actions)
    if cfg.behavior_coef is not None:
        scores = np.asarray(contexts, dtype=float) @ cfg.behavior_coef
    else:
        scores = expected_reward(cfg, contexts)
    z = scores / cfg.behavior_temperature
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class SyntheticGroundTruth:
    """Exact mean rewards on the generated contexts.

    ``policy_value`` averages ``q(x_t, pi)`` over the generated records,
    reading the policy's probabilities at each record's position.
    """

    q_table: np.ndarray
    positions: np.ndarray
    config: SyntheticConfig

    def q_function(self, contexts: np.ndarray) -> np.ndarray:
        return expected_reward(self.config, contexts)

    def policy_value(self, action_dist: np.ndarray) -> float:
        dist = np.asarray(action_dist, dtype=float)
        n = self.q_table.shape[0]
        if dist.ndim == 2:
            probs = dist
        else:
            probs = dist[np.arange(n), :, self.positions]
        return float(np.mean(np.sum(self.q_table * probs, axis=1)))


def generate_synthetic(
    config: SyntheticConfig, n_rounds: int, random_state: Optional[int] = None
) -> tuple[BanditFeedback, SyntheticGroundTruth]:
    """Draw ``n_rounds`` i.i.d. records from ``p(x) pi_b(a|x) p(r|x,a)``.

    Contexts are standard normal and rewards Bernoulli(q(x, a)). The sampling
    stream is seeded by ``random_state`` (``config.seed`` when None), the
    environment coefficients by ``config.seed`` alone.
    """
    if n_rounds < 1:
        raise ConfigError("n_rounds must be positive")
    cfg = config.resolved()
    seed = cfg.seed if random_state is None else random_state
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    contexts = rng.normal(size=(n_rounds, cfg.dim_context))
    pi_b = behavior_probs(cfg, contexts)
    if pi_b.min() < cfg.propensity_floor:
        raise ConfigError(
            f"behavior probability {pi_b.min():.3g} is below the propensity floor {cfg.propensity_floor:g}"
        )
    cum = np.cumsum(pi_b, axis=1)
    u = rng.random(n_rounds)[:, None]
    actions = np.minimum((u > cum).sum(axis=1), cfg.n_actions - 1)
    positions = rng.integers(cfg.len_list, size=n_rounds)
    q = expected_reward(cfg, contexts)
    q_obs = q[np.arange(n_rounds), actions]
    rewards = (rng.random(n_rounds) < q_obs).astype(float)
    fb = BanditFeedback(
        n_actions=cfg.n_actions,
        len_list=cfg.len_list,
        contexts=contexts,
        actions=actions,
        positions=positions,
        rewards=rewards,
        propensities=pi_b[np.arange(n_rounds), actions],
        timestamps=np.arange(n_rounds),
        behavior_probs=pi_b,
        metadata={"source": "synthetic", "behavior_policy": cfg.behavior},
    )
    return fb, SyntheticGroundTruth(q_table=_frozen(q), positions=fb.positions, config=cfg)


def classification_to_bandit(
    features: np.ndarray,
    labels: np.ndarray,
    behavior: Optional[np.ndarray] = None,
    seed: int = 0,
    n_classes: Optional[int] = None,
) -> BanditFeedback:
    """Turn a multiclass dataset into bandit feedback.

    Each row samples an action from ``behavior`` (an ``(n, n_actions)`` or
    ``(n, n_actions, 1)`` probability matrix; uniform over ``n_classes`` when
    None) and is rewarded 1 iff the action equals the label.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if features.shape[0] != n:
        raise DataError("features and labels differ in length")
    if behavior is None:
        k = n_classes if n_classes is not None else int(labels.max()) + 1
        behavior = np.full((n, k), 1.0 / k)
    behavior = np.asarray(behavior, dtype=float)
    if behavior.ndim == 3:
        behavior = behavior[:, :, 0]
    if behavior.shape[0] != n:
        raise DataError("behavior must have one row per sample")
    k = behavior.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"labels must lie in [0, {k})")
    if np.any(behavior < 0) or not np.allclose(behavior.sum(axis=1), 1.0, atol=1e-9):
        raise DataError("behavior rows must be probability vectors")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(behavior, axis=1)
    u = rng.random(n)[:, None] * cum[:, -1:]
    actions = np.minimum((u >= cum).sum(axis=1), k - 1)
    prop = behavior[np.arange(n), actions]
    if np.any(prop <= 0):
        raise DataError(f"sampled a zero-probability action (row {int(np.flatnonzero(prop <= 0)[0])})")
    return BanditFeedback(
        n_actions=k,
        len_list=1,
        contexts=features,
        actions=actions,
        positions=np.zeros(n, dtype=np.int64),
        rewards=(actions == labels).astype(float),
        propensities=prop,
        timestamps=np.arange(n),
        behavior_probs=behavior,
        metadata={"source": "classification"},
    )


# ---------------------------------------------------------------------------
# splitting and resampling
# ---------------------------------------------------------------------------


def split_by_time(fb: BanditFeedback, split_point: int) -> tuple[BanditFeedback, BanditFeedback]:
    """Split into records ``[0, split_point)`` and ``[split_point, n_rounds)``."""
    if not 0 < split_point < fb.n_rounds:
        raise DataError(f"split_point must lie in (0, {fb.n_rounds}), got {split_point}")
    if not fb.is_time_ordered():
        raise DataError("records are not ordered by timestamp")
    return fb.take(np.arange(split_point)), fb.take(np.arange(split_point, fb.n_rounds))


def bootstrap_sample(fb: BanditFeedback, seed) -> BanditFeedback:
    """Resample ``n_rounds`` records uniformly with replacement.

    The drawn indices are sorted so a time-ordered input stays time-ordered.
    """
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.integers(fb.n_rounds, size=fb.n_rounds))
    return fb.take(idx)

"""Off-policy evaluation toolkit for contextual bandits."""
from .data import (
    BanditFeedback,
    SyntheticConfig,
    SyntheticGroundTruth,
    bootstrap_sample,
    classification_to_bandit,
    generate_synthetic,
    load_obd,
    split_by_time,
    write_obd,
)
from .estimators import (
    EstimatorResult,
    EstimatorSpec,
    default_estimators,
    estimate_dm,
    estimate_dr,
    estimate_dros,
    estimate_ipw,
    estimate_mrdr,
    estimate_sndr,
    estimate_snipw,
    estimate_switch_dr,
    estimate_switch_ipw,
    fit_mrdr,
    importance_weights,
)
from .policies import (
    BetaPosteriorState,
    bts_select,
    bts_update,
    compute_batch_action_dist,
    ipw_learner_fit,
    policy_to_action_dist,
    uniform_dist,
)
from .protocol import ProtocolConfig, ProtocolReport, aggregate, on_policy_value, relative_ee, run_protocol
from .reward_model import FitConfig, RewardModel, auc, cross_fit_split, fit_logistic, predict_q, rce

__version__ = "0.1.0"

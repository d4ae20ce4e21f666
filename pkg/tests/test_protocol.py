import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opebench import (
    EstimatorSpec,
    ProtocolConfig,
    ProtocolReport,
    SyntheticConfig,
    aggregate,
    generate_synthetic,
    on_policy_value,
    relative_ee,
    run_protocol,
)
from opebench.data import DataError
from opebench.policies import context_free_builder, uniform_dist
from opebench.protocol import CSV_HEADER, write_reports_csv

from helpers import make_fb

CHEAP = (EstimatorSpec("ipw"), EstimatorSpec("snipw"), EstimatorSpec("dm"), EstimatorSpec("dr"))


def _uniform_builder(fb):
    return uniform_dist(fb.n_rounds, fb.n_actions, fb.len_list)


def test_on_policy_value_examples():
    assert on_policy_value(make_fb([0, 1, 0], [1, 1, 1], [0.5] * 3)) == 1.0
    with pytest.raises(DataError):
        on_policy_value(make_fb([], [], []))


def test_on_policy_value_binomial_oracle():
    n = 100_000
    rewards = (np.random.default_rng(0).random(n) < 0.4).astype(float)
    fb = make_fb(np.zeros(n, dtype=int), rewards, np.ones(n))
    assert abs(on_policy_value(fb) - 0.4) < 3 * math.sqrt(0.24 / n)


@pytest.mark.parametrize("estimate,expected", [(0.3, 0.0), (0.6, 1.0), (0.0, 1.0)])
def test_relative_ee(estimate, expected):
    assert relative_ee(estimate, 0.3) == pytest.approx(expected, abs=1e-15)


def test_relative_ee_zero_truth():
    with pytest.raises(ZeroDivisionError):
        relative_ee(0.1, 0.0)


def test_aggregate_examples():
    mean, std = aggregate([0.1, 0.1, 0.1])
    assert mean == pytest.approx(0.1, abs=1e-16) and std == pytest.approx(0.0, abs=1e-16)
    assert aggregate([0, 2]) == (1.0, math.sqrt(2))
    with pytest.raises(ValueError):
        aggregate([1.0])


@given(st.lists(st.floats(0, 10), min_size=2, max_size=20), st.randoms(use_true_random=False))
@settings(max_examples=50, deadline=None)
def test_aggregate_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    a, b = aggregate(values), aggregate(shuffled)
    assert a[0] == pytest.approx(b[0], rel=1e-12, abs=1e-12)
    assert a[1] == pytest.approx(b[1], rel=1e-9, abs=1e-12)


def test_config_validation():
    assert ProtocolConfig().n_bootstrap == 30
    with pytest.raises(ValueError):
        ProtocolConfig(mode="out_sample")
    with pytest.raises(ValueError):
        ProtocolConfig(n_bootstrap=0)


def _pair(n=2000, seed=0):
    base = SyntheticConfig(n_actions=4, behavior="uniform", seed=seed).resolved()
    d_b, _ = generate_synthetic(base, n, random_state=seed + 100)
    d_e, _ = generate_synthetic(SyntheticConfig(**{**base.to_dict(), "behavior": "softmax"}), n, random_state=seed + 200)
    return d_b, d_e


def _softmax_builder(cfg):
    from opebench.data import behavior_probs

    return lambda fb: behavior_probs(cfg, fb.contexts)[:, :, None]


def test_run_is_deterministic_and_thread_independent():
    d_b, d_e = _pair(1500)
    builder = _softmax_builder(SyntheticConfig(n_actions=4, behavior="softmax", seed=0))
    cfg = ProtocolConfig(n_bootstrap=6, estimators=CHEAP, seed=3)
    a = run_protocol(d_b, d_e, builder, cfg)
    b = run_protocol(d_b, d_e, builder, cfg)
    c = run_protocol(d_b, d_e, builder, ProtocolConfig(n_bootstrap=6, estimators=CHEAP, seed=3, n_jobs=3))
    assert a.to_dict() == b.to_dict() == c.to_dict()


def test_report_is_self_consistent():
    d_b, d_e = _pair(1000)
    report = run_protocol(d_b, d_e, _uniform_builder, ProtocolConfig(n_bootstrap=5, estimators=CHEAP))
    for s in report.summaries:
        mean, std = aggregate(s.values)
        assert abs(mean - s.mean) <= 1e-12 and abs(std - s.std) <= 1e-12
    assert report.v_on == pytest.approx(d_e.rewards.mean())


def test_self_evaluation_snipw_is_accurate():
    fb, _ = generate_synthetic(SyntheticConfig(n_actions=4, seed=4), 20_000)
    report = run_protocol(fb, fb, _uniform_builder, ProtocolConfig(n_bootstrap=10, estimators=(EstimatorSpec("snipw"),)))
    assert report["SNIPW"].mean < 0.05


def test_self_evaluation_error_shrinks_with_n():
    fb, _ = generate_synthetic(SyntheticConfig(n_actions=4, seed=5), 100_000)
    cfg = ProtocolConfig(n_bootstrap=30, estimators=(EstimatorSpec("snipw"),), seed=1)
    errors = [run_protocol(fb.take(np.arange(n)), fb.take(np.arange(n)), _uniform_builder, cfg)["SNIPW"].mean
              for n in (1_000, 10_000, 100_000)]
    assert errors[0] > errors[1] > errors[2]


def test_failures_are_recorded_and_excluded():
    # all-zero rewards in the behavior log: the reward model cannot be fit
    d_b = make_fb(np.arange(200) % 2, np.zeros(200), np.full(200, 0.5), timestamps=np.arange(200))
    d_e = make_fb(np.arange(200) % 2, np.arange(200) % 2, np.full(200, 0.5), timestamps=np.arange(200))
    report = run_protocol(d_b, d_e, _uniform_builder, ProtocolConfig(n_bootstrap=3, estimators=CHEAP))
    dm = report["DM"]
    assert dm.values == [None, None, None]
    assert math.isnan(dm.mean)
    assert "reward model" in dm.failures[0]["reason"]
    assert report["IPW"].mean == pytest.approx(1.0)
    assert any("DM" in w for w in report.warnings)


def test_zero_on_policy_value_is_an_error():
    d = make_fb([0, 1, 0], [0, 0, 0], [0.5] * 3)
    with pytest.raises(ZeroDivisionError):
        run_protocol(d, d, _uniform_builder, ProtocolConfig(n_bootstrap=2, estimators=CHEAP))


def test_out_sample_ranges_are_disjoint():
    d_b, d_e = _pair(1000)
    cfg = ProtocolConfig(mode="out_sample", split_point=600, n_bootstrap=2, estimators=CHEAP)
    report = run_protocol(d_b, d_e, _uniform_builder, cfg)
    meta = report.metadata
    assert (meta["n_ev"], meta["n_te"]) == (600, 400)
    assert meta["ev_time_range"][1] < meta["te_time_range"][0]


def test_report_round_trips_and_writes_csv(tmp_path):
    d_b, d_e = _pair(800)
    report = run_protocol(d_b, d_e, _uniform_builder, ProtocolConfig(n_bootstrap=3, estimators=CHEAP, direction="A->B"))
    back = ProtocolReport.from_dict(report.to_dict())
    assert back.to_dict() == report.to_dict()
    path = tmp_path / "r.csv"
    write_reports_csv([report], path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 1 + len(CHEAP)
    assert lines[1].startswith("ipw,,,A->B,in_sample,")

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from aoisched.info_measures import error_curve
from aoisched.penalty import JointPenalty, model_tables, stack_tables
from aoisched.policies import (CyclicTwoSource, EMAMaxWeight, MaxAgeFirst, MaxExpectedError,
                               MaxGainFirst, RandomizedPolicy, advance_aoi, top_n)
from aoisched.relaxed_mdp import cycle_cost
from aoisched.signal import default_model
from aoisched.simulation import Simulator

B = 50


def curves(model):
    return np.vstack([error_curve(model, m, np.arange(1, B + 1)) for m in range(model.num_sources)])


def tables(model):
    return stack_tables(model_tables(model))


def test_advance_aoi_examples():
    np.testing.assert_array_equal(advance_aoi(np.array([3, 1]), [0], B), [1, 2])
    np.testing.assert_array_equal(advance_aoi(np.array([B, 2]), [1], B), [B, 1])
    aoi = np.array([1, 1])
    for _ in range(7):
        aoi = advance_aoi(aoi, [1], B)
    assert aoi[0] == 8


def test_top_n_ties_and_random_ties():
    assert list(top_n(np.zeros(4), 2)) == [0, 1]
    assert list(top_n(np.array([1.0, 5.0, 3.0]), 1)) == [1]
    rng = np.random.default_rng(0)
    picks = {int(top_n(np.zeros(3), 1, rng)[0]) for _ in range(50)}
    assert picks == {0, 1, 2}


def test_maf_examples():
    maf = MaxAgeFirst().fit(np.zeros((3, B)))
    assert list(maf.decide(np.array([4, 2, 7]))) == [2]
    maf2 = MaxAgeFirst(n_channels=2).fit(np.zeros((3, B)))
    assert list(maf2.decide(np.array([5, 5, 5]))) == [0, 1]


def test_maf_round_robin():
    maf = MaxAgeFirst().fit(np.zeros((4, B)))
    aoi = np.ones(4, dtype=int)
    seen = []
    for _ in range(4):
        c = maf.decide(aoi)
        seen.append(int(c[0]))
        aoi = advance_aoi(aoi, c, B)
    assert sorted(seen) == [0, 1, 2, 3]


def test_mgf_example_and_ties():
    mgf = MaxGainFirst().fit(np.zeros((2, B)))
    mgf.gains_ = np.array([[5.0] * B, [3.0] * B])
    assert list(mgf.decide(np.array([1, 1]))) == [0]
    mgf.gains_ = np.zeros((2, B))
    assert list(mgf.decide(np.array([1, 9]))) == [0]


def test_mgf_constant_penalty_always_first_source():
    mgf = MaxGainFirst().fit(np.ones((3, B)))
    aoi = np.ones(3, dtype=int)
    for _ in range(100):
        c = mgf.decide(aoi)
        assert list(c) == [0]
        aoi = advance_aoi(aoi, c, B)


def test_mgf_lambda_update_arithmetic():
    mgf = MaxGainFirst(gamma=0.5, theta=1.0).fit(np.vstack([np.arange(1.0, B + 1)] * 2))
    mgf.gains_ = np.full((2, B), 10.0)
    mgf._thresh = 0.0
    for _ in range(2):
        mgf.decide(np.array([1, 1]))
    assert mgf.subgrad_ == pytest.approx(3.0)   # 2 + 2 * 0.5
    mgf.end_episode()
    assert mgf.lam_ == pytest.approx(1.0)       # 0 + (3 - 1 / 0.5)


def test_mgf_lambda_decreases_without_indicators():
    mgf = MaxGainFirst(gamma=0.7, lam_init=2.0).fit(np.zeros((2, B)))
    mgf.decide(np.array([1, 1]))
    mgf.end_episode()
    assert mgf.lam_ == pytest.approx(2.0 - 1 / 0.3)


def test_mgf_lambda_settles_on_default_model():
    m = default_model()
    mgf = MaxGainFirst().fit(tables(m))
    Simulator(m).run(mgf, 0, 200)
    lam = np.array(mgf.lam_history_)
    assert abs(lam[-1] - lam[-20]) < 0.1 * max(1.0, abs(lam[-1]))


def test_mgf_degenerates_to_maf_for_identical_sources():
    f = np.vstack([np.arange(1.0, B + 1)] * 4)
    mgf = MaxGainFirst(update_lambda=False).fit(f)
    maf = MaxAgeFirst().fit(f)
    aoi = np.ones(4, dtype=int)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        if rng.random() < 0.1:
            aoi = rng.integers(1, B + 1, size=4)
        a, b = mgf.decide(aoi), maf.decide(aoi)
        assert list(a) == list(b)
        aoi = advance_aoi(aoi, a, B)


def test_random_uniform_frequency():
    pol = RandomizedPolicy().fit(np.zeros((5, B)))
    pol.reset(np.random.default_rng(0))
    n = 100_000
    counts = np.bincount([pol.decide(None)[0] for _ in range(n)], minlength=5)
    sigma = np.sqrt(0.2 * 0.8 / n)
    assert np.all(np.abs(counts / n - 0.2) <= 3 * sigma)


def test_random_all_channels_and_bad_weights():
    pol = RandomizedPolicy(n_channels=3).fit(np.zeros((3, B)))
    assert list(pol.decide(None)) == [0, 1, 2]
    with pytest.raises(ValueError):
        RandomizedPolicy(weights=[1.0, 0.0]).fit(np.zeros((2, B)))


def test_mee_examples():
    m = default_model(2)
    mee = MaxExpectedError().fit(curves(m))
    assert list(mee.decide(np.array([2, 2]))) == [0]
    assert list(mee.decide(np.array([1, 30]))) == [1]
    same = default_model(3, a2=(0.8,))
    mee = MaxExpectedError().fit(curves(same))
    maf = MaxAgeFirst().fit(curves(same))
    for aoi in ([3, 5, 2], [7, 7, 1], [2, 2, 2]):
        assert list(mee.decide(np.array(aoi))) == list(maf.decide(np.array(aoi)))


def test_emam_without_piggyback_acts_like_mee():
    m = default_model(4, p=0.0)
    emam = EMAMaxWeight(ema_rate=1.0).fit(curves(m), piggyback_prob=m.piggyback_prob)
    mee = MaxExpectedError().fit(curves(m))
    rng = np.random.default_rng(2)
    for _ in range(200):
        aoi = rng.integers(1, 20, size=4)
        assert list(emam.decide(aoi)) == list(mee.decide(aoi))


def test_emam_rate_one_is_instantaneous():
    m = default_model(4, p=0.5)
    emam = EMAMaxWeight(ema_rate=1.0).fit(curves(m), piggyback_prob=m.piggyback_prob)
    aoi = np.array([3, 1, 4, 2])
    w, s = emam._weights(aoi, np.full(4, 99.0))
    np.testing.assert_allclose(s, emam.expected_errors(aoi))


def test_emam_expected_errors_match_joint_penalty():
    m = default_model(4, p=0.6)
    emam = EMAMaxWeight().fit(curves(m), piggyback_prob=m.piggyback_prob)
    g = JointPenalty.from_model(m)
    aoi = np.array([3, 6, 1, 2])
    np.testing.assert_allclose(emam.expected_errors(aoi), [g(k, aoi) for k in range(4)])


def test_emam_full_piggyback_prefers_hub():
    m = default_model(10, p=1.0)
    emam = EMAMaxWeight().fit(curves(m), piggyback_prob=m.piggyback_prob)
    r = Simulator(m).run(emam, 0, 10, keep_logs=True)
    share = np.mean([log.decisions[:, 0].mean() for log in r.logs])
    assert share >= 0.5


def test_emam_validation():
    with pytest.raises(ValueError):
        EMAMaxWeight(ema_rate=0).fit(np.zeros((2, B)))
    with pytest.raises(ValueError):
        EMAMaxWeight().fit(np.zeros((2, B)), piggyback_prob=np.eye(3))


def test_cyclic_alternation_and_constant():
    alt = CyclicTwoSource(1, 1).fit()
    assert [int(alt.decide()[0]) for _ in range(4)] == [0, 1, 0, 1]
    one = CyclicTwoSource(3, 0).fit()
    assert {int(one.decide()[0]) for _ in range(7)} == {0}
    with pytest.raises(ValueError):
        CyclicTwoSource(0, 0).fit()
    with pytest.raises(ValueError):
        CyclicTwoSource().fit(np.zeros((3, 4, 4, 4)))


def test_cyclic_long_run_cost_matches_search():
    Bc = 15
    g = JointPenalty.from_model(default_model(2, p=0.3))
    table = g.dense(Bc)
    pol = CyclicTwoSource(cap=60).fit(table)
    res = pol.result_
    aoi = np.array([1, 1])
    # Warm up one period, then average the realized cost over whole periods.
    period = res.tau1 + res.tau2
    costs = []
    for t in range(period * 40 + period):
        c = pol.decide()
        aoi = advance_aoi(aoi, c, Bc)
        if t >= period - 1 and len(costs) < period * 40:
            costs.append(g.total(aoi.astype(float)))
    assert np.mean(costs) == pytest.approx(res.L_opt, abs=1e-6)
    assert res.L_opt == pytest.approx(cycle_cost(table.sum(axis=0), res.tau1, res.tau2))


def test_sklearn_surface():
    m = default_model(3)
    est = MaxGainFirst(theta=0.5).fit(tables(m))
    assert est.get_params()["theta"] == 0.5
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert not hasattr(twin, "gains_")
    out = est.predict([[1, 1, 1], [5, 2, 9]])
    assert out.shape == (2, 3) and np.all(out.sum(axis=1) == 1)
    assert est.metadata()["policy"] == "MGF"
    with pytest.raises(NotFittedError):
        MaxAgeFirst().predict([[1, 2]])


def test_input_validation():
    est = MaxAgeFirst().fit(np.zeros((3, B)))
    with pytest.raises(ValueError):
        est.predict([[0, 1, 2]])
    with pytest.raises(ValueError):
        est.predict([[1, 2]])
    with pytest.raises(ValueError):
        est.predict([[1.5, 2, 3]])
    np.testing.assert_array_equal(est.predict([[1, 2, 500]]), [[0, 0, 1]])
    with pytest.raises(ValueError):
        MaxAgeFirst(n_channels=4).fit(np.zeros((3, B)))
    with pytest.raises(ValueError):
        MaxGainFirst().fit(-np.ones((3, B)))
    with pytest.raises(ValueError):
        MaxGainFirst(gamma=1.0).fit(np.ones((3, B)))


@settings(max_examples=30, deadline=None)
@given(aoi=st.lists(st.integers(1, B), min_size=5, max_size=5), n=st.integers(1, 4),
       which=st.sampled_from(["MAF", "MGF", "MEE", "EMAM", "Random"]))
def test_every_policy_serves_exactly_n_distinct(aoi, n, which):
    m = default_model(5, p=0.4)
    pol = {"MAF": lambda: MaxAgeFirst(n_channels=n).fit(tables(m)),
           "MGF": lambda: MaxGainFirst(n_channels=n).fit(tables(m)),
           "MEE": lambda: MaxExpectedError(n_channels=n).fit(curves(m)),
           "EMAM": lambda: EMAMaxWeight(n_channels=n).fit(curves(m), piggyback_prob=m.piggyback_prob),
           "Random": lambda: RandomizedPolicy(n_channels=n).fit(tables(m))}[which]()
    chosen = pol.decide(np.array(aoi))
    assert len(chosen) == n == len(set(chosen.tolist()))
    assert all(0 <= c < 5 for c in chosen)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aoisched.info_measures import epsilon_mn, error_curve
from aoisched.penalty import (JointPenalty, PenaltyTable, TruncationConfig, build_f_table,
                              check_lower_bound, f_closed_form, model_tables, pair_grid,
                              qbar, read_tables, stack_tables, write_tables)
from aoisched.signal import GaussMarkovModel, default_model, simulate_states


def test_qbar_identity():
    assert qbar(np.eye(3), 1) == 1.0


@pytest.mark.parametrize("rho", [0.0, 0.3, -0.8])
def test_qbar_two_by_two(rho):
    Q = np.array([[1.0, rho], [rho, 1.0]])
    # 2x2 inversion by hand: conditional variance 1 - rho^2.
    assert qbar(Q, 0) == pytest.approx(1 - rho ** 2)


def test_qbar_singular():
    Q = np.ones((3, 3))
    with pytest.raises(np.linalg.LinAlgError):
        qbar(Q, 0)


@pytest.mark.parametrize("a, delta, expected", [(1.0, 3, 3.0), (np.sqrt(0.9), 1, 1.0),
                                                (np.sqrt(0.9), 2, 1.9)])
def test_f_closed_form(a, delta, expected):
    assert f_closed_form(a, 1.0, delta) == pytest.approx(expected)


def test_f_closed_form_monte_carlo():
    rng = np.random.default_rng(7)
    n = 500_000
    a = np.sqrt(0.9)
    z = np.zeros(n)
    for _ in range(4):
        z = a * z + rng.standard_normal(n)
    r2 = z ** 2
    assert abs(r2.mean() - f_closed_form(a, 1.0, 4)) <= 3 * r2.std() / np.sqrt(n)


def test_model_derived_equals_closed_form_without_piggyback():
    m = default_model(4, p=0.0)
    for k in range(4):
        np.testing.assert_allclose(build_f_table(m, k, mode="model_derived").values,
                                   build_f_table(m, k, mode="closed_form").values)


def test_full_piggyback_gives_flat_table():
    m = default_model(4, p=1.0)
    np.testing.assert_allclose(build_f_table(m, 2).values, 1.0)
    np.testing.assert_allclose(build_f_table(m, 0).values, error_curve(m, 0, np.arange(1, 51)))


def test_model_derived_example_value():
    t = build_f_table(default_model(4, p=0.6), 1, TruncationConfig(10))
    assert t(3) == pytest.approx(1.684)


def test_model_derived_example_monte_carlo():
    # Others delivered at t-1; the hub packet carries Z_m with prob. 0.6.
    rng = np.random.default_rng(11)
    n = 1_000_000
    a = np.sqrt(0.9)
    z3 = rng.standard_normal(n) * np.sqrt(10)
    z2 = a * z3 + rng.standard_normal(n)
    z1 = a * z2 + rng.standard_normal(n)
    z0 = a * z1 + rng.standard_normal(n)
    carried = rng.random(n) < 0.6
    err = (z0 - np.where(carried, a * z1, a ** 3 * z3)) ** 2
    assert abs(err.mean() - 1.684) <= 3 * err.std() / np.sqrt(n)


def test_empirical_table_matches_closed_form():
    m = default_model(2, p=0.0)
    data = simulate_states(m, 200_000, np.random.default_rng(5))
    t = build_f_table(m, 0, TruncationConfig(5), mode="empirical", data=data)
    ref = build_f_table(m, 0, TruncationConfig(5), mode="closed_form")
    np.testing.assert_allclose(t.values, ref.values, rtol=0.03)
    assert t.provenance == "empirical"


def test_empirical_missing_ages_listed():
    m = default_model(2)
    data = np.zeros((6, 2))
    with pytest.raises(ValueError, match=r"ages \[4, 5\]"):
        build_f_table(m, 0, TruncationConfig(5), mode="empirical", data=data)


def test_unknown_mode():
    with pytest.raises(ValueError):
        build_f_table(default_model(2), 0, mode="magic")


def test_truncation_config():
    with pytest.raises(ValueError):
        TruncationConfig(1)


def test_table_validation_and_saturation():
    t = PenaltyTable(0, [1.0, 2.0, 3.0])
    assert t(10) == 3.0 and t(1) == 1.0
    with pytest.raises(ValueError):
        PenaltyTable(0, [1.0, -1.0])
    with pytest.raises(ValueError):
        PenaltyTable(0, [1.0, np.nan])
    with pytest.raises(ValueError):
        PenaltyTable(0, [1.0], provenance="guess")


def test_default_tables_nondecreasing():
    for p in (0.0, 0.5, 1.0):
        assert all(t.is_nondecreasing() for t in model_tables(default_model(p=p)))


def test_joint_penalty_default_closed_form():
    m = default_model(3, p=0.6)
    g = JointPenalty.from_model(m)
    v = lambda d: error_curve(m, 1, d)
    assert g(1, [1, 5, 2]) == pytest.approx(0.6 * v(1) + 0.4 * v(5))
    assert g(1, [7, 3, 2]) == pytest.approx(0.6 * v(3) + 0.4 * v(3))
    assert g(0, [4, 1, 1]) == pytest.approx(error_curve(m, 0, 4))


@settings(max_examples=40, deadline=None)
@given(ages=st.lists(st.integers(1, 50), min_size=4, max_size=4), other=st.integers(1, 50))
def test_joint_depends_only_on_own_and_hub_age(ages, other):
    g = JointPenalty.from_model(default_model(4, p=0.4))
    moved = list(ages)
    moved[3] = other
    assert g(2, ages) == pytest.approx(g(2, moved))


def test_joint_general_carriers():
    # Two carriers for target 0: sender 1 (prob 0.5) and sender 2 (prob 1).
    P = np.eye(3)
    P[0, 1], P[0, 2] = 0.5, 1.0
    m = GaussMarkovModel([0.5] * 3, np.eye(3), P)
    g = JointPenalty.from_model(m)
    v = lambda d: error_curve(m, 0, d)
    # Ages (own 5, sender1 2, sender2 3): freshest wins if it carries.
    expected = 0.5 * v(2) + 0.5 * v(3)
    assert g(0, [5, 2, 3]) == pytest.approx(expected)


def test_joint_from_table_and_dense_roundtrip():
    g = JointPenalty.from_model(default_model(2, p=0.6))
    dense = g.dense(6)
    h = JointPenalty.from_table(dense)
    grid = pair_grid(2, 1, 0, 6)
    for m in range(2):
        np.testing.assert_allclose(h.evaluate(m, grid), g.evaluate(m, grid))
    with pytest.raises(ValueError):
        JointPenalty.from_table(np.zeros((2, 3, 4)))
    with pytest.raises(ValueError):
        g.evaluate(0, [1, 2, 3])


def test_joint_rejects_correlated_noise():
    m = GaussMarkovModel([0.5, 0.5], [[1, 0.2], [0.2, 1]], np.eye(2))
    with pytest.raises(NotImplementedError):
        JointPenalty.from_model(m)


def test_lower_bound_zero_gap_without_piggyback():
    m = default_model(3, p=0.0)
    rep = check_lower_bound(JointPenalty.from_model(m), model_tables(m, TruncationConfig(20)),
                            pair_grid(3, 1, 0, 20), eps_sq=np.zeros(3))
    assert rep.ok
    np.testing.assert_allclose(rep.max_gap, 0.0)


def test_lower_bound_default_model():
    m = default_model(4, p=0.6)
    B = 50
    eps = np.array([max(epsilon_mn(m, i, j, B).eps_sq for j in range(4) if j != i)
                    for i in range(4)])
    grid = np.vstack([pair_grid(4, i, 0, B) for i in range(1, 4)])
    rep = check_lower_bound(JointPenalty.from_model(m), model_tables(m, TruncationConfig(B)),
                            grid, eps_sq=eps)
    assert rep.ok and rep.min_gap.min() >= -1e-9
    assert np.all(rep.max_gap <= 2 * eps + 1e-9)


def test_gap_zero_when_hub_fresh():
    m = default_model(2, p=0.6)
    g = JointPenalty.from_model(m)
    f = build_f_table(m, 1, TruncationConfig(20))
    assert g(1, [1, 5]) - f(5) == pytest.approx(0.0, abs=1e-12)


def test_lower_bound_reports_counterexample():
    g = JointPenalty.from_table(np.zeros((1, 3)))
    rep = check_lower_bound(g, [PenaltyTable(0, [0.0, 1.0, 1.0])], np.array([[2]]))
    assert not rep.ok
    assert rep.counterexamples[0][:2] == (0, (2,))


def test_table_csv_roundtrip(tmp_path):
    tables = model_tables(default_model(3), TruncationConfig(7))
    path = tmp_path / "f.csv"
    write_tables(path, tables)
    back = read_tables(path)
    np.testing.assert_array_equal(stack_tables(back), stack_tables(tables))


def test_table_csv_gap_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("source,delta,value\n0,1,1.0\n0,3,2.0\n")
    with pytest.raises(ValueError, match="without gaps"):
        read_tables(path)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from boawdx.corpus_io import read_feature_table
from boawdx.errors import SchemaError
from boawdx.scaler import (
    ScalingParams, ToleranceBand, fit_minmax, fit_with_reconciliation, transform, transform_values,
)
from oracles import reconcile_simulation, reconciliation_fixture, scale_coefficients

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_three_point_fit():
    p = fit_minmax(np.array([[0.0], [5.0], [10.0]]))
    np.testing.assert_allclose(transform_values(np.array([[0.0], [5.0], [10.0]]), p).ravel(), [0, 0.5, 1])


def test_constant_feature_degenerate():
    p = fit_minmax(np.array([[3.0], [3.0], [3.0]]))
    assert p.degenerate[0] and p.gain[0] == 0 and p.offset[0] == 0
    assert np.all(transform_values(np.full((3, 1), 3.0), p) == 0)


def test_two_point_fit():
    p = fit_minmax(np.array([[-2.0], [2.0]]))
    assert (p.gain[0], p.offset[0]) == (0.25, 0.5)


def test_empty_raises():
    with pytest.raises(ValueError):
        fit_minmax(np.empty((0, 3)))


def test_band_validation():
    with pytest.raises(ValueError):
        ToleranceBand(lam=0)
    with pytest.raises(ValueError):
        ToleranceBand(beta_step=0.6, beta_max=0.5)
    assert ToleranceBand().n_steps == 10


def test_test_value_passes_through_unclipped():
    p = fit_minmax(np.array([[0.0], [10.0]]))
    assert transform_values(np.array([[20.0]]), p)[0, 0] == 2.0


def test_identity_params(canonical_table):
    canonical_table = read_feature_table(canonical_table)
    d = len(canonical_table.columns)
    p = ScalingParams(canonical_table.columns, np.ones(d), np.zeros(d), np.zeros(d, bool))
    np.testing.assert_array_equal(transform(canonical_table, p).values, canonical_table.values)


def test_column_mismatch(canonical_table):
    canonical_table = read_feature_table(canonical_table)
    p = fit_minmax(canonical_table)
    other = canonical_table.select_columns(canonical_table.columns[:3])
    with pytest.raises(SchemaError):
        transform(other, p)
    with pytest.raises(SchemaError):
        fit_with_reconciliation(canonical_table, other)


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(2, 30), st.integers(1, 4)), elements=finite))
def test_train_maps_into_unit_interval(X):
    p = fit_minmax(X)
    t = transform_values(X, p)
    assert np.all(t >= -1e-9) and np.all(t <= 1 + 1e-9)


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.integers(2, 30), elements=finite), st.floats(0.1, 10), st.floats(-100, 100))
def test_affine_equivariance_and_monotonicity(x, c, s):
    X = x[:, None]
    t1 = transform_values(X, fit_minmax(X))
    t2 = transform_values(c * X + s, fit_minmax(c * X + s))
    if np.ptp(x) > 1e-3:
        np.testing.assert_allclose(t1, t2, atol=1e-6)
        order = np.argsort(x, kind="stable")
        assert np.all(np.diff(t1[order, 0]) >= -1e-12)


def test_in_band_short_circuit(rng):
    train = rng.normal(size=(50, 4))
    test = train[:10] * 0.9
    p = fit_with_reconciliation(train, test)
    q = fit_minmax(train)
    np.testing.assert_array_equal(p.gain, q.gain)
    np.testing.assert_array_equal(p.offset, q.offset)
    assert p.clamp_log == {} and np.all(np.isinf(p.clamp_low))


def test_single_high_outlier():
    train = np.arange(100.0)[:, None]
    test = np.array([[10.0], [50.0], [1000.0]])
    p = fit_with_reconciliation(train, test)
    log = p.clamp_log["f0"]
    assert log["beta"] == 0.05 and log["sides"] == ["high"] and not log["capped"]
    assert transform_values(test, p).max() <= 1.1
    a, b, lo, hi, path = reconcile_simulation(train[:, 0], test[:, 0])
    assert (p.gain[0], p.offset[0], p.clamp_high[0]) == (a, b, hi)


def test_symmetric_outliers_both_sides():
    train = np.arange(100.0)[:, None]
    test = np.array([[-1000.0], [1000.0]])
    p = fit_with_reconciliation(train, test)
    assert p.clamp_log["f0"]["path"][0]["sides"] == ["low", "high"]


def test_cap_flags_feature():
    train = np.concatenate([np.zeros(50), [1.0]])[:, None]
    test = np.array([[1e6]] * 60)
    p = fit_with_reconciliation(train, test)
    assert p.capped[0]
    assert p.clamp_log["f0"]["iterations"] == 10


def test_params_payload_roundtrip():
    train = np.arange(100.0)[:, None]
    p = fit_with_reconciliation(train, np.array([[1000.0]]))
    q = ScalingParams.from_payload(p.to_payload())
    np.testing.assert_array_equal(transform_values(np.array([[1e4], [-5.0]]), q),
                                  transform_values(np.array([[1e4], [-5.0]]), p))


def test_strict_mode_ignores_test_values(rng):
    train = rng.normal(size=(40, 3))
    p1 = fit_with_reconciliation(train, rng.normal(size=(5, 3)) * 100, strict_train_only=True)
    p2 = fit_with_reconciliation(train, rng.normal(size=(5, 3)), strict_train_only=True)
    for f in ("gain", "offset", "clamp_low", "clamp_high"):
        np.testing.assert_array_equal(getattr(p1, f), getattr(p2, f))
    t = transform_values(rng.normal(size=(20, 3)) * 50, p1)
    assert t.min() >= -0.1 - 1e-9 and t.max() <= 1.1 + 1e-9


def agrees_with_simulation(train, test):
    p = fit_with_reconciliation(train[:, None], test[:, None])
    a, b, lo, hi, path = reconcile_simulation(train, test)
    got_path = [(e["beta"], tuple(e["sides"])) for e in p.clamp_log.get("f0", {}).get("path", [])]
    return (
        p.gain[0] == a and p.offset[0] == b
        and p.clamp_low[0] == (-np.inf if lo is None else lo)
        and p.clamp_high[0] == (np.inf if hi is None else hi)
        and got_path == path
    )


@pytest.mark.parametrize("seed", range(100))
def test_matches_loop_simulation(seed):
    train, test = reconciliation_fixture(seed)
    assert agrees_with_simulation(train, test)


def test_fixtures_exercise_reconciliation():
    n = sum(bool(reconcile_simulation(*reconciliation_fixture(s))[4]) for s in range(100))
    assert n >= 30


def test_simulation_coefficients_sanity():
    assert scale_coefficients([-2, 2]) == (0.25, 0.5)

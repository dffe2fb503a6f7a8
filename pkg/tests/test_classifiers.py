import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.discriminant_analysis import LinearDiscriminantAnalysis
from sklearn.svm import SVC

from boawdx.classifiers import (
    DEFAULTS, KINDS, TrainedModel, chi2_distance, chi2_distances, chi2_gram, chi2_kernel, decision_function,
    emlm_outputs, linear_svm_objectives, mean_chi2_distance, predict, smo_solve, train,
)
from boawdx.errors import SchemaError


def random_hist(rng, n, d, sparsity=0.3):
    H = rng.uniform(size=(n, d)) * (rng.uniform(size=(n, d)) > sparsity)
    H[:, 0] += 1e-3
    return H / H.sum(axis=1, keepdims=True)


def separable_hists(rng, n=20, d=6):
    y = np.repeat([0, 1], n // 2)
    H = rng.uniform(size=(n, d)) * 0.1
    H[y == 0, : d // 2] += 1
    H[y == 1, d // 2:] += 1
    return H / H.sum(axis=1, keepdims=True), y


def test_defaults_match_protocol():
    assert DEFAULTS["chi2_svm"]["C"] == 0.25
    assert DEFAULTS["linear_svm"]["C"] == 1.0
    assert DEFAULTS["rf"]["n_trees"] == 50 and DEFAULTS["rf"]["max_leaf_nodes"] == 5
    assert DEFAULTS["knn5"]["n_neighbors"] == 5 and DEFAULTS["emlm"]["rp_rate"] == 1.0


# -- chi-squared --------------------------------------------------------------

def test_chi2_distance_examples():
    s = np.array([0.2, 0.3, 0.5])
    assert chi2_distance(s, s) == 0
    assert chi2_distance([1, 0], [0, 1]) == 2.0
    with pytest.raises(ValueError):
        chi2_distance([-0.1, 1.1], [0.5, 0.5])


def test_chi2_kernel_examples():
    assert chi2_kernel([0.5, 0.5], [0.5, 0.5], 1.0) == 1.0
    assert chi2_kernel([1, 0], [0, 1], 2.0) == pytest.approx(np.exp(-1))
    with pytest.raises(ValueError):
        chi2_kernel([1, 0], [0, 1], 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_chi2_symmetry_and_matrix_agreement(seed):
    rng = np.random.default_rng(seed)
    H = random_hist(rng, 5, 7)
    D = chi2_distances(H, H)
    np.testing.assert_allclose(D, D.T, atol=0)
    for i in range(5):
        for j in range(5):
            assert D[i, j] == pytest.approx(chi2_distance(H[i], H[j]), abs=1e-15)


def test_gram_psd_and_unit_diagonal():
    rng = np.random.default_rng(0)
    H = random_hist(rng, 50, 16)
    K = chi2_gram(H, H, mean_chi2_distance(H))
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1.0)
    assert np.linalg.eigvalsh(K).min() >= -1e-8


def test_mean_distance_pairs():
    H = np.array([[1.0, 0], [0, 1], [0.5, 0.5]])
    assert mean_chi2_distance(H) == pytest.approx((2 + 2 / 3 + 2 / 3) / 3)


# -- SVMs --------------------------------------------------------------------

def test_smo_matches_libsvm():
    rng = np.random.default_rng(1)
    H = random_hist(rng, 60, 10)
    y = (H[:, 1] + 0.1 * rng.normal(size=60) > H[:, 2]).astype(int)
    s = np.where(y == 1, 1.0, -1.0)
    K = chi2_gram(H, H, mean_chi2_distance(H))
    alpha, rho, _ = smo_solve(K, s, 0.25)
    ref = SVC(kernel="precomputed", C=0.25, tol=1e-3).fit(K, y)
    ours = K @ (alpha * s) - rho
    np.testing.assert_allclose(ours, ref.decision_function(K), atol=5e-3)
    assert np.all(alpha >= 0) and np.all(alpha <= 0.25 + 1e-12)
    assert abs(alpha @ s) < 1e-9


def test_chi2_svm_zero_bin_invariance():
    rng = np.random.default_rng(2)
    H, y = separable_hists(rng)
    Q = random_hist(rng, 7, 6)
    m = train("chi2_svm", H, y)
    pad = lambda A: np.hstack([A, np.zeros((A.shape[0], 3))])
    np.testing.assert_allclose(chi2_distances(pad(H), pad(Q)), chi2_distances(H, Q), rtol=1e-14)
    m2 = train("chi2_svm", pad(H), y)
    # ulp-level kernel differences may steer SMO to another point within its 1e-3 tolerance
    np.testing.assert_allclose(decision_function(m2, pad(Q)), decision_function(m, Q), atol=1e-3)
    np.testing.assert_array_equal(predict(m2, pad(Q)), predict(m, Q))


def test_chi2_svm_support_vector_of_class1():
    rng = np.random.default_rng(3)
    H, y = separable_hists(rng)
    m = train("chi2_svm", H, y)
    sv = m.params["sv"][m.params["coef"] > 0]
    assert sv.shape[0] > 0
    assert np.all(predict(m, sv) == 1)


def test_linear_svm_duality_gap_and_separable():
    rng = np.random.default_rng(4)
    X = np.vstack([rng.normal(-3, 1, size=(30, 2)), rng.normal(3, 1, size=(30, 2))])
    y = np.repeat([0, 1], 30)
    m = train("linear_svm", X, y)
    primal, dual = linear_svm_objectives(X, y, m)
    assert primal - dual <= 1e-3 * max(1, abs(primal))
    assert np.all(predict(m, X) == y)


# -- LDA, kNN, RF, EMLM ------------------------------------------------------

def test_lda_matches_sklearn_on_clear_data():
    rng = np.random.default_rng(5)
    X = np.vstack([rng.normal(0, 1, size=(40, 3)), rng.normal(1.5, 1, size=(40, 3))])
    y = np.repeat([0, 1], 40)
    Q = rng.normal(0.75, 2, size=(200, 3))
    ours = predict(train("lda", X, y), Q)
    ref = LinearDiscriminantAnalysis(solver="lsqr").fit(X, y).predict(Q)
    assert np.mean(ours == ref) >= 0.99


def test_lda_rank_deficient_ok():
    X = np.array([[0.5, 0.5, 0], [0.5, 0.5, 0], [0, 0, 1.0], [0, 0.1, 0.9]])
    m = train("lda", X, [0, 0, 1, 1])
    assert list(predict(m, X)) == [0, 0, 1, 1]


def test_knn_majority_when_n_is_5():
    X = np.arange(10.0).reshape(5, 2)
    y = np.array([1, 1, 0, 1, 0])
    m = train("knn5", X, y)
    assert np.all(predict(m, np.random.default_rng(0).normal(size=(20, 2)) * 10) == 1)


def test_knn_duplicate_point():
    X = np.array([[0.0], [0.1], [0.2], [5.0], [5.1], [5.2]])
    y = np.array([0, 0, 0, 1, 1, 1])
    assert predict(train("knn5", X, y), X[[0, 5]]).tolist() == [0, 1]


def test_rf_leaf_cap_and_fit():
    rng = np.random.default_rng(6)
    H, y = separable_hists(rng, n=30)
    m = train("rf", H, y, seed=3)
    assert np.all(predict(m, H) == y)
    m2 = train("rf", H, y, seed=3)
    np.testing.assert_array_equal(predict(m, H[::-1]), predict(m2, H[::-1]))


def test_emlm_distance_matrix_and_targets():
    rng = np.random.default_rng(7)
    H, y = separable_hists(rng)
    m = train("emlm", H, y)
    assert m.params["ref"].shape == H.shape
    from scipy.spatial.distance import cdist
    D = cdist(H, m.params["ref"])
    assert D.shape == (20, 20) and np.all(np.diag(D) == 0)
    out = emlm_outputs(m, H)
    assert np.all(np.argmax(out, axis=1) == y)


@pytest.mark.parametrize("kind", KINDS)
def test_all_kinds_recover_training_labels(kind):
    rng = np.random.default_rng(8)
    H, y = separable_hists(rng, n=24)
    m = train(kind, H, y, seed=1)
    assert np.all(predict(m, H) == y)
    back = TrainedModel.from_payload(m.to_payload())
    np.testing.assert_array_equal(predict(back, H), predict(m, H))


@pytest.mark.parametrize("kind", KINDS)
def test_contract_errors(kind):
    with pytest.raises(ValueError):
        train(kind, np.ones((4, 3)) / 3, [0, 0, 0, 0])
    m = train(kind, *separable_hists(np.random.default_rng(0), n=12))
    with pytest.raises(SchemaError):
        predict(m, np.ones((2, 4)))


def test_unknown_kind_and_hyperparameter():
    with pytest.raises(ValueError):
        train("svm", np.eye(2), [0, 1])
    with pytest.raises(ValueError):
        train("knn5", np.eye(2), [0, 1], {"gamma": 1})


def test_lda_equal_priors_is_nearest_mahalanobis_mean():
    rng = np.random.default_rng(9)
    X = np.vstack([rng.normal(0, 1, size=(15, 3)), rng.normal(0.8, 1, size=(15, 3))])
    y = np.repeat([0, 1], 15)
    m = train("lda", X, y)
    Q = rng.normal(0.4, 1.5, size=(100, 3))
    P = np.linalg.inv(m.params["cov"])
    maha = [[(q - mu) @ P @ (q - mu) for mu in m.params["means"]] for q in Q]
    np.testing.assert_array_equal(predict(m, Q), np.argmin(maha, axis=1))


def test_rf_single_tree_reduces_to_tree():
    from sklearn.ensemble import RandomForestClassifier
    rng = np.random.default_rng(10)
    X = rng.uniform(size=(60, 4))
    y = (X[:, 0] + 0.3 * rng.normal(size=60) > 0.5).astype(int)
    m = train("rf", X, y, {"n_trees": 1}, seed=5)
    tree = RandomForestClassifier(n_estimators=1, max_leaf_nodes=5, random_state=5).fit(X, y).estimators_[0]
    Q = rng.uniform(size=(200, 4))
    np.testing.assert_array_equal(predict(m, Q), tree.predict(Q).astype(int))

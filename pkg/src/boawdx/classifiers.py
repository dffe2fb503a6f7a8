"""Six binary classifiers over subject histograms behind one train/predict contract.

Models are plain dictionaries of arrays wrapped in :class:`TrainedModel`, so
a model read back from a JSON artifact predicts exactly like the one that was
fitted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial.distance import cdist
from sklearn.ensemble import RandomForestClassifier

from ._util import as_float_matrix
from .errors import ConvergenceError, SchemaError

KINDS = ("knn5", "lda", "rf", "linear_svm", "chi2_svm", "emlm")

DEFAULTS = {
    "knn5": {"n_neighbors": 5},
    "lda": {"ridge": 1e-6},
    "rf": {"n_trees": 50, "max_leaf_nodes": 5},
    "linear_svm": {"C": 1.0, "tol": 1e-4, "max_epochs": 10_000},
    "chi2_svm": {"C": 0.25, "tol": 1e-3, "max_iter": 1_000_000},
    "emlm": {"ridge": 1e-8, "rp_rate": 1.0},
}


# ---------------------------------------------------------------------------
# chi-squared distance and kernel


def chi2_distance(s_i, s_j) -> float:
    """Sum over bins of (a - b)^2 / (a + b); bins empty in both are skipped."""
    a = np.asarray(s_i, dtype=float)
    b = np.asarray(s_j, dtype=float)
    if a.shape != b.shape:
        raise ValueError("histograms must have equal length")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("histogram entries must be nonnegative")
    den = a + b
    nz = den > 0
    return float(np.sum((a[nz] - b[nz]) ** 2 / den[nz]))


def chi2_distances(A, B) -> np.ndarray:
    A = as_float_matrix(A)
    B = as_float_matrix(B)
    if A.shape[1] != B.shape[1]:
        raise SchemaError("histogram widths differ")
    if np.any(A < 0) or np.any(B < 0):
        raise ValueError("histogram entries must be nonnegative")
    num = (A[:, None, :] - B[None, :, :]) ** 2
    den = A[:, None, :] + B[None, :, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        terms = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return terms.sum(axis=2)


def mean_chi2_distance(H) -> float:
    """Mean distance over unordered pairs i < j of the training histograms."""
    H = as_float_matrix(H)
    n = H.shape[0]
    if n < 2:
        raise ValueError("need at least two histograms to scale the kernel")
    D = chi2_distances(H, H)
    return float(D[np.triu_indices(n, 1)].mean())


def chi2_kernel(s_i, s_j, A: float) -> float:
    if not A > 0:
        raise ValueError("kernel scale A must be > 0")
    return float(np.exp(-chi2_distance(s_i, s_j) / A))


def chi2_gram(X, Y, A: float) -> np.ndarray:
    if not A > 0:
        raise ValueError("kernel scale A must be > 0")
    return np.exp(-chi2_distances(X, Y) / A)


# ---------------------------------------------------------------------------
# model container


@dataclass
class TrainedModel:
    kind: str
    params: dict
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0
    n_features: int = 0

    def to_payload(self) -> dict:
        return {
            "kind": self.kind,
            "params": {k: np.asarray(v).tolist() for k, v in self.params.items()},
            "hyperparameters": self.hyperparameters,
            "seed": self.seed,
            "n_features": self.n_features,
        }

    @classmethod
    def from_payload(cls, p: dict) -> "TrainedModel":
        params = {k: np.asarray(v) for k, v in p["params"].items()}
        return cls(p["kind"], params, dict(p["hyperparameters"]), int(p["seed"]), int(p["n_features"]))


def _check_training(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = as_float_matrix(X)
    y = np.asarray(y, dtype=int)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y lengths differ")
    if not np.isfinite(X).all():
        raise ValueError("training rows must be finite")
    if set(np.unique(y)) != {0, 1}:
        raise ValueError("training needs at least one sample of each class (labels 0 and 1)")
    return X, y


# ---------------------------------------------------------------------------
# k nearest neighbours


def _fit_knn(X, y, hp, seed):
    return {"X": X, "y": y, "n_neighbors": np.array(hp["n_neighbors"])}


def _predict_knn(p, X):
    R, y = p["X"], p["y"].astype(int)
    k = min(int(p["n_neighbors"]), R.shape[0])
    D = np.sqrt(((X[:, None, :] - R[None, :, :]) ** 2).sum(axis=2))
    out = np.empty(X.shape[0], dtype=int)
    for i in range(X.shape[0]):
        nn = np.argsort(D[i], kind="stable")[:k]
        votes = np.bincount(y[nn], minlength=2)
        if votes[0] != votes[1]:
            out[i] = int(np.argmax(votes))
            continue
        dsum = [D[i, nn][y[nn] == c].sum() for c in (0, 1)]
        out[i] = 1 if dsum[1] < dsum[0] else 0
    return out


# ---------------------------------------------------------------------------
# linear discriminant analysis


def _fit_lda(X, y, hp, seed):
    n, d = X.shape
    means = np.vstack([X[y == c].mean(axis=0) for c in (0, 1)])
    centered = X - means[y]
    dof = n - 2 if n > 2 else n
    cov = centered.T @ centered / dof
    tr = np.trace(cov)
    cov[np.diag_indices(d)] += hp["ridge"] * (tr / d if tr > 0 else 1.0)
    priors = np.array([np.mean(y == 0), np.mean(y == 1)])
    coef = np.linalg.solve(cov, means.T).T  # Sigma^-1 mu_c per row
    intercept = -0.5 * np.sum(coef * means, axis=1) + np.log(priors)
    return {"coef": coef, "intercept": intercept, "means": means, "cov": cov}


def _predict_lda(p, X):
    scores = X @ p["coef"].T + p["intercept"]
    return (scores[:, 1] > scores[:, 0]).astype(int)


# ---------------------------------------------------------------------------
# random forest (sklearn growth, exported trees)


def _fit_rf(X, y, hp, seed):
    forest = RandomForestClassifier(
        n_estimators=int(hp["n_trees"]), max_leaf_nodes=int(hp["max_leaf_nodes"]),
        random_state=seed % (2**32), n_jobs=1,
    ).fit(X, y)
    trees = [est.tree_ for est in forest.estimators_]
    width = max(t.node_count for t in trees)

    def pad(rows, fill, dtype):
        out = np.full((len(rows), width), fill, dtype=dtype)
        for i, r in enumerate(rows):
            out[i, : len(r)] = r
        return out

    prob1 = []
    for t in trees:
        v = t.value[:, 0, :]
        prob1.append(v[:, 1] / v.sum(axis=1))
    return {
        "left": pad([t.children_left for t in trees], -1, int),
        "right": pad([t.children_right for t in trees], -1, int),
        "feature": pad([t.feature for t in trees], -2, int),
        "threshold": pad([t.threshold for t in trees], 0.0, float),
        "prob1": pad(prob1, 0.0, float),
    }


def _predict_rf_trees(p, X) -> np.ndarray:
    """Per-tree class-1 leaf probability, shape (n_trees, n_samples)."""
    left, right = p["left"].astype(int), p["right"].astype(int)
    feat, thr, prob1 = p["feature"].astype(int), p["threshold"], p["prob1"]
    out = np.empty((left.shape[0], X.shape[0]))
    for t in range(left.shape[0]):
        node = np.zeros(X.shape[0], dtype=int)
        active = left[t, node] != -1
        while active.any():
            idx = np.flatnonzero(active)
            n = node[idx]
            go_left = X[idx, feat[t, n]] <= thr[t, n]
            node[idx] = np.where(go_left, left[t, n], right[t, n])
            active = left[t, node] != -1
        out[t] = prob1[t, node]
    return out


def _predict_rf(p, X):
    probs = _predict_rf_trees(p, X)
    votes1 = (probs > 0.5).sum(axis=0)
    votes0 = probs.shape[0] - votes1
    mean1 = probs.mean(axis=0)
    return np.where(votes1 != votes0, votes1 > votes0, mean1 > 0.5).astype(int)


# ---------------------------------------------------------------------------
# linear SVM: dual coordinate descent, L1 hinge, bias as augmented feature


@njit(cache=True)
def _dual_cd(Xa, s, C, tol, max_epochs, seed):
    n, d = Xa.shape
    np.random.seed(seed)
    alpha = np.zeros(n)
    w = np.zeros(d)
    qd = np.empty(n)
    for i in range(n):
        qd[i] = np.dot(Xa[i], Xa[i])
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        pg_max = -np.inf
        pg_min = np.inf
        for i in np.random.permutation(n):
            g = s[i] * np.dot(w, Xa[i]) - 1.0
            if alpha[i] == 0.0:
                pg = min(g, 0.0)
            elif alpha[i] == C:
                pg = max(g, 0.0)
            else:
                pg = g
            pg_max = max(pg_max, pg)
            pg_min = min(pg_min, pg)
            if pg != 0.0 and qd[i] > 0.0:
                old = alpha[i]
                alpha[i] = min(max(old - g / qd[i], 0.0), C)
                w += (alpha[i] - old) * s[i] * Xa[i]
        if pg_max - pg_min < tol:
            return w, alpha, epoch, True
    return w, alpha, epoch, False


def _augment(X):
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _fit_linear_svm(X, y, hp, seed):
    s = np.where(y == 1, 1.0, -1.0)
    w, alpha, epochs, ok = _dual_cd(_augment(X), s, float(hp["C"]), float(hp["tol"]), int(hp["max_epochs"]), seed % (2**31))
    if not ok:
        raise ConvergenceError(f"linear SVM did not converge in {epochs} epochs")
    return {"w": w[:-1], "b": np.array(w[-1]), "alpha": alpha, "epochs": np.array(epochs)}


def linear_svm_objectives(X, y, model: TrainedModel) -> tuple[float, float]:
    """(primal, dual) objective values for a fitted linear SVM."""
    Xa = _augment(as_float_matrix(X))
    s = np.where(np.asarray(y) == 1, 1.0, -1.0)
    w = np.append(model.params["w"], model.params["b"])
    C = model.hyperparameters["C"]
    primal = 0.5 * w @ w + C * np.maximum(0.0, 1.0 - s * (Xa @ w)).sum()
    alpha = model.params["alpha"]
    wa = (alpha * s) @ Xa
    dual = alpha.sum() - 0.5 * wa @ wa
    return float(primal), float(dual)


def _decision_linear(p, X):
    return X @ p["w"] + float(p["b"])


# ---------------------------------------------------------------------------
# kernel SVM: SMO with second-order working-set selection


def smo_solve(K: np.ndarray, s: np.ndarray, C: float, tol: float = 1e-3, max_iter: int = 1_000_000):
    """Solve min 1/2 a'Qa - e'a, 0 <= a <= C, s'a = 0 with Q = ss' * K.

    Returns ``(alpha, rho, iterations)``; the decision function is
    ``sum_i alpha_i s_i K(x_i, x) - rho``.
    """
    n = K.shape[0]
    Q = (s[:, None] * s[None, :]) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    tau = 1e-12
    it = 0
    while it < max_iter:
        up = np.where(s > 0, alpha < C, alpha > 0)
        low = np.where(s > 0, alpha > 0, alpha < C)
        mG = -s * G
        if not up.any() or not low.any():
            break
        cand = np.flatnonzero(up)
        i = int(cand[np.argmax(mG[cand])])
        gmax = mG[i]
        lows = np.flatnonzero(low)
        gmin = mG[lows].min()
        if gmax - gmin < tol:
            break
        viol = lows[mG[lows] < gmax]
        b = gmax - mG[viol]
        a = QD[i] + QD[viol] - 2.0 * s[i] * s[viol] * Q[i, viol]
        a = np.where(a > 0, a, tau)
        j = int(viol[np.argmin(-(b * b) / a)])

        ai, aj = alpha[i], alpha[j]
        if s[i] != s[j]:
            quad = max(QD[i] + QD[j] + 2 * Q[i, j], tau)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = max(QD[i] + QD[j] - 2 * Q[i, j], tau)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            else:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, total
                if alpha[i] < 0:
                    alpha[i], alpha[j] = 0.0, total
        G += Q[:, i] * (alpha[i] - ai) + Q[:, j] * (alpha[j] - aj)
        it += 1
    else:
        raise ConvergenceError(f"SMO did not converge in {max_iter} iterations")

    yG = s * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub = np.min(np.concatenate([yG[at_upper & (s < 0)], yG[at_lower & (s > 0)], [np.inf]]))
        lb = np.max(np.concatenate([yG[at_upper & (s > 0)], yG[at_lower & (s < 0)], [-np.inf]]))
        rho = float((ub + lb) / 2)
    return alpha, rho, it


def _fit_chi2_svm(X, y, hp, seed):
    A = mean_chi2_distance(X)
    if not A > 0:
        raise ValueError("all training histograms are identical; chi2 kernel scale is degenerate")
    s = np.where(y == 1, 1.0, -1.0)
    K = chi2_gram(X, X, A)
    alpha, rho, _ = smo_solve(K, s, float(hp["C"]), float(hp["tol"]), int(hp["max_iter"]))
    sv = alpha > 0
    return {"sv": X[sv], "coef": (alpha * s)[sv], "rho": np.array(rho), "A": np.array(A)}


def _decision_chi2(p, X):
    if p["sv"].size == 0:
        return np.full(X.shape[0], -float(p["rho"]))
    K = chi2_gram(X, p["sv"].reshape(-1, X.shape[1]), float(p["A"]))
    return K @ p["coef"] - float(p["rho"])


# ---------------------------------------------------------------------------
# extreme minimal learning machine


def _fit_emlm(X, y, hp, seed):
    n = X.shape[0]
    m = max(1, int(round(hp["rp_rate"] * n)))
    if m < n:
        ref = X[np.random.default_rng(seed).choice(n, m, replace=False)]
    else:
        ref = X
    D = cdist(X, ref)
    Y = np.where(np.arange(2)[None, :] == y[:, None], 1.0, -1.0)
    lhs = np.vstack([D, np.sqrt(hp["ridge"]) * np.eye(ref.shape[0])])
    rhs = np.vstack([Y, np.zeros((ref.shape[0], 2))])
    W, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return {"ref": ref, "W": W}


def emlm_outputs(model: TrainedModel, X) -> np.ndarray:
    X = as_float_matrix(X)
    return cdist(X, model.params["ref"].reshape(-1, X.shape[1])) @ model.params["W"]


def _predict_emlm(p, X):
    out = cdist(X, p["ref"].reshape(-1, X.shape[1])) @ p["W"]
    return (out[:, 1] > out[:, 0]).astype(int)


# ---------------------------------------------------------------------------

_FIT = {
    "knn5": _fit_knn, "lda": _fit_lda, "rf": _fit_rf,
    "linear_svm": _fit_linear_svm, "chi2_svm": _fit_chi2_svm, "emlm": _fit_emlm,
}
_PREDICT = {
    "knn5": _predict_knn,
    "lda": _predict_lda,
    "rf": _predict_rf,
    "linear_svm": lambda p, X: (_decision_linear(p, X) > 0).astype(int),
    "chi2_svm": lambda p, X: (_decision_chi2(p, X) > 0).astype(int),
    "emlm": _predict_emlm,
}


def train(kind: str, X, y, hyperparameters: dict | None = None, seed: int = 0) -> TrainedModel:
    if kind not in KINDS:
        raise ValueError(f"unknown classifier kind {kind!r}; choose from {KINDS}")
    X, y = _check_training(X, y)
    hp = dict(DEFAULTS[kind])
    unknown = set(hyperparameters or {}) - set(hp)
    if unknown:
        raise ValueError(f"unknown hyperparameters for {kind}: {sorted(unknown)}")
    hp.update(hyperparameters or {})
    params = _FIT[kind](X, y, hp, int(seed))
    return TrainedModel(kind, params, hp, int(seed), X.shape[1])


def _query(model: TrainedModel, X) -> np.ndarray:
    X = as_float_matrix(X)
    if X.shape[1] != model.n_features:
        raise SchemaError(f"input width {X.shape[1]} does not match model width {model.n_features}")
    return X


def predict(model: TrainedModel, X) -> np.ndarray:
    """Labels in {0, 1}; decision values of exactly 0 map to class 0."""
    return _PREDICT[model.kind](model.params, _query(model, X))


def decision_function(model: TrainedModel, X) -> np.ndarray:
    X = _query(model, X)
    if model.kind == "linear_svm":
        return _decision_linear(model.params, X)
    if model.kind == "chi2_svm":
        return _decision_chi2(model.params, X)
    raise ValueError(f"{model.kind} has no decision function")

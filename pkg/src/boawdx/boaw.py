"""Bag-of-acoustic-words: per-class K-spatial-medians codebooks, quantization, histograms."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

import numpy as np
from numba import njit

from ._util import STREAM_CODEBOOK, as_float_matrix, make_rng, parallel_map
from .errors import DataError, EmptySubjectError, SchemaError

COINCIDE_EPS = 1e-12
WEISZFELD_TOL = 1e-9
WEISZFELD_MAX_ITER = 200
LLOYD_MAX_ITER = 300


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeanspp_init(X, k: int, rng: np.random.Generator) -> np.ndarray:
    """K-means++ seeding: uniform first center, then D^2-weighted draws."""
    X = as_float_matrix(X)
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > np.unique(X, axis=0).shape[0]:
        raise ValueError(f"k={k} exceeds the number of distinct points")
    chosen = [int(rng.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        probs = d2 / d2.sum()
        nxt = int(rng.choice(n, p=probs))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


@njit(cache=True)
def _objective_nb(P, y):
    total = 0.0
    for i in range(P.shape[0]):
        acc = 0.0
        for j in range(P.shape[1]):
            t = P[i, j] - y[j]
            acc += t * t
        total += np.sqrt(acc)
    return total


@njit(cache=True)
def _dists_nb(P, y):
    out = np.empty(P.shape[0])
    for i in range(P.shape[0]):
        acc = 0.0
        for j in range(P.shape[1]):
            t = P[i, j] - y[j]
            acc += t * t
        out[i] = np.sqrt(acc)
    return out


@njit(cache=True)
def _optimal_at_point_nb(P, y, dist):
    """Subgradient optimality test for an iterate sitting on data points."""
    d = P.shape[1]
    R = np.zeros(d)
    eta = 0
    for i in range(P.shape[0]):
        if dist[i] < COINCIDE_EPS:
            eta += 1
        else:
            for j in range(d):
                R[j] += (P[i, j] - y[j]) / dist[i]
    if eta == 0:
        return False
    return np.sqrt(np.sum(R * R)) <= eta


@njit(cache=True)
def _weiszfeld_nb(P, y0, tol, max_iter):
    n, d = P.shape
    y = y0.copy()
    obj = _objective_nb(P, y)
    T = np.empty(d)
    R = np.empty(d)
    for _ in range(max_iter):
        dist = _dists_nb(P, y)
        T[:] = 0.0
        R[:] = 0.0
        wsum = 0.0
        eta = 0
        for i in range(n):
            if dist[i] < COINCIDE_EPS:
                eta += 1
                continue
            w = 1.0 / dist[i]
            wsum += w
            for j in range(d):
                T[j] += w * P[i, j]
                R[j] += w * (P[i, j] - y[j])
        if wsum == 0.0:
            break
        for j in range(d):
            T[j] /= wsum
        if eta > 0:
            # iterate sits on a data point: step along the descent direction
            # or stop if the point already satisfies the optimality condition
            r = np.sqrt(np.sum(R * R))
            if r <= eta:
                break
            y_new = (1.0 - eta / r) * T + (eta / r) * y
        else:
            y_new = T.copy()
        obj_new = _objective_nb(P, y_new)
        if obj_new > obj:
            break
        step = np.sqrt(np.sum((y_new - y) ** 2))
        y = y_new
        obj = obj_new
        if step < tol:
            break
    # Weiszfeld approaches a data-point minimizer only slowly; snap when optimal
    dist = _dists_nb(P, y)
    jbest = np.argmin(dist)
    dist_j = _dists_nb(P, P[jbest])
    if _optimal_at_point_nb(P, P[jbest], dist_j) and _objective_nb(P, P[jbest]) <= obj:
        y = P[jbest].copy()
    return y


def _objective(P: np.ndarray, y: np.ndarray) -> float:
    return float(np.sqrt(np.sum((P - y) ** 2, axis=1)).sum())


def spatial_median(points, tol: float = WEISZFELD_TOL, max_iter: int = WEISZFELD_MAX_ITER, init=None) -> np.ndarray:
    """Geometric median (minimizer of summed Euclidean distances) by damped Weiszfeld."""
    P = np.ascontiguousarray(as_float_matrix(points))
    if P.shape[0] == 0:
        raise ValueError("spatial_median needs at least one point")
    y0 = P.mean(axis=0) if init is None else np.asarray(init, dtype=float)
    return _weiszfeld_nb(P, np.ascontiguousarray(y0, dtype=float), float(tol), int(max_iter))


def spatial_median_objective(points, center) -> float:
    return _objective(as_float_matrix(points), np.asarray(center, dtype=float))


@njit(cache=True)
def _assign_nb(X, C, labels, dist):
    n, d = X.shape
    for i in range(n):
        best = np.inf
        arg = 0
        for c in range(C.shape[0]):
            acc = 0.0
            for j in range(d):
                t = X[i, j] - C[c, j]
                acc += t * t
            if acc < best:
                best = acc
                arg = c
        labels[i] = arg
        dist[i] = np.sqrt(best)


@njit(cache=True)
def _repair_empty_nb(X, C, labels, dist):
    k = C.shape[0]
    while True:
        sizes = np.zeros(k, dtype=np.int64)
        for i in range(labels.shape[0]):
            sizes[labels[i]] += 1
        empty = -1
        for c in range(k):
            if sizes[c] == 0:
                empty = c
                break
        if empty < 0:
            return
        C[empty] = X[np.argmax(dist)]
        _assign_nb(X, C, labels, dist)


@njit(cache=True)
def _lloyd_nb(X, C, max_iter, tol, wz_iter):
    n = X.shape[0]
    k = C.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    _assign_nb(X, C, labels, dist)
    _repair_empty_nb(X, C, labels, dist)
    J = np.sum(dist)
    history = np.empty(max_iter + 1)
    history[0] = J
    converged = False
    it = 0
    new_labels = np.empty(n, dtype=np.int64)
    for it in range(1, max_iter + 1):
        for c in range(k):
            m = 0
            for i in range(n):
                if labels[i] == c:
                    m += 1
            members = np.empty((m, X.shape[1]))
            m = 0
            for i in range(n):
                if labels[i] == c:
                    members[m] = X[i]
                    m += 1
            C[c] = _weiszfeld_nb(members, C[c].copy(), tol, wz_iter)
        _assign_nb(X, C, new_labels, dist)
        _repair_empty_nb(X, C, new_labels, dist)
        J = np.sum(dist)
        history[it] = J
        same = True
        for i in range(n):
            if new_labels[i] != labels[i]:
                same = False
                break
        labels[:] = new_labels
        if same:
            converged = True
            break
    return labels, C, J, it, converged, history[: it + 1].copy()


@dataclass
class ClusterRun:
    assignments: np.ndarray
    prototypes: np.ndarray
    J: float
    iterations: int
    converged: bool
    J_history: list = field(default_factory=list)
    restart: int = 0


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int, tol: float, wz_iter: int) -> ClusterRun:
    C = np.ascontiguousarray(kmeanspp_init(X, k, rng))
    labels, C, J, it, converged, history = _lloyd_nb(np.ascontiguousarray(X), C, max_iter, tol, wz_iter)
    history = history.tolist()
    for a, b in zip(history, history[1:]):
        if b > a + 1e-12 * max(1.0, a):
            raise AssertionError(f"clustering error increased: {a} -> {b}")
    return ClusterRun(labels, C, float(J), int(it), bool(converged), history)


def _restart(r: int, X: np.ndarray, k: int, seed: int, stream: tuple, max_iter: int, tol: float, wz_iter: int) -> ClusterRun:
    run = _lloyd(X, k, make_rng(seed, *stream, r), max_iter, tol, wz_iter)
    run.restart = r
    return run


def k_spatial_medians(
    X,
    k: int,
    restarts: int = 100,
    seed: int = 0,
    *,
    stream: tuple = (),
    max_iter: int = LLOYD_MAX_ITER,
    tol: float = WEISZFELD_TOL,
    weiszfeld_iter: int = WEISZFELD_MAX_ITER,
    workers: int = 1,
    return_all: bool = False,
):
    """Replicated K-spatial-medians; the restart with the smallest J wins.

    Restart ``r`` draws from an RNG keyed on ``(seed, *stream, r)`` so the
    result is independent of how restarts are scheduled.
    """
    X = as_float_matrix(X)
    if k < 1 or restarts < 1:
        raise ValueError("k and restarts must be >= 1")
    fn = partial(_restart, X=X, k=k, seed=seed, stream=tuple(stream), max_iter=max_iter, tol=tol, wz_iter=weiszfeld_iter)
    runs = parallel_map(fn, range(restarts), workers)
    best = min(runs, key=lambda run: (run.J, run.restart))
    return (best, runs) if return_all else best


@dataclass
class Codebook:
    prototypes: np.ndarray
    k_per_class: int
    J: tuple[float, float]
    restarts: int
    rng_seed: int
    columns: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return self.prototypes.shape[0]

    @property
    def total_error(self) -> float:
        return float(sum(self.J))

    def to_payload(self) -> dict:
        return {
            "prototypes": self.prototypes.tolist(),
            "shape": list(self.prototypes.shape),
            "k_per_class": self.k_per_class,
            "J": list(self.J),
            "restarts": self.restarts,
            "rng_seed": self.rng_seed,
            "columns": list(self.columns),
        }

    @classmethod
    def from_payload(cls, p: dict) -> "Codebook":
        protos = np.asarray(p["prototypes"], dtype=float).reshape(p["shape"])
        return cls(protos, int(p["k_per_class"]), tuple(p["J"]), int(p["restarts"]), int(p["rng_seed"]),
                   tuple(p.get("columns", ())))


def build_codebook(X, y, k_per_class: int, restarts: int = 100, seed: int = 0, *, stream: tuple = (),
                   columns=(), workers: int = 1) -> Codebook:
    """Cluster control (0) and dementia (1) segments separately; concatenate blocks."""
    X = as_float_matrix(X)
    y = np.asarray(y, dtype=int)
    blocks, errors = [], []
    for cls in (0, 1):
        Xc = X[y == cls]
        if Xc.shape[0] == 0 or np.unique(Xc, axis=0).shape[0] < k_per_class:
            raise ValueError(f"class {cls} has fewer than {k_per_class} distinct segment vectors")
        run = k_spatial_medians(Xc, k_per_class, restarts, seed, stream=(STREAM_CODEBOOK, *stream, cls), workers=workers)
        blocks.append(run.prototypes)
        errors.append(run.J)
    return Codebook(np.vstack(blocks), k_per_class, (errors[0], errors[1]), restarts, seed, tuple(columns))


def quantize_many(X, codebook: Codebook | np.ndarray) -> np.ndarray:
    P = codebook.prototypes if isinstance(codebook, Codebook) else np.asarray(codebook, dtype=float)
    X = as_float_matrix(X)
    if X.shape[1] != P.shape[1]:
        raise SchemaError(f"vector width {X.shape[1]} does not match codebook width {P.shape[1]}")
    return np.argmin(_sq_dists(X, P), axis=1)


def quantize(vector, codebook: Codebook | np.ndarray) -> int:
    """Index of the nearest prototype; ties go to the lowest index."""
    v = np.asarray(vector, dtype=float).reshape(1, -1)
    return int(quantize_many(v, codebook)[0])


@dataclass
class SubjectHistogram:
    subject_id: str
    counts: np.ndarray
    frequencies: np.ndarray
    label: int | None = None


def subject_histogram(segments, codebook: Codebook | np.ndarray, subject_id: str = "", label: int | None = None,
                      durations=None) -> SubjectHistogram:
    """Word counts over the codebook, normalized by the total.

    With ``durations`` each word is weighted by its segment duration in the
    frequencies (counts stay plain integers).
    """
    X = as_float_matrix(segments)
    if X.shape[0] == 0:
        raise EmptySubjectError(f"subject {subject_id!r} has no segments")
    size = codebook.size if isinstance(codebook, Codebook) else np.asarray(codebook).shape[0]
    words = quantize_many(X, codebook)
    counts = np.bincount(words, minlength=size)
    weights = None if durations is None else np.asarray(durations, dtype=float)
    mass = np.bincount(words, weights=weights, minlength=size).astype(float)
    return SubjectHistogram(subject_id, counts, mass / mass.sum(), label)


def histogram_matrix(subjects, codebook: Codebook, duration_weighted: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-subject frequency vectors; ``subjects`` is a list of SubjectRecord."""
    if duration_weighted and any(s.segment_durations is None for s in subjects):
        raise DataError("duration weighting needs per-segment durations for every subject")
    H = np.vstack([
        subject_histogram(s.features, codebook, s.subject_id, s.label,
                          durations=s.segment_durations if duration_weighted else None).frequencies
        for s in subjects
    ])
    return H, np.array([s.label for s in subjects], dtype=int)

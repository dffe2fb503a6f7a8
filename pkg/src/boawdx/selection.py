"""Random-forest Gini importances, permutation null and Wilcoxon-based selection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata
from sklearn.ensemble import RandomForestClassifier

from ._util import STREAM_PERMUTATION, make_rng, parallel_map

EXACT_MAX_N = 25


def gini_impurity(class_counts) -> float:
    counts = np.asarray(class_counts, dtype=float)
    if counts.ndim != 1 or np.any(counts < 0):
        raise ValueError("class counts must be a 1-D vector of nonnegative values")
    total = counts.sum()
    if total <= 0:
        raise ValueError("at least one class count must be positive")
    if np.all(counts == np.round(counts)):
        # integer counts: exact numerator, one rounding at the final division
        c = [int(v) for v in counts]
        t = sum(c)
        return (t * t - sum(v * v for v in c)) / (t * t)
    p = counts / total
    return float(1.0 - np.sum(p * p))


@dataclass(frozen=True)
class SelectionConfig:
    repetitions: int = 100
    alpha: float = 0.05
    k: int = 25
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    bootstrap: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.repetitions < 2:
            raise ValueError("repetitions must be >= 2")
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def _check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    if np.unique(y).size < 2:
        raise ValueError("feature importances need both classes in y")
    return y


def _forest_importance(rep: int, X: np.ndarray, y: np.ndarray, config: SelectionConfig, permute: bool) -> np.ndarray:
    if permute:
        y = make_rng(config.rng_seed, STREAM_PERMUTATION, rep).permutation(y)
    d = X.shape[1]
    forest = RandomForestClassifier(
        n_estimators=config.n_trees,
        criterion="gini",
        max_depth=config.max_depth,
        min_samples_leaf=config.min_samples_leaf,
        max_features=int(math.ceil(math.sqrt(d))),
        bootstrap=config.bootstrap,
        random_state=(config.rng_seed + rep) % (2**32),
        n_jobs=1,
    )
    forest.fit(X, y)
    imp = np.asarray(forest.feature_importances_, dtype=float)
    total = imp.sum()
    if not total > 0:
        # no split anywhere (all features constant): spread mass evenly
        return np.full(d, 100.0 / d)
    return 100.0 * imp / total


def _distribution(X, y, config: SelectionConfig, permute: bool, workers: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    y = _check_labels(y)
    fn = partial(_forest_importance, X=X, y=y, config=config, permute=permute)
    return np.vstack(parallel_map(fn, range(config.repetitions), workers))


def importance_distributions(X, y, config: SelectionConfig = SelectionConfig(), workers: int = 1) -> np.ndarray:
    """R x d matrix of Gini importances (percent), one forest per repetition."""
    return _distribution(X, y, config, False, workers)


def permuted_importance_distributions(X, y, config: SelectionConfig = SelectionConfig(), workers: int = 1) -> np.ndarray:
    """Same as :func:`importance_distributions` with labels shuffled per repetition."""
    return _distribution(X, y, config, True, workers)


def _exact_lower_tail(doubled_ranks: np.ndarray, w2: int) -> float:
    """P(T <= w2) where T is the sum of a uniformly random subset of ``doubled_ranks``."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        r = int(r)
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    return float(counts[: w2 + 1].sum() / 2.0 ** len(doubled_ranks))


def wilcoxon_signed_rank(a, b, method: str = "auto") -> tuple[float, float]:
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped and tied magnitudes get mid-ranks. The
    statistic is ``min(W+, W-)``. ``method="auto"`` enumerates the exact null
    for up to 25 nonzero pairs and otherwise uses the normal approximation
    with tie and continuity corrections. Returns ``(W, p)``; ``p = 1`` when
    every difference is zero.
    """
    if method not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown method {method!r}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("a and b must be 1-D and of equal length")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        return 0.0, 1.0
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if method == "auto":
        method = "exact" if n <= EXACT_MAX_N else "approx"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(np.int64)
        p = 2.0 * _exact_lower_tail(doubled, int(round(2 * w)))
    else:
        mean = n * (n + 1) / 4.0
        _, ties = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(ties**3 - ties) / 48.0
        z = (w - mean + 0.5) / math.sqrt(var)
        p = 2.0 * float(ndtr(min(z, 0.0)))
    return w, min(1.0, p)


@dataclass
class ImportanceReport:
    columns: tuple[str, ...]
    mean_importance: np.ndarray
    importances: np.ndarray
    permuted: np.ndarray
    statistic: np.ndarray
    p_value: np.ndarray
    selected: np.ndarray
    rank: np.ndarray
    k: int
    alpha: float
    shortfall: int = 0
    config: dict = field(default_factory=dict)

    @property
    def selected_names(self) -> list[str]:
        order = np.argsort(self.rank[self.selected], kind="stable")
        names = np.asarray(self.columns, dtype=object)[self.selected]
        return [str(n) for n in names[order]]

    def to_payload(self) -> dict:
        return {
            "columns": list(self.columns),
            "mean_importance": self.mean_importance.tolist(),
            "importances": self.importances.tolist(),
            "permuted_importances": self.permuted.tolist(),
            "wilcoxon_statistic": self.statistic.tolist(),
            "p_value": self.p_value.tolist(),
            "selected": self.selected.tolist(),
            "rank": self.rank.tolist(),
            "selected_features": self.selected_names,
            "k": self.k,
            "alpha": self.alpha,
            "shortfall": self.shortfall,
        }

    @classmethod
    def from_payload(cls, p: dict) -> "ImportanceReport":
        return cls(
            tuple(p["columns"]), np.asarray(p["mean_importance"]), np.asarray(p["importances"]),
            np.asarray(p["permuted_importances"]), np.asarray(p["wilcoxon_statistic"]),
            np.asarray(p["p_value"]), np.asarray(p["selected"], dtype=bool), np.asarray(p["rank"]),
            int(p["k"]), float(p["alpha"]), int(p["shortfall"]),
        )

    def format_table(self) -> str:
        """Ranked table: rank, feature, importance %, p-value; selected rows starred."""
        width = max(len("Feature"), *(len(c) for c in self.columns))
        lines = [f"{'Rank':>4}  {'Feature':<{width}}  {'Importance (%)':>14}  {'p':>9}  sel"]
        for j in np.argsort(self.rank, kind="stable"):
            mark = "*" if self.selected[j] else ""
            lines.append(
                f"{int(self.rank[j]):>4}  {self.columns[j]:<{width}}  {self.mean_importance[j]:>14.2f}"
                f"  {self.p_value[j]:>9.3g}  {mark}"
            )
        total = float(self.mean_importance[self.selected].sum())
        lines.append(f"selected {int(self.selected.sum())} of {len(self.columns)} features, "
                     f"combined importance {total:.1f}%")
        if self.shortfall:
            lines.append(f"shortfall: only {int(self.selected.sum())} significant features for k={self.k}")
        return "\n".join(lines) + "\n"


def select_features(importances, permuted, columns, config: SelectionConfig = SelectionConfig()) -> ImportanceReport:
    """Keep features whose real vs. permuted importances differ at ``alpha``, top ``k`` by mean."""
    importances = np.asarray(importances, dtype=float)
    permuted = np.asarray(permuted, dtype=float)
    if importances.shape != permuted.shape:
        raise ValueError("importance matrices must have equal shape")
    d = importances.shape[1]
    if len(columns) != d:
        raise ValueError("column count does not match importance matrices")
    mean = importances.mean(axis=0)
    tests = [wilcoxon_signed_rank(importances[:, j], permuted[:, j]) for j in range(d)]
    stat = np.array([t[0] for t in tests])
    pval = np.array([t[1] for t in tests])
    # rank by mean importance, ties by column name so column order never matters
    order = sorted(range(d), key=lambda j: (-mean[j], columns[j]))
    rank = np.empty(d, dtype=int)
    rank[order] = np.arange(1, d + 1)
    candidates = [j for j in order if pval[j] < config.alpha]
    chosen = candidates[: config.k]
    selected = np.zeros(d, dtype=bool)
    selected[chosen] = True
    return ImportanceReport(
        tuple(columns), mean, importances, permuted, stat, pval, selected, rank,
        config.k, config.alpha, max(0, config.k - len(candidates)),
    )


def run_selection(X, y, columns, config: SelectionConfig = SelectionConfig(), workers: int = 1) -> ImportanceReport:
    real = importance_distributions(X, y, config, workers)
    null = permuted_importance_distributions(X, y, config, workers)
    return select_features(real, null, columns, config)

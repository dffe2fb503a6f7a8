"""Repeated holdout and repeated leave-one-subject-out experiment protocols."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Sequence

import numpy as np

from ._util import STREAM_CLASSIFIER, STREAM_HOLDOUT, STREAM_LOSO, derive_seed, parallel_map
from .boaw import build_codebook, histogram_matrix
from .classifiers import KINDS, predict, train
from .corpus_io import SubjectRecord
from .errors import FoldError, LeakageError, ValidationError
from .scaler import ToleranceBand, fit_with_reconciliation, transform_values
from .selection import SelectionConfig, run_selection

AGGREGATIONS = ("mode", "min_error", "best_of_both")
SCALING_MODES = ("none", "strict", "reconcile")


@dataclass(frozen=True)
class ExperimentConfig:
    """Experiment protocol settings.

    ``scaling``/``selection``/``fixed_features`` only matter for LOSO, where
    the fold-local preparation happens inside :func:`loso_cv`. ``scaling``
    ``"reconcile"`` reproduces the published procedure, which peeks at the
    held-out subject; ``"strict"`` fits on the training fold only.
    """

    k_per_class: tuple[int, ...] = (5, 10, 15, 20, 25, 30, 35, 40, 45, 50)
    repetitions: int = 100
    restarts: int = 100
    classifiers: tuple[str, ...] = KINDS
    aggregation: str = "min_error"
    rng_seed: int = 0
    hyperparameters: dict = field(default_factory=dict)
    duration_weighted: bool = False
    scaling: str = "strict"
    band: ToleranceBand = ToleranceBand()
    selection: SelectionConfig | None = None
    fixed_features: tuple[str, ...] | None = None
    columns: tuple[str, ...] | None = None
    paper_fast: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValidationError("repetitions must be >= 1")
        if not self.k_per_class or min(self.k_per_class) < 1:
            raise ValidationError("k_per_class sweep must be non-empty and positive")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")
        bad = [c for c in self.classifiers if c not in KINDS]
        if bad or not self.classifiers:
            raise ValidationError(f"unknown classifier kinds {bad}")
        if self.aggregation not in AGGREGATIONS:
            raise ValidationError(f"aggregation must be one of {AGGREGATIONS}")
        if self.scaling not in SCALING_MODES:
            raise ValidationError(f"scaling must be one of {SCALING_MODES}")
        if self.paper_fast and self.scaling != "none":
            raise ValidationError("paper_fast clusters across folds; it needs pre-scaled data (scaling='none')")
        if self.paper_fast and self.selection is not None:
            raise ValidationError("paper_fast cannot refit selection per fold; pass fixed_features instead")

    def provenance(self) -> dict:
        out = asdict(self)
        out["band"] = asdict(self.band)
        out["selection"] = None if self.selection is None else asdict(self.selection)
        return out


def accuracy(predicted, truth) -> float:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError("predicted and truth lengths differ")
    if predicted.size == 0:
        raise ValueError("empty label vectors")
    return float(np.mean(predicted == truth))


def aggregate(labels, errors, mode: str = "min_error", truth=None):
    """Collapse an R x N label matrix into one label per subject.

    ``errors`` holds the clustering error behind each prediction, either R x N
    or one value per repetition. ``mode`` takes the majority (ties go to the
    smallest-error repetition); ``min_error`` takes the smallest-error
    repetition. ``best_of_both`` needs ``truth`` and returns whichever of the
    two scores higher, which selects on test data and is therefore optimistic.
    """
    L = np.asarray(labels, dtype=int)
    if L.ndim != 2:
        raise ValueError("labels must be a repetitions x subjects matrix")
    E = np.asarray(errors, dtype=float)
    if E.ndim == 1:
        E = np.repeat(E[:, None], L.shape[1], axis=1)
    if E.shape != L.shape:
        raise ValueError("errors must match labels (R x N) or have one entry per repetition")
    best_rep = np.argmin(E, axis=0)
    by_error = L[best_rep, np.arange(L.shape[1])]
    if mode == "min_error":
        return by_error
    ones = L.sum(axis=0)
    zeros = L.shape[0] - ones
    by_mode = np.where(ones > zeros, 1, np.where(zeros > ones, 0, by_error))
    if mode == "mode":
        return by_mode
    if mode == "best_of_both":
        if truth is None:
            raise ValueError("best_of_both aggregation needs the true labels")
        return by_mode if accuracy(by_mode, truth) >= accuracy(by_error, truth) else by_error
    raise ValueError(f"unknown aggregation {mode!r}")


@dataclass
class AccuracyReport:
    protocol: str
    classifiers: tuple[str, ...]
    k_values: tuple[int, ...]
    subject_ids: list[str]
    truth: list[int]
    cells: dict = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)
    clustering_errors: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @staticmethod
    def key(kind: str, k: int) -> str:
        return f"{kind}|{k}"

    def to_payload(self) -> dict:
        return {
            "protocol": self.protocol,
            "classifiers": list(self.classifiers),
            "k_values": list(self.k_values),
            "subject_ids": list(self.subject_ids),
            "truth": list(self.truth),
            "cells": self.cells,
            "predictions": self.predictions,
            "clustering_errors": self.clustering_errors,
            "provenance": self.provenance,
        }

    def format_grid(self) -> str:
        """Rows = codebook size per class, columns = classifiers, cells = accuracy."""
        names = {"knn5": "5-NN", "rf": "RF", "linear_svm": "Linear-SVM", "chi2_svm": "Chi2-SVM",
                 "lda": "LDA", "emlm": "EMLM"}
        head = ["NClust."] + [names.get(c, c) for c in self.classifiers]
        rows = [head]
        for k in self.k_values:
            row = [f"{k}+{k}"]
            for c in self.classifiers:
                cell = self.cells[self.key(c, k)]
                if self.protocol == "holdout":
                    row.append(f"{100 * cell['mean']:.1f}% (±{100 * cell['sd']:.1f}%)")
                else:
                    row.append(f"{100 * cell['accuracy']:.1f}%")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "-" * len(lines[0]))
        if self.protocol == "loso":
            agg = self.provenance.get("aggregation", "")
            lines.append(f"aggregation: {agg}" + (" (optimistic: chosen on test labels)" if agg == "best_of_both" else ""))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# shared fold machinery


def _segments(subjects: Sequence[SubjectRecord]):
    X = np.vstack([s.features for s in subjects])
    y = np.concatenate([np.full(s.n_segments, s.label) for s in subjects])
    return X, y


def _with_features(subjects, fn) -> list[SubjectRecord]:
    return [replace(s, features=fn(s.features)) for s in subjects]


def _fit_and_predict(config: ExperimentConfig, H_train, y_train, H_test, seed_keys) -> dict:
    out = {}
    for ci, kind in enumerate(config.classifiers):
        seed = derive_seed(config.rng_seed, STREAM_CLASSIFIER, *seed_keys, ci)
        model = train(kind, H_train, y_train, config.hyperparameters.get(kind), seed)
        out[kind] = predict(model, H_test).tolist()
    return out


# ---------------------------------------------------------------------------
# holdout


def _holdout_unit(unit, train_subjects, test_subjects, config: ExperimentConfig):
    k, rep = unit
    X, y = _segments(train_subjects)
    book = build_codebook(X, y, k, config.restarts, config.rng_seed, stream=(STREAM_HOLDOUT, k, rep))
    H_tr, y_tr = histogram_matrix(train_subjects, book, config.duration_weighted)
    H_te, _ = histogram_matrix(test_subjects, book, config.duration_weighted)
    return _fit_and_predict(config, H_tr, y_tr, H_te, (STREAM_HOLDOUT, k, rep)), book.total_error


def holdout_eval(train_subjects: Sequence[SubjectRecord], test_subjects: Sequence[SubjectRecord],
                 config: ExperimentConfig, workers: int = 1) -> AccuracyReport:
    """Codebook + classifiers on ``train_subjects``, scored on ``test_subjects``, per repetition.

    Features must already be scaled and selected.
    """
    overlap = {s.subject_id for s in train_subjects} & {s.subject_id for s in test_subjects}
    if overlap:
        raise LeakageError(f"subjects in both train and test: {sorted(overlap)[:5]}")
    units = [(k, r) for k in config.k_per_class for r in range(config.repetitions)]
    fn = partial(_holdout_unit, train_subjects=list(train_subjects), test_subjects=list(test_subjects), config=config)
    results = dict(zip(units, parallel_map(fn, units, workers)))

    truth = [s.label for s in test_subjects]
    report = AccuracyReport("holdout", tuple(config.classifiers), tuple(config.k_per_class),
                            [s.subject_id for s in test_subjects], truth, provenance=config.provenance())
    for k in config.k_per_class:
        report.clustering_errors[str(k)] = [results[(k, r)][1] for r in range(config.repetitions)]
        for kind in config.classifiers:
            preds = [results[(k, r)][0][kind] for r in range(config.repetitions)]
            accs = [accuracy(p, truth) for p in preds]
            report.cells[report.key(kind, k)] = {
                "mean": float(np.mean(accs)),
                "sd": float(np.std(accs)),
                "accuracies": accs,
            }
            report.predictions[report.key(kind, k)] = preds
    return report


# ---------------------------------------------------------------------------
# leave-one-subject-out


@dataclass
class LosoResult:
    subject_ids: list[str]
    truth: np.ndarray
    labels: dict
    errors: np.ndarray
    rep_errors: np.ndarray
    lineage: list = field(default_factory=list)


def _prepare_fold(train_s, test_s, config: ExperimentConfig, rep: int, fold: int, lineage: list):
    train_ids = tuple(s.subject_id for s in train_s)
    if config.scaling != "none":
        Xtr, _ = _segments(train_s)
        Xte, _ = _segments(test_s)
        params = fit_with_reconciliation(Xtr, Xte, config.band, strict_train_only=config.scaling == "strict")
        ids = train_ids if config.scaling == "strict" else train_ids + tuple(s.subject_id for s in test_s)
        lineage.append(("scaling", ids))
        train_s = _with_features(train_s, lambda F: transform_values(F, params))
        test_s = _with_features(test_s, lambda F: transform_values(F, params))

    cols = None
    if config.fixed_features is not None:
        if config.columns is None:
            raise ValidationError("fixed_features needs config.columns to resolve names")
        index = {c: i for i, c in enumerate(config.columns)}
        cols = [index[n] for n in config.fixed_features]
    elif config.selection is not None:
        Xtr, ytr = _segments(train_s)
        names = config.columns or tuple(f"f{j}" for j in range(Xtr.shape[1]))
        sel_cfg = replace(config.selection, rng_seed=derive_seed(config.selection.rng_seed, STREAM_LOSO, rep, fold))
        report = run_selection(Xtr, ytr, names, sel_cfg)
        lineage.append(("selection", train_ids))
        cols = [names.index(n) for n in report.selected_names]
        if not cols:
            raise FoldError(f"fold {fold}: feature selection kept no features")
    if cols is not None:
        train_s = _with_features(train_s, lambda F: F[:, cols])
        test_s = _with_features(test_s, lambda F: F[:, cols])
    return train_s, test_s


def _loso_fold(unit, subjects, config: ExperimentConfig, k: int):
    rep, fold = unit
    lineage: list = []
    test_s = [subjects[fold]]
    train_s = [s for i, s in enumerate(subjects) if i != fold]
    if len({s.label for s in train_s}) < 2:
        raise FoldError(f"fold {fold} (subject {subjects[fold].subject_id!r}): training side has a single class")
    train_s, test_s = _prepare_fold(train_s, test_s, config, rep, fold, lineage)
    X, y = _segments(train_s)
    book = build_codebook(X, y, k, config.restarts, config.rng_seed, stream=(STREAM_LOSO, k, rep, fold))
    lineage.append(("codebook", tuple(s.subject_id for s in train_s)))
    H_tr, y_tr = histogram_matrix(train_s, book, config.duration_weighted)
    H_te, _ = histogram_matrix(test_s, book, config.duration_weighted)
    lineage.append(("classifier", tuple(s.subject_id for s in train_s)))
    preds = _fit_and_predict(config, H_tr, y_tr, H_te, (STREAM_LOSO, k, rep, fold))
    return {kind: p[0] for kind, p in preds.items()}, book.total_error, lineage


def _loso_rep_fast(rep, subjects, config: ExperimentConfig, k: int):
    """One codebook per repetition on all subjects (leaks the held-out subject)."""
    if config.fixed_features is not None:
        index = {c: i for i, c in enumerate(config.columns)}
        cols = [index[n] for n in config.fixed_features]
        subjects = _with_features(subjects, lambda F: F[:, cols])
    X, y = _segments(subjects)
    book = build_codebook(X, y, k, config.restarts, config.rng_seed, stream=(STREAM_LOSO, k, rep))
    H, labels = histogram_matrix(subjects, book, config.duration_weighted)
    out = []
    for fold in range(len(subjects)):
        mask = np.arange(len(subjects)) != fold
        if len(set(labels[mask])) < 2:
            raise FoldError(f"fold {fold}: training side has a single class")
        preds = _fit_and_predict(config, H[mask], labels[mask], H[fold : fold + 1], (STREAM_LOSO, k, rep, fold))
        out.append(({kind: p[0] for kind, p in preds.items()}, book.total_error, [("codebook", "all")]))
    return out


def loso_cv(subjects: Sequence[SubjectRecord], config: ExperimentConfig, k_per_class: int | None = None,
            workers: int = 1) -> LosoResult:
    """Repeated LOSO: each subject is predicted once per repetition by a model that never saw it."""
    subjects = list(subjects)
    n = len(subjects)
    if n < 2:
        raise ValidationError("LOSO needs at least two subjects")
    if len({s.label for s in subjects}) < 2:
        raise ValidationError("LOSO needs both classes present")
    if len({s.subject_id for s in subjects}) != n:
        raise ValidationError("subject ids must be unique")
    k = config.k_per_class[0] if k_per_class is None else k_per_class
    R = config.repetitions
    if config.paper_fast:
        fn = partial(_loso_rep_fast, subjects=subjects, config=config, k=k)
        per_rep = parallel_map(fn, range(R), workers)
        results = [r for rep in per_rep for r in rep]
    else:
        units = [(r, f) for r in range(R) for f in range(n)]
        fn = partial(_loso_fold, subjects=subjects, config=config, k=k)
        results = parallel_map(fn, units, workers)

    labels = {kind: np.zeros((R, n), dtype=int) for kind in config.classifiers}
    errors = np.zeros((R, n))
    lineage = []
    for idx, (preds, err, lin) in enumerate(results):
        r, f = divmod(idx, n)
        for kind in config.classifiers:
            labels[kind][r, f] = preds[kind]
        errors[r, f] = err
        lineage.append((r, subjects[f].subject_id, lin))
    return LosoResult(
        [s.subject_id for s in subjects], np.array([s.label for s in subjects]), labels, errors,
        errors.sum(axis=1), lineage,
    )


def loso_report(subjects: Sequence[SubjectRecord], config: ExperimentConfig, workers: int = 1) -> AccuracyReport:
    """LOSO over the whole ``k_per_class`` sweep, aggregated per ``config.aggregation``."""
    subjects = list(subjects)
    truth = [s.label for s in subjects]
    report = AccuracyReport("loso", tuple(config.classifiers), tuple(config.k_per_class),
                            [s.subject_id for s in subjects], truth,
                            provenance=dict(config.provenance(), optimistic=config.aggregation == "best_of_both"))
    for k in config.k_per_class:
        res = loso_cv(subjects, config, k, workers)
        report.clustering_errors[str(k)] = res.errors.tolist()
        for kind in config.classifiers:
            L = res.labels[kind]
            by = {m: aggregate(L, res.errors, m, truth) for m in AGGREGATIONS}
            accs = {m: accuracy(v, truth) for m, v in by.items()}
            report.cells[report.key(kind, k)] = {
                "accuracy": accs[config.aggregation],
                "mode": accs["mode"],
                "min_error": accs["min_error"],
                "best_of_both": accs["best_of_both"],
                "per_repetition": [accuracy(row, truth) for row in L],
                "final_labels": by[config.aggregation].tolist(),
            }
            report.predictions[report.key(kind, k)] = L.tolist()
    return report

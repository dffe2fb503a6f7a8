"""Min-max scaling with train/test outlier reconciliation.

Every feature gets an affine map ``x' = gain * x + offset`` fitted on the
training rows. Features whose scaled test values leave the tolerance band
``[-lambda, 1 + lambda]`` go through tail reconciliation: the pooled
train+test values have the offending tail(s) replaced by the nearest retained
extreme at percentile ``beta``, the map is refit on the clamped training
values, and ``beta`` grows in ``beta_step`` increments until the scaled test
range fits the band or ``beta_max`` is reached. The retained extremes become
part of the parameters (``clamp_low``/``clamp_high``) so later calls to
:func:`transform` reproduce the replacement.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus_io import SegmentFeatureTable
from .errors import SchemaError


@dataclass(frozen=True)
class ToleranceBand:
    lam: float = 0.1
    beta_step: float = 0.05
    beta_max: float = 0.5

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie in (0, 1)")
        if not 0 < self.beta_step <= self.beta_max < 1:
            raise ValueError("need 0 < beta_step <= beta_max < 1")

    @property
    def n_steps(self) -> int:
        return int(np.floor(self.beta_max / self.beta_step + 1e-9))


@dataclass
class ScalingParams:
    columns: tuple[str, ...]
    gain: np.ndarray
    offset: np.ndarray
    degenerate: np.ndarray
    clamp_low: np.ndarray = None
    clamp_high: np.ndarray = None
    capped: np.ndarray = None
    clamp_log: dict = field(default_factory=dict)

    def __post_init__(self):
        d = len(self.columns)
        self.columns = tuple(self.columns)
        self.gain = np.asarray(self.gain, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        self.degenerate = np.asarray(self.degenerate, dtype=bool)
        self.clamp_low = np.full(d, -np.inf) if self.clamp_low is None else np.asarray(self.clamp_low, dtype=float)
        self.clamp_high = np.full(d, np.inf) if self.clamp_high is None else np.asarray(self.clamp_high, dtype=float)
        self.capped = np.zeros(d, dtype=bool) if self.capped is None else np.asarray(self.capped, dtype=bool)

    def to_payload(self) -> dict:
        def bound(v):
            return [None if not np.isfinite(x) else float(x) for x in v]

        return {
            "columns": list(self.columns),
            "gain": self.gain.tolist(),
            "offset": self.offset.tolist(),
            "degenerate": self.degenerate.tolist(),
            "clamp_low": bound(self.clamp_low),
            "clamp_high": bound(self.clamp_high),
            "capped": self.capped.tolist(),
            "clamp_log": self.clamp_log,
        }

    @classmethod
    def from_payload(cls, p: dict) -> "ScalingParams":
        def bound(v, fill):
            return np.array([fill if x is None else x for x in v], dtype=float)

        return cls(
            tuple(p["columns"]), p["gain"], p["offset"], p["degenerate"],
            bound(p["clamp_low"], -np.inf), bound(p["clamp_high"], np.inf), p["capped"], p["clamp_log"],
        )


def _columns_and_values(data) -> tuple[tuple[str, ...], np.ndarray]:
    if isinstance(data, SegmentFeatureTable):
        return data.columns, data.values
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return tuple(f"f{i}" for i in range(X.shape[1])), X


def _fit_vector(x: np.ndarray) -> tuple[float, float, bool]:
    lo, hi = float(np.min(x)), float(np.max(x))
    span = hi - lo
    # spans too small to invert (subnormal) count as constant
    if span == 0 or not np.isfinite(1.0 / span):
        return 0.0, 0.0, True
    return 1.0 / span, lo / (lo - hi), False


def fit_minmax(train) -> ScalingParams:
    columns, X = _columns_and_values(train)
    if X.shape[0] == 0:
        raise ValueError("cannot fit scaling on an empty table")
    fits = [_fit_vector(X[:, j]) for j in range(X.shape[1])]
    return ScalingParams(
        columns, [f[0] for f in fits], [f[1] for f in fits], [f[2] for f in fits]
    )


def _check_columns(columns, params: ScalingParams) -> None:
    if tuple(columns) != params.columns:
        raise SchemaError("table columns do not match scaling parameters")


def transform_values(X: np.ndarray, params: ScalingParams) -> np.ndarray:
    X = np.clip(np.asarray(X, dtype=float), params.clamp_low, params.clamp_high)
    return X * params.gain + params.offset


def transform(table, params: ScalingParams):
    """Apply the affine maps (and any reconciled tail clamps) column-wise."""
    columns, X = _columns_and_values(table)
    if isinstance(table, SegmentFeatureTable):
        _check_columns(columns, params)
        return table.with_values(transform_values(X, params))
    if X.shape[1] != len(params.columns):
        raise SchemaError("array width does not match scaling parameters")
    return transform_values(X, params)


def _deviation(t: np.ndarray, lam: float) -> tuple[bool, bool]:
    return bool(np.min(t) < -lam), bool(np.max(t) > 1.0 + lam)


def _reconcile_feature(train: np.ndarray, test: np.ndarray, band: ToleranceBand):
    gain, offset, degenerate = _fit_vector(train)
    low, high = _deviation(gain * test + offset, band.lam)
    if not (low or high):
        return gain, offset, degenerate, -np.inf, np.inf, False, None

    pooled = np.concatenate([train, test])
    sides = {"low": low, "high": high}
    path = []
    clamp_low, clamp_high = -np.inf, np.inf
    capped = False
    for step in range(1, band.n_steps + 1):
        beta = step * band.beta_step
        clamp_low, clamp_high = -np.inf, np.inf
        if sides["low"]:
            cut = np.percentile(pooled, 100.0 * beta)
            clamp_low = float(np.min(pooled[pooled >= cut]))
        if sides["high"]:
            cut = np.percentile(pooled, 100.0 * (1.0 - beta))
            clamp_high = float(np.max(pooled[pooled <= cut]))
        gain, offset, degenerate = _fit_vector(np.clip(train, clamp_low, clamp_high))
        t = gain * np.clip(test, clamp_low, clamp_high) + offset
        low, high = _deviation(t, band.lam)
        path.append({"beta": beta, "sides": [s for s in ("low", "high") if sides[s]]})
        if not (low or high):
            break
        if step == band.n_steps:
            capped = True
            break
        sides["low"] |= low
        sides["high"] |= high
    log = {
        "beta": path[-1]["beta"],
        "sides": path[-1]["sides"],
        "iterations": len(path),
        "capped": capped,
        "path": path,
    }
    return gain, offset, degenerate, clamp_low, clamp_high, capped, log


def fit_with_reconciliation(train, test, band: ToleranceBand = ToleranceBand(),
                            strict_train_only: bool = False) -> ScalingParams:
    """Fit min-max parameters on ``train`` and reconcile outlying ``test`` features.

    With ``strict_train_only`` the test rows never influence the fit; scaled
    values are simply clipped into the tolerance band instead.
    """
    columns, Xtr = _columns_and_values(train)
    test_columns, Xte = _columns_and_values(test)
    if tuple(test_columns) != tuple(columns):
        raise SchemaError("train and test columns differ")
    if Xtr.shape[0] == 0 or Xte.shape[0] == 0:
        raise ValueError("train and test must be non-empty")

    if strict_train_only:
        params = fit_minmax(train)
        nz = params.gain > 0
        lo = np.full(len(columns), -np.inf)
        hi = np.full(len(columns), np.inf)
        lo[nz] = (-band.lam - params.offset[nz]) / params.gain[nz]
        hi[nz] = (1.0 + band.lam - params.offset[nz]) / params.gain[nz]
        params.clamp_low, params.clamp_high = lo, hi
        return params

    d = len(columns)
    out = {k: [] for k in ("gain", "offset", "degenerate", "lo", "hi", "capped")}
    log = {}
    for j in range(d):
        g, o, deg, lo, hi, cap, entry = _reconcile_feature(Xtr[:, j], Xte[:, j], band)
        for k, v in zip(("gain", "offset", "degenerate", "lo", "hi", "capped"), (g, o, deg, lo, hi, cap)):
            out[k].append(v)
        if entry is not None:
            log[columns[j]] = entry
    return ScalingParams(
        columns, out["gain"], out["offset"], out["degenerate"], out["lo"], out["hi"], out["capped"], log
    )

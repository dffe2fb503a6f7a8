from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

# Stream tags keep independent consumers of one global seed apart.
STREAM_SELECTION = 1
STREAM_PERMUTATION = 2
STREAM_CODEBOOK = 3
STREAM_CLASSIFIER = 4
STREAM_HOLDOUT = 5
STREAM_LOSO = 6
STREAM_SYNTH = 7


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 32-bit seed for the work unit identified by ``keys``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]]))


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Ordered map; results never depend on ``workers``."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    workers = min(workers, len(items), (os.cpu_count() or 1) * 8)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (workers * 4))))


def as_float_matrix(X: Sequence | np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X

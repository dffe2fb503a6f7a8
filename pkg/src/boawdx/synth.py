"""Synthetic cohorts with planted class structure, standing in for restricted corpora."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from ._util import STREAM_SYNTH, make_rng
from .corpus_io import FEATURE_NAMES, SubjectRecord, records_to_table


@dataclass(frozen=True)
class CohortSpec:
    """Class-conditional Gaussian segments around per-subject offsets.

    On informative features the dementia class mean is shifted by
    ``separation`` within-subject standard deviations. Features live on
    arbitrary raw scales (``feature_means``/``feature_scales`` drawn from the
    seed) so scaling has work to do.
    """

    n_per_class: tuple[int, int] = (40, 40)
    segments_range: tuple[int, int] = (8, 16)
    n_features: int = 25
    informative: tuple[int, ...] = (0, 1, 2, 3, 4)
    separation: float = 1.0
    subject_spread: float = 0.3
    noise_scale: float = 1.0
    rng_seed: int = 0
    columns: tuple[str, ...] | None = None

    def __post_init__(self):
        if min(self.n_per_class) < 2:
            raise ValueError("need at least 2 subjects per class")
        lo, hi = self.segments_range
        if lo < 1 or hi < lo:
            raise ValueError("segments_range must satisfy 1 <= low <= high")
        if self.n_features < 1 or any(not 0 <= j < self.n_features for j in self.informative):
            raise ValueError("informative indices must lie in [0, n_features)")
        if len(set(self.informative)) != len(self.informative):
            raise ValueError("informative indices must be unique")
        if self.columns is not None and len(self.columns) != self.n_features:
            raise ValueError("columns must name every feature")

    @property
    def feature_names(self) -> tuple[str, ...]:
        if self.columns is not None:
            return tuple(self.columns)
        if self.n_features <= len(FEATURE_NAMES):
            return FEATURE_NAMES[: self.n_features]
        return tuple(f"feature_{j}" for j in range(self.n_features))

    @property
    def noise(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.n_features) if j not in self.informative)


@dataclass
class Cohort:
    subjects: list[SubjectRecord]
    table: object
    metadata: dict = field(default_factory=dict)


def generate(spec: CohortSpec) -> Cohort:
    rng = make_rng(spec.rng_seed, STREAM_SYNTH)
    d = spec.n_features
    names = spec.feature_names
    base = rng.uniform(-5.0, 5.0, size=d)
    scale = rng.uniform(0.5, 3.0, size=d)
    shift = np.zeros(d)
    shift[list(spec.informative)] = spec.separation

    subjects = []
    for label in (0, 1):
        for i in range(spec.n_per_class[label]):
            n_seg = int(rng.integers(spec.segments_range[0], spec.segments_range[1] + 1))
            offset = rng.normal(0.0, spec.subject_spread, size=d)
            z = label * shift + offset + rng.normal(0.0, spec.noise_scale, size=(n_seg, d))
            seg_dur = rng.uniform(0.2, 3.0, size=n_seg)
            duration = float(seg_dur.sum() + rng.uniform(1.0, 10.0) * n_seg)
            rec = SubjectRecord(
                f"{'cc' if label == 0 else 'cd'}{i:03d}", label, base + scale * z,
                np.arange(n_seg), duration, seg_dur,
            )
            subjects.append(rec)
    if any(s.n_segments == 0 for s in subjects):
        raise ValueError("degenerate spec: a subject has zero segments")

    m = np.sqrt(len(spec.informative)) * spec.separation / spec.noise_scale
    metadata = {
        "spec": asdict(spec),
        "columns": list(names),
        "informative_features": [names[j] for j in spec.informative],
        "noise_features": [names[j] for j in spec.noise],
        "mahalanobis_separation": float(m),
        "segment_bayes_error": float(ndtr(-m / 2.0)),
    }
    return Cohort(subjects, records_to_table(subjects, names), metadata)


def shuffle_labels(subjects, seed: int = 0) -> list[SubjectRecord]:
    """Permute subject labels (class sizes kept) to build a null cohort."""
    labels = make_rng(seed, STREAM_SYNTH, 1).permutation([s.label for s in subjects])
    return [replace(s, label=int(lab)) for s, lab in zip(subjects, labels)]

"""Audio and feature-table ingestion, dataset model, and JSON artifacts."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import (
    ArtifactVersionError,
    CorruptArtifactError,
    DataError,
    FormatError,
    SchemaError,
    UnsupportedFormatError,
)

# ---------------------------------------------------------------------------
# canonical feature names (eGeMAPS v02 functionals + two relative pauses)

_STATS10 = (
    "amean", "stddevNorm", "percentile20.0", "percentile50.0", "percentile80.0",
    "pctlrange0-2", "meanRisingSlope", "stddevRisingSlope", "meanFallingSlope",
    "stddevFallingSlope",
)


def _pair(base: str) -> list[str]:
    return [f"{base}_amean", f"{base}_stddevNorm"]


def _egemaps_names() -> tuple[str, ...]:
    names = [f"F0semitoneFrom27.5Hz_sma3nz_{s}" for s in _STATS10]
    names += [f"loudness_sma3_{s}" for s in _STATS10]
    names += _pair("spectralFlux_sma3")
    for i in range(1, 5):
        names += _pair(f"mfcc{i}_sma3")
    for b in ("jitterLocal", "shimmerLocaldB", "HNRdBACF", "logRelF0-H1-H2", "logRelF0-H1-A3"):
        names += _pair(f"{b}_sma3nz")
    for f in (1, 2, 3):
        for q in ("frequency", "bandwidth", "amplitudeLogRelF0"):
            names += _pair(f"F{f}{q}_sma3nz")
    for b in ("alphaRatioV", "hammarbergIndexV", "slopeV0-500", "slopeV500-1500", "spectralFluxV"):
        names += _pair(f"{b}_sma3nz")
    for i in range(1, 5):
        names += _pair(f"mfcc{i}V_sma3nz")
    names += [
        f"{b}_sma3nz_amean"
        for b in ("alphaRatioUV", "hammarbergIndexUV", "slopeUV0-500", "slopeUV500-1500", "spectralFluxUV")
    ]
    names += [
        "loudnessPeaksPerSec", "VoicedSegmentsPerSec", "MeanVoicedSegmentLengthSec",
        "StddevVoicedSegmentLengthSec", "MeanUnvoicedSegmentLength",
        "StddevUnvoicedSegmentLength", "equivalentSoundLevel_dBp",
    ]
    return tuple(names)


EGEMAPS_NAMES: tuple[str, ...] = _egemaps_names()
PAUSE_NAMES: tuple[str, ...] = ("pauseDurationRatio", "pauseTotalPausesRatio")
FEATURE_NAMES: tuple[str, ...] = EGEMAPS_NAMES + PAUSE_NAMES
COLUMN_ALIASES: dict[str, str] = {"pauseTotalDurationRatio": "pauseDurationRatio"}

ID_COLUMN = "subject_id"
INDEX_COLUMN = "segment_index"
LABEL_COLUMN = "label"
DURATION_COLUMN = "recording_duration"
_META_COLUMNS = (ID_COLUMN, INDEX_COLUMN, LABEL_COLUMN, DURATION_COLUMN)

assert len(EGEMAPS_NAMES) == 88 and len(set(FEATURE_NAMES)) == 90


def canonical_columns(expect_pause_features: bool = True) -> tuple[str, ...]:
    return FEATURE_NAMES if expect_pause_features else EGEMAPS_NAMES


# ---------------------------------------------------------------------------
# audio


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("AudioBuffer needs a non-empty 1-D sample array")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def _downmix(frames: np.ndarray) -> np.ndarray:
    return frames.astype(float).mean(axis=1)


def read_wav(path: str | Path) -> AudioBuffer:
    """Decode a 16-bit PCM RIFF/WAVE file; stereo is averaged to mono."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid, size = struct.unpack_from("<4sI", raw, pos)
        body = raw[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise FormatError(f"{path}: fmt chunk is {len(body)} bytes, expected at least 16")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == 0xFFFE and len(body) >= 26:
                # WAVE_FORMAT_EXTENSIBLE: the real tag is the first 2 bytes of the subformat GUID
                fmt = (struct.unpack_from("<H", body, 24)[0],) + fmt[1:]
        elif cid == b"data":
            if len(body) < size:
                raise FormatError(
                    f"{path}: data chunk truncated: expected {size} bytes, found {len(body)}"
                )
            data = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise FormatError(f"{path}: missing data chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if tag != 1 or bits != 16:
        raise UnsupportedFormatError(
            f"{path}: unsupported encoding (format_tag={tag}, bits_per_sample={bits}); "
            "only 16-bit PCM is read"
        )
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{path}: unsupported channel count {channels}")
    if rate <= 0:
        raise FormatError(f"{path}: sample rate {rate} in header")
    frame_bytes = 2 * channels
    if len(data) % frame_bytes:
        raise FormatError(
            f"{path}: data chunk of {len(data)} bytes is not a whole number of {frame_bytes}-byte frames"
        )
    frames = np.frombuffer(data, dtype="<i2").reshape(-1, channels)
    if frames.shape[0] == 0:
        raise FormatError(f"{path}: no audio frames")
    return AudioBuffer(_downmix(frames), rate)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono (1-D) or multi-channel (n x c) samples as 16-bit PCM."""
    arr = np.asarray(samples)
    if arr.ndim == 1:
        arr = arr[:, None]
    pcm = np.clip(np.rint(arr), -32768, 32767).astype("<i2")
    channels = pcm.shape[1]
    payload = pcm.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, channels, sample_rate,
                                    sample_rate * 2 * channels, 2 * channels, 16)
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)


# ---------------------------------------------------------------------------
# feature tables


@dataclass
class SegmentFeatureTable:
    """Per-segment feature rows, grouped by subject."""

    columns: tuple[str, ...]
    subject_ids: np.ndarray
    segment_index: np.ndarray
    values: np.ndarray
    labels: np.ndarray | None = None
    durations: np.ndarray | None = None

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.subject_ids = np.asarray(self.subject_ids, dtype=object)
        self.segment_index = np.asarray(self.segment_index, dtype=int)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.subject_ids), len(self.columns))
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
        if self.durations is not None:
            self.durations = np.asarray(self.durations, dtype=float)

    def __len__(self) -> int:
        return len(self.subject_ids)

    @property
    def width(self) -> int:
        return len(self.columns)

    def subjects(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.subject_ids:
            seen.setdefault(s, None)
        return list(seen)

    def subset_rows(self, mask) -> "SegmentFeatureTable":
        mask = np.asarray(mask)
        return SegmentFeatureTable(
            self.columns,
            self.subject_ids[mask],
            self.segment_index[mask],
            self.values[mask],
            None if self.labels is None else self.labels[mask],
            None if self.durations is None else self.durations[mask],
        )

    def for_subjects(self, ids: Iterable[str]) -> "SegmentFeatureTable":
        ids = set(ids)
        return self.subset_rows(np.array([s in ids for s in self.subject_ids], dtype=bool))

    def select_columns(self, names: Sequence[str]) -> "SegmentFeatureTable":
        index = {c: i for i, c in enumerate(self.columns)}
        missing = [n for n in names if n not in index]
        if missing:
            raise SchemaError(f"columns not in table: {missing}")
        cols = [index[n] for n in names]
        return self.with_values(self.values[:, cols], names)

    def with_values(self, values: np.ndarray, columns: Sequence[str] | None = None) -> "SegmentFeatureTable":
        return SegmentFeatureTable(
            self.columns if columns is None else tuple(columns),
            self.subject_ids.copy(),
            self.segment_index.copy(),
            np.asarray(values, dtype=float),
            None if self.labels is None else self.labels.copy(),
            None if self.durations is None else self.durations.copy(),
        )

    def subject_labels(self) -> dict[str, int]:
        if self.labels is None:
            raise SchemaError("table carries no label column")
        out: dict[str, int] = {}
        for s, lab in zip(self.subject_ids, self.labels):
            if out.setdefault(s, int(lab)) != int(lab):
                raise DataError(f"subject {s!r} has conflicting labels")
        return out


@dataclass
class SubjectRecord:
    subject_id: str
    label: int
    features: np.ndarray
    segment_index: np.ndarray | None = None
    recording_duration: float | None = None
    segment_durations: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        if self.label not in (0, 1):
            raise DataError(f"subject {self.subject_id!r}: label must be 0 or 1, got {self.label}")
        if self.recording_duration is not None and not self.recording_duration > 0:
            raise DataError(f"subject {self.subject_id!r}: recording_duration must be > 0")
        if self.segment_index is None:
            self.segment_index = np.arange(len(self.features))

    @property
    def n_segments(self) -> int:
        return len(self.features)


def group_subjects(table: SegmentFeatureTable) -> list[SubjectRecord]:
    labels = table.subject_labels()
    records = []
    for sid in table.subjects():
        mask = table.subject_ids == sid
        dur = None
        if table.durations is not None:
            dur = float(table.durations[mask][0])
        records.append(SubjectRecord(sid, labels[sid], table.values[mask], table.segment_index[mask], dur))
    return records


def records_to_table(records: Sequence[SubjectRecord], columns: Sequence[str]) -> SegmentFeatureTable:
    ids, idx, vals, labs, durs = [], [], [], [], []
    for rec in records:
        n = rec.n_segments
        ids += [rec.subject_id] * n
        idx += list(rec.segment_index)
        vals.append(rec.features)
        labs += [rec.label] * n
        durs += [np.nan if rec.recording_duration is None else rec.recording_duration] * n
    durations = np.asarray(durs, dtype=float)
    return SegmentFeatureTable(
        tuple(columns), np.asarray(ids, dtype=object), np.asarray(idx, dtype=int),
        np.vstack(vals) if vals else np.zeros((0, len(columns))), np.asarray(labs, dtype=int),
        None if np.isnan(durations).any() else durations,
    )


def _sniff_delimiter(header: str) -> str:
    return ";" if header.count(";") > header.count(",") else ","


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"unparseable value {cell!r} at (row {row}, {col!r})") from None
    if not math.isfinite(v):
        raise DataError(f"non-finite value {cell!r} at (row {row}, {col!r})")
    return v


def read_feature_table(
    path: str | Path,
    expect_pause_features: bool = True,
    columns: Sequence[str] | None = None,
) -> SegmentFeatureTable:
    """Parse a comma- or semicolon-delimited per-segment feature table.

    ``columns`` overrides the canonical 88/90-name list (used for reduced
    synthetic tables). Unknown extra columns are ignored with a warning.
    Rows are numbered from 1 after the header in error messages.
    """
    text = Path(path).read_text()
    header_line = text.split("\n", 1)[0]
    reader = csv.reader(io.StringIO(text), delimiter=_sniff_delimiter(header_line))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError(f"{path}: empty feature table") from None
    header = [COLUMN_ALIASES.get(h, h) for h in header]
    expected = tuple(columns) if columns is not None else canonical_columns(expect_pause_features)
    pos = {h: i for i, h in enumerate(header)}
    missing = [c for c in (ID_COLUMN, INDEX_COLUMN) + expected if c not in pos]
    if missing:
        raise SchemaError(f"{path}: missing columns: {missing}")
    extra = [h for h in header if h not in expected and h not in _META_COLUMNS]
    if extra:
        warnings.warn(f"{path}: ignoring {len(extra)} unknown column(s): {extra[:5]}", stacklevel=2)

    ids, idx, vals, labs, durs = [], [], [], [], []
    for rownum, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {rownum} has {len(row)} cells, header has {len(header)}")
        ids.append(row[pos[ID_COLUMN]].strip())
        try:
            idx.append(int(row[pos[INDEX_COLUMN]]))
        except ValueError:
            raise DataError(f"bad segment_index at (row {rownum}, {INDEX_COLUMN!r})") from None
        vals.append([_parse_float(row[pos[c]], rownum, c) for c in expected])
        if LABEL_COLUMN in pos:
            lab = row[pos[LABEL_COLUMN]].strip()
            if lab not in ("0", "1"):
                raise DataError(f"label must be 0 or 1 at (row {rownum}, {LABEL_COLUMN!r}), got {lab!r}")
            labs.append(int(lab))
        if DURATION_COLUMN in pos:
            durs.append(_parse_float(row[pos[DURATION_COLUMN]], rownum, DURATION_COLUMN))
    if not ids:
        raise SchemaError(f"{path}: no data rows")

    # group rows by subject (first appearance), then by segment_index
    first: dict[str, int] = {}
    for i, s in enumerate(ids):
        first.setdefault(s, i)
    order = sorted(range(len(ids)), key=lambda i: (first[ids[i]], idx[i]))
    table = SegmentFeatureTable(
        expected,
        np.asarray([ids[i] for i in order], dtype=object),
        np.asarray([idx[i] for i in order], dtype=int),
        np.asarray([vals[i] for i in order], dtype=float).reshape(len(order), len(expected)),
        np.asarray([labs[i] for i in order], dtype=int) if labs else None,
        np.asarray([durs[i] for i in order], dtype=float) if durs else None,
    )
    validate_table(table)
    return table


def validate_table(table: SegmentFeatureTable) -> None:
    if not np.isfinite(table.values).all():
        r, c = np.argwhere(~np.isfinite(table.values))[0]
        raise DataError(f"non-finite value at (row {r + 1}, {table.columns[c]!r})")
    if len(set(table.columns)) != len(table.columns):
        raise SchemaError("duplicate column names")
    for sid in table.subjects():
        seg = table.segment_index[table.subject_ids == sid]
        if np.any(np.diff(seg) <= 0):
            raise DataError(f"subject {sid!r}: segment_index not strictly increasing")
    if table.labels is not None:
        table.subject_labels()
    if table.durations is not None and not (table.durations > 0).all():
        raise DataError("recording_duration must be > 0")


def write_feature_table(path: str | Path, table: SegmentFeatureTable, delimiter: str = ",") -> None:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    meta = [ID_COLUMN, INDEX_COLUMN]
    if table.labels is not None:
        meta.append(LABEL_COLUMN)
    if table.durations is not None:
        meta.append(DURATION_COLUMN)
    w.writerow(meta + list(table.columns))
    for i in range(len(table)):
        row = [table.subject_ids[i], int(table.segment_index[i])]
        if table.labels is not None:
            row.append(int(table.labels[i]))
        if table.durations is not None:
            row.append(repr(float(table.durations[i])))
        w.writerow(row + [repr(float(v)) for v in table.values[i]])
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# artifacts

ARTIFACT_KINDS = ("scaler", "selection", "codebook", "model", "report")
SCHEMA_VERSION = 1


def to_jsonable(obj: Any) -> Any:
    """Convert numpy containers/scalars and tuples to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dumps_canonical(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass
class ArtifactEnvelope:
    kind: str
    payload: dict
    rng_seed: int = 0
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.kind not in ARTIFACT_KINDS:
            raise ValueError(f"unknown artifact kind {self.kind!r}")
        self.payload = to_jsonable(self.payload)
        self.config = to_jsonable(self.config)
        self.rng_seed = int(self.rng_seed)

    def _body(self) -> dict:
        return {
            "kind": self.kind,
            "schema_version": self.schema_version,
            "rng_seed": self.rng_seed,
            "config": self.config,
            "payload": self.payload,
        }


def _checksum(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def write_artifact(envelope: ArtifactEnvelope, path: str | Path) -> None:
    body = envelope._body()
    doc = dict(body, checksum=_checksum(body))
    Path(path).write_text(dumps_canonical(doc))


def read_artifact(path: str | Path, kind: str | None = None) -> ArtifactEnvelope:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptArtifactError(f"{path}: invalid JSON ({exc})") from None
    version = doc.get("schema_version")
    if not isinstance(version, int):
        raise CorruptArtifactError(f"{path}: missing schema_version")
    if version > SCHEMA_VERSION:
        raise ArtifactVersionError(f"{path}: schema_version {version} is newer than supported {SCHEMA_VERSION}")
    checksum = doc.pop("checksum", None)
    if checksum != _checksum(doc):
        raise CorruptArtifactError(f"{path}: checksum mismatch")
    if kind is not None and doc["kind"] != kind:
        raise SchemaError(f"{path}: expected a {kind} artifact, found {doc['kind']}")
    return ArtifactEnvelope(doc["kind"], doc["payload"], doc["rng_seed"], doc.get("config", {}), version)

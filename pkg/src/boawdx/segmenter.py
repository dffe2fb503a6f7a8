"""Energy-threshold active-speech segmentation and relative pause features."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus_io import AudioBuffer, write_wav

SILENCE_DB = -120.0


@dataclass(frozen=True)
class SegmenterConfig:
    energy_threshold_db: float = 65.0
    min_speech_s: float = 0.2
    max_pause_s: float = 0.3
    max_segment_s: float = 10.0
    frame_s: float = 0.01

    def __post_init__(self):
        for name in ("min_speech_s", "max_pause_s", "max_segment_s", "frame_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.min_speech_s > self.max_segment_s:
            raise ValueError("min_speech_s must not exceed max_segment_s")


@dataclass(frozen=True)
class Segment:
    start_s: float
    end_s: float
    preceding_pause_s: float

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class PauseFeatures:
    pause_duration_ratio: float
    pause_total_pauses_ratio: float


def _frame_len(buffer: AudioBuffer, config: SegmenterConfig) -> int:
    n = int(round(config.frame_s * buffer.sample_rate))
    if n < 1:
        raise ValueError("frame_s * sample_rate must be at least one sample")
    return n


def _n_frames(seconds: float, frame_s: float) -> int:
    # durations are multiples of the frame; round to absorb 0.3/0.01 = 29.999...
    return int(round(seconds / frame_s))


def frame_energy_db(buffer: AudioBuffer, config: SegmenterConfig = SegmenterConfig()) -> np.ndarray:
    """Energy of non-overlapping frames, 10*log10(mean(x**2)) on raw amplitudes.

    A trailing partial frame is dropped. Silent frames get ``SILENCE_DB``.
    """
    n = _frame_len(buffer, config)
    count = buffer.samples.size // n
    if count == 0:
        raise ValueError("buffer is shorter than one frame")
    frames = buffer.samples[: count * n].reshape(count, n)
    power = np.mean(frames * frames, axis=1)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(power)
    return np.maximum(db, SILENCE_DB)


def _runs(active: np.ndarray) -> list[list[int]]:
    """Half-open [start, end) frame runs where ``active`` is true."""
    padded = np.concatenate(([False], active, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [[int(a), int(b)] for a, b in zip(edges[::2], edges[1::2])]


def detect_segments(buffer: AudioBuffer, config: SegmenterConfig = SegmenterConfig()) -> list[Segment]:
    energy = frame_energy_db(buffer, config)
    frame_dur = _frame_len(buffer, config) / buffer.sample_rate
    max_gap = _n_frames(config.max_pause_s, config.frame_s)
    min_len = _n_frames(config.min_speech_s, config.frame_s)
    max_len = max(1, _n_frames(config.max_segment_s, config.frame_s))

    runs = _runs(energy > config.energy_threshold_db)
    merged: list[list[int]] = []
    for run in runs:
        if merged and run[0] - merged[-1][1] <= max_gap:
            merged[-1][1] = run[1]
        else:
            merged.append(run)

    pieces: list[tuple[int, int]] = []
    for a, b in merged:
        if b - a < min_len:
            continue
        for s in range(a, b, max_len):
            e = min(s + max_len, b)
            # split remainders shorter than the minimum are dropped as well
            if e - s >= min_len:
                pieces.append((s, e))

    segments = []
    prev_end = 0
    for s, e in pieces:
        segments.append(Segment(s * frame_dur, e * frame_dur, (s - prev_end) * frame_dur))
        prev_end = e
    return segments


def compute_pause_features(segments: list[Segment], recording_duration: float) -> list[PauseFeatures]:
    """Pause before each segment, relative to recording length and to total pause time.

    Trailing silence after the last segment is not counted as a pause.
    """
    if not recording_duration > 0:
        raise ValueError("recording_duration must be > 0")
    pauses = []
    prev_end = 0.0
    for seg in segments:
        pauses.append(max(seg.start_s - prev_end, 0.0))
        prev_end = seg.end_s
    total = sum(pauses)
    return [
        PauseFeatures(p / recording_duration, p / total if total > 0 else 0.0)
        for p in pauses
    ]


def segment_recording(buffer: AudioBuffer, config: SegmenterConfig = SegmenterConfig()) -> dict:
    """Manifest entry for one recording: duration, segments and pause features."""
    segments = detect_segments(buffer, config)
    pauses = compute_pause_features(segments, buffer.duration)
    return {
        "duration": buffer.duration,
        "sample_rate": buffer.sample_rate,
        "segments": [
            {
                "start": seg.start_s,
                "end": seg.end_s,
                "pause": seg.preceding_pause_s,
                "pauseDurationRatio": pf.pause_duration_ratio,
                "pauseTotalPausesRatio": pf.pause_total_pauses_ratio,
            }
            for seg, pf in zip(segments, pauses)
        ],
        "config": asdict(config),
    }


def export_segments(buffer: AudioBuffer, segments: list[Segment], out_dir: str | Path, stem: str) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, seg in enumerate(segments):
        a = int(round(seg.start_s * buffer.sample_rate))
        b = int(round(seg.end_s * buffer.sample_rate))
        p = out_dir / f"{stem}_seg{i:04d}.wav"
        write_wav(p, buffer.samples[a:b], buffer.sample_rate)
        paths.append(p)
    return paths

"""Command-line entry point: one subcommand per pipeline stage plus a manifest runner.

Exit codes: 0 success, 2 invalid configuration or manifest, 3 bad input data,
4 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .boaw import Codebook, build_codebook, subject_histogram
from .classifiers import DEFAULTS, KINDS, TrainedModel, predict, train
from .corpus_io import (
    _META_COLUMNS, ArtifactEnvelope, SegmentFeatureTable, dumps_canonical, group_subjects, read_artifact,
    read_feature_table, read_wav, records_to_table, write_artifact, write_feature_table,
)
from .errors import BoawError, DataError, ValidationError
from .evaluation import AGGREGATIONS, SCALING_MODES, ExperimentConfig, holdout_eval, loso_report
from .scaler import ToleranceBand, fit_minmax, fit_with_reconciliation, transform
from .segmenter import SegmenterConfig, detect_segments, export_segments, segment_recording
from .selection import ImportanceReport, SelectionConfig, run_selection
from .synth import CohortSpec, generate, shuffle_labels

# Paper protocols: codebook size per class, repetitions, aggregation.
PROTOCOLS = {
    "table3": {"k": [15], "repetitions": 100},
    "table4": {"k": [11], "repetitions": 75, "aggregation": "min_error"},
}


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so manifest stages can be validated in bulk."""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


@dataclass
class Context:
    seed: int = 0
    workers: int = 1
    out_dir: Path = Path(".")
    dry: bool = False  # planning only: resolve paths without touching the disk

    def out(self, name: str | None, default: str) -> Path:
        path = Path(name) if name else self.out_dir / default
        if not self.dry:
            path.parent.mkdir(parents=True, exist_ok=True)
        return path


@dataclass
class Command:
    name: str
    help: str
    add_args: Callable
    execute: Callable
    inputs: Callable = lambda ns: []
    outputs: Callable = lambda ns, ctx: []
    check: Callable = lambda ns, ctx, widths: None


COMMANDS: dict[str, Command] = {}


def command(name, help, inputs=None, outputs=None, check=None):
    def wrap(fn):
        COMMANDS[name] = Command(name, help, fn.add_args, fn, inputs or (lambda ns: []),
                                 outputs or (lambda ns, ctx: []), check or (lambda ns, ctx, widths: None))
        return fn
    return wrap


def _args(fn):
    def deco(execute):
        execute.add_args = fn
        return execute
    return deco


# ---------------------------------------------------------------------------
# helpers


def load_table(path) -> SegmentFeatureTable:
    """Read a table written by this tool: feature columns are taken from the header."""
    with open(path, newline="") as fh:
        header = fh.readline()
    delim = ";" if header.count(";") > header.count(",") else ","
    cols = [h.strip() for h in next(csv.reader([header], delimiter=delim))]
    return read_feature_table(path, columns=[c for c in cols if c not in _META_COLUMNS])


def table_width(path) -> int:
    with open(path, newline="") as fh:
        header = fh.readline()
    delim = ";" if header.count(";") > header.count(",") else ","
    return sum(1 for h in next(csv.reader([header], delimiter=delim)) if h.strip() not in _META_COLUMNS)


def selected_columns(path) -> list[str]:
    return ImportanceReport.from_payload(read_artifact(path, "selection").payload).selected_names


def apply_selection(table: SegmentFeatureTable, selection) -> SegmentFeatureTable:
    if not selection:
        return table
    names = selected_columns(selection)
    if not names:
        raise DataError(f"{selection}: the selection kept no features")
    missing = [n for n in names if n not in table.columns]
    if missing:
        raise DataError(f"selected features absent from table: {missing[:5]}")
    return table.select_columns(names)


def write_histograms(path: Path, subject_ids, labels, H) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject_id", "label"] + [f"word_{j}" for j in range(H.shape[1])])
    for sid, lab, row in zip(subject_ids, labels, H):
        w.writerow([sid, "" if lab is None else int(lab)] + [repr(float(v)) for v in row])
    path.write_text(buf.getvalue())


def read_histograms(path) -> tuple[list[str], np.ndarray | None, np.ndarray]:
    rows = list(csv.reader(Path(path).read_text().splitlines()))
    if not rows or rows[0][:2] != ["subject_id", "label"]:
        raise DataError(f"{path}: not a histogram table")
    ids = [r[0] for r in rows[1:]]
    labels = [r[1] for r in rows[1:]]
    try:
        H = np.array([[float(v) for v in r[2:]] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    y = None if any(lab == "" for lab in labels) else np.array([int(lab) for lab in labels])
    return ids, y, H


def write_report(ctx: Context, out, default: str, kind: str, payload: dict, config: dict, text: str | None):
    path = ctx.out(out, default)
    write_artifact(ArtifactEnvelope(kind, payload, ctx.seed, config), path)
    if text is not None:
        path.with_suffix(".txt").write_text(text)
    return path


def _config(ns) -> dict:
    return {k: v for k, v in vars(ns).items() if k not in ("func", "command") and not callable(v)}


def _positive_int(v):
    i = int(v)
    if i < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return i


def _hyper(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ValidationError(f"hyperparameter {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# subcommands


def _segment_args(p):
    p.add_argument("wavs", nargs="+", help="16-bit PCM WAV recordings")
    p.add_argument("--out", help="segment manifest path (default OUT_DIR/segments.json)")
    p.add_argument("--export-dir", help="write each segment as its own WAV here")
    p.add_argument("--threshold-db", type=float, default=65.0)
    p.add_argument("--min-speech", type=float, default=0.2)
    p.add_argument("--max-pause", type=float, default=0.3)
    p.add_argument("--max-segment", type=float, default=10.0)
    p.add_argument("--frame", type=float, default=0.01)


def _segmenter_config(ns) -> SegmenterConfig:
    try:
        return SegmenterConfig(ns.threshold_db, ns.min_speech, ns.max_pause, ns.max_segment, ns.frame)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


@command("segment", "detect speech segments and pause features in WAV files",
         inputs=lambda ns: ns.wavs, outputs=lambda ns, ctx: [ctx.out(ns.out, "segments.json")],
         check=lambda ns, ctx, widths: _segmenter_config(ns))
@_args(_segment_args)
def cmd_segment(ns, ctx: Context):
    cfg = _segmenter_config(ns)
    doc = {}
    for wav in ns.wavs:
        buf = read_wav(wav)
        doc[str(wav)] = segment_recording(buf, cfg)
        if ns.export_dir:
            export_segments(buf, detect_segments(buf, cfg), ns.export_dir, Path(wav).stem)
    path = ctx.out(ns.out, "segments.json")
    path.write_text(dumps_canonical(doc))
    return [path]


def _ingest_args(p):
    p.add_argument("table", help="per-segment feature table (comma or semicolon delimited)")
    p.add_argument("--no-pause-features", action="store_true", help="expect the 88 acoustic columns only")
    p.add_argument("--infer-columns", action="store_true", help="take feature columns from the header")
    p.add_argument("--out", help="canonical table path (default OUT_DIR/table.csv)")


@command("ingest", "validate a feature table and rewrite it in canonical form",
         inputs=lambda ns: [ns.table], outputs=lambda ns, ctx: [ctx.out(ns.out, "table.csv")])
@_args(_ingest_args)
def cmd_ingest(ns, ctx: Context):
    if ns.infer_columns:
        table = load_table(ns.table)
    else:
        table = read_feature_table(ns.table, expect_pause_features=not ns.no_pause_features)
    path = ctx.out(ns.out, "table.csv")
    write_feature_table(path, table)
    print(f"{len(table.subjects())} subjects, {len(table)} segments, {table.width} features -> {path}")
    return [path]


def _scale_args(p):
    p.add_argument("--train", required=True)
    p.add_argument("--test", help="reconcile outlying test features against this table")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--beta-step", type=float, default=0.05)
    p.add_argument("--beta-max", type=float, default=0.5)
    p.add_argument("--strict-train-only", action="store_true", help="never let test rows influence the fit")
    p.add_argument("--out", help="scaler artifact (default OUT_DIR/scaler.json)")


def _band(ns) -> ToleranceBand:
    try:
        return ToleranceBand(ns.lam, ns.beta_step, ns.beta_max)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _scale_outputs(ns, ctx):
    out = [ctx.out(ns.out, "scaler.json"), ctx.out_dir / "train_scaled.csv"]
    return out + ([ctx.out_dir / "test_scaled.csv"] if ns.test else [])


@command("scale", "fit min-max scaling (with optional test reconciliation)",
         inputs=lambda ns: [ns.train] + ([ns.test] if ns.test else []), outputs=_scale_outputs,
         check=lambda ns, ctx, widths: _band(ns))
@_args(_scale_args)
def cmd_scale(ns, ctx: Context):
    band = _band(ns)
    train_t = load_table(ns.train)
    if ns.test:
        test_t = load_table(ns.test)
        params = fit_with_reconciliation(train_t, test_t, band, strict_train_only=ns.strict_train_only)
    else:
        params = fit_minmax(train_t)
    outs = _scale_outputs(ns, ctx)
    write_artifact(ArtifactEnvelope("scaler", params.to_payload(), ctx.seed, _config(ns)), outs[0])
    write_feature_table(outs[1], transform(train_t, params))
    if ns.test:
        write_feature_table(outs[2], transform(test_t, params))
    capped = [c for c, f in zip(params.columns, params.capped) if f]
    if capped:
        print(f"warning: {len(capped)} feature(s) still outside the band at beta_max: {capped[:5]}")
    return outs


def _select_args(p):
    p.add_argument("--table", required=True, help="scaled segment table")
    p.add_argument("--repetitions", type=int, default=100)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--out", help="selection artifact (default OUT_DIR/selection.json)")


def _selection_config(ns, ctx) -> SelectionConfig:
    try:
        return SelectionConfig(repetitions=ns.repetitions, alpha=ns.alpha, k=ns.k, n_trees=ns.trees, rng_seed=ctx.seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _select_check(ns, ctx, widths):
    _selection_config(ns, ctx)
    width = widths(ns.table)
    if width is not None and ns.k > width:
        raise ValidationError(f"select: k={ns.k} exceeds the {width} features of {ns.table}")


@command("select", "rank features by forest importance against a permutation null",
         inputs=lambda ns: [ns.table], outputs=lambda ns, ctx: [ctx.out(ns.out, "selection.json")],
         check=_select_check)
@_args(_select_args)
def cmd_select(ns, ctx: Context):
    cfg = _selection_config(ns, ctx)
    table = load_table(ns.table)
    if table.labels is None:
        raise DataError(f"{ns.table}: selection needs a label column")
    report = run_selection(table.values, table.labels, table.columns, cfg, ctx.workers)
    text = report.format_table()
    print(text, end="")
    return [write_report(ctx, ns.out, "selection.json", "selection", report.to_payload(), _config(ns), text)]


def _codebook_args(p):
    p.add_argument("--table", required=True, help="scaled segment table with labels")
    p.add_argument("--selection", help="selection artifact restricting the columns")
    p.add_argument("--k", type=_positive_int, default=15, help="prototypes per class")
    p.add_argument("--restarts", type=_positive_int, default=100)
    p.add_argument("--out", help="codebook artifact (default OUT_DIR/codebook.json)")


@command("codebook", "cluster each class into K spatial-median prototypes",
         inputs=lambda ns: [ns.table] + ([ns.selection] if ns.selection else []),
         outputs=lambda ns, ctx: [ctx.out(ns.out, "codebook.json")])
@_args(_codebook_args)
def cmd_codebook(ns, ctx: Context):
    table = apply_selection(load_table(ns.table), ns.selection)
    if table.labels is None:
        raise DataError(f"{ns.table}: codebook needs a label column")
    try:
        book = build_codebook(table.values, table.labels, ns.k, ns.restarts, ctx.seed,
                              columns=table.columns, workers=ctx.workers)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    print(f"codebook {book.size} prototypes, J = {book.J[0]:.6g} (control) + {book.J[1]:.6g} (dementia)")
    path = ctx.out(ns.out, "codebook.json")
    write_artifact(ArtifactEnvelope("codebook", book.to_payload(), ctx.seed, _config(ns)), path)
    return [path]


def _histograms_args(p):
    p.add_argument("--table", required=True, help="scaled segment table")
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", help="histogram table (default OUT_DIR/histograms.csv)")


@command("histograms", "quantize segments and emit per-subject word histograms",
         inputs=lambda ns: [ns.table, ns.codebook], outputs=lambda ns, ctx: [ctx.out(ns.out, "histograms.csv")])
@_args(_histograms_args)
def cmd_histograms(ns, ctx: Context):
    book = Codebook.from_payload(read_artifact(ns.codebook, "codebook").payload)
    table = load_table(ns.table)
    if book.columns:
        table = table.select_columns(book.columns)
    ids = table.subjects()
    labels = table.subject_labels() if table.labels is not None else {}
    H = np.vstack([subject_histogram(table.values[table.subject_ids == sid], book, sid).frequencies for sid in ids])
    path = ctx.out(ns.out, "histograms.csv")
    write_histograms(path, ids, [labels.get(sid) for sid in ids], H)
    return [path]


def _train_args(p):
    p.add_argument("--histograms", required=True)
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="override a hyperparameter, e.g. C=0.5 (repeatable)")
    p.add_argument("--out", help="model artifact (default OUT_DIR/model.json)")


def _train_check(ns, ctx, widths):
    unknown = set(_hyper(ns.param)) - set(DEFAULTS[ns.kind])
    if unknown:
        raise ValidationError(f"train: unknown hyperparameters for {ns.kind}: {sorted(unknown)}")


@command("train", "fit one classifier on a histogram table",
         inputs=lambda ns: [ns.histograms], outputs=lambda ns, ctx: [ctx.out(ns.out, "model.json")],
         check=_train_check)
@_args(_train_args)
def cmd_train(ns, ctx: Context):
    _, y, H = read_histograms(ns.histograms)
    if y is None:
        raise DataError(f"{ns.histograms}: training needs labels")
    model = train(ns.kind, H, y, _hyper(ns.param), ctx.seed)
    path = ctx.out(ns.out, "model.json")
    write_artifact(ArtifactEnvelope("model", model.to_payload(), ctx.seed, _config(ns)), path)
    return [path]


def _predict_args(p):
    p.add_argument("--model", required=True)
    p.add_argument("--histograms", required=True)
    p.add_argument("--out", help="label table (default OUT_DIR/predictions.csv)")


@command("predict", "label subjects with a trained model",
         inputs=lambda ns: [ns.model, ns.histograms], outputs=lambda ns, ctx: [ctx.out(ns.out, "predictions.csv")])
@_args(_predict_args)
def cmd_predict(ns, ctx: Context):
    model = TrainedModel.from_payload(read_artifact(ns.model, "model").payload)
    ids, y, H = read_histograms(ns.histograms)
    pred = predict(model, H)
    lines = ["subject_id,predicted" + (",label" if y is not None else "")]
    for i, sid in enumerate(ids):
        lines.append(f"{sid},{int(pred[i])}" + (f",{int(y[i])}" if y is not None else ""))
    path = ctx.out(ns.out, "predictions.csv")
    path.write_text("\n".join(lines) + "\n")
    if y is not None:
        print(f"accuracy {np.mean(pred == y):.3f} on {len(ids)} subjects")
    return [path]


def _experiment_args(p, loso: bool):
    p.add_argument("--protocol", choices=sorted(PROTOCOLS), help="preset codebook size and repetitions")
    p.add_argument("--selection", help="selection artifact fixing the feature list")
    p.add_argument("--k", type=_positive_int, nargs="+", help="codebook sizes per class (sweep)")
    p.add_argument("--repetitions", type=_positive_int)
    p.add_argument("--restarts", type=_positive_int, default=100)
    p.add_argument("--classifiers", nargs="+", choices=KINDS, default=list(KINDS))
    p.add_argument("--param", action="append", metavar="KIND.KEY=VALUE",
                   help="classifier hyperparameter, e.g. chi2_svm.C=0.5 (repeatable)")
    p.add_argument("--out", help="report artifact")
    if loso:
        p.add_argument("--aggregation", choices=AGGREGATIONS)
        p.add_argument("--scaling", choices=SCALING_MODES, default="strict",
                       help="per-fold scaling; 'reconcile' reproduces the published procedure and sees the held-out subject")
        p.add_argument("--paper-fast", action="store_true",
                       help="one codebook per repetition on all subjects (leaks; input must be pre-scaled)")
        p.add_argument("--select-per-fold", action="store_true", help="rerun feature selection inside every fold")
        p.add_argument("--selection-repetitions", type=int, default=100)
        p.add_argument("--selection-k", type=int, default=25)
        p.add_argument("--selection-trees", type=int, default=100)


def _experiment_config(ns, ctx, columns=None, loso=False) -> ExperimentConfig:
    preset = PROTOCOLS.get(ns.protocol, {}) if ns.protocol else {}
    hyper: dict = {}
    for key, value in _hyper(ns.param).items():
        kind, _, name = key.partition(".")
        if kind not in KINDS or not name:
            raise ValidationError(f"hyperparameter {key!r} must look like KIND.NAME")
        hyper.setdefault(kind, {})[name] = value
    for kind, hp in hyper.items():
        unknown = set(hp) - set(DEFAULTS[kind])
        if unknown:
            raise ValidationError(f"unknown hyperparameters for {kind}: {sorted(unknown)}")
    kw = dict(
        k_per_class=tuple(ns.k or preset.get("k", [15])),
        repetitions=ns.repetitions or preset.get("repetitions", 100),
        restarts=ns.restarts,
        classifiers=tuple(ns.classifiers),
        rng_seed=ctx.seed,
        hyperparameters=hyper,
    )
    if loso:
        kw["aggregation"] = ns.aggregation or preset.get("aggregation", "min_error")
        kw["scaling"] = ns.scaling
        kw["paper_fast"] = ns.paper_fast
        kw["columns"] = None if columns is None else tuple(columns)
        if ns.select_per_fold:
            if ns.selection:
                raise ValidationError("--select-per-fold and --selection are mutually exclusive")
            try:
                kw["selection"] = SelectionConfig(repetitions=ns.selection_repetitions, k=ns.selection_k,
                                                  n_trees=ns.selection_trees, rng_seed=ctx.seed)
            except ValueError as exc:
                raise ValidationError(str(exc)) from None
    return ExperimentConfig(**kw)


def _evaluate_args(p):
    p.add_argument("--train", required=True, help="scaled training segment table")
    p.add_argument("--test", required=True, help="scaled test segment table")
    _experiment_args(p, loso=False)


@command("evaluate", "repeated holdout on a fixed train/test split",
         inputs=lambda ns: [ns.train, ns.test] + ([ns.selection] if ns.selection else []),
         outputs=lambda ns, ctx: [ctx.out(ns.out, "holdout_report.json")],
         check=lambda ns, ctx, widths: _experiment_config(ns, ctx))
@_args(_evaluate_args)
def cmd_evaluate(ns, ctx: Context):
    cfg = _experiment_config(ns, ctx)
    tr = group_subjects(apply_selection(load_table(ns.train), ns.selection))
    te = group_subjects(apply_selection(load_table(ns.test), ns.selection))
    report = holdout_eval(tr, te, cfg, ctx.workers)
    text = report.format_grid()
    print(text, end="")
    return [write_report(ctx, ns.out, "holdout_report.json", "report", report.to_payload(), _config(ns), text)]


def _loso_args(p):
    p.add_argument("--table", required=True, help="segment table (raw unless --scaling none)")
    _experiment_args(p, loso=True)


def _loso_check(ns, ctx, widths):
    _experiment_config(ns, ctx, loso=True)
    width = widths(ns.table)
    if ns.select_per_fold and width is not None and ns.selection_k > width:
        raise ValidationError(f"loso: selection k={ns.selection_k} exceeds the {width} features of {ns.table}")


@command("loso", "repeated leave-one-subject-out cross-validation",
         inputs=lambda ns: [ns.table] + ([ns.selection] if ns.selection else []),
         outputs=lambda ns, ctx: [ctx.out(ns.out, "loso_report.json")], check=_loso_check)
@_args(_loso_args)
def cmd_loso(ns, ctx: Context):
    table = load_table(ns.table)
    cfg = _experiment_config(ns, ctx, columns=table.columns, loso=True)
    if ns.selection:
        cfg = replace(cfg, fixed_features=tuple(selected_columns(ns.selection)))
    report = loso_report(group_subjects(table), cfg, ctx.workers)
    text = report.format_grid()
    print(text, end="")
    return [write_report(ctx, ns.out, "loso_report.json", "report", report.to_payload(), _config(ns), text)]


def _synth_args(p):
    p.add_argument("--subjects-per-class", type=int, nargs=2, default=[40, 40], metavar=("CONTROL", "DEMENTIA"))
    p.add_argument("--segments", type=int, nargs=2, default=[8, 16], metavar=("MIN", "MAX"))
    p.add_argument("--features", type=int, default=25)
    p.add_argument("--informative", type=int, default=5, help="the first N features carry the class shift")
    p.add_argument("--separation", type=float, default=0.8)
    p.add_argument("--subject-spread", type=float, default=0.3)
    p.add_argument("--shuffle-labels", action="store_true", help="permute subject labels (null cohort)")
    p.add_argument("--holdout", type=int, default=0, metavar="N",
                   help="move the last N subjects of each class to a separate test table")
    p.add_argument("--out", help="feature table (default OUT_DIR/synth_table.csv)")


def _synth_outputs(ns, ctx):
    table = ctx.out(ns.out, "synth_table.csv")
    extra = [table.with_name(table.stem + "_test.csv")] if ns.holdout else []
    return [table, table.with_suffix(".json")] + extra


def _synth_spec(ns, ctx) -> CohortSpec:
    if ns.holdout < 0 or any(n - ns.holdout < 2 for n in ns.subjects_per_class):
        raise ValidationError("synth: --holdout must leave at least 2 training subjects per class")
    try:
        return CohortSpec(tuple(ns.subjects_per_class), tuple(ns.segments), ns.features, tuple(range(ns.informative)),
                          ns.separation, ns.subject_spread, rng_seed=ctx.seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


@command("synth", "generate a planted synthetic cohort",
         outputs=_synth_outputs,
         check=lambda ns, ctx, widths: _synth_spec(ns, ctx))
@_args(_synth_args)
def cmd_synth(ns, ctx: Context):
    cohort = generate(_synth_spec(ns, ctx))
    subjects = shuffle_labels(cohort.subjects, ctx.seed) if ns.shuffle_labels else cohort.subjects
    test_ids = set()
    if ns.holdout:
        for label in (0, 1):
            ids = [s.subject_id for s in cohort.subjects if s.label == label]
            test_ids.update(ids[-ns.holdout:])
    outs = _synth_outputs(ns, ctx)
    write_feature_table(outs[0], records_to_table([s for s in subjects if s.subject_id not in test_ids],
                                                  cohort.table.columns))
    if ns.holdout:
        write_feature_table(outs[2], records_to_table([s for s in subjects if s.subject_id in test_ids],
                                                      cohort.table.columns))
    meta = dict(cohort.metadata, shuffled=bool(ns.shuffle_labels), test_subjects=sorted(test_ids),
                subjects=[{"subject_id": s.subject_id, "label": s.label, "segments": s.n_segments} for s in subjects])
    outs[1].write_text(dumps_canonical(meta))
    return outs


# ---------------------------------------------------------------------------
# manifest runner


def load_manifest(path) -> dict:
    path = Path(path)
    try:
        if path.suffix.lower() == ".toml":
            import tomli
            doc = tomli.loads(path.read_text())
        else:
            doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"manifest not found: {path}") from None
    except Exception as exc:  # parse errors from either format
        raise ValidationError(f"{path}: cannot parse manifest ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("stages"), list) or not doc["stages"]:
        raise ValidationError(f"{path}: manifest needs a non-empty 'stages' list")
    return doc


def _stage_argv(stage: dict, out_dir: Path) -> list[str]:
    argv = []
    positional = []
    for key, value in stage.items():
        if key == "stage":
            continue
        if isinstance(value, str):
            value = value.replace("{out_dir}", str(out_dir))
        if key in ("wavs", "table") and stage["stage"] in ("segment", "ingest"):
            positional += [str(v) for v in (value if isinstance(value, list) else [value])]
            continue
        flag = "--" + key.replace("_", "-")
        if key == "lam":
            flag = "--lambda"
        if value is True:
            argv.append(flag)
        elif value is False or value is None:
            continue
        elif isinstance(value, list):
            if key == "param":
                for v in value:
                    argv += [flag, str(v)]
            else:
                argv += [flag] + [str(v).replace("{out_dir}", str(out_dir)) for v in value]
        else:
            argv += [flag, str(value)]
    return positional + argv


def plan_manifest(doc: dict, ctx: Context, parser: argparse.ArgumentParser) -> list[tuple[Command, argparse.Namespace]]:
    """Parse and validate every stage; raises before anything runs."""
    subparsers = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    plan = []
    produced: dict[str, int | None] = {}

    def widths(path):
        key = str(Path(path))
        if key in produced:
            return produced[key]
        return table_width(path) if Path(path).exists() else None

    for i, stage in enumerate(doc["stages"]):
        if not isinstance(stage, dict) or stage.get("stage") not in COMMANDS or stage.get("stage") == "run":
            raise ValidationError(f"stage {i}: unknown or missing 'stage' (choose from {sorted(COMMANDS)})")
        name = stage["stage"]
        ns = subparsers[name].parse_args(_stage_argv(stage, ctx.out_dir))
        cmd = COMMANDS[name]
        for path in cmd.inputs(ns):
            if str(Path(path)) not in produced and not Path(path).exists():
                raise ValidationError(f"stage {i} ({name}): input not found: {path}")
        cmd.check(ns, ctx, widths)
        for out in cmd.outputs(ns, ctx):
            width = ns.features if name == "synth" and str(out).endswith(".csv") else None
            if name == "scale" and str(out).endswith(".csv"):
                width = widths(ns.train)
            produced[str(Path(out))] = width
        plan.append((cmd, ns))
    return plan


def _run_args(p):
    p.add_argument("manifest", help="JSON or TOML run manifest")


def cmd_run(ns, ctx: Context, parser):
    doc = load_manifest(ns.manifest)
    ctx = Context(
        seed=ns.seed if ns.seed is not None else int(doc.get("seed", 0)),
        workers=ns.workers if ns.workers is not None else int(doc.get("workers", 1)),
        out_dir=Path(ns.out_dir if ns.out_dir is not None else doc.get("out_dir", ".")),
    )
    plan = plan_manifest(doc, replace(ctx, dry=True), parser)
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, (cmd, stage_ns) in enumerate(plan):
        print(f"[{i + 1}/{len(plan)}] {cmd.name}")
        try:
            written += [str(p) for p in cmd.execute(stage_ns, ctx)]
        except BoawError as exc:
            raise type(exc)(f"stage {i} ({cmd.name}) failed: {exc}") from exc
    print("\n".join(["outputs:"] + written))
    return written


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="boawdx", description="Acoustic-word histogram dementia screening pipeline.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--seed", type=int, help="global RNG seed (default 0)")
    parser.add_argument("--workers", type=int, help="worker processes (default 1)")
    parser.add_argument("--out-dir", help="directory for outputs (default .)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, cmd in COMMANDS.items():
        cmd.add_args(sub.add_parser(name, help=cmd.help, description=cmd.help))
    _run_args(sub.add_parser("run", help="execute a multi-stage manifest", description="execute a multi-stage manifest"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command == "run":
            cmd_run(ns, Context(), parser)
        else:
            ctx = Context(
                seed=0 if ns.seed is None else ns.seed,
                workers=1 if ns.workers is None else ns.workers,
                out_dir=Path("." if ns.out_dir is None else ns.out_dir),
            )
            COMMANDS[ns.command].check(ns, ctx, lambda p: table_width(p) if Path(p).exists() else None)
            for path in COMMANDS[ns.command].inputs(ns):
                if not Path(path).exists():
                    raise ValidationError(f"input not found: {path}")
            COMMANDS[ns.command].execute(ns, ctx)
    except BoawError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except ValueError as exc:
        # library argument errors surfacing mid-run mean the data cannot support the request
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

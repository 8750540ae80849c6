"""Cross-validated reconstruction experiments.

Trains one network per fold on the fixed -> moved mapping, reconstructs the
held-out fold in Celsius and reports SSE and mean absolute error. Also holds
the saved-model format used for prediction.
"""

from __future__ import annotations

import csv
import hashlib
import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .field_data import (Dataset, FieldDataError, NormParams, SubsetSplit, fit_normalizer,
                         format_number, split_kfold)
from .mlp import (Network, NetworkSpec, SampleBatch, ShapeError, build_network, flatten, forward,
                  format_layers, sse_loss, unflatten)
from .optimizers import METHODS, TrainingError, train

MODEL_FORMAT = "sensorfill-model"
MODEL_VERSION = 1


class FoldError(RuntimeError):
    """Training failed inside one cross-validation fold."""

    def __init__(self, fold, cause):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold
        self.cause = cause


def abs_error(targets, preds):
    """Mean absolute difference over every sample and moved sensor.

    Both arguments are ``(m, q)`` Celsius matrices; the result is one
    Celsius scalar, ``sum |y - p| / (m * q)``.
    """
    y = np.asarray(targets, dtype=float)
    p = np.asarray(preds, dtype=float)
    if y.shape != p.shape:
        raise ShapeError(f"targets {y.shape} and predictions {p.shape} differ in shape")
    if y.size == 0:
        raise ShapeError("abs_error needs at least one value")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(p))):
        raise ValueError("abs_error inputs must be finite")
    return float(np.mean(np.abs(y - p)))


# -- saved models --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SavedModel:
    """Everything needed to reconstruct moved sensors from fixed ones."""

    network: Network
    norm: NormParams
    split: SubsetSplit
    valid_range: tuple
    meta: dict | None = None

    def __post_init__(self):
        self.network.spec.bind(self.split)
        missing = set(self.split.fixed_ids + self.split.moved_ids) - set(self.norm.sensor_ids)
        if missing:
            raise FieldDataError(f"normalization lacks sensor {sorted(missing)[0]!r}")

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "spec": self.network.spec.to_dict(),
            "parameters": [float(v) for v in flatten(self.network)],
            "normalization": self.norm.to_dict(),
            "split": self.split.to_dict(),
            "valid_range": [float(v) for v in self.valid_range],
            "meta": self.meta or {},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def model_id(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a sensorfill model document")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        spec = NetworkSpec.from_dict(d["spec"])
        return cls(
            network=unflatten(spec, d["parameters"]),
            norm=NormParams.from_dict(d["normalization"]),
            split=SubsetSplit.from_dict(d["split"]),
            valid_range=tuple(d["valid_range"]),
            meta=d.get("meta") or None,
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True, eq=False)
class Reconstruction:
    """Estimated Celsius readings for the moved sensors."""

    timestamps: np.ndarray
    moved_ids: tuple
    estimates: np.ndarray
    clamped: np.ndarray
    model_id: str
    fixed_ids: tuple
    fixed_readings: np.ndarray

    @property
    def n_clamped(self):
        return int(self.clamped.sum())


def _fixed_matrix(model, fixed_readings):
    fixed = model.split.fixed_ids
    if isinstance(fixed_readings, Dataset):
        missing = [s for s in fixed if s not in fixed_readings.sensor_ids]
        if missing:
            raise ShapeError(f"input lacks fixed sensor {missing[0]!r}")
        return fixed_readings.timestamps, fixed_readings.columns(fixed)
    x = np.array(fixed_readings, dtype=float, ndmin=2)
    if x.ndim != 2 or x.shape[1] != len(fixed):
        raise ShapeError(f"expected {len(fixed)} fixed-sensor columns, got shape {x.shape}")
    return None, x


def reconstruct(model, fixed_readings, timestamps=None):
    """Estimate the moved sensors from fixed-sensor readings in Celsius.

    ``fixed_readings`` is either an ``(m, n_fixed)`` matrix whose columns
    follow ``model.split.fixed_ids`` or a :class:`Dataset` holding those
    sensors. Estimates outside the valid range are clamped and flagged.
    """
    ts, x = _fixed_matrix(model, fixed_readings)
    if timestamps is not None:
        ts = timestamps
    if ts is None:
        ts = np.arange(x.shape[0], dtype=float)
    ts = np.asarray(ts, dtype=float)
    if ts.shape != (x.shape[0],):
        raise ShapeError("one timestamp per input row is required")
    lo, hi = model.valid_range
    if not np.all(np.isfinite(x)):
        raise ValueError("fixed readings must be finite")
    bad = (x < lo) | (x > hi)
    if bad.any():
        r, c = map(int, np.argwhere(bad)[0])
        raise FieldDataError(f"fixed reading {x[r, c]!r} (row {r}, sensor "
                             f"{model.split.fixed_ids[c]!r}) outside [{lo}, {hi}]")

    z = model.norm.select(model.split.fixed_ids).normalize(x)
    out = forward(model.network, z)
    est = model.norm.select(model.split.moved_ids).denormalize(out)
    if not np.all(np.isfinite(est)):
        raise ValueError("network produced non-finite estimates")
    clamped = (est < lo) | (est > hi)
    est = np.clip(est, lo, hi)
    return Reconstruction(ts, model.split.moved_ids, est, clamped, model.model_id,
                          model.split.fixed_ids, x)


def write_reconstruction_csv(rec, path):
    """``timestamp, <moved ids...>, clamped`` where ``clamped`` lists the
    sensors whose estimate was clamped in that row, ``;``-separated."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *rec.moved_ids, "clamped"])
        for t, row, flags in zip(rec.timestamps, rec.estimates, rec.clamped):
            hit = ";".join(s for s, f in zip(rec.moved_ids, flags) if f)
            writer.writerow([format_number(t), *(repr(float(v)) for v in row), hit])


# -- cross-validation ----------------------------------------------------

def fold_seed(seed, fold):
    """Initialization seed for one fold, derived from the run seed."""
    return int(np.random.SeedSequence([int(seed), int(fold)]).generate_state(1)[0])


def make_batch(d, split, norm):
    x = norm.select(split.fixed_ids).normalize(d.columns(split.fixed_ids))
    y = norm.select(split.moved_ids).normalize(d.columns(split.moved_ids))
    return SampleBatch(x, y)


def fit_model(d, split, spec, cfg, normalization="range", meta=None):
    """Train a fresh network on all of ``d``; returns (SavedModel, TrainTrace)."""
    split.check_against(d)
    spec.bind(split)
    norm = fit_normalizer(d, normalization)
    trace = train(build_network(spec), make_batch(d, split, norm), cfg)
    model = SavedModel(trace.network, norm, split, d.valid_range, meta)
    return model, trace


@dataclass(frozen=True)
class FoldResult:
    fold: int
    n_train: int
    n_test: int
    train_sse: float
    test_sse: float
    test_abs_error: float
    wall_time: float
    iterations: int
    stopped_early: bool
    init_seed: int


@dataclass(frozen=True, eq=False)
class CvReport:
    folds: tuple
    config: dict

    @property
    def k(self):
        return len(self.folds)

    @property
    def abs_errors(self):
        return [f.test_abs_error for f in self.folds]

    @property
    def mean_abs_error(self):
        return float(np.mean(self.abs_errors))

    @property
    def std_abs_error(self):
        return float(np.std(self.abs_errors, ddof=1)) if self.k > 1 else 0.0

    @property
    def total_wall_time(self):
        return float(sum(f.wall_time for f in self.folds))

    def to_dict(self):
        return {
            "config": self.config,
            "folds": [vars(f) for f in self.folds],
            "mean_abs_error": self.mean_abs_error,
            "std_abs_error": self.std_abs_error,
            "total_wall_time": self.total_wall_time,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_csv(self, path):
        _write_rows(path, list(FoldResult.__dataclass_fields__), [vars(f) for f in self.folds])


def _write_rows(path, columns, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in columns)])


def _run_fold(d, split, spec, cfg, plan, fold, seed, normalization):
    train_idx = plan.train_indices(fold)
    test_idx = plan.test_indices(fold)
    d_train, d_test = d.take(train_idx), d.take(test_idx)
    norm = fit_normalizer(d_train, normalization)
    init_seed = fold_seed(seed, fold)
    try:
        net = build_network(spec.with_seed(init_seed))
        trace = train(net, make_batch(d_train, split, norm), cfg)
    except (TrainingError, ValueError) as exc:
        raise FoldError(fold, exc) from exc
    model = SavedModel(trace.network, norm, split, d.valid_range)
    rec = reconstruct(model, d_test.columns(split.fixed_ids), d_test.timestamps)
    return FoldResult(
        fold=fold,
        n_train=int(train_idx.size),
        n_test=int(test_idx.size),
        train_sse=float(trace.final_sse),
        test_sse=sse_loss(trace.network, make_batch(d_test, split, norm)),
        test_abs_error=abs_error(d_test.columns(split.moved_ids), rec.estimates),
        wall_time=float(trace.wall_time),
        iterations=len(trace.records) - 1,
        stopped_early=bool(trace.stopped_early),
        init_seed=init_seed,
    )


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def cross_validate(d, split, spec, cfg, k=5, seed=0, normalization="range", n_jobs=1):
    """k-fold cross-validation of the fixed -> moved reconstruction.

    Each fold trains a freshly initialized network (seed derived from
    ``(seed, fold)``) on the other folds and is scored on its own samples:
    SSE in normalized units and mean absolute error in Celsius. Folds are
    independent; ``n_jobs > 1`` runs them on a thread pool with identical
    results.
    """
    split.check_against(d)
    spec.bind(split)
    if not 2 <= k <= d.n_samples:
        raise ValueError(f"k must satisfy 2 <= k <= {d.n_samples}, got {k}")
    plan = split_kfold(d.n_samples, k, seed)
    folds = _map(lambda f: _run_fold(d, split, spec, cfg, plan, f, seed, normalization),
                 range(k), n_jobs)
    config = {
        "spec": spec.to_dict(),
        "split": split.to_dict(),
        "train": cfg.to_dict(),
        "k": int(k),
        "seed": int(seed),
        "normalization": normalization,
        "n_samples": int(d.n_samples),
        "version": __version__,
    }
    return CvReport(tuple(folds), config)


# -- method comparison ---------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    method: str
    architecture: str
    seeds: tuple
    abs_errors: tuple
    mean_abs_error: float
    median_abs_error: float
    mean_wall_time: float


@dataclass(frozen=True, eq=False)
class ComparisonTable:
    rows: tuple
    reports: dict
    config: dict

    def row(self, method, architecture):
        for r in self.rows:
            if r.method == method and r.architecture == architecture:
                return r
        raise KeyError((method, architecture))

    def to_dict(self):
        return {"config": self.config,
                "rows": [dict(vars(r), seeds=list(r.seeds), abs_errors=list(r.abs_errors))
                         for r in self.rows]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_csv(self, path):
        cols = ["method", "architecture", "mean_abs_error", "median_abs_error",
                "mean_wall_time", "n_seeds"]
        rows = [dict(vars(r), n_seeds=len(r.seeds)) for r in self.rows]
        _write_rows(path, cols, rows)

    def format(self):
        """Plain-text grid: one line per architecture, one column per method."""
        methods = list(dict.fromkeys(r.method for r in self.rows))
        archs = list(dict.fromkeys(r.architecture for r in self.rows))
        lines = ["architecture".ljust(16) + "".join(m.rjust(22) for m in methods)]
        for a in archs:
            cells = []
            for m in methods:
                r = self.row(m, a)
                cells.append(f"({r.median_abs_error:.3f} C, {r.mean_wall_time:.2f} s)".rjust(22))
            lines.append(a.ljust(16) + "".join(cells))
        return "\n".join(lines)


def compare_methods(d, split, presets, base_cfg, k=5, seeds=(0,), methods=METHODS,
                    hidden_activation="tanh", normalization="range", n_jobs=1):
    """Cross-validate every (method, architecture) pair for each seed.

    Each cell for seed ``s`` is exactly ``cross_validate(..., seed=s)`` with
    the method swapped into ``base_cfg``. Rows report the mean and median
    over seeds of the CV mean absolute error and the mean CV wall time.
    """
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    presets = [NetworkSpec(p, hidden_activation) for p in presets]
    cells = [(m, spec, s) for m in methods for spec in presets for s in seeds]

    def run(cell):
        m, spec, s = cell
        return cross_validate(d, split, spec, replace(base_cfg, method=m), k, s, normalization)

    reports = dict(zip(
        ((m, format_layers(spec.layer_sizes), s) for m, spec, s in cells),
        _map(run, cells, n_jobs),
    ))
    rows = []
    for m in methods:
        for spec in presets:
            arch = format_layers(spec.layer_sizes)
            errs = tuple(reports[(m, arch, s)].mean_abs_error for s in seeds)
            walls = [reports[(m, arch, s)].total_wall_time for s in seeds]
            rows.append(ComparisonRow(m, arch, seeds, errs, float(np.mean(errs)),
                                      float(statistics.median(errs)), float(np.mean(walls))))
    config = {
        "methods": list(methods),
        "architectures": [format_layers(s.layer_sizes) for s in presets],
        "seeds": list(seeds),
        "k": int(k),
        "train": base_cfg.to_dict(),
        "split": split.to_dict(),
        "normalization": normalization,
    }
    return ComparisonTable(tuple(rows), reports, config)

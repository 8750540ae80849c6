"""Sensor time-series datasets: ingestion, normalization, fold plans,
fixed/moved subset selection and a seeded synthetic field generator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DEFAULT_VALID_RANGE = (-20.0, 60.0)
MIN_SENSORS = 2
MIN_SAMPLES = 10


class FieldDataError(ValueError):
    """Raised for malformed or invalid sensor data."""


class ReadingRangeError(FieldDataError):
    """A reading lies outside the dataset's physical range."""

    def __init__(self, message, row=None, column=None, value=None):
        super().__init__(message)
        self.row = row
        self.column = column
        self.value = value


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Timestamped readings for a set of sensor locations.

    Attributes
    ----------
    sensor_ids : tuple of str
        One identifier per column of ``readings``.
    timestamps : ndarray, shape (n_samples,)
        Strictly increasing sample times in epoch seconds.
    readings : ndarray, shape (n_samples, n_sensors)
        Celsius values, all inside ``valid_range``.
    valid_range : tuple of float
        Physical (min, max) accepted for any reading.
    dropped_rows : int
        Rows discarded at load time by the missing-value policy.
    """

    sensor_ids: tuple
    timestamps: np.ndarray
    readings: np.ndarray
    valid_range: tuple = DEFAULT_VALID_RANGE
    dropped_rows: int = 0

    def __post_init__(self):
        ids = tuple(str(s) for s in self.sensor_ids)
        ts = _frozen(self.timestamps)
        x = _frozen(self.readings)
        lo, hi = (float(v) for v in self.valid_range)
        object.__setattr__(self, "sensor_ids", ids)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "readings", x)
        object.__setattr__(self, "valid_range", (lo, hi))

        if not lo < hi:
            raise FieldDataError(f"valid_range must satisfy min < max, got {(lo, hi)}")
        if len(set(ids)) != len(ids):
            raise FieldDataError("sensor ids must be unique")
        if x.ndim != 2 or x.shape != (ts.shape[0], len(ids)):
            raise FieldDataError(
                f"readings shape {x.shape} does not match "
                f"{ts.shape[0]} timestamps x {len(ids)} sensors"
            )
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise FieldDataError("timestamps must be strictly increasing")
        bad = ~np.isfinite(x) | (x < lo) | (x > hi)
        if bad.any():
            r, c = map(int, np.argwhere(bad)[0])
            raise ReadingRangeError(
                f"reading {x[r, c]!r} at sample {r}, sensor {ids[c]!r} "
                f"outside valid range [{lo}, {hi}]",
                row=r, column=ids[c], value=float(x[r, c]),
            )

    @property
    def n_samples(self):
        return self.readings.shape[0]

    @property
    def n_sensors(self):
        return self.readings.shape[1]

    def column_indices(self, ids):
        index = {s: i for i, s in enumerate(self.sensor_ids)}
        try:
            return [index[str(s)] for s in ids]
        except KeyError as exc:
            raise FieldDataError(f"unknown sensor id {exc.args[0]!r}") from None

    def columns(self, ids):
        """Readings matrix restricted to ``ids``, in the given order."""
        return self.readings[:, self.column_indices(ids)]

    def take(self, rows):
        """New dataset holding only the given sample rows."""
        rows = np.asarray(rows)
        return Dataset(self.sensor_ids, self.timestamps[rows],
                       self.readings[rows], self.valid_range)


# -- CSV ------------------------------------------------------------------

def parse_timestamp(text):
    """Epoch seconds from an integer/float string or an ISO-8601 string.

    Naive ISO timestamps are taken as UTC.
    """
    text = text.strip()
    try:
        return float(int(text))
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        value = None
    if value is not None:
        if not math.isfinite(value):
            raise ValueError(f"non-finite timestamp {text!r}")
        return value
    iso = text[:-1] + "+00:00" if text.endswith(("Z", "z")) else text
    stamp = datetime.fromisoformat(iso)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


def format_number(value):
    """Shortest exact text for a float; integral values without a decimal part."""
    value = float(value)
    if value.is_integer() and abs(value) < 2**53:
        return str(int(value))
    return repr(value)


def load_csv(path, valid_range=DEFAULT_VALID_RANGE, missing="drop",
             min_samples=MIN_SAMPLES, min_sensors=MIN_SENSORS):
    """Read a sensor CSV file into a :class:`Dataset`.

    The first column holds timestamps (epoch seconds or ISO-8601); every
    other column is one sensor, named by its header cell.

    Parameters
    ----------
    path : str or Path
    valid_range : (float, float)
        Readings outside this closed interval are rejected.
    missing : {"drop", "error"}
        What to do with a row holding a blank or unparsable cell. Dropped
        rows are counted in ``Dataset.dropped_rows``.
    min_samples, min_sensors : int
        Smallest acceptable dataset after dropping rows.
    """
    if missing not in ("drop", "error"):
        raise ValueError(f"unknown missing-value policy {missing!r}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FieldDataError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0].lower() != "timestamp":
            raise FieldDataError(
                f"{path}: malformed header, expected 'timestamp' followed by sensor ids"
            )
        ids = header[1:]
        if any(not s for s in ids) or len(set(ids)) != len(ids):
            raise FieldDataError(f"{path}: malformed header, sensor ids must be non-empty and unique")
        if len(ids) < min_sensors:
            raise FieldDataError(f"{path}: need at least {min_sensors} sensors, found {len(ids)}")

        lo, hi = (float(v) for v in valid_range)
        stamps, rows, dropped = [], [], 0
        for lineno, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                problem = f"line {lineno}: expected {len(header)} cells, found {len(cells)}"
                values = None
            else:
                problem, values = None, []
                try:
                    stamp = parse_timestamp(cells[0])
                except ValueError:
                    problem = f"line {lineno}: unparsable timestamp {cells[0]!r}"
                for sensor, cell in zip(ids, cells[1:]):
                    if problem:
                        break
                    try:
                        v = float(cell)
                    except ValueError:
                        problem = f"line {lineno}, column {sensor!r}: missing or unparsable value {cell!r}"
                        break
                    if not math.isfinite(v):
                        problem = f"line {lineno}, column {sensor!r}: non-finite value {cell!r}"
                        break
                    if v < lo or v > hi:
                        raise ReadingRangeError(
                            f"{path}: line {lineno}, column {sensor!r}: reading {v!r} "
                            f"outside valid range [{lo}, {hi}]",
                            row=lineno, column=sensor, value=v,
                        )
                    values.append(v)
            if problem:
                if missing == "error":
                    raise FieldDataError(f"{path}: {problem}")
                dropped += 1
                continue
            stamps.append(stamp)
            rows.append(values)

    if len(rows) < min_samples:
        raise FieldDataError(f"{path}: need at least {min_samples} samples, found {len(rows)}")
    readings = np.array(rows, dtype=float).reshape(len(rows), len(ids))
    return Dataset(ids, stamps, readings, (lo, hi), dropped_rows=dropped)


def write_csv(dataset, path):
    """Write ``dataset`` in the format read by :func:`load_csv`."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *dataset.sensor_ids])
        for t, row in zip(dataset.timestamps, dataset.readings):
            writer.writerow([format_number(t), *(repr(float(v)) for v in row)])


# -- normalization ----------------------------------------------------------

@dataclass(frozen=True)
class NormParams:
    """Per-sensor affine map ``z = (x - offset) / scale`` from Celsius."""

    sensor_ids: tuple
    offset: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sensor_ids", tuple(str(s) for s in self.sensor_ids))
        object.__setattr__(self, "offset", _frozen(self.offset))
        object.__setattr__(self, "scale", _frozen(self.scale))
        n = len(self.sensor_ids)
        if self.offset.shape != (n,) or self.scale.shape != (n,):
            raise FieldDataError("normalization offset/scale must have one entry per sensor")
        if not np.all(np.isfinite(self.offset)) or not np.all(self.scale > 0):
            raise FieldDataError("normalization scale must be strictly positive and finite")

    def select(self, ids):
        """The same map restricted to (and reordered as) ``ids``."""
        index = {s: i for i, s in enumerate(self.sensor_ids)}
        try:
            idx = [index[str(s)] for s in ids]
        except KeyError as exc:
            raise FieldDataError(f"unknown sensor id {exc.args[0]!r}") from None
        return NormParams(tuple(ids), self.offset[idx], self.scale[idx])

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.offset) / self.scale

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.offset

    def to_dict(self):
        return {
            "sensor_ids": list(self.sensor_ids),
            "offset": [float(v) for v in self.offset],
            "scale": [float(v) for v in self.scale],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["sensor_ids"]), d["offset"], d["scale"])


def fit_normalizer(d, strategy="range"):
    """Fit a :class:`NormParams` taking Celsius onto roughly [-1, 1].

    ``"range"`` maps the dataset's ``valid_range`` onto [-1, 1] with the
    same affine map for every sensor. ``"minmax"`` uses each sensor's own
    observed minimum and maximum instead.
    """
    n = d.n_sensors
    if strategy == "range":
        lo, hi = d.valid_range
        offset = np.full(n, 0.5 * (lo + hi))
        scale = np.full(n, 0.5 * (hi - lo))
    elif strategy == "minmax":
        lo = d.readings.min(axis=0)
        hi = d.readings.max(axis=0)
        flat = np.flatnonzero(hi <= lo)
        if flat.size:
            raise FieldDataError(
                "degenerate range (max = min) for sensor(s) "
                + ", ".join(repr(d.sensor_ids[i]) for i in flat)
            )
        offset = 0.5 * (lo + hi)
        scale = 0.5 * (hi - lo)
    else:
        raise ValueError(f"unknown normalization strategy {strategy!r}")
    return NormParams(d.sensor_ids, offset, scale)


# -- folds -------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    """Assignment of every sample to one of ``k`` folds."""

    k: int
    assignment: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "assignment", _frozen(self.assignment, dtype=np.int64))

    def test_indices(self, fold):
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.assignment != fold)

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.k)


def split_kfold(n_samples, k, seed=0):
    """Seeded random permutation of ``range(n_samples)`` cut into ``k``
    folds whose sizes differ by at most one."""
    n_samples, k = int(n_samples), int(k)
    if not 2 <= k <= n_samples:
        raise ValueError(f"k must satisfy 2 <= k <= n_samples ({n_samples}), got {k}")
    perm = np.random.default_rng(seed).permutation(n_samples)
    assignment = np.empty(n_samples, dtype=np.int64)
    for fold, chunk in enumerate(np.array_split(perm, k)):
        assignment[chunk] = fold
    return FoldPlan(k, assignment, seed)


# -- subsets -----------------------------------------------------------------

@dataclass(frozen=True)
class SubsetSplit:
    """Sensors kept in place (network inputs) and moved away (outputs)."""

    fixed_ids: tuple
    moved_ids: tuple

    def __post_init__(self):
        fixed = tuple(str(s) for s in self.fixed_ids)
        moved = tuple(str(s) for s in self.moved_ids)
        object.__setattr__(self, "fixed_ids", fixed)
        object.__setattr__(self, "moved_ids", moved)
        if not fixed or not moved:
            raise FieldDataError("fixed and moved subsets must both be non-empty")
        if len(set(fixed)) != len(fixed) or len(set(moved)) != len(moved):
            raise FieldDataError("duplicate sensor id in subset")
        if set(fixed) & set(moved):
            raise FieldDataError("fixed and moved subsets overlap")

    def check_against(self, d):
        if set(self.fixed_ids) | set(self.moved_ids) != set(d.sensor_ids):
            raise FieldDataError("subset split does not cover exactly the dataset's sensors")

    def to_dict(self):
        return {"fixed_ids": list(self.fixed_ids), "moved_ids": list(self.moved_ids)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["fixed_ids"]), tuple(d["moved_ids"]))


def abs_correlation(readings):
    """Absolute Pearson correlation between columns; constant columns
    correlate 0 with everything but themselves."""
    x = np.asarray(readings, dtype=float)
    xc = x - x.mean(axis=0)
    norms = np.sqrt((xc * xc).sum(axis=0))
    ok = norms > 0
    c = np.zeros((x.shape[1], x.shape[1]))
    c[np.ix_(ok, ok)] = np.abs((xc[:, ok].T @ xc[:, ok]) / np.outer(norms[ok], norms[ok]))
    np.fill_diagonal(c, 1.0)
    return np.minimum(c, 1.0)


def _greedy_correlation(corr, n_fixed):
    n = corr.shape[0]
    chosen = []
    coverage = np.zeros(n)
    for _ in range(n_fixed):
        best, best_score = None, None
        for c in range(n):
            if c in chosen:
                continue
            cov = np.maximum(coverage, corr[c])
            rest = [j for j in range(n) if j != c and j not in chosen]
            score = (cov[rest].min(), cov[rest].mean())
            if best_score is None or score > best_score:
                best, best_score = c, score
        chosen.append(best)
        coverage = np.maximum(coverage, corr[best])
    return sorted(chosen)


def select_subsets(d, n_fixed=None, method="greedy-correlation", fixed_ids=None):
    """Choose which sensors stay fixed.

    ``method="explicit-list"`` takes ``fixed_ids`` verbatim (order kept).
    ``method="greedy-correlation"`` grows the fixed set one sensor at a time,
    each time adding the sensor that maximises the worst-case absolute
    correlation between any remaining sensor and its best-correlated fixed
    sensor. Ties fall to the higher mean of that coverage, then to column
    order.
    """
    n = d.n_sensors
    if method == "explicit-list":
        if fixed_ids is None:
            raise ValueError("explicit-list selection needs fixed_ids")
        fixed = [str(s) for s in fixed_ids]
        unknown = [s for s in fixed if s not in d.sensor_ids]
        if unknown:
            raise FieldDataError(f"unknown sensor id {unknown[0]!r} in fixed list")
        if n_fixed is not None and int(n_fixed) != len(fixed):
            raise ValueError(f"n_fixed={n_fixed} but {len(fixed)} fixed ids given")
        if not 1 <= len(fixed) < n:
            raise ValueError(f"need 1 <= n_fixed < {n}, got {len(fixed)}")
        moved = [s for s in d.sensor_ids if s not in set(fixed)]
        return SubsetSplit(tuple(fixed), tuple(moved))
    if method != "greedy-correlation":
        raise ValueError(f"unknown subset selection method {method!r}")
    if n_fixed is None or not 1 <= int(n_fixed) < n:
        raise ValueError(f"need 1 <= n_fixed < {n}, got {n_fixed}")
    chosen = _greedy_correlation(abs_correlation(d.readings), int(n_fixed))
    fixed = tuple(d.sensor_ids[i] for i in chosen)
    moved = tuple(s for i, s in enumerate(d.sensor_ids) if i not in set(chosen))
    return SubsetSplit(fixed, moved)


# -- synthetic field -------------------------------------------------------

@dataclass(frozen=True)
class Basis:
    """One spatial Gaussian bump carrying its own sinusoid."""

    center: tuple
    weight: float
    length_scale: float
    period: float
    phase: float = 0.0


@dataclass(frozen=True)
class FieldConfig:
    """Parameters of the synthetic temperature field.

    ``reading(s, t) = base + diurnal_amplitude * sin(2 pi t / period)
    + sum_b weight_b * exp(-|pos_s - center_b|^2 / length_scale_b^2)
    * sin(2 pi t / period_b + phase_b) + noise``, clamped to ``valid_range``,
    with ``t = t0 + i * dt`` for sample ``i``.

    When ``positions`` is None, sensors are placed uniformly at random in
    the unit square using ``seed``.
    """

    sensors: int
    samples: int
    positions: tuple | None = None
    noise_sd: float = 0.0
    seed: int = 0
    period: float = 86400.0
    base: float = 15.0
    diurnal_amplitude: float = 5.0
    basis: tuple = ()
    dt: float = 300.0
    t0: float = 0.0
    valid_range: tuple = DEFAULT_VALID_RANGE
    sensor_ids: tuple | None = None

    def ids(self):
        if self.sensor_ids is not None:
            return tuple(str(s) for s in self.sensor_ids)
        width = max(2, len(str(self.sensors)))
        return tuple(f"s{i + 1:0{width}d}" for i in range(self.sensors))


def _check_field_config(cfg):
    if cfg.sensors <= 0:
        raise FieldDataError(f"sensors must be positive, got {cfg.sensors}")
    if cfg.samples <= 0:
        raise FieldDataError(f"samples must be positive, got {cfg.samples}")
    if cfg.period <= 0 or cfg.dt <= 0:
        raise FieldDataError("period and dt must be positive")
    if cfg.noise_sd < 0:
        raise FieldDataError("noise_sd must be non-negative")
    for b in cfg.basis:
        if b.length_scale <= 0:
            raise FieldDataError(f"basis length_scale must be positive, got {b.length_scale}")
        if b.period <= 0:
            raise FieldDataError(f"basis period must be positive, got {b.period}")
    if cfg.positions is not None and np.shape(cfg.positions) != (cfg.sensors, 2):
        raise FieldDataError(f"positions must be {cfg.sensors} (x, y) pairs")
    if cfg.sensor_ids is not None and len(cfg.sensor_ids) != cfg.sensors:
        raise FieldDataError("sensor_ids must have one entry per sensor")


def sensor_positions(cfg):
    if cfg.positions is not None:
        return np.asarray(cfg.positions, dtype=float)
    rng = np.random.default_rng([cfg.seed, 1])
    return rng.uniform(0.0, 1.0, size=(cfg.sensors, 2))


def field_times(cfg):
    return cfg.t0 + cfg.dt * np.arange(cfg.samples)


def clean_field(cfg):
    """Noise-free, unclamped field values, shape (samples, sensors)."""
    t = field_times(cfg)[:, None]
    pos = sensor_positions(cfg)
    x = cfg.base + cfg.diurnal_amplitude * np.sin(2 * np.pi * t / cfg.period)
    x = np.broadcast_to(x, (cfg.samples, cfg.sensors)).copy()
    for b in cfg.basis:
        d2 = ((pos - np.asarray(b.center, dtype=float)) ** 2).sum(axis=1)
        loading = b.weight * np.exp(-d2 / b.length_scale**2)
        x += loading[None, :] * np.sin(2 * np.pi * t / b.period + b.phase)
    return x


def gen_synthetic(cfg):
    """Deterministic synthetic :class:`Dataset` drawn from ``cfg``."""
    _check_field_config(cfg)
    x = clean_field(cfg)
    if cfg.noise_sd > 0:
        rng = np.random.default_rng([cfg.seed, 2])
        x = x + rng.normal(0.0, cfg.noise_sd, size=x.shape)
    lo, hi = cfg.valid_range
    x = np.clip(x, lo, hi)
    return Dataset(cfg.ids(), field_times(cfg), x, (lo, hi))


def reference_field_config(noise_sd=0.1, samples=2000, seed=2014):
    """A 23-sensor field resembling a small meteorological deployment.

    Five-minute sampling, a diurnal cycle plus five localized weather
    components with incommensurate periods.
    """
    hour = 3600.0
    basis = (
        Basis((0.15, 0.20), 7.0, 0.35, 5.0 * hour, 0.3),
        Basis((0.80, 0.25), 6.0, 0.30, 11.0 * hour, 1.7),
        Basis((0.50, 0.75), 5.0, 0.40, 31.0 * hour, 4.1),
        Basis((0.10, 0.85), 4.0, 0.25, 79.0 * hour, 2.6),
        Basis((0.90, 0.90), 5.0, 0.30, 47.0 * hour, 5.5),
    )
    return FieldConfig(
        sensors=23, samples=samples, noise_sd=noise_sd, seed=seed,
        period=24.0 * hour, base=14.0, diurnal_amplitude=8.0, basis=basis,
        dt=300.0, t0=1_199_145_600.0,
    )


_FIELD_KEYS = {
    "sensors", "samples", "positions", "noise_sd", "seed", "period", "base",
    "diurnal_amplitude", "basis", "dt", "t0", "valid_range", "sensor_ids",
}
_BASIS_KEYS = {"center", "weight", "length_scale", "period", "phase"}


def field_config_from_dict(d):
    unknown = set(d) - _FIELD_KEYS
    if unknown:
        raise FieldDataError(f"unknown field config key {sorted(unknown)[0]!r}")
    for key in ("sensors", "samples"):
        if key not in d:
            raise FieldDataError(f"field config missing required key {key!r}")
    kw = dict(d)
    basis = []
    for i, b in enumerate(kw.pop("basis", [])):
        bad = set(b) - _BASIS_KEYS
        if bad:
            raise FieldDataError(f"basis[{i}]: unknown key {sorted(bad)[0]!r}")
        missing = {"center", "weight", "length_scale", "period"} - set(b)
        if missing:
            raise FieldDataError(f"basis[{i}]: missing key {sorted(missing)[0]!r}")
        basis.append(Basis(tuple(float(c) for c in b["center"]), float(b["weight"]),
                           float(b["length_scale"]), float(b["period"]),
                           float(b.get("phase", 0.0))))
    kw["basis"] = tuple(basis)
    try:
        for key in ("sensors", "samples", "seed"):
            if key in kw:
                if isinstance(kw[key], bool) or int(kw[key]) != kw[key]:
                    raise TypeError(key)
                kw[key] = int(kw[key])
        for key in ("noise_sd", "period", "base", "diurnal_amplitude", "dt", "t0"):
            if key in kw:
                kw[key] = float(kw[key])
    except (TypeError, ValueError):
        raise FieldDataError(f"field config key {key!r} has the wrong type") from None
    if "positions" in kw:
        kw["positions"] = tuple(tuple(float(c) for c in p) for p in kw["positions"])
    if "valid_range" in kw:
        kw["valid_range"] = tuple(float(v) for v in kw["valid_range"])
    if "sensor_ids" in kw:
        kw["sensor_ids"] = tuple(str(s) for s in kw["sensor_ids"])
    cfg = FieldConfig(**kw)
    _check_field_config(cfg)
    return cfg


def load_field_config(path):
    """Read a TOML field config.

    Keys: ``sensors``, ``samples``, ``positions`` (list of [x, y]),
    ``noise_sd``, ``seed``, ``period``, ``base``, ``diurnal_amplitude``,
    ``dt``, ``t0``, ``valid_range``, ``sensor_ids`` and a ``[[basis]]``
    array of tables with ``center``, ``weight``, ``length_scale``,
    ``period`` and optional ``phase``. A ``[field]`` table may wrap them.
    """
    path = Path(path)
    with path.open("rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise FieldDataError(f"{path}: {exc}") from None
    return field_config_from_dict(raw.get("field", raw))

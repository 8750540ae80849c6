"""Command-line front end.

    sensorfill synth    --field field.toml --out-dir out/
    sensorfill train    --dataset out/dataset.csv --method hybrid --out-dir out/
    sensorfill evaluate --dataset out/dataset.csv --k 5 --out-dir out/
    sensorfill compare  --dataset out/dataset.csv --seeds 0,1,2 --out-dir out/
    sensorfill predict  --model out/model.json --inputs readings.csv --out-dir out/
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import __version__
from .evaluation import (FoldError, SavedModel, compare_methods, cross_validate, fit_model,
                         reconstruct, write_reconstruction_csv)
from .field_data import (FieldDataError, gen_synthetic, load_csv, load_field_config,
                         reference_field_config, select_subsets, tomllib, write_csv)
from .mlp import PRESETS, NetworkSpec, ShapeError, parse_layers
from .optimizers import METHODS, TrainConfig, TrainingError, write_trace_csv

COMMANDS = ("synth", "train", "evaluate", "compare", "predict")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_DATA = 5
EXIT_TRAINING = 6

EXIT_HELP = f"""\
exit status:
  {EXIT_OK}  success
  {EXIT_INTERNAL}  unexpected internal error
  {EXIT_USAGE}  usage error (unknown subcommand or flag, missing arguments)
  {EXIT_CONFIG}  configuration error (missing key, wrong type, value out of range)
  {EXIT_IO}  input file missing or unreadable
  {EXIT_DATA}  invalid data (malformed CSV, reading out of range, shape mismatch)
  {EXIT_TRAINING}  training failed
"""


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    command: str
    dataset: str | None = None
    field: str | None = None
    samples: int | None = None
    noise_sd: float | None = None
    fixed: tuple | None = None
    n_fixed: int = 14
    subset_method: str = "greedy-correlation"
    layers: str = "14:11:9"
    presets: tuple = tuple(PRESETS)
    activation: str = "tanh"
    method: str = "hybrid"
    methods: tuple = METHODS
    iterations: int = 1000
    switch_fraction: float = 0.1
    grad_tol: float = 1e-10
    k: int = 5
    seed: int | None = None
    seeds: tuple | None = None
    normalization: str = "range"
    missing: str = "drop"
    valid_range: tuple = (-20.0, 60.0)
    model: str | None = None
    inputs: str | None = None
    out_dir: str = "out"
    format: str = "both"
    jobs: int = 1
    timing: bool = True

    @property
    def run_seed(self):
        return 0 if self.seed is None else self.seed

    def train_config(self, method=None):
        return TrainConfig(method or self.method, self.iterations, self.switch_fraction,
                           self.run_seed, self.grad_tol, self.timing)


_CHOICES = {
    "subset_method": ("greedy-correlation", "explicit-list"),
    "activation": ("tanh", "logistic"),
    "method": METHODS,
    "normalization": ("range", "minmax"),
    "missing": ("drop", "error"),
    "format": ("json", "csv", "both"),
}
_INTS = {"samples": 1, "n_fixed": 1, "iterations": 1, "k": 2, "jobs": 1, "seed": 0}
_FLOATS = {"noise_sd", "switch_fraction", "grad_tol"}
_PATHS = ("dataset", "field", "model", "inputs", "out_dir")
_REQUIRED = {
    "synth": (),
    "train": ("dataset",),
    "evaluate": ("dataset",),
    "compare": ("dataset",),
    "predict": ("model", "inputs"),
}


def _as_list(key, value):
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    if isinstance(value, (list, tuple)):
        return list(value)
    raise ConfigError(key, f"expected a list or comma-separated string, got {value!r}")


def _as_int(key, value):
    if isinstance(value, bool):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected an integer, got {value!r}") from None
    if isinstance(value, float) and out != value:
        raise ConfigError(key, f"expected an integer, got {value!r}")
    return out


def _as_float(key, value):
    if isinstance(value, bool):
        raise ConfigError(key, f"expected a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {value!r}") from None


def _coerce(key, value):
    if key in _INTS:
        v = _as_int(key, value)
        if v < _INTS[key]:
            raise ConfigError(key, f"must be >= {_INTS[key]}, got {v}")
        return v
    if key in _FLOATS:
        v = _as_float(key, value)
        if key == "switch_fraction" and not 0.0 <= v <= 1.0:
            raise ConfigError(key, f"must lie in [0, 1], got {v}")
        if v < 0:
            raise ConfigError(key, f"must be non-negative, got {v}")
        return v
    if key in _CHOICES:
        if value not in _CHOICES[key]:
            raise ConfigError(key, f"must be one of {', '.join(_CHOICES[key])}, got {value!r}")
        return value
    if key == "timing":
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true or false, got {value!r}")
        return value
    if key in _PATHS:
        if not isinstance(value, str) or not value:
            raise ConfigError(key, f"expected a path string, got {value!r}")
        return value
    if key == "layers":
        if not isinstance(value, str):
            raise ConfigError(key, f"expected e.g. '14:11:9', a preset or 'pyramid', got {value!r}")
        if value != "pyramid":
            try:
                NetworkSpec(value)
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
        return value
    if key == "presets":
        out = []
        for p in _as_list(key, value):
            try:
                out.append(":".join(map(str, NetworkSpec(str(p)).layer_sizes)))
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
        if not out:
            raise ConfigError(key, "needs at least one architecture")
        return tuple(out)
    if key == "methods":
        out = tuple(_as_list(key, value))
        bad = [m for m in out if m not in METHODS]
        if bad or not out:
            raise ConfigError(key, f"methods must be drawn from {', '.join(METHODS)}, got {value!r}")
        return out
    if key == "seeds":
        out = tuple(_as_int(key, s) for s in _as_list(key, value))
        if not out:
            raise ConfigError(key, "needs at least one seed")
        return out
    if key == "fixed":
        return tuple(str(s) for s in _as_list(key, value))
    if key == "valid_range":
        vals = [_as_float(key, v) for v in _as_list(key, value)]
        if len(vals) != 2 or not vals[0] < vals[1]:
            raise ConfigError(key, f"expected [min, max] with min < max, got {value!r}")
        return tuple(vals)
    raise ConfigError(key, "unknown key")


def validate_config(file, overrides, command=None):
    """Resolve a :class:`RunConfig` from a TOML file and flag overrides.

    Flag values win over file values; ``None`` overrides are ignored.
    Every diagnostic names the offending key.
    """
    values = {}
    if file is not None:
        path = Path(file)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            with path.open("rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("<file>", f"{path}: {exc}") from None
        values.update(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    command = command or values.pop("command", None)
    values.pop("command", None)
    if command not in COMMANDS:
        raise ConfigError("command", f"must be one of {', '.join(COMMANDS)}, got {command!r}")

    known = {f.name for f in fields(RunConfig)} - {"command"}
    resolved = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(key, "unknown key")
        resolved[key] = _coerce(key, value)
    for key in _REQUIRED[command]:
        if resolved.get(key) is None:
            raise ConfigError(key, f"required by '{command}' but not set")
    if resolved.get("subset_method") == "explicit-list" and not resolved.get("fixed"):
        raise ConfigError("fixed", "explicit-list subset selection needs a fixed sensor list")
    return RunConfig(command=command, **resolved)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return json.dumps(str(v))


def write_config_echo(cfg, path):
    """Resolved config as TOML that ``--config`` accepts again."""
    lines = [f"# sensorfill {__version__}"]
    for key, value in asdict(cfg).items():
        if value is None:
            continue
        if key in _PATHS and key != "out_dir":
            value = str(Path(value).resolve())
        lines.append(f"{key} = {_toml_value(value)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- commands ------------------------------------------------------------

def _load_dataset(cfg):
    return load_csv(cfg.dataset, valid_range=cfg.valid_range, missing=cfg.missing)


def _split_for(cfg, d):
    if cfg.subset_method == "explicit-list":
        return select_subsets(d, method="explicit-list", fixed_ids=cfg.fixed)
    if cfg.fixed:
        return select_subsets(d, method="explicit-list", fixed_ids=cfg.fixed)
    return select_subsets(d, cfg.n_fixed, "greedy-correlation")


def _spec_for(cfg, split, layers=None):
    layers = layers or cfg.layers
    if layers == "pyramid":
        return NetworkSpec.pyramid(len(split.fixed_ids), len(split.moved_ids),
                                   hidden_activation=cfg.activation)
    return NetworkSpec(parse_layers(layers), cfg.activation).bind(split)


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_report(obj, out, stem, fmt):
    written = []
    if fmt in ("json", "both"):
        (out / f"{stem}.json").write_text(obj.to_json(), encoding="utf-8")
        written.append(out / f"{stem}.json")
    if fmt in ("csv", "both"):
        obj.write_csv(out / f"{stem}.csv")
        written.append(out / f"{stem}.csv")
    return written


def cmd_synth(cfg, out):
    if cfg.field:
        field = load_field_config(cfg.field)
    else:
        field = reference_field_config()
    updates = {}
    if cfg.samples is not None:
        updates["samples"] = cfg.samples
    if cfg.noise_sd is not None:
        updates["noise_sd"] = cfg.noise_sd
    if cfg.seed is not None:
        updates["seed"] = cfg.seed
    field = replace(field, **updates)
    d = gen_synthetic(field)
    path = out / "dataset.csv"
    write_csv(d, path)
    print(f"wrote {path} ({d.n_samples} samples, {d.n_sensors} sensors)")


def cmd_train(cfg, out):
    d = _load_dataset(cfg)
    split = _split_for(cfg, d)
    spec = _spec_for(cfg, split).with_seed(cfg.run_seed)
    tcfg = cfg.train_config()
    meta = {"train": tcfg.to_dict(), "dataset_sha256": _file_digest(cfg.dataset),
            "n_samples": int(d.n_samples), "version": __version__}
    model, trace = fit_model(d, split, spec, tcfg, cfg.normalization, meta)
    model.save(out / "model.json")
    write_trace_csv(trace, out / "trace.csv")
    write_reconstruction_csv(reconstruct(model, d), out / "predictions.csv")
    print(f"trained {':'.join(map(str, spec.layer_sizes))} with {tcfg.method}: "
          f"SSE {trace.records[0].sse:.6g} -> {trace.final_sse:.6g} "
          f"in {len(trace.records) - 1} iterations")


def cmd_evaluate(cfg, out):
    d = _load_dataset(cfg)
    split = _split_for(cfg, d)
    spec = _spec_for(cfg, split)
    report = cross_validate(d, split, spec, cfg.train_config(), cfg.k, cfg.run_seed,
                            cfg.normalization, cfg.jobs)
    _write_report(report, out, "report", cfg.format)
    for f in report.folds:
        print(f"fold {f.fold}: train {f.n_train} test {f.n_test}  "
              f"test SSE {f.test_sse:.6g}  abs error {f.test_abs_error:.4f} C")
    print(f"mean abs error {report.mean_abs_error:.4f} C (sd {report.std_abs_error:.4f})")


def cmd_compare(cfg, out):
    d = _load_dataset(cfg)
    split = _split_for(cfg, d)
    for p in cfg.presets:
        NetworkSpec(p).bind(split)
    seeds = cfg.seeds or (cfg.run_seed,)
    table = compare_methods(d, split, cfg.presets, cfg.train_config(), cfg.k, seeds,
                            cfg.methods, cfg.activation, cfg.normalization, cfg.jobs)
    _write_report(table, out, "report", cfg.format)
    print(table.format())


def cmd_predict(cfg, out):
    model = SavedModel.load(cfg.model)
    inputs = load_csv(cfg.inputs, valid_range=model.valid_range, missing=cfg.missing,
                      min_samples=1, min_sensors=1)
    rec = reconstruct(model, inputs)
    write_reconstruction_csv(rec, out / "predictions.csv")
    print(f"wrote {out / 'predictions.csv'} ({len(rec.timestamps)} rows, "
          f"{rec.n_clamped} clamped estimates)")


HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "predict": cmd_predict,
}


# -- argument parsing ----------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file of key = value settings")
    common.add_argument("--seed", type=int, help="run seed (default 0)")
    common.add_argument("--out-dir", dest="out_dir", help="output directory (default ./out)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", help="sensor CSV: timestamp column then one column per sensor")
    data.add_argument("--missing", choices=_CHOICES["missing"], help="rows with blank cells")
    data.add_argument("--fixed", help="comma-separated fixed sensor ids (explicit list)")
    data.add_argument("--n-fixed", dest="n_fixed", type=int, help="fixed sensors to pick (default 14)")
    data.add_argument("--subset-method", dest="subset_method", choices=_CHOICES["subset_method"])
    data.add_argument("--normalization", choices=_CHOICES["normalization"])
    data.add_argument("--activation", choices=_CHOICES["activation"])
    data.add_argument("--iterations", type=int, help="training iterations (default 1000)")
    data.add_argument("--switch-fraction", dest="switch_fraction", type=float,
                      help="leading fraction of Rprop iterations in hybrid runs (default 0.1)")
    data.add_argument("--grad-tol", dest="grad_tol", type=float)
    data.add_argument("--no-timing", dest="timing", action="store_const", const=False,
                      help="record zero wall times so outputs are byte-reproducible")

    report = argparse.ArgumentParser(add_help=False)
    report.add_argument("--k", type=int, help="cross-validation folds (default 5)")
    report.add_argument("--jobs", type=int, help="parallel workers (default 1)")
    report.add_argument("--format", choices=_CHOICES["format"], help="report format (default both)")

    parser = _Parser(prog="sensorfill",
                     description="Reconstruct readings at uncovered sensor locations.",
                     epilog=EXIT_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"sensorfill {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset CSV",
                       epilog=EXIT_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--field", help="TOML field config (default: built-in 23-sensor field)")
    p.add_argument("--samples", type=int)
    p.add_argument("--noise-sd", dest="noise_sd", type=float)

    p = sub.add_parser("train", parents=[common, data], help="train a model on a dataset",
                       epilog=EXIT_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--layers", help="layer sizes such as 14:11:9, or 'pyramid'")
    p.add_argument("--method", choices=METHODS)

    p = sub.add_parser("evaluate", parents=[common, data, report], help="k-fold cross-validation",
                       epilog=EXIT_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--layers", help="layer sizes such as 14:11:9, or 'pyramid'")
    p.add_argument("--method", choices=METHODS)

    p = sub.add_parser("compare", parents=[common, data, report],
                       help="cross-validate methods x architectures",
                       epilog=EXIT_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--presets", help="comma-separated architectures (default the three presets)")
    p.add_argument("--methods", help="comma-separated methods (default rprop,bfgs,hybrid)")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")

    p = sub.add_parser("predict", parents=[common], help="reconstruct moved sensors",
                       epilog=EXIT_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--model", help="model.json written by 'train'")
    p.add_argument("--inputs", help="CSV holding (at least) the fixed sensors' columns")
    p.add_argument("--missing", choices=_CHOICES["missing"])
    return parser


def run(argv=None):
    """Run one subcommand; returns the process exit status."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = validate_config(args.config, overrides, args.command)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        HANDLERS[cfg.command](cfg, out)
        write_config_echo(cfg, out / "config.echo")
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        return _fail(EXIT_IO, exc)
    except (FoldError, TrainingError) as exc:
        return _fail(EXIT_TRAINING, exc)
    except (FieldDataError, ShapeError, ValueError, KeyError, json.JSONDecodeError) as exc:
        return _fail(EXIT_DATA, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    return EXIT_OK


def _fail(status, exc):
    message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
    print(f"sensorfill: error: {message}", file=sys.stderr)
    return status


def main(argv=None):
    sys.exit(run(argv))

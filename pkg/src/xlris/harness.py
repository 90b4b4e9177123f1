"""Seeded Monte-Carlo experiment driver, configuration files and result emission.

A configuration is a TOML document with four optional tables::

    [experiment]  trials, variants, tau_typical, tau_other, snr_db, seed, ...
    [sweep]       parameter, values
    [system]      any SystemConfig field
    [estimator]   any EstimatorOptions field

Every key is optional; an empty file yields the full-size default scenario.
See ``docs/config.md`` for the complete schema.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
import tomli_w

from .channel import ChannelSet, SystemConfig, sample_scenario
from .metrics import nmse_terms, pilot_overhead_benchmark, pilot_overhead_proposed, to_db
from .pilots import generate_training, noise_var_for_snr, synthesize_observations
from .pipeline import Dictionaries, EstimatorOptions, build_dictionaries, estimate

log = logging.getLogger(__name__)

BASE_VARIANTS = ("proposed-init-only", "proposed-als", "far-field-baseline", "overhead-only")
CSV_HEADER = ("sweep_value", "variant", "nmse_db", "overhead_proposed", "overhead_benchmark",
              "trials_used", "seed", "runtime_ms")
TRAINING_SCHEMES = ("random-phase", "dft-columns")


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


def parse_variant(label: str) -> tuple[str, int | None]:
    """Split ``"proposed-als:9"`` into the base variant and an iteration override."""
    base, _, iters = label.partition(":")
    if base not in BASE_VARIANTS:
        raise ConfigError(f"unknown estimator variant {label!r}")
    if not iters:
        return base, None
    if base != "proposed-als":
        raise ConfigError(f"only proposed-als takes an iteration count, got {label!r}")
    try:
        n = int(iters)
    except ValueError:
        raise ConfigError(f"bad iteration count in variant {label!r}") from None
    if n < 0:
        raise ConfigError(f"negative iteration count in variant {label!r}")
    return base, n


@dataclass(frozen=True)
class Sweep:
    parameter: str = "J"
    values: tuple = (1, 2, 3, 4, 5, 6)

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ConfigError("sweep values must be nonempty")


_SWEEP_ALIASES = {"J": "n_ue_paths", "iterations": "als_iters", "snr": "snr_db"}
_EXPERIMENT_SWEEPS = ("snr_db", "tau_typical", "tau_other", "tau")


@dataclass(frozen=True)
class ExperimentSpec:
    base: SystemConfig = field(default_factory=SystemConfig)
    sweep: Sweep = field(default_factory=Sweep)
    trials: int = 200
    variants: tuple[str, ...] = ("proposed-init-only", "proposed-als", "far-field-baseline")
    tau_typical: int = 96
    tau_other: int = 96
    output_path: str = "results.csv"
    snr_db: float | None = 10.0      # None: use base.noise_var as given
    seed: int = 0
    estimator: EstimatorOptions = field(default_factory=EstimatorOptions)
    training_scheme: str = "random-phase"
    on_grid: bool = False
    noiseless: bool = False
    nmse_mode: str = "per-user"
    benchmark_phases: int = 24
    overhead_constants: tuple[float, float, float] = (1.0, 1.0, 1.0)
    threads: int = 1
    timing: bool = False

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "variants", tuple(self.variants))
        set_(self, "overhead_constants", tuple(float(c) for c in self.overhead_constants))
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.variants:
            raise ConfigError("at least one variant is required")
        for v in self.variants:
            parse_variant(v)
        if self.tau_typical < 1 or self.tau_other < 1:
            raise ConfigError("tau_typical and tau_other must be >= 1")
        if self.training_scheme not in TRAINING_SCHEMES:
            raise ConfigError(f"unknown training_scheme {self.training_scheme!r}")
        if self.nmse_mode not in ("per-user", "summed"):
            raise ConfigError(f"unknown nmse_mode {self.nmse_mode!r}")
        if self.benchmark_phases < 0:
            raise ConfigError("benchmark_phases must be >= 0")
        if len(self.overhead_constants) != 3:
            raise ConfigError("overhead_constants needs three values")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for value in self.sweep.values:
            cell_setup(self, value)


@dataclass
class ResultRow:
    sweep_value: object
    variant: str
    nmse_db: float
    overhead_proposed: int
    overhead_benchmark: int
    trials_used: int
    seed: int
    runtime_ms: float
    failed_trials: int = 0           # diagnostics only, not serialized


@dataclass
class CellSetup:
    config: SystemConfig
    options: EstimatorOptions
    tau_typical: int
    tau_other: int
    noise_var: float


def cell_setup(spec: ExperimentSpec, value) -> CellSetup:
    """Resolve one sweep value into the concrete scenario and estimator settings."""
    name = _SWEEP_ALIASES.get(spec.sweep.parameter, spec.sweep.parameter)
    config, options = spec.base, spec.estimator
    tau_t, tau_o, snr = spec.tau_typical, spec.tau_other, spec.snr_db
    try:
        if name in _EXPERIMENT_SWEEPS:
            if name == "snr_db":
                snr = float(value)
            elif name == "tau":
                tau_t = tau_o = int(value)
            elif name == "tau_typical":
                tau_t = int(value)
            else:
                tau_o = int(value)
        elif name == "n_users":
            # keep per-user path counts consistent with the new user count
            config = replace(config, n_users=int(value), n_ue_paths=config.n_ue_paths[0])
        elif name in {f.name for f in fields(SystemConfig)}:
            config = replace(config, **{name: value})
        elif name in {f.name for f in fields(EstimatorOptions)}:
            options = replace(options, **{name: value})
        else:
            raise ConfigError(f"unknown sweep parameter {spec.sweep.parameter!r}")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"sweep value {value!r} for {spec.sweep.parameter!r}: {exc}") from None
    if tau_t < 1 or tau_o < 1:
        raise ConfigError("training lengths must be >= 1")
    if spec.training_scheme == "dft-columns" and max(tau_t, tau_o) > config.m_ris:
        raise ConfigError("dft-columns training needs tau <= m_ris")
    noise = config.noise_var if snr is None else noise_var_for_snr(config, snr)
    return CellSetup(config, options, tau_t, tau_o, noise)


def _overheads(spec: ExperimentSpec, config: SystemConfig) -> tuple[int, int]:
    j = max(config.n_ue_paths)
    prop = pilot_overhead_proposed(config.n_users, j, config.n_ue, config.m_ris,
                                   config.n_bs_paths, spec.overhead_constants)
    bench = pilot_overhead_benchmark(config.n_users, spec.benchmark_phases, config.n_bs_paths, j)
    return prop, bench


def trial_rng(seed: int, cell: int, trial: int) -> np.random.Generator:
    """Independent stream per (master seed, sweep cell, trial)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cell, trial)))


def _draw_trial(spec: ExperimentSpec, setup: CellSetup, dicts: Dictionaries, rng):
    cfg = setup.config
    channels = sample_scenario(cfg, rng, on_grid=spec.on_grid, ue_dict=dicts.ue, ris_dict=dicts.ris)
    patterns = [generate_training(cfg.m_ris, setup.tau_typical if k == 0 else setup.tau_other,
                                  spec.training_scheme, rng) for k in range(cfg.n_users)]
    noise = 0.0 if spec.noiseless else setup.noise_var
    return channels, synthesize_observations(channels, patterns, cfg.tx_power, noise, rng)


def _run_variant(spec, setup, dicts, label, channels: ChannelSet, observations):
    base, iters = parse_variant(label)
    if base == "proposed-init-only":
        iters = 0
    d = dicts["far"] if base == "far-field-baseline" else dicts["polar"]
    run = estimate(observations, setup.config, d, channels.ris_angle_for, setup.options,
                   noiseless=spec.noiseless, als_iters=iters)
    num, den, _ = nmse_terms(run.estimates, channels, spec.nmse_mode)
    return num, den


def _run_trial(spec, setup, dicts, labels, cell, trial):
    rng = trial_rng(spec.seed, cell, trial)
    channels, observations = _draw_trial(spec, setup, dicts["polar"], rng)
    out = {}
    for label in labels:
        t0 = time.perf_counter()
        try:
            out[label] = _run_variant(spec, setup, dicts, label, channels, observations)
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            log.warning("cell %d trial %d variant %s failed: %s", cell, trial, label, exc)
            out[label] = None
        out[label, "time"] = time.perf_counter() - t0
    return out


def run_experiment(spec: ExperimentSpec) -> list[ResultRow]:
    """One row per (sweep value, variant); results depend only on the ExperimentSpec and its seed."""
    rows: list[ResultRow] = []
    estimators = [v for v in spec.variants if parse_variant(v)[0] != "overhead-only"]
    for cell, value in enumerate(spec.sweep.values):
        setup = cell_setup(spec, value)
        prop, bench = _overheads(spec, setup.config)
        results = []
        if estimators:
            polar = build_dictionaries(setup.config, setup.options)
            dicts = {"polar": polar, "far": Dictionaries(polar.ue, polar.ris.far_field_only())}
            jobs = range(spec.trials)
            if spec.threads > 1:
                with ThreadPoolExecutor(spec.threads) as pool:
                    results = list(pool.map(
                        lambda t: _run_trial(spec, setup, dicts, estimators, cell, t), jobs))
            else:
                results = [_run_trial(spec, setup, dicts, estimators, cell, t) for t in jobs]
        for label in spec.variants:
            if parse_variant(label)[0] == "overhead-only":
                rows.append(ResultRow(value, label, math.nan, prop, bench, 0, spec.seed, 0.0))
                continue
            num = den = elapsed = 0.0
            used = failed = 0
            for res in results:              # fixed trial order: sums are reproducible
                elapsed += res[label, "time"]
                if res[label] is None:
                    failed += 1
                    continue
                num += res[label][0]
                den += res[label][1]
                used += 1
            if failed:
                log.warning("sweep value %r, %s: %d of %d trials failed",
                            value, label, failed, spec.trials)
            nmse_db = to_db(num / den) if used and den > 0 else math.nan
            runtime = 1e3 * elapsed if spec.timing else 0.0
            rows.append(ResultRow(value, label, nmse_db, prop, bench, used, spec.seed,
                                  runtime, failed))
    return rows


def overhead_rows(spec: ExperimentSpec) -> list[ResultRow]:
    """Formula-only rows over the sweep (no estimation)."""
    return run_experiment(replace(spec, variants=("overhead-only",)))


# ---------------------------------------------------------------- emission

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(x).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6g}"
    return str(x)


def row_record(row: ResultRow) -> dict:
    return {name: getattr(row, name) for name in CSV_HEADER}


def format_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([_fmt(v) for v in row_record(row).values()])
    return buf.getvalue()


def _json_value(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(f"{float(x):.6g}")
        return x if math.isfinite(x) else _fmt(x)   # nan/inf as strings keep the document valid
    return x


def format_json(rows: list[ResultRow]) -> str:
    doc = {"fields": list(CSV_HEADER),
           "rows": [{k: _json_value(v) for k, v in row_record(r).items()} for r in rows]}
    return json.dumps(doc, indent=2) + "\n"


def emit_results(rows: list[ResultRow], path: str | Path | None, fmt: str = "csv") -> str:
    """Write ``rows`` as CSV or JSON to ``path`` (``None`` or ``"-"``: return text only)."""
    if fmt == "csv":
        text = format_csv(rows)
    elif fmt == "json":
        text = format_json(rows)
    else:
        raise ValueError(f"unknown output format {fmt!r}")
    if path is not None and str(path) != "-":
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write results to {path}: {exc.strerror or exc}") from exc
    return text


# ---------------------------------------------------------------- config files

_SECTIONS = ("experiment", "sweep", "system", "estimator")
_EXPERIMENT_KEYS = [f.name for f in fields(ExperimentSpec) if f.name not in ("base", "sweep", "estimator")]


def _check_type(section: str, key: str, value, default):
    where = f"[{section}] {key}"
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list)
    else:                            # optional numeric fields
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if not ok:
        raise ConfigError(f"{where}: unexpected value {value!r}")
    if isinstance(value, list):
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected a list of numbers")
        return tuple(value)
    return value


def _section_values(cls, section: str, table: dict) -> dict:
    defaults = {f.name: f for f in fields(cls)}
    out = {}
    for key, value in table.items():
        if key not in defaults:
            raise ConfigError(f"[{section}] {key}: unknown key")
        f = defaults[key]
        default = f.default if f.default is not MISSING else f.default_factory()
        if key == "n_ue_paths" and isinstance(value, list):
            default = ()
        out[key] = _check_type(section, key, value, default)
    return out


def spec_from_dict(doc: dict) -> ExperimentSpec:
    for name, table in doc.items():
        if name not in _SECTIONS:
            raise ConfigError(f"{name}: unknown section")
        if not isinstance(table, dict):
            raise ConfigError(f"{name}: expected a table")
    sys_vals = _section_values(SystemConfig, "system", doc.get("system", {}))
    est_vals = _section_values(EstimatorOptions, "estimator", doc.get("estimator", {}))
    try:
        base = SystemConfig(**sys_vals)
    except ValueError as exc:
        raise ConfigError(f"[system] {exc}") from None
    try:
        estimator = EstimatorOptions(**est_vals)
    except ValueError as exc:
        raise ConfigError(f"[estimator] {exc}") from None

    sweep_tab = dict(doc.get("sweep", {}))
    for key in sweep_tab:
        if key not in ("parameter", "values"):
            raise ConfigError(f"[sweep] {key}: unknown key")
    if "parameter" in sweep_tab and not isinstance(sweep_tab["parameter"], str):
        raise ConfigError("[sweep] parameter: expected a string")
    if "values" in sweep_tab and not isinstance(sweep_tab["values"], list):
        raise ConfigError("[sweep] values: expected a list")
    sweep = Sweep(**sweep_tab)

    exp = dict(doc.get("experiment", {}))
    defaults = ExperimentSpec.__dataclass_fields__
    kwargs = {}
    for key, value in exp.items():
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"[experiment] {key}: unknown key")
        if key == "snr_db":
            if isinstance(value, str) and value.lower() in ("off", "none"):
                kwargs[key] = None
                continue
            default = 0.0
        elif key == "variants":
            if not (isinstance(value, list) and all(isinstance(v, str) for v in value)):
                raise ConfigError("[experiment] variants: expected a list of strings")
            kwargs[key] = tuple(value)
            continue
        else:
            f = defaults[key]
            default = f.default
        kwargs[key] = _check_type("experiment", key, value, default)
    return ExperimentSpec(base=base, sweep=sweep, estimator=estimator, **kwargs)


def spec_to_dict(spec: ExperimentSpec) -> dict:
    def clean(d: dict) -> dict:
        out = {}
        for k, v in d.items():
            if v is None:
                continue
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    exp = {k: getattr(spec, k) for k in _EXPERIMENT_KEYS}
    if exp["snr_db"] is None:
        exp["snr_db"] = "off"
    return {
        "experiment": clean(exp),
        "sweep": {"parameter": spec.sweep.parameter, "values": list(spec.sweep.values)},
        "system": clean(asdict(spec.base)),
        "estimator": clean(spec.estimator.to_dict()),
    }


def load_config(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None
    return loads_config(text, str(path))


def loads_config(text: str, source: str = "<config>") -> ExperimentSpec:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return spec_from_dict(doc)


def dumps_config(spec: ExperimentSpec) -> str:
    return tomli_w.dumps(spec_to_dict(spec))


def save_config(spec: ExperimentSpec, path: str | Path) -> None:
    Path(path).write_text(dumps_config(spec), encoding="utf-8")


# ---------------------------------------------------------------- presets

def _fig2_desk() -> ExperimentSpec:
    base = SystemConfig(n_bs=32, m_ris=64, n_ue=8, n_users=2, n_bs_paths=2, n_ue_paths=2,
                        dist_ris_ue_range=(1.0, 10.0))
    est = EstimatorOptions(polar_angle_factor=4, polar_min_distance=0.8, virtual_sparsity=2,
                           projection="ls")
    return ExperimentSpec(base=base, sweep=Sweep("J", (1, 2, 3, 4)), trials=200,
                          variants=("proposed-init-only", "proposed-als:1", "proposed-als",
                                    "proposed-als:9", "far-field-baseline"),
                          tau_typical=48, tau_other=48, output_path="fig2-desk.csv",
                          estimator=est)


def _fig2() -> ExperimentSpec:
    return ExperimentSpec(sweep=Sweep("J", (1, 2, 3, 4, 5, 6)),
                          variants=("proposed-init-only", "proposed-als:1", "proposed-als",
                                    "proposed-als:9", "far-field-baseline"),
                          output_path="fig2.csv")


def _fig3() -> ExperimentSpec:
    return ExperimentSpec(sweep=Sweep("J", (1, 2, 3, 4, 5, 6)), trials=1,
                          variants=("overhead-only",), output_path="fig3.csv")


def _exact_oracle() -> ExperimentSpec:
    base = SystemConfig(n_bs=16, m_ris=32, n_ue=4, n_users=2, n_bs_paths=2, n_ue_paths=1,
                        dist_ris_ue_range=(0.3, 1.0))
    est = EstimatorOptions(polar_min_distance=0.3)
    return ExperimentSpec(base=base, sweep=Sweep("J", (1,)), trials=1,
                          variants=("proposed-init-only", "proposed-als"),
                          tau_typical=32, tau_other=32, on_grid=True, noiseless=True,
                          snr_db=None, output_path="exact-oracle.csv", estimator=est)


PRESETS = {
    "fig2": _fig2,
    "fig2-desk": _fig2_desk,
    "fig3": _fig3,
    "exact-oracle": _exact_oracle,
}


def preset(name: str) -> ExperimentSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None

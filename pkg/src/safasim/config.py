"""Run and sweep configuration.

A run config is a TOML document with the sections ``[run]``,
``[federation]``, ``[learner]``, ``[timing]``, ``[population]`` and
``[data]``. Every key has a default taken from the selected task preset, so
a file only needs to name what it changes. Keys can also be overridden on
the command line as ``section.key=value``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
import tomli_w

from .env import DEFAULT_CLIENT_BW, DEFAULT_MODEL_SIZE_BITS, DEFAULT_SERVER_BW
from .protocol import PROTOCOLS

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunSection:
    protocol: str = "safa"
    task: str = "regression"
    rounds: int = 100
    master_seed: int = 0
    output_dir: str = "results"


@dataclass
class FederationSection:
    m: int = 5
    C: float = 0.1
    crash_prob: float = 0.0
    lag_tolerance: int = 5


@dataclass
class LearnerSection:
    learning_rate: float = 1e-4
    epochs: int = 3
    batch_size: int = 5
    reg: float = 1e-4
    fit_intercept: bool = True


@dataclass
class TimingSection:
    model_size: float = DEFAULT_MODEL_SIZE_BITS
    client_bw: float = DEFAULT_CLIENT_BW
    server_bw: float = DEFAULT_SERVER_BW
    t_lim: float = 830.0
    # "auto" means model_size / server_bw
    per_model_dist_time: float | str = 0.404
    cap_mode: str = "tables"


@dataclass
class PopulationSection:
    perf_lambda: float = 1.0
    base_rate: float = 2.0
    partition_std: float = 0.3


@dataclass
class DataSection:
    path: str = ""
    n: int = 506
    d: int = 13
    num_classes: int = 2
    data_seed: int = 0


SECTIONS = {
    "run": RunSection,
    "federation": FederationSection,
    "learner": LearnerSection,
    "timing": TimingSection,
    "population": PopulationSection,
    "data": DataSection,
}

TASK_KINDS = {
    "regression": "regression",
    "classify": "classification",
    "svm": "binary_margin",
}

# Per-task defaults. The plain names follow the reference experimental
# setup (client count, rounds, E, B, learning rate, round time limit); the
# synthetic-* variants keep that federation shape but use step sizes that
# make progress within the round budget on the generated data.
PRESETS = {
    "regression": {
        "run": {"rounds": 100},
        "federation": {"m": 5, "C": 0.1},
        "learner": {"learning_rate": 1e-4, "epochs": 3, "batch_size": 5},
        "timing": {"t_lim": 830.0, "per_model_dist_time": 0.404},
        "population": {"base_rate": 2.0},
        "data": {"n": 506, "d": 13},
    },
    "classify": {
        "run": {"rounds": 50},
        "federation": {"m": 100, "C": 0.1},
        "learner": {"learning_rate": 1e-3, "epochs": 5, "batch_size": 40},
        "timing": {"t_lim": 5600.0, "per_model_dist_time": 0.204},
        "population": {"base_rate": 1.0},
        "data": {"n": 5000, "d": 64, "num_classes": 10},
    },
    "svm": {
        "run": {"rounds": 100},
        "federation": {"m": 500, "C": 0.1},
        "learner": {"learning_rate": 1e-2, "epochs": 5, "batch_size": 100},
        "timing": {"t_lim": 1620.0, "per_model_dist_time": 0.404},
        "population": {"base_rate": 1.0},
        "data": {"n": 5000, "d": 35},
    },
}
PRESETS["synthetic-regression"] = {**PRESETS["regression"],
                                   "learner": {"learning_rate": 2e-3, "epochs": 3, "batch_size": 5}}
PRESETS["synthetic-classify"] = {**PRESETS["classify"],
                                 "learner": {"learning_rate": 0.1, "epochs": 5, "batch_size": 40}}
PRESETS["synthetic-svm"] = {**PRESETS["svm"],
                            "learner": {"learning_rate": 0.5, "epochs": 5, "batch_size": 100}}


def task_kind(task: str) -> str:
    return TASK_KINDS[task.removeprefix("synthetic-")]


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    federation: FederationSection = field(default_factory=FederationSection)
    learner: LearnerSection = field(default_factory=LearnerSection)
    timing: TimingSection = field(default_factory=TimingSection)
    population: PopulationSection = field(default_factory=PopulationSection)
    data: DataSection = field(default_factory=DataSection)

    # -- construction -------------------------------------------------------

    @classmethod
    def for_task(cls, task="regression", **overrides) -> "RunConfig":
        """Defaults for ``task``, then ``overrides`` keyed ``"section.key"``."""
        if task not in PRESETS:
            raise ConfigError(f"run.task: unknown task {task!r}; choose from {sorted(PRESETS)}")
        cfg = cls()
        cfg.run.task = task
        for section, values in PRESETS[task].items():
            for key, value in values.items():
                setattr(getattr(cfg, section), key, value)
        for dotted, value in overrides.items():
            cfg.set(dotted, value)
        return cfg

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown section(s): {sorted(unknown)}")
        task = data.get("run", {}).get("task", "regression")
        cfg = cls.for_task(task)
        for section, values in data.items():
            if not isinstance(values, dict):
                raise ConfigError(f"[{section}] must be a table")
            for key, value in values.items():
                cfg.set(f"{section}.{key}", value)
        return cfg

    @classmethod
    def from_toml(cls, text: str) -> "RunConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_toml(Path(path).read_text())

    # -- access -------------------------------------------------------------

    def set(self, dotted: str, value):
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigError(f"{dotted}: expected 'section.key' with section in {sorted(SECTIONS)}")
        obj = getattr(self, section)
        known = {f.name: f for f in fields(obj)}
        if key not in known:
            raise ConfigError(f"{dotted}: unknown key; valid keys are {sorted(known)}")
        setattr(obj, key, _coerce(dotted, value, known[key].type))

    def get(self, dotted: str):
        section, _, key = dotted.partition(".")
        return getattr(getattr(self, section), key)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **overrides) -> "RunConfig":
        new = RunConfig.from_dict(self.to_dict())
        for dotted, value in overrides.items():
            new.set(dotted, value)
        return new

    # -- validation ---------------------------------------------------------

    def validate(self) -> "RunConfig":
        r, f, lr, t, p, d = self.run, self.federation, self.learner, self.timing, self.population, self.data
        checks = [
            (r.protocol in PROTOCOLS, "run.protocol", f"must be one of {list(PROTOCOLS)}"),
            (r.task in PRESETS, "run.task", f"must be one of {sorted(PRESETS)}"),
            (r.rounds >= 0, "run.rounds", "must be >= 0"),
            (r.master_seed >= 0, "run.master_seed", "must be >= 0"),
            (f.m >= 1, "federation.m", "must be >= 1"),
            (0 < f.C <= 1, "federation.C", "must lie in (0, 1]"),
            (0 <= f.crash_prob <= 1, "federation.crash_prob", "must lie in [0, 1]"),
            (f.lag_tolerance >= 1, "federation.lag_tolerance", "must be >= 1"),
            (lr.learning_rate >= 0, "learner.learning_rate", "must be >= 0"),
            (lr.epochs >= 1, "learner.epochs", "must be >= 1"),
            (lr.batch_size >= 1, "learner.batch_size", "must be >= 1"),
            (lr.reg >= 0, "learner.reg", "must be >= 0"),
            (t.model_size >= 0, "timing.model_size", "must be >= 0"),
            (t.client_bw > 0, "timing.client_bw", "must be > 0"),
            (t.server_bw > 0, "timing.server_bw", "must be > 0"),
            (t.t_lim > 0, "timing.t_lim", "must be > 0"),
            (t.per_model_dist_time == "auto" or t.per_model_dist_time >= 0,
             "timing.per_model_dist_time", "must be >= 0 or 'auto'"),
            (t.cap_mode in ("tables", "literal"), "timing.cap_mode", "must be 'tables' or 'literal'"),
            (p.perf_lambda > 0, "population.perf_lambda", "must be > 0"),
            (p.base_rate > 0, "population.base_rate", "must be > 0"),
            (p.partition_std >= 0, "population.partition_std", "must be >= 0"),
            (d.n >= 1, "data.n", "must be >= 1"),
            (d.d >= 1, "data.d", "must be >= 1"),
            (d.num_classes >= 2, "data.num_classes", "must be >= 2"),
        ]
        for ok, name, msg in checks:
            if not ok:
                raise ConfigError(f"{name}: {msg} (got {self.get(name)!r})")
        if not d.path and f.m > d.n:
            raise ConfigError(f"federation.m: {f.m} clients but only data.n = {d.n} samples")
        if d.path and not Path(d.path).is_file():
            raise ConfigError(f"data.path: file not found: {d.path}")
        return self


def _coerce(name, value, annotation):
    """Convert ``value`` to the field's declared type, rejecting nonsense."""
    ann = str(annotation)
    if ann == "float | str":
        if isinstance(value, str) and value == "auto":
            return value
        ann = "float"
    try:
        if ann == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false"):
                return value.lower() == "true"
            raise ValueError
        if ann == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if ann == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected {ann}, got {value!r}") from None


def parse_override(text: str):
    """Split ``section.key=value``; the value is parsed as a TOML literal when possible."""
    key, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip(), value


def derive_seed(master_seed: int, coords) -> int:
    """Stable 63-bit seed for a sweep cell from its coordinates."""
    blob = json.dumps([int(master_seed), sorted((str(k), v) for k, v in dict(coords).items())])
    return int.from_bytes(hashlib.sha256(blob.encode()).digest()[:8], "big") >> 1


SWEEP_AXES = {
    "C": "federation.C",
    "cr": "federation.crash_prob",
    "tau": "federation.lag_tolerance",
    "protocol": "run.protocol",
    "seed": "run.master_seed",
}


@dataclass
class SweepSpec:
    """Base config plus value lists for any of C, cr, tau, protocol, seed.

    Each cell's seed is derived from the base seed and the cell coordinates,
    leaving out ``protocol`` so that every protocol faces the same
    environment for the same remaining coordinates.
    """

    base: RunConfig
    axes: dict

    def __post_init__(self):
        for name in self.axes:
            if name not in SWEEP_AXES:
                raise ConfigError(f"sweep axis {name!r} not one of {sorted(SWEEP_AXES)}")
            if not list(self.axes[name]):
                raise ConfigError(f"sweep axis {name!r} has no values")

    def cells(self):
        """Yield (coords, config) over the cartesian product, in a fixed order."""
        names = [n for n in SWEEP_AXES if n in self.axes]
        for combo in itertools.product(*(list(self.axes[n]) for n in names)):
            coords = dict(zip(names, combo))
            seed_coords = {k: v for k, v in coords.items() if k != "protocol"}
            cfg = self.base.replace(**{SWEEP_AXES[k]: v for k, v in coords.items()})
            cfg.run.master_seed = derive_seed(self.base.run.master_seed, seed_coords)
            yield coords, cfg

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        data = dict(data)
        axes = data.pop("sweep", None)
        if not axes:
            raise ConfigError("sweep spec needs a [sweep] table of axis value lists")
        return cls(RunConfig.from_dict(data), dict(axes))

    @classmethod
    def load(cls, path) -> "SweepSpec":
        try:
            data = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"sweep spec is not valid TOML: {exc}") from exc
        return cls.from_dict(data)

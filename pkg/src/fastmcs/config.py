"""Experiment configuration: a flat TOML table with a fixed schema.

Every key is optional except where noted; unknown keys are rejected so a
typo cannot silently fall back to a default. Paths are resolved relative to
the config file.

Model source (exactly one of)
    model        bundled name: ``wind``, ``gaussian``, ``beta``, ``gamma``, ``laplace``
    model_file   JSON model file (as written by ``identify`` or ``ItoModel.save``)
    a, b         preset parameters (presets only)
    x0           initial state, scalar or list (default: the model's reference state)

Grid: ``t0``, ``T``, ``h``, ``substeps`` (Euler-Maruyama refinement).

Sampling: ``method`` (run only: ``fast`` or ``traditional``), ``N``,
``N_traditional`` and ``N_fast`` (compare), ``K``, ``seed``, ``mode``
(``prefix``/``rerun``), ``decorrelate``, ``placement``, ``sampling``
(``lhs``/``srs``), ``ito_correction``, ``batch_size``.

Response: ``rrf`` = ``frequency`` (parameters ``H D R Tg Pbase wind_base
schedule trip_time lost_power window_start window_end``), ``endpoint``, or
``external`` with ``rrf_command``.

Output: ``output_dir``.
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .exceptions import ConfigError
from .ito import PRESET_NAMES, ItoModel, model_from_name
from .sampling import PLACEMENTS
from .sde import TimeGrid
from .system import EndpointRRF, ExternalSimulatorRRF, FrequencyModel, FrequencyResponseRRF, TripEvent


@dataclass(frozen=True)
class ExperimentConfig:
    model: str | None = None
    model_file: str | None = None
    a: float | None = None
    b: float | None = None
    x0: object = None
    t0: float = 0.0
    T: float = 60.0
    h: float = 0.1
    substeps: int = 1
    method: str = "fast"
    N: int = 21
    N_traditional: int = 1000
    N_fast: int = 200
    K: int = 6
    seed: int = 0
    mode: str = "prefix"
    decorrelate: bool = True
    placement: str = "uniform_in_stratum"
    sampling: str = "lhs"
    ito_correction: bool = True
    batch_size: int = 1024
    rrf: str = "frequency"
    rrf_command: str | None = None
    H: float = 5.0
    D: float = 1.0
    R: float = 0.05
    Tg: float = 0.5
    Pbase: float = 10_000.0
    wind_base: float = 3_000.0
    schedule: float | None = None
    trip_time: float = 1.0
    lost_power: float = 0.08
    window_start: float | None = None
    window_end: float | None = None
    output_dir: str = "fastmcs-out"
    base_dir: str = "."

    # ------------------------------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "ExperimentConfig":
        known = {f.name for f in fields(cls)} - {"base_dir"}
        for key in raw:
            if key not in known:
                raise ConfigError("unknown key", key)
        values = {}
        for f in fields(cls):
            if f.name in raw:
                values[f.name] = _coerce(f.name, raw[f.name], f.type)
        cfg = cls(**values, base_dir=str(base_dir))
        cfg.check()
        return cfg

    @classmethod
    def loads(cls, text: str, base_dir=".", source: str = "<config>") -> "ExperimentConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{source}: {exc}") from None
        return cls.from_dict(raw, base_dir)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        return cls.loads(text, path.parent, str(path))

    def replace(self, **changes) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.check()
        return cfg

    def check(self):
        if (self.model is None) == (self.model_file is None):
            raise ConfigError("give exactly one of 'model' and 'model_file'", "model")
        if self.model is not None and self.model.lower() not in PRESET_NAMES:
            raise ConfigError(f"unknown preset {self.model!r}; choose from {', '.join(PRESET_NAMES)}", "model")
        if self.model_file is not None and not self.resolve(self.model_file).is_file():
            raise ConfigError(f"file {self.model_file} does not exist", "model_file")
        choices = {
            "method": ("fast", "traditional"), "mode": ("prefix", "rerun"),
            "placement": PLACEMENTS, "sampling": ("lhs", "srs"),
            "rrf": ("frequency", "endpoint", "external"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"must be one of {allowed}, got {getattr(self, key)!r}", key)
        for key in ("substeps", "N", "N_traditional", "N_fast", "K", "batch_size"):
            if getattr(self, key) < 1:
                raise ConfigError("must be >= 1", key)
        if self.seed < 0:
            raise ConfigError("must be >= 0", "seed")
        for key in ("h", "H", "R", "Tg", "Pbase"):
            if not getattr(self, key) > 0:
                raise ConfigError("must be > 0", key)
        if self.rrf == "external" and not self.rrf_command:
            raise ConfigError("rrf = 'external' needs rrf_command", "rrf_command")
        try:
            self.grid()
        except ValueError as exc:
            raise ConfigError(str(exc), "h") from None

    def resolve(self, name) -> Path:
        p = Path(name)
        return p if p.is_absolute() else Path(self.base_dir) / p

    # ------------------------------------------------------------------
    def grid(self) -> TimeGrid:
        return TimeGrid(self.t0, self.T, self.h)

    def build_model(self) -> ItoModel:
        try:
            if self.model_file is not None:
                model = ItoModel.load(self.resolve(self.model_file))
            else:
                model = model_from_name(self.model, self.a, self.b)
        except (ValueError, KeyError, TypeError) as exc:
            field = "model_file" if self.model_file is not None else "model"
            raise ConfigError(str(exc), field) from None
        if self.x0 is not None:
            x0 = self.x0 if isinstance(self.x0, list) else [self.x0]
            if len(x0) != model.m:
                raise ConfigError(f"needs {model.m} values", "x0")
            model = model.with_x0(x0)
        return model

    def build_rrf(self):
        if self.rrf == "endpoint":
            return EndpointRRF()
        if self.rrf == "external":
            return ExternalSimulatorRRF(self.rrf_command)
        window = (
            self.t0 if self.window_start is None else self.window_start,
            self.T if self.window_end is None else self.window_end,
        )
        try:
            model = FrequencyModel(self.H, self.D, self.R, self.Tg, self.Pbase, self.wind_base, self.schedule)
            return FrequencyResponseRRF(model, TripEvent(self.trip_time, self.lost_power), window)
        except ValueError as exc:
            raise ConfigError(str(exc), "rrf") from None


def _coerce(name, value, annotation):
    kind = str(annotation)
    if name == "x0":
        items = value if isinstance(value, list) else [value]
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in items):
            raise ConfigError("must be a number or a list of numbers", name)
        return [float(v) for v in items] if isinstance(value, list) else float(value)
    if kind.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"must be true or false, got {value!r}", name)
        return value
    if kind.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"must be an integer, got {value!r}", name)
        return value
    if kind.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"must be a finite number, got {value!r}", name)
        return float(value)
    if kind.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"must be a string, got {value!r}", name)
        return value
    return value

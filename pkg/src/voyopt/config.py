"""Pipeline configuration: one JSON document feeding every subcommand."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .core import RouteConfig
from .efficiency import FuelModelCoeffs
from .evaluate import ExperimentConfig
from .ingest import DEFAULT_SCHEMA
from .synth import SynthConfig
from .weather import WeatherThresholds

CONFIG_SCHEMA = "voyopt.config/1"


class ConfigError(ValueError):
    pass


def _dc_to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        if dataclasses.is_dataclass(val):
            val = _dc_to_dict(val)
        elif isinstance(val, tuple):
            val = list(val)
        out[f.name] = val
    return out


def _dc_from_dict(cls, d: dict, where: str):
    """Build dataclass ``cls`` from ``d``; missing keys keep their defaults."""
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    base = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kw = {}
    for name, val in d.items():
        default = getattr(base, name)
        if dataclasses.is_dataclass(default):
            val = _dc_from_dict(type(default), val, f"{where}.{name}")
        elif isinstance(default, tuple) and isinstance(val, list):
            val = tuple(val)
        kw[name] = val
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs.

    ``data_dir`` defaults to ``<out_dir>/data`` and ``grids_manifest`` to the
    one named in the data manifest. ``route`` of ``None`` takes the route
    stored in the data manifest. ``fuel`` is either the string "calibrate" or
    four fixed coefficients. ``seed`` overrides the seeds of the synthetic
    generator and the experiment.
    """

    seed: int = 42
    out_dir: str = "out"
    data_dir: Optional[str] = None
    grids_manifest: Optional[str] = None
    schema: dict = field(default_factory=lambda: dict(DEFAULT_SCHEMA))
    route: Optional[dict] = None
    auto_cruising_threshold: bool = False
    thresholds: WeatherThresholds = WeatherThresholds()
    fuel: Union[str, list] = "calibrate"
    experiment: ExperimentConfig = ExperimentConfig()
    synth: SynthConfig = SynthConfig()

    def __post_init__(self):
        if isinstance(self.fuel, str):
            if self.fuel != "calibrate":
                raise ConfigError("fuel must be \"calibrate\" or a list of four coefficients")
        elif len(self.fuel) != 4:
            raise ConfigError("fixed fuel coefficients need exactly four values")
        if self.route is not None:
            self.route_config()

    # resolved views -----------------------------------------------------------

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else self.out_path / "data"

    def route_config(self) -> Optional[RouteConfig]:
        if self.route is None:
            return None
        try:
            return RouteConfig.from_dict(self.route)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"route: {exc}") from exc

    def fixed_coeffs(self) -> Optional[FuelModelCoeffs]:
        return None if self.fuel == "calibrate" else FuelModelCoeffs(*map(float, self.fuel))

    def synth_config(self) -> SynthConfig:
        return dataclasses.replace(self.synth, seed=self.seed)

    def experiment_config(self) -> ExperimentConfig:
        return dataclasses.replace(self.experiment, seed=self.seed, thresholds=self.thresholds)

    # serialization ------------------------------------------------------------

    def to_dict(self) -> dict:
        d = {"schema_version": CONFIG_SCHEMA}
        d.update(_dc_to_dict(self))
        d["synth"] = self.synth.to_dict()
        # single sources of truth: the global seed and the top-level thresholds
        d["synth"].pop("seed")
        d["experiment"].pop("seed")
        d["experiment"].pop("thresholds")
        d["experiment"]["lstm"].pop("seed")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        version = d.pop("schema_version", CONFIG_SCHEMA)
        if version != CONFIG_SCHEMA:
            raise ConfigError(f"unsupported config schema {version!r}")
        return _dc_from_dict(cls, d, "config")


def load_config(path: Union[str, Path]) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return PipelineConfig.from_dict(doc)



"""
Experiment configuration.

`ExperimentConfig` is a flat dataclass. Every field belongs to one INI
section, recorded in its field metadata, so a configuration file reads

    [system]
    preset = three-level

    [campaign]
    runs = 200

and every key can be overridden from the command line with a flag of the
same name.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from ._base import ConfigError

if TYPE_CHECKING:
    from collections.abc import Iterator, Mapping

__all__ = [
    "CHANNEL_NAMES",
    "MODES",
    "PRESETS",
    "ExperimentConfig",
    "apply_overrides",
    "config_fields",
    "load_config",
]

PRESETS = ("two-level", "three-level", "custom")
MODES = ("open-loop-baseline", "forced-nominal", "monte-carlo", "fixed-povm")
CHANNEL_NAMES = (
    "auto", "none", "sigma_y", "phase_damping", "amplitude_damping", "J_y", "depolarizing", "pauli_depolarizing",
    "custom",
)
_CHOICES: dict[str, tuple[str, ...]] = {
    "preset": PRESETS,
    "mode": MODES,
    "true_channel": CHANNEL_NAMES,
    "nominal_channel": CHANNEL_NAMES,
    "sample_target": ("auto", "true", "nominal", "none"),
    "uncertainty_mode": ("fixed", "uniform"),
    "solver": ("auto", "bangbang", "gradient"),
}


def _option(default: Any, section: str, kind: type, help: str) -> Any:
    return dataclasses.field(default=default, metadata={"section": section, "type": kind, "help": help})


@dataclass(frozen=True)
class ExperimentConfig:
    # system
    preset: str = _option("two-level", "system", str, "system preset")
    matrices: str | None = _option(None, "system", str, ".npz file with the custom system matrices")
    true_channel: str = _option("auto", "system", str, "dissipation operator of the true system")
    gamma: float | None = _option(None, "system", float, "true dissipation rate when it is not sampled")
    gamma_min: float = _option(0.0, "system", float, "lower end of the sampled dissipation rate")
    gamma_max: float = _option(0.25, "system", float, "upper end of the sampled dissipation rate")
    nominal_channel: str = _option("auto", "system", str, "dissipation operator of the nominal model")
    nominal_gamma: float = _option(0.0, "system", float, "dissipation rate of the nominal model")
    sample_target: str = _option("auto", "system", str, "which rate is drawn per run: true, nominal or none")
    delta_bar: float = _option(0.0, "system", float, "Hamiltonian uncertainty bound")
    uncertainty_mode: str = _option("fixed", "system", str, "fixed or uniform uncertainty strength")
    # controller
    lambda0: float = _option(0.04, "controller", float, "time weight of the cost")
    ts: float = _option(1.0, "controller", float, "measurement period")
    steps: int = _option(20, "controller", int, "maximum number of measurement steps")
    t_max: float = _option(10.0, "controller", float, "upper limit of the final time")
    solver: str = _option("auto", "controller", str, "auto, bangbang or gradient")
    segments: int = _option(50, "controller", int, "segments of the gradient solver")
    max_switches: int = _option(3, "controller", int, "switches tried by the bang-bang solver")
    max_iterations: int = _option(5000, "controller", int, "iteration cap of the solvers")
    # campaign
    mode: str = _option("monte-carlo", "campaign", str, "what to run")
    runs: int = _option(1000, "campaign", int, "number of Monte-Carlo runs")
    seed: int = _option(0, "campaign", int, "master seed")
    out: str = _option("out", "campaign", str, "output directory")

    def __post_init__(self) -> None:
        for name, choices in _CHOICES.items():
            if getattr(self, name) not in choices:
                raise ConfigError(f"{name} must be one of {', '.join(choices)}, got {getattr(self, name)!r}")
        if self.preset == "custom" and not self.matrices:
            raise ConfigError("The custom preset needs a matrices file")
        if self.runs < 1 or self.steps < 1:
            raise ConfigError("runs and steps must be at least 1")
        if not (self.ts > 0 and self.lambda0 > 0 and self.t_max > 0):
            raise ConfigError("ts, lambda0 and t_max must be positive")
        if min(self.gamma_min, self.nominal_gamma, self.delta_bar) < 0 or (self.gamma is not None and self.gamma < 0):
            raise ConfigError("Rates and uncertainty bounds must be nonnegative")
        if self.gamma_min > self.gamma_max:
            raise ConfigError(f"gamma_min {self.gamma_min} exceeds gamma_max {self.gamma_max}")

    def replace(self, **changes: Any) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def sections(self) -> dict[str, dict[str, Any]]:
        """Settings grouped by INI section, as written to summary.json."""
        result: dict[str, dict[str, Any]] = {}
        for item in config_fields():
            result.setdefault(item.metadata["section"], {})[item.name] = getattr(self, item.name)
        return result


def config_fields() -> Iterator[dataclasses.Field]:
    yield from dataclasses.fields(ExperimentConfig)


def _convert(item: dataclasses.Field, text: str) -> Any:
    text = text.strip()
    if item.default is None and text.lower() in ("", "none"):
        return None
    kind = item.metadata["type"]
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"Invalid value {text!r} for {item.name}: expected {kind.__name__}") from None


def apply_overrides(config: ExperimentConfig, overrides: Mapping[str, Any]) -> ExperimentConfig:
    """
    Replace fields of *config*; string values are converted to the field type.

    ``None`` values are skipped so unset command line flags leave the
    configuration untouched.
    """
    by_name = {item.name: item for item in config_fields()}
    changes = {}
    for name, value in overrides.items():
        if value is None:
            continue
        if name not in by_name:
            raise ConfigError(f"Unknown configuration key {name!r}")
        changes[name] = _convert(by_name[name], value) if isinstance(value, str) else value
    if not changes:
        return config
    try:
        return config.replace(**changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | os.PathLike[str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read an INI file on top of *base* (the defaults if omitted)."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as file:
            parser.read_file(file)
    except OSError as exc:
        raise ConfigError(f"Cannot read configuration {os.fspath(path)!r}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"Malformed configuration {os.fspath(path)!r}: {exc}") from None

    sections = {item.name: item.metadata["section"] for item in config_fields()}
    overrides: dict[str, str] = {}
    for section in parser.sections():
        if section not in sections.values():
            raise ConfigError(f"Unknown section [{section}]")
        for key, value in parser.items(section):
            if sections.get(key) != section:
                raise ConfigError(f"Unknown key {key!r} in section [{section}]")
            overrides[key] = value
    return apply_overrides(base or ExperimentConfig(), overrides)

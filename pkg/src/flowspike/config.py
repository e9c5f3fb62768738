"""Flat key=value run configuration with flag > file > default precedence.

The seed is deliberately mandatory: there is no wall-clock fallback, so
every run is reproducible by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import snn
from .features import HistogramConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# every recognized key with its parser and default
_SCHEMA: dict[str, tuple[type | object, object]] = {
    "seed": (int, None),  # required, no default
    "threads": (int, 1),
    "time_bins": (int, 300),
    "size_bins_per_dir": (int, 150),
    "max_size": (int, 1500),
    "window_s": (float, 60.0),
    "stride_s": (float, 15.0),
    "hidden_size": (int, 100),
    "surrogate_slope": (float, snn.DEFAULT_SLOPE),
    "beta_init": (float, snn.DEFAULT_BETA_INIT),
    "weight_gain": (float, 1.0),
    "mode": (str, snn.MODE_SPIKING),
    "log1p_input": (_parse_bool, False),
    "batch_size": (int, 128),
    "epochs": (int, 30),
    "lr0": (float, 1e-3),
    "adam_beta1": (float, 0.9),
    "adam_beta2": (float, 0.999),
    "adam_eps": (float, 1e-8),
    "plateau_factor": (float, 0.5),
    "plateau_patience": (int, 2),
    "plateau_threshold": (float, 1e-4),
    "min_lr": (float, 1e-6),
    "lambda_reg": (float, 1e-4),
    "flows_per_class": (int, 200),
}


@dataclass
class RunConfig:
    values: dict[str, object]

    def __getattr__(self, name: str):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def histogram(self) -> HistogramConfig:
        return HistogramConfig(
            time_bins=self.time_bins,
            size_bins_per_dir=self.size_bins_per_dir,
            max_size=self.max_size,
            window_s=self.window_s,
            stride_s=self.stride_s,
        )

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(
            seed=self.seed,
            batch_size=self.batch_size,
            epochs=self.epochs,
            lr0=self.lr0,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            plateau_factor=self.plateau_factor,
            plateau_patience=self.plateau_patience,
            plateau_threshold=self.plateau_threshold,
            min_lr=self.min_lr,
            lambda_reg=self.lambda_reg,
            log1p_input=self.log1p_input,
        )


def parse_config_text(text: str) -> dict[str, str]:
    """key = value lines; blank lines and #-comments ignored."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        out[key] = value
    return out


def build_config(
    config_file: str | Path | None = None,
    overrides: dict[str, object] | None = None,
) -> RunConfig:
    """Assemble a RunConfig from defaults, an optional file, and CLI flags
    (flags win).  Raises if the seed never gets set."""
    values = {key: default for key, (_, default) in _SCHEMA.items()}
    if config_file is not None:
        for key, text in parse_config_text(Path(config_file).read_text()).items():
            parser, _ = _SCHEMA[key]
            try:
                values[key] = parser(text)
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    if values["seed"] is None:
        raise ConfigError("seed is mandatory: pass --seed or set it in the config file")
    if values["mode"] not in (snn.MODE_SPIKING, snn.MODE_SMOOTH):
        raise ConfigError(f"mode must be {snn.MODE_SPIKING} or {snn.MODE_SMOOTH}")
    return RunConfig(values)

"""
Experiment configuration: key=value files validated against the documented schema.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from dotenv import dotenv_values

from config import settings
from config.experiment_defaults import EXPERIMENT_KEYS, EXPERIMENTS, ConfigKey
from src.core.clustering import DbscanParams
from src.core.errors import ConfigError
from src.core.gossip import GossipParams
from src.core.netsim import LatencyModel


def _defaults() -> dict[str, str]:
    """Schema defaults, with the environment-driven settings layered on top."""
    raw = {key: spec.default for key, spec in EXPERIMENT_KEYS.items()}
    raw["sim.seed"] = str(settings.SEED)
    raw["crypto.backend"] = settings.CRYPTO_BACKEND
    raw["crypto.hash"] = settings.HASH_NAME
    raw["output.dir"] = settings.OUTPUT_DIR
    raw["data.path"] = settings.GOWALLA_PATH or ""
    return raw


def _parse(key: str, spec: ConfigKey, text: str) -> Any:
    text = text.strip()
    try:
        match spec.kind:
            case "int":
                return int(text)
            case "float":
                return float(text)
            case "str":
                return text
            case "ints":
                return tuple(int(v) for v in text.split(",") if v.strip())
            case "floats":
                return tuple(float(v) for v in text.split(",") if v.strip())
            case "int?":
                return int(text) if text else None
            case "float?":
                return float(text) if text else None
    except ValueError:
        raise ConfigError(f"Invalid value for {key} ({spec.kind}): {text!r}") from None
    raise ConfigError(f"Unknown kind {spec.kind!r} declared for {key}")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Effective configuration of one experiment run.

    `raw` holds the canonical text of every key, `values` the parsed form.
    """
    experiment: str
    raw: Mapping[str, str]
    values: Mapping[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"Unknown configuration key: {key}") from None

    @property
    def seed(self) -> int:
        return self["sim.seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self["output.dir"])

    def config_hash(self) -> str:
        lines = [f"experiment={self.experiment}"] + [f"{k}={v}" for k, v in sorted(self.raw.items())]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:12]

    def with_overrides(self, **overrides: Any) -> ExperimentConfig:
        """Copy with dotted keys given as keyword pairs, e.g. with_overrides(**{"sim.seed": 3})."""
        return build_config(self.experiment, {**self.raw, **{k: _text(v) for k, v in overrides.items()}})

    def latency(self) -> LatencyModel:
        return LatencyModel(base_latency=self["sim.base_latency"], prop_coeff=self["sim.prop_coeff"],
                            jitter=self["sim.jitter"], bandwidth=self["sim.bandwidth"],
                            service_base=self["sim.service_base"])

    def dbscan_params(self) -> DbscanParams | None:
        """Fixed DBSCAN parameters, or None when they are left to calibration."""
        eps1, eps2, minpts = self["dbscan.eps1"], self["dbscan.eps2"], self["dbscan.minpts"]
        given = [v is not None for v in (eps1, eps2, minpts)]
        if not any(given):
            return None
        if not all(given):
            raise ConfigError("dbscan.eps1, dbscan.eps2 and dbscan.minpts must be set together")
        return DbscanParams(eps1, eps2, minpts, self["dbscan.metric"])

    def gossip_params(self, eps1: float) -> GossipParams:
        eps3 = self["gossip.eps3"] if self["gossip.eps3"] is not None else 2 * eps1
        return GossipParams(eps3=eps3, fanout=self["gossip.fanout"], ttl=self["gossip.ttl"],
                            weight_form=self["gossip.weight_form"], probe_timeout=self["gossip.probe_timeout"],
                            round_interval=self["gossip.round_interval"])

    def bbox(self) -> tuple[float, float, float, float]:
        box = self["data.bbox"]
        if len(box) != 4:
            raise ConfigError(f"data.bbox needs 4 numbers, got {len(box)}")
        return box


def _text(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return "" if value is None else str(value)


def build_config(experiment: str, raw: Mapping[str, str]) -> ExperimentConfig:
    if experiment not in EXPERIMENTS:
        raise ValueError(f"Experiment not recognized: {experiment}")
    unknown = sorted(set(raw) - set(EXPERIMENT_KEYS))
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
    merged = {**_defaults(), **{k: v.strip() for k, v in raw.items()}}
    values = {key: _parse(key, EXPERIMENT_KEYS[key], merged[key]) for key in EXPERIMENT_KEYS}
    if values["crypto.costs"] not in ("fixed", "measured"):
        raise ConfigError(f"crypto.costs must be fixed or measured, got {values['crypto.costs']!r}")
    return ExperimentConfig(experiment, merged, values)


def load_config(experiment: str, path: str | Path | None = None, **overrides: Any) -> ExperimentConfig:
    """
    Reads `path` (if any), applies dotted-key overrides and validates the result.

    Args:
        experiment (str): One of consensus, auth, auth-multiuser, access.
        path (str | Path, optional): key=value configuration file.
        **overrides: Dotted keys, typically CLI flags; None values are ignored.

    Raises:
        ValueError: If the experiment id is not recognized.
        ConfigError: On unknown keys, keys without a value or unparsable values.
    """
    raw: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Configuration file not found: {path}")
        for key, value in dotenv_values(path).items():
            if value is None:
                raise ConfigError(f"Configuration key without a value: {key}")
            raw[key] = value
    raw.update({k: _text(v) for k, v in overrides.items() if v is not None})
    return build_config(experiment, raw)

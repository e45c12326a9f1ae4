"""Run configuration and its JSON form."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .core import GateConfig
from .errors import ConfigurationError
from .optim import OptimizerConfig

CODECS = ("none", "basic", "strom", "hybrid")
TRANSPORTS = ("sequential", "inproc", "tcp")
REQUIRED = ("workers", "batch_size", "epochs", "seed", "codec")

DEFAULT_DATASET = {"kind": "blobs", "n_samples": 5000, "n_features": 32, "n_classes": 2,
                   "separation": 4.0, "informative": None, "test_fraction": 0.2}
DEFAULT_MODEL = {"kind": "logistic"}


@dataclass(frozen=True)
class RunConfig:
    workers: int
    batch_size: int
    epochs: int
    seed: int
    codec: str = "basic"
    gate: GateConfig = field(default_factory=GateConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    model: dict = field(default_factory=lambda: dict(DEFAULT_MODEL))
    dataset: dict = field(default_factory=lambda: dict(DEFAULT_DATASET))
    bypass_quantization: bool = False
    transport: str = "sequential"
    rendezvous: str = "127.0.0.1:0"

    def __post_init__(self):
        for name in ("workers", "batch_size", "epochs"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigurationError(f"must be a positive integer, got {value!r}", name)
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigurationError(f"must be a non-negative integer, got {self.seed!r}", "seed")
        if self.codec not in CODECS:
            raise ConfigurationError(f"{self.codec!r} not in {CODECS}", "codec")
        if self.transport not in TRANSPORTS:
            raise ConfigurationError(f"{self.transport!r} not in {TRANSPORTS}", "transport")
        if self.codec in ("strom", "hybrid") and self.gate.tau is None:
            raise ConfigurationError(f"codec {self.codec} needs a threshold", "gate.tau")
        if self.codec == "basic" and self.gate.tau is not None:
            raise ConfigurationError("the basic codec takes no threshold", "gate.tau")
        if self.bypass_quantization and self.codec != "basic":
            raise ConfigurationError("only meaningful for the basic codec", "bypass_quantization")

    @property
    def dataset_spec(self) -> dict:
        return {**DEFAULT_DATASET, **self.dataset}

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "RunConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return RunConfig(**d)


def _sub(cls, data, prefix):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigurationError("must be an object", prefix)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigurationError("unknown field", f"{prefix}.{key}")
    try:
        return cls(**data)
    except ConfigurationError as exc:
        if exc.field and not exc.field.startswith(prefix):
            raise ConfigurationError(str(exc).split(": ", 1)[-1], f"{prefix}.{exc.field}") from None
        raise


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("configuration must be a JSON object")
    for name in REQUIRED:
        if name not in data:
            raise ConfigurationError("required field is missing", name)
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            raise ConfigurationError("unknown field", key)
    kwargs = dict(data)
    kwargs["gate"] = _sub(GateConfig, data.get("gate"), "gate")
    kwargs["optimizer"] = _sub(OptimizerConfig, data.get("optimizer"), "optimizer")
    for name in ("model", "dataset"):
        if name in data and not isinstance(data[name], dict):
            raise ConfigurationError("must be an object", name)
    if "dataset" in data:
        unknown = set(data["dataset"]) - set(DEFAULT_DATASET)
        if unknown:
            raise ConfigurationError("unknown field", f"dataset.{sorted(unknown)[0]}")
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid JSON: {exc}") from None
    return run_config_from_dict(data)

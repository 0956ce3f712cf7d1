"""Engine configuration: one TOML file, mirrored defaults, strict keys.

Precedence is flag > environment > file > default; the only environment
override is MOLFORGE_SEED. Every command logs the resolved configuration
verbatim so a run can be reproduced from its stderr alone.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError

SEED_ENV_VAR = "MOLFORGE_SEED"


@dataclass(frozen=True)
class DiffusionConfig:
    family: str = "uniform"  # uniform | marginal
    schedule: str = "cosine"  # cosine | linear
    T: int = 50
    guidance_w: float = 2.0
    F_V: int = 10
    F_E: int = 5
    N_G: int = 16
    condition_dim: int = 256


@dataclass(frozen=True)
class PlannerConfig:
    k: int = 50
    max_iterations: int = 300
    max_seconds: float = 30.0
    stock: Optional[str] = None  # path to a SMILES stock file
    templates: Optional[str] = None  # path to a templates JSONL
    heuristic: str = "uniform"  # uniform | zero
    stop_policy: str = "first"  # first | optimal


@dataclass(frozen=True)
class PredictorConfig:
    mode: str = "builtin-table"  # builtin-table | subprocess | tcp
    table: Optional[str] = None  # proposals JSONL for builtin-table
    command: Optional[str] = None  # child-process command line for subprocess
    address: Optional[str] = None  # host:port for tcp


@dataclass(frozen=True)
class DesignConfig:
    lm_script: Optional[str] = None  # scripted-LM fixture JSON
    denoiser: str = "uniform"  # uniform | oracle
    oracle_smiles: Optional[str] = None  # planted target for the oracle denoiser
    n_nodes: int = 8
    retries: int = 3


@dataclass(frozen=True)
class EngineConfig:
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    design: DesignConfig = field(default_factory=DesignConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "diffusion": DiffusionConfig,
    "planner": PlannerConfig,
    "predictor": PredictorConfig,
    "design": DesignConfig,
}

_VALID_CHOICES = {
    ("diffusion", "family"): {"uniform", "marginal"},
    ("diffusion", "schedule"): {"cosine", "linear"},
    ("planner", "heuristic"): {"uniform", "zero"},
    ("planner", "stop_policy"): {"first", "optimal"},
    ("predictor", "mode"): {"builtin-table", "subprocess", "tcp"},
    ("design", "denoiser"): {"uniform", "oracle"},
}


def _build_section(name: str, cls, doc: dict):
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(doc) - fields
    if unknown:
        raise ConfigError(f"[{name}] has unknown keys: {sorted(unknown)}")
    section = cls(**doc)
    for (sec, key), allowed in _VALID_CHOICES.items():
        if sec == name and getattr(section, key) not in allowed:
            raise ConfigError(
                f"[{name}] {key} must be one of {sorted(allowed)},"
                f" got {getattr(section, key)!r}"
            )
    return section


def load_config(path: Optional[str] = None) -> EngineConfig:
    """Defaults when path is None; strict parsing otherwise: unknown sections
    or keys are configuration errors, not silent no-ops."""
    if path is None:
        doc: dict = {}
    else:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config {path} is not valid TOML: {exc}")
    unknown = set(doc) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        body = doc.get(name, {})
        if not isinstance(body, dict):
            raise ConfigError(f"[{name}] must be a table")
        try:
            sections[name] = _build_section(name, cls, body)
        except TypeError as exc:
            raise ConfigError(f"[{name}]: {exc}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return EngineConfig(seed=seed, **sections)


def resolve_config(
    path: Optional[str] = None,
    overrides: Optional[dict] = None,
    env: Optional[dict] = None,
) -> EngineConfig:
    """Apply precedence: flag overrides > MOLFORGE_SEED > file > defaults.

    `overrides` maps dotted keys ("planner.k", "seed") to values; None values
    mean "flag not given" and are skipped.
    """
    env = env if env is not None else os.environ
    config = load_config(path)
    if SEED_ENV_VAR in env:
        raw = env[SEED_ENV_VAR]
        try:
            config = replace(config, seed=int(raw))
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if dotted == "seed":
            config = replace(config, seed=int(value))
            continue
        if "." not in dotted:
            raise ConfigError(f"unknown override {dotted!r}")
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown override section {section!r}")
        current = getattr(config, section)
        if key not in current.__dataclass_fields__:
            raise ConfigError(f"unknown override key {dotted!r}")
        updated = replace(current, **{key: value})
        allowed = _VALID_CHOICES.get((section, key))
        if allowed is not None and getattr(updated, key) not in allowed:
            raise ConfigError(f"{dotted} must be one of {sorted(allowed)}")
        config = replace(config, **{section: updated})
    return config

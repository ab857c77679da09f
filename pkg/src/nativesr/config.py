"""Run configuration (JSON) with strict key checking."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

from .metrics import LossConstants

__all__ = ["CONFIG_ENV_VAR", "RunConfig", "load_config", "ConfigError"]

CONFIG_ENV_VAR = "NATIVESR_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    constants: LossConstants = field(default_factory=LossConstants)
    protocol: Optional[str] = None
    voxel_budget: Optional[int] = None
    overlap: int = 16
    base_seed: int = 0
    output_dir: Optional[str] = None
    realizations: int = 3
    metrics: List[str] = field(default_factory=lambda: ["psnr", "cc", "dice"])
    significance_level: float = 0.05
    jobs: int = 1

    def __post_init__(self):
        if self.overlap < 0:
            raise ConfigError("overlap must be >= 0")
        if self.voxel_budget is not None and self.voxel_budget < 1:
            raise ConfigError("voxel_budget must be >= 1")
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        if not 0 < self.significance_level < 1:
            raise ConfigError("significance_level must lie in (0, 1)")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        object.__setattr__(self, "metrics", list(self.metrics))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        allowed = {f.name for f in fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "constants" in kw:
            try:
                kw["constants"] = LossConstants.from_dict(kw["constants"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["constants"] = self.constants.to_dict()
        return d

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def override(self, **kw) -> "RunConfig":
        """Copy with every non-None keyword applied (flags win over the file)."""
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def load_config(path: Optional[str] = None) -> RunConfig:
    """Load ``path``, else ``$NATIVESR_CONFIG``, else defaults."""
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return RunConfig()
    try:
        with open(Path(path)) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(data)

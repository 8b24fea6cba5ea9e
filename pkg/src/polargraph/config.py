"""INI-style configuration for the CLI.

Example::

    [engine]
    dim = 64
    kappa = 0.5
    alpha = 0.5
    k = 5
    token_cap = 128
    ensemble_size = 8
    strict = true

    [backend]
    kind = http
    endpoint_url = http://localhost:8000/v1
    model_name = qwen2.5-vl-7b
    api_key_env_var = POLARGRAPH_API_KEY
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .clients.base import ClientConfig
from .errors import ConfigError


@dataclass
class EngineConfig:
    dim: int = 64
    kappa: float = 0.5
    alpha: float = 0.5
    k: int = 5
    token_cap: int = 128
    ensemble_size: int = 8
    templates: str | None = None
    strict: bool = True
    seed: int = 0
    backend: str = "synthetic"
    client: ClientConfig = field(default_factory=ClientConfig)

    def __post_init__(self):
        if self.dim < 1 or self.k < 1 or self.token_cap < 1 or self.ensemble_size < 1:
            raise ConfigError("dim, k, token_cap and ensemble_size must be >= 1")
        if self.kappa < 0:
            raise ConfigError("kappa must be >= 0")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.backend not in ("synthetic", "http"):
            raise ConfigError(f"unknown backend {self.backend!r}")


def _coerce(raw: str, typ, key: str):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


_ENGINE_TYPES = {"dim": int, "kappa": float, "alpha": float, "k": int, "token_cap": int,
                 "ensemble_size": int, "templates": str, "strict": bool, "seed": int}
_CLIENT_TYPES = {"endpoint_url": str, "model_name": str, "timeout": float, "max_retries": int,
                 "max_parallel": int, "api_key_env_var": str, "embedding_model": str,
                 "retry_backoff": float}


def load_config(path: str | Path | None) -> EngineConfig:
    if path is None:
        return EngineConfig()
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    engine_kwargs: dict = {}
    if cp.has_section("engine"):
        for key, raw in cp.items("engine"):
            if key not in _ENGINE_TYPES:
                raise ConfigError(f"unknown [engine] key {key!r}")
            engine_kwargs[key] = _coerce(raw, _ENGINE_TYPES[key], key)
    client_kwargs: dict = {}
    if cp.has_section("backend"):
        for key, raw in cp.items("backend"):
            if key == "kind":
                engine_kwargs["backend"] = raw.strip()
            elif key in _CLIENT_TYPES:
                client_kwargs[key] = _coerce(raw, _CLIENT_TYPES[key], key)
            else:
                raise ConfigError(f"unknown [backend] key {key!r}")
    unknown = set(cp.sections()) - {"engine", "backend"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return EngineConfig(client=ClientConfig(**client_kwargs), **engine_kwargs)

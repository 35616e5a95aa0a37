"""Run configuration: endpoints by name, pipeline roles, prompt overrides.

Example ``fakeforge.yaml``::

    endpoints:
      qwen2vl:  {base_url: "http://localhost:8000/v1", model_name: Qwen2-VL-72B, api_key_ref: QWEN_KEY}
      internvl: {base_url: "http://localhost:8001/v1", model_name: InternVL2-76B}
      deepseek: {base_url: "http://localhost:8002/v1", model_name: deepseek-vl2}
      bge:      {base_url: "http://localhost:8003/v1", model_name: bge-m3}
    roles:
      annotators: [qwen2vl, internvl, deepseek]
      aggregator: qwen2vl
      classifier: qwen2vl
      embedder: bge
      encoder: qwen2vl
    prompts:
      asset_dir: null
      hard_sample: {fake: "..."}
    workers: 4
    seed: 0
    retry: {max_attempts: 5, base_delay: 1.0, cap: 30.0}

Models under test are ordinary entries under ``endpoints`` and are chosen by
name on the command line.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .gateway import EndpointConfig, RetryPolicy
from .prompts import ASSET_DIR, FewShotExample, PromptCatalog

CONFIG_ENV = "FAKEFORGE_CONFIG"
ENV_OVERRIDES = {"workers": ("FAKEFORGE_WORKERS", int), "seed": ("FAKEFORGE_SEED", int)}
DEFAULTS = {"workers": 4, "seed": 0}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    endpoints: dict[str, EndpointConfig] = field(default_factory=dict)
    roles: dict[str, Any] = field(default_factory=dict)
    prompts: dict[str, Any] = field(default_factory=dict)
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    workers: int = DEFAULTS["workers"]
    seed: int = DEFAULTS["seed"]
    digest: str = ""

    def endpoint(self, name: str) -> EndpointConfig:
        try:
            return self.endpoints[name]
        except KeyError:
            known = ", ".join(sorted(self.endpoints)) or "none"
            raise ConfigError(f"unknown endpoint {name!r} (configured: {known})") from None

    def role(self, role: str, override: str | None = None) -> EndpointConfig:
        name = override or self.roles.get(role)
        if not name:
            raise ConfigError(f"no endpoint configured for role {role!r}")
        return self.endpoint(name)

    def role_list(self, role: str) -> list[EndpointConfig]:
        names = self.roles.get(role) or []
        if isinstance(names, str):
            names = [names]
        return [self.endpoint(n) for n in names]

    def catalog(self) -> PromptCatalog:
        asset_dir = self.prompts.get("asset_dir") or ASSET_DIR
        few_shot = {
            tid: [FewShotExample(ex["prompt"], ex["answer"]) for ex in items]
            for tid, items in (self.prompts.get("few_shot") or {}).items()
        }
        return PromptCatalog(Path(asset_dir), dict(self.prompts.get("hard_sample") or {}), few_shot)


def load_config(path: str | Path | None = None, flags: dict[str, Any] | None = None) -> Config:
    """Read the config file and merge overrides: flags > environment > file > defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    raw: dict[str, Any] = {}
    text = b""
    if path:
        p = Path(path)
        try:
            text = p.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a mapping")

    try:
        endpoints = {name: EndpointConfig.from_dict(name, spec or {})
                     for name, spec in (raw.get("endpoints") or {}).items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad endpoint definition: {exc}") from exc
    try:
        retry = RetryPolicy(**(raw.get("retry") or {}))
    except TypeError as exc:
        raise ConfigError(f"bad retry settings: {exc}") from exc

    settings = dict(DEFAULTS)
    for key in DEFAULTS:
        if key in raw:
            settings[key] = raw[key]
        env, conv = ENV_OVERRIDES[key]
        if os.environ.get(env):
            settings[key] = conv(os.environ[env])
        if flags and flags.get(key) is not None:
            settings[key] = flags[key]

    digest = hashlib.sha256(text + json.dumps(settings, sort_keys=True).encode()).hexdigest()
    return Config(endpoints, dict(raw.get("roles") or {}), dict(raw.get("prompts") or {}),
                  retry, int(settings["workers"]), int(settings["seed"]), digest)

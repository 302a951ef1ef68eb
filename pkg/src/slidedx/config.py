"""Engine configuration: one sectioned key/value file, environment
overrides, then command-line flags, in that precedence order (flags >
env > file > defaults)."""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .backends import ROLES, BackendEndpoint, HttpBackend
from .errors import ConfigError
from .reward import RewardConfig

ENV_PREFIX = "ENGINE"

PROFILES = ("test", "live")


@dataclass
class EngineConfig:
    corpus: Path | None = None
    toolkits: Path | None = None
    logs: Path | None = None
    cases: Path | None = None
    rules_dir: Path | None = None
    seed: int = 0
    max_rounds: int = 3
    parallelism: int = 1
    profile: str = "test"
    reward: RewardConfig = field(default_factory=RewardConfig)
    backend_urls: dict[str, str] = field(default_factory=dict)
    backend_tokens: dict[str, str] = field(default_factory=dict)
    backend_timeout: float | None = None
    backend_retries: int = 2
    pemr_patterns: dict[str, list[str]] | None = None

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        for name in ("corpus", "toolkits", "cases", "rules_dir"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"configured {name} path does not exist: {path}")

    @property
    def timeout(self) -> float:
        if self.backend_timeout is not None:
            return self.backend_timeout
        return 1.0 if self.profile == "test" else 120.0

    def live_backends(self) -> dict[str, HttpBackend] | None:
        if not self.backend_urls:
            return None
        backends = {}
        for role in ROLES:
            url = self.backend_urls.get(role) or self.backend_urls.get("all")
            if not url:
                continue
            backends[role] = HttpBackend(BackendEndpoint(
                role, url, self.backend_tokens.get(role, ""),
                timeout=self.timeout, retries=self.backend_retries))
        return backends or None


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def _read_file(path: Path) -> dict:
    parser = configparser.ConfigParser()
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser.read(path)
    base = path.parent
    out: dict = {}
    if parser.has_section("engine"):
        section = parser["engine"]
        for key in ("corpus", "toolkits", "logs", "cases", "rules_dir"):
            if key in section:
                out[key] = _resolve(base, section[key])
        for key in ("seed", "max_rounds", "parallelism"):
            if key in section:
                out[key] = section.getint(key)
        if "profile" in section:
            out["profile"] = section["profile"]
    if parser.has_section("reward"):
        section = parser["reward"]
        out["reward"] = RewardConfig(
            format_penalty=section.getfloat("format_penalty", 0.5),
            hacking_penalty=section.getfloat("hacking_penalty", 0.3),
            consistency_bonus=section.getfloat("consistency_bonus", 0.1),
            tool_bonus=section.getfloat("tool_bonus", 0.1),
            alpha=section.getfloat("alpha", 0.5),
        )
    if parser.has_section("pemr"):
        out["pemr_patterns"] = {
            task: [p.strip() for p in patterns.split(";") if p.strip()]
            for task, patterns in parser["pemr"].items()
        }
    urls, tokens = {}, {}
    for section_name in parser.sections():
        if not section_name.startswith("backend"):
            continue
        role = section_name.split(".", 1)[1] if "." in section_name else "all"
        section = parser[section_name]
        if section.get("url"):
            urls[role] = section["url"]
        if section.get("token"):
            tokens[role] = section["token"]
        if "timeout" in section:
            out["backend_timeout"] = section.getfloat("timeout")
        if "retries" in section:
            out["backend_retries"] = section.getint("retries")
    if urls:
        out["backend_urls"] = urls
    if tokens:
        out["backend_tokens"] = tokens
    return out


def _read_env(env: Mapping[str, str]) -> dict:
    out: dict = {}
    urls, tokens = {}, {}
    for role in ROLES + ("all",):
        url = env.get(f"{ENV_PREFIX}_{role.upper()}_URL")
        if url:
            urls[role] = url
        token = env.get(f"{ENV_PREFIX}_{role.upper()}_TOKEN")
        if token:
            tokens[role] = token
    if urls:
        out["backend_urls"] = urls
    if tokens:
        out["backend_tokens"] = tokens
    for key, cast in (("SEED", int), ("MAX_ROUNDS", int), ("PARALLELISM", int),
                      ("PROFILE", str)):
        value = env.get(f"{ENV_PREFIX}_{key}")
        if value:
            out[key.lower()] = cast(value)
    for key in ("CORPUS", "TOOLKITS", "LOGS", "CASES"):
        value = env.get(f"{ENV_PREFIX}_{key}")
        if value:
            out[key.lower()] = Path(value)
    return out


def load_config(path: str | Path | None = None,
                env: Mapping[str, str] | None = None,
                overrides: Mapping | None = None) -> EngineConfig:
    """Assemble the engine configuration with flags > env > file > defaults."""
    merged: dict = {}
    if path is not None:
        merged.update(_read_file(Path(path)))
    merged.update(_read_env(env if env is not None else os.environ))
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    return EngineConfig(**merged)

"""Run configuration: a TOML file with [run], [agent], [env], [env.ou] and [features].

Every key is type-checked and unknown keys are rejected. Errors carry the
config path and the line of the offending key or section.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .agent import AgentConfig
from .errors import ValidationError
from .features import FeatureConfig
from .market import EnvConfig, OuParams, read_bars_csv


class ConfigError(ValidationError):
    pass


_FLOAT = (int, float)

SCHEMA: dict[str, dict[str, Any]] = {
    "run": {"seed": int, "episodes": int, "eval_episodes": int, "output_dir": str},
    "agent": {
        "gamma": _FLOAT,
        "lr": _FLOAT,
        "batch_size": int,
        "target_sync_period": int,
        "warmup": int,
        "epsilon_start": _FLOAT,
        "epsilon_end": _FLOAT,
        "epsilon_decay_steps": int,
        "hidden_layers": (list, int),
        "buffer_capacity": int,
        "train_every": int,
    },
    "env": {
        "mode": str,
        "bars": str,
        "episode_len": int,
        "half_spread": _FLOAT,
        "fee": _FLOAT,
        "reward_mode": str,
        "reward_window": int,
    },
    "env.ou": {"mu": _FLOAT, "kappa": _FLOAT, "sigma": _FLOAT, "dt": _FLOAT, "s0": _FLOAT},
    "features": {"n_returns": int, "indicators": (list, str), "zscore_window": int, "clamp": _FLOAT},
}

_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-]+)\s*\]")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) and (section, '') to 1-based line numbers."""
    index: dict[tuple[str, str], int] = {}
    section = ""
    for n, line in enumerate(text.splitlines(), start=1):
        m = _HEADER.match(line)
        if m:
            section = m.group(1)
            index.setdefault((section, ""), n)
            continue
        m = _KEY.match(line)
        if m:
            index.setdefault((section, m.group(1)), n)
    return index


@dataclass
class RunConfig:
    seed: int = 0
    episodes: int = 50
    eval_episodes: int = 100
    output_dir: str = "runs/default"
    agent: AgentConfig = field(default_factory=AgentConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    bars_path: str | None = None

    def to_dict(self) -> dict:
        agent = self.agent.to_dict()
        agent.pop("alpha")
        agent.pop("n_actions")
        env = {
            "mode": self.env.mode,
            "episode_len": self.env.episode_len,
            "half_spread": self.env.half_spread,
            "fee": self.env.fee,
            "reward_mode": self.env.reward_mode,
            "reward_window": self.env.reward_window,
            "ou": {k: getattr(self.env.ou, k) for k in SCHEMA["env.ou"]},
        }
        if self.bars_path is not None:
            env["bars"] = self.bars_path
        return {
            "run": {"seed": self.seed, "episodes": self.episodes, "eval_episodes": self.eval_episodes, "output_dir": self.output_dir},
            "agent": agent,
            "env": env,
            "features": self.env.feature_cfg.to_dict(),
        }

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def _check_type(value: Any, spec: Any) -> bool:
    if isinstance(spec, tuple) and spec and spec[0] is list:
        return isinstance(value, list) and all(_check_type(v, spec[1]) for v in value)
    types = spec if isinstance(spec, tuple) else (spec,)
    if isinstance(value, bool):
        return bool in types
    return isinstance(value, types)


def _type_name(spec: Any) -> str:
    if isinstance(spec, tuple) and spec and spec[0] is list:
        return f"list of {_type_name(spec[1])}"
    if spec is _FLOAT:
        return "number"
    return spec.__name__


def parse_config(text: str, source: str = "<config>", overrides: dict[str, Any] | None = None, base_dir: Path | None = None) -> RunConfig:
    """Parse and validate TOML text.

    ``overrides`` maps dotted keys such as ``"run.seed"`` to values and is
    applied after parsing.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _line_index(text)

    def where(section: str, key: str = "") -> str:
        n = lines.get((section, key)) or lines.get((section, ""))
        return f"{source}:{n}" if n else source

    sections: dict[str, dict[str, Any]] = {}
    for name, body in raw.items():
        if name not in ("run", "agent", "env", "features") or not isinstance(body, dict):
            loc = where("", name) if ("", name) in lines else where(name)
            raise ConfigError(f"{loc}: unknown section or key {name!r}")
        if name == "env" and isinstance(body.get("ou"), dict):
            body = dict(body)
            sections["env.ou"] = body.pop("ou")
        sections[name] = body

    for key, value in (overrides or {}).items():
        section, _, leaf = key.rpartition(".")
        sections.setdefault(section, {})[leaf] = value

    for section, body in sections.items():
        allowed = SCHEMA.get(section)
        if allowed is None:
            raise ConfigError(f"{where(section)}: unknown section [{section}]")
        for key, value in body.items():
            if key not in allowed:
                raise ConfigError(f"{where(section, key)}: unknown key {key!r} in [{section}]")
            if not _check_type(value, allowed[key]):
                raise ConfigError(f"{where(section, key)}: {section}.{key} must be {_type_name(allowed[key])}, got {value!r}")

    def build(section: str, factory, **extra):
        try:
            return factory(**sections.get(section, {}), **extra)
        except ValidationError as exc:
            named = [k for k in sections.get(section, {}) if k.rstrip("s") in str(exc)]
            loc = where(section, named[0]) if named else where(section)
            raise ConfigError(f"{loc}: [{section}] {exc}") from None

    run = sections.get("run", {})
    agent = build("agent", AgentConfig)
    features = build("features", FeatureConfig)
    ou = build("env.ou", OuParams)
    env_body = dict(sections.get("env", {}))
    bars_path = env_body.pop("bars", None)
    bars = None
    if bars_path is not None:
        p = Path(bars_path)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        bars_path = str(p.resolve())
        if env_body.get("mode") == "replay":
            try:
                bars = read_bars_csv(bars_path)
            except OSError as exc:
                raise ConfigError(f"{where('env', 'bars')}: cannot read bars: {exc}") from None
    env = build("env", lambda **_: EnvConfig(ou=ou, bars=bars, feature_cfg=features, **env_body))
    cfg = RunConfig(agent=agent, env=env, bars_path=bars_path, **run)
    for f in ("seed", "episodes", "eval_episodes"):
        if getattr(cfg, f) < 0:
            raise ConfigError(f"{where('run', f)}: run.{f} must be >= 0")
    return cfg


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    return parse_config(text, str(path), overrides, base_dir=path.parent)

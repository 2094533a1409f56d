"""Run configuration: a flat ``key=value`` text file.

Precedence is defaults < config file < command-line flags.  Blank lines and
lines starting with ``#`` are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .agae import EMBED_KINDS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = ""
    out_dir: str = ""
    seed: int = 0
    d_v: int = 64
    hidden_visual: tuple[int, ...] = (256,)
    hidden_semantic: int = 256
    epochs_visual: int = 40
    epochs_semantic: int = 200
    batch_size: int = 64
    lr: float = 0.001
    omega1: float = 0.95
    w_max: float = 1.0
    ramp_epochs: int = 40
    omega3: float = 1.0
    aug_sigma: float = 0.2
    threshold: float = 0.0
    uvc: bool = True
    usa: bool = True
    embed_kind: str = "AGAE"

    def __post_init__(self):
        check_config(self)


def check_config(cfg: RunConfig) -> None:
    """Raise ``ConfigError`` naming the first offending key."""
    for key in ("lr", "w_max", "omega3", "aug_sigma", "threshold"):
        if getattr(cfg, key) < 0:
            raise ConfigError(f"{key}: must be >= 0, got {getattr(cfg, key)}")
    if not 0.0 <= cfg.omega1 <= 1.0:
        raise ConfigError(f"omega1: must lie in [0, 1], got {cfg.omega1}")
    for key in ("d_v", "hidden_semantic", "batch_size", "ramp_epochs"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key}: must be >= 1, got {getattr(cfg, key)}")
    for key in ("epochs_visual", "epochs_semantic", "seed"):
        if getattr(cfg, key) < 0:
            raise ConfigError(f"{key}: must be >= 0, got {getattr(cfg, key)}")
    if not cfg.hidden_visual or min(cfg.hidden_visual) < 1:
        raise ConfigError("hidden_visual: needs one or more positive widths")
    if cfg.embed_kind not in EMBED_KINDS:
        raise ConfigError(f"embed_kind: must be one of {', '.join(EMBED_KINDS)}, got {cfg.embed_kind!r}")


_FIELDS = {f.name: f for f in fields(RunConfig)}
_TRUE = {"true", "on", "yes", "1"}
_FALSE = {"false", "off", "no", "0"}


def _convert(key: str, text: str):
    kind = _FIELDS[key].type
    text = text.strip()
    if kind == "bool":
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected on/off, got {text!r}")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind.startswith("tuple"):
        return tuple(int(t) for t in text.split(",") if t.strip())
    return text


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def apply_overrides(cfg: RunConfig, pairs: dict[str, str], source: str = "<flags>") -> RunConfig:
    """Return ``cfg`` with string values in ``pairs`` converted and applied."""
    changes = {}
    for key, text in pairs.items():
        if key not in _FIELDS:
            raise ConfigError(f"{source}: unknown key {key!r}")
        try:
            changes[key] = _convert(key, text)
        except ValueError as exc:
            raise ConfigError(f"{source}: {key}: malformed value ({exc})") from None
    try:
        return replace(cfg, **changes)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    cfg = RunConfig()
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        where = f"{source}:{lineno}"
        if not sep:
            raise ConfigError(f"{where}: expected key=value, got {line!r}")
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r} (first on line {seen[key]})")
        seen[key] = lineno
        cfg = apply_overrides(cfg, {key: value}, where)
    return cfg


def parse_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


def serialize_config(cfg: RunConfig, include_dirs: bool = True) -> str:
    lines = []
    for name in _FIELDS:
        if not include_dirs and name in ("data_dir", "out_dir"):
            continue
        lines.append(f"{name}={_format(getattr(cfg, name))}")
    return "\n".join(lines) + "\n"

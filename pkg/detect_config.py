# detect_config.py
"""
Tunable parameters of the aliased-seabed detector and the flat config file.

Config file format (one setting per line):

    # comment
    window_along = 28
    t_theta = 702
    t_min = none        # disables the Sv floor

Keys are DetectionConfig field names; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

from errors import ConfigError, ParameterError


# Split-beam thresholds are squared raw counts, not degrees.
DEFAULT_WINDOW_ALONG = 28
DEFAULT_WINDOW_ATHWART = 52
DEFAULT_T_THETA = 702.0
DEFAULT_T_PHI = 282.0
DEFAULT_T_MIN = -70.0
DEFAULT_TOKEN = -999.0

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}
_NONE = {"", "none", "null", "off"}


@dataclass(frozen=True)
class DetectionConfig:
    window_along: int = DEFAULT_WINDOW_ALONG
    window_athwart: int = DEFAULT_WINDOW_ATHWART
    t_theta: float = DEFAULT_T_THETA
    t_phi: float = DEFAULT_T_PHI
    t_min: Optional[float] = DEFAULT_T_MIN
    connectivity: int = 4
    fill_holes: bool = True
    token: float = DEFAULT_TOKEN
    rank: float = 50.0
    r_min: Optional[float] = None
    r_max: Optional[float] = None
    workers: int = 1
    geometry_filter: bool = False

    def __post_init__(self):
        if int(self.window_along) < 1 or int(self.window_athwart) < 1:
            raise ParameterError(
                f"window sides must be >= 1, got {self.window_along}/{self.window_athwart}"
            )
        if self.t_theta < 0 or self.t_phi < 0:
            raise ParameterError(f"angle thresholds must be >= 0, got {self.t_theta}/{self.t_phi}")
        if self.connectivity not in (4, 8):
            raise ParameterError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if not (0 < self.rank <= 100):
            raise ParameterError(f"rank must be in (0, 100], got {self.rank}")
        if self.r_min is not None and self.r_max is not None and self.r_min > self.r_max:
            raise ParameterError(f"r_min ({self.r_min}) must not exceed r_max ({self.r_max})")
        if int(self.workers) < 1:
            raise ParameterError(f"workers must be >= 1, got {self.workers}")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def merged(self, **overrides) -> "DetectionConfig":
        """Return a copy with every non-None override applied."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(changes) - set(field_names())
        if unknown:
            raise ParameterError(f"unknown detection setting(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **changes)


def field_names():
    return [f.name for f in dataclasses.fields(DetectionConfig)]


def _parse_bool(key: str, raw: str) -> bool:
    v = raw.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw!r}")


def _coerce(key: str, raw: str) -> Any:
    try:
        if key in ("window_along", "window_athwart", "connectivity", "workers"):
            return int(raw)
        if key in ("fill_holes", "geometry_filter"):
            return _parse_bool(key, raw)
        if key in ("t_min", "r_min", "r_max"):
            return None if raw.strip().lower() in _NONE else float(raw)
        return float(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({e})") from e


def parse_config_text(text: str) -> Dict[str, Any]:
    known = set(field_names())
    out: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "#" in line:
            line = line.split("#", 1)[0].rstrip()
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        k, v = line.split("=", 1)
        k = k.strip()
        v = v.strip()
        if len(v) >= 2 and ((v[0] == v[-1] == '"') or (v[0] == v[-1] == "'")):
            v = v[1:-1]
        if k not in known:
            raise ConfigError(f"line {lineno}: unknown config key {k!r}")
        out[k] = _coerce(k, v)
    return out


def load_config(path: Optional[Union[str, Path]], **overrides) -> DetectionConfig:
    """Defaults, then the config file (if any), then non-None overrides."""
    settings: Dict[str, Any] = {}
    if path:
        p = Path(path).expanduser()
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        settings = parse_config_text(p.read_text(encoding="utf-8"))
    cfg = DetectionConfig(**settings)
    return cfg.merged(**overrides)

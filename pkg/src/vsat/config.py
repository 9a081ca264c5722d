"""Run configuration: flat dotted-key config files plus CLI overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .subtitle_core import DEFAULT_REGION, Region


class ConfigError(ValueError):
    pass


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key=value`` lines; '#' starts a comment, blanks ignored."""
    values: dict[str, str] = {}
    for n, raw in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip().strip('"')
    return values


def _bool(value: str, key: str) -> bool:
    lowered = value.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _region(value: str, key: str) -> Region:
    try:
        x, y, w, h = (float(p) for p in value.split(","))
        return Region(x=x, y=y, w=w, h=h)
    except ValueError as e:
        raise ConfigError(f"{key}: expected x,y,w,h got {value!r} ({e})") from e


@dataclass(frozen=True)
class RunConfig:
    subs: Optional[str] = None
    video: Optional[str] = None
    assets: Optional[str] = None
    out: str = "vsat-out"
    decisions: Optional[str] = None
    port: int = 8321

    detect_spelling: bool = True
    detect_harmful: bool = True
    detect_timesync: bool = True
    detect_nonword: bool = True
    detect_segmentation: bool = True
    detect_positioning: bool = True
    detect_fontcolor: bool = True

    threshold_timesync: float = 0.7
    threshold_event: float = 0.3
    threshold_cpl: int = 50
    threshold_overlap: float = 0.006
    threshold_brightness: float = 128.0

    default_region: Region = DEFAULT_REGION
    font_color: str = "white"
    context_window: int = 3
    parallelism: int = 1

    backend_llm: str = "mock"        # mock | http
    backend_llm_table: Optional[str] = None
    backend_llm_timeout: float = 30.0
    backend_asr: str = "assets"      # assets | http
    backend_asr_url: Optional[str] = None
    backend_events: str = "assets"   # assets | http
    backend_events_url: Optional[str] = None

    media_probe_cmd: Optional[str] = None
    media_audio_cmd: Optional[str] = None
    media_frame_cmd: Optional[str] = None
    media_mux_cmd: str = 'ffmpeg -y -i {video} -i {subs} -map 0 -map 1 -c copy -c:s {codec} {out}'

    def __post_init__(self) -> None:
        for name in ("threshold_timesync", "threshold_event", "threshold_cpl",
                     "threshold_overlap", "threshold_brightness"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.backend_llm not in ("mock", "http"):
            raise ConfigError(f"backend.llm must be mock or http, got {self.backend_llm!r}")
        if self.backend_asr not in ("assets", "http"):
            raise ConfigError(f"backend.asr must be assets or http, got {self.backend_asr!r}")
        if self.backend_events not in ("assets", "http"):
            raise ConfigError(f"backend.events must be assets or http, got {self.backend_events!r}")

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.to_json() if isinstance(value, Region) else value
        return out


# config-file key -> (dataclass field, coercion)
_KEY_MAP = {
    "detect.spelling": ("detect_spelling", _bool),
    "detect.harmful": ("detect_harmful", _bool),
    "detect.timesync": ("detect_timesync", _bool),
    "detect.nonword": ("detect_nonword", _bool),
    "detect.segmentation": ("detect_segmentation", _bool),
    "detect.positioning": ("detect_positioning", _bool),
    "detect.fontcolor": ("detect_fontcolor", _bool),
    "thresholds.timesync": ("threshold_timesync", lambda v, k: float(v)),
    "thresholds.event": ("threshold_event", lambda v, k: float(v)),
    "thresholds.cpl": ("threshold_cpl", lambda v, k: int(v)),
    "thresholds.overlap": ("threshold_overlap", lambda v, k: float(v)),
    "thresholds.brightness": ("threshold_brightness", lambda v, k: float(v)),
    "region.default": ("default_region", _region),
    "region.font_color": ("font_color", lambda v, k: v),
    "context.window": ("context_window", lambda v, k: int(v)),
    "run.parallelism": ("parallelism", lambda v, k: int(v)),
    "run.out": ("out", lambda v, k: v),
    "backend.llm": ("backend_llm", lambda v, k: v),
    "backend.llm_table": ("backend_llm_table", lambda v, k: v),
    "backend.llm_timeout": ("backend_llm_timeout", lambda v, k: float(v)),
    "backend.asr": ("backend_asr", lambda v, k: v),
    "backend.asr_url": ("backend_asr_url", lambda v, k: v),
    "backend.events": ("backend_events", lambda v, k: v),
    "backend.events_url": ("backend_events_url", lambda v, k: v),
    "media.probe_cmd": ("media_probe_cmd", lambda v, k: v),
    "media.audio_cmd": ("media_audio_cmd", lambda v, k: v),
    "media.frame_cmd": ("media_frame_cmd", lambda v, k: v),
    "media.mux_cmd": ("media_mux_cmd", lambda v, k: v),
}

_PATH_KEYS = {"backend.llm_table"}


def load_config(config_path: Optional[str | Path] = None,
                overrides: Optional[dict[str, str]] = None) -> RunConfig:
    """Build a RunConfig from an optional file plus ``key=value`` overrides.

    Relative path values in the file resolve against the file's directory.
    """
    cfg = RunConfig()
    merged: list[tuple[str, str, Optional[Path]]] = []
    if config_path is not None:
        base = Path(config_path).resolve().parent
        merged.extend((k, v, base) for k, v in parse_config_file(config_path).items())
    merged.extend((k, v, None) for k, v in (overrides or {}).items())

    updates = {}
    for key, value, base in merged:
        if key not in _KEY_MAP:
            raise ConfigError(f"unknown config key {key!r}")
        field_name, coerce = _KEY_MAP[key]
        if key in _PATH_KEYS and base is not None and not Path(value).is_absolute():
            value = str(base / value)
        updates[field_name] = coerce(value, key)
    return replace(cfg, **updates) if updates else cfg

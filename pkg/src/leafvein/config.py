"""Codec configuration and the flat ``key=value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .mainvein import default_degree


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LvtConfig:
    n_p: int = 9
    n_d: int = 8
    degree: int | None = None
    shrink_ratio: float = 0.6
    rho: float = 1.0
    alpha: float = 1.0
    beta: float = 0.25
    short_side: float = 640.0

    def __post_init__(self):
        if self.n_p < 2:
            raise ConfigError(f"n_p must be >= 2, got {self.n_p}")
        if self.n_d < 4:
            raise ConfigError(f"n_d must be >= 4, got {self.n_d}")
        if self.degree is not None and self.degree < 1:
            raise ConfigError(f"degree must be >= 1, got {self.degree}")
        if self.degree is not None and self.degree + 1 > self.n_p:
            raise ConfigError(f"degree {self.degree} needs at least {self.degree + 1} start points")
        if not 0.0 < self.shrink_ratio < 1.0:
            raise ConfigError(f"shrink_ratio must be in (0, 1), got {self.shrink_ratio}")
        if not self.rho > 0.0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")
        if not self.short_side > 0.0:
            raise ConfigError(f"short_side must be > 0, got {self.short_side}")

    @property
    def poly_degree(self) -> int:
        return default_degree(self.n_p) if self.degree is None else self.degree

    @classmethod
    def line_level(cls, **overrides) -> "LvtConfig":
        """Straight and multi-oriented text lines."""
        return cls(**{"n_d": 8, "n_p": 9, **overrides})

    @classmethod
    def curved(cls, **overrides) -> "LvtConfig":
        return cls(**{"n_d": 16, "n_p": 5, **overrides})

    def replace(self, **changes) -> "LvtConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return "".join(f"{k}={'auto' if v is None else v}\n" for k, v in self.to_dict().items())

    @classmethod
    def loads(cls, text: str, base: "LvtConfig | None" = None) -> "LvtConfig":
        return (base or cls()).with_assignments(
            line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")
        )

    @classmethod
    def load(cls, path, base: "LvtConfig | None" = None) -> "LvtConfig":
        try:
            text = Path(path).read_text(encoding="utf-8-sig")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.loads(text, base)

    def with_assignments(self, assignments) -> "LvtConfig":
        """Apply ``key=value`` strings on top of this config."""
        types = {f.name: f.type for f in dataclasses.fields(self)}
        changes = {}
        for item in assignments:
            key, sep, raw = item.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or key not in types:
                raise ConfigError(f"bad config entry {item.strip()!r}")
            try:
                if key == "degree":
                    changes[key] = None if raw in ("", "auto", "None") else int(raw)
                elif key in ("n_p", "n_d"):
                    changes[key] = int(raw)
                else:
                    changes[key] = float(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return self.replace(**changes)


#: (n_d, n_p) that work best per text shape
PRESETS = {"line": (8, 9), "curved": (16, 5)}

SOURCE_PRESET = {
    "rect": "line",
    "rotated_rect": "line",
    "icdar15": "line",
    "msra": "line",
    "sine_ribbon": "curved",
    "arc_ribbon": "curved",
    "wave_word": "curved",
    "ctw1500": "curved",
    "totaltext": "curved",
}


def preset_for(source: str) -> LvtConfig:
    """Default config for a corpus kind or annotation format."""
    try:
        n_d, n_p = PRESETS[SOURCE_PRESET[source]]
    except KeyError:
        raise ConfigError(f"no preset for {source!r}") from None
    return LvtConfig(n_d=n_d, n_p=n_p)

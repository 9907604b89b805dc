from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from polypseg.errors import ConfigError

ARCHS = ("unet", "leaky-unet", "resunet", "inception-unet", "pranet-lite")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture selector plus the width/depth/activation/dilation knobs."""

    arch: str = "unet"
    in_channels: int = 3
    base_width: int = 32
    depth: int = 4
    leaky_slope: float = 0.1
    dilation_rates: tuple[int, ...] = (1, 2, 4)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dilation_rates", tuple(int(d) for d in self.dilation_rates))
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; valid: {', '.join(ARCHS)}")
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if self.base_width < 1:
            raise ConfigError("base_width must be >= 1")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.arch == "pranet-lite" and self.depth < 2:
            raise ConfigError("pranet-lite needs depth >= 2 (three encoder levels feed its decoder)")
        if self.leaky_slope < 0:
            raise ConfigError("leaky_slope must be >= 0")
        if not self.dilation_rates or min(self.dilation_rates) < 1:
            raise ConfigError("dilation_rates must be a nonempty sequence of positive integers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilation_rates"] = list(self.dilation_rates)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model config is not valid JSON: {exc}") from exc
        return cls.from_dict(d)


# The five submitted runs. run1 keeps a single pooling stage.
PRESETS: dict[str, dict] = {
    "run1": {"arch": "unet", "depth": 1},
    "run2": {"arch": "leaky-unet"},
    "run3": {"arch": "resunet"},
    "run4": {"arch": "inception-unet"},
    "run5": {"arch": "pranet-lite"},
}

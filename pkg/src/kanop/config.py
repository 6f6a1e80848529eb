"""Experiment configuration: typed key=value parsing, validation, hashing.

Every run is described by one flat configuration.  The canonical string
(sorted key=value lines) feeds a SHA-256 hash that is stamped into every
output file, so artifacts can always be traced to the exact settings that
produced them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "read_config_file"]


class ConfigError(Exception):
    """Bad configuration key, value, or combination."""


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: str = "periodic"  # "periodic" | "lq"
    dim: int = 5
    horizon: float = 1.0
    size: int = 32
    width: int = 32
    depth: int = 4
    modes: int = 12
    pos_width: int = 8
    order: int = 4
    alpha: float = 3.0
    pair: str = "haar"
    wavelet_scale: float = 0.1
    spline_scale: float = 0.1
    n_samples: int = 4096
    batch: int = 8
    steps: int = 4000
    lr: float = 1e-3
    rms_decay: float = 0.9
    seed: int = 0
    n_riccati: int = 10_000
    out_dir: str = ""

    def __post_init__(self):
        if self.benchmark not in ("periodic", "lq"):
            raise ConfigError(f"unknown benchmark {self.benchmark!r}")
        if self.dim < 2:
            raise ConfigError("dim must be at least 2")
        if self.size < 4 or (self.size & (self.size - 1)) != 0:
            raise ConfigError("size must be a power of two >= 4")
        if not (1 <= self.modes <= self.size // 2):
            raise ConfigError(f"modes must lie in [1, {self.size // 2}]")
        if self.alpha < 3.0:
            raise ConfigError("alpha must be at least 3")
        if not (1 <= self.order):
            raise ConfigError("order must be positive")
        if self.alpha > self.order:
            raise ConfigError("alpha cannot exceed the activation order")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        for name in ("width", "depth", "pos_width", "n_samples", "batch", "steps",
                     "n_riccati"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_samples < self.batch:
            raise ConfigError("n_samples must be at least the batch size")
        if self.lr <= 0 or not (0.0 < self.rms_decay < 1.0):
            raise ConfigError("bad optimizer settings")

    def canonical(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, float):
                lines.append(f"{f.name}={value!r}")
            else:
                lines.append(f"{f.name}={value}")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("ascii")).hexdigest()[:16]

    def replace(self, **kw) -> "ExperimentConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(kw)
        return ExperimentConfig(**data)


def read_config_file(path: str) -> list[str]:
    """Read ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    pairs = []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"expected key=value in {path}, got {line!r}")
            pairs.append(line)
    return pairs


def parse_config(pairs) -> ExperimentConfig:
    """Build a configuration from ``key=value`` strings.

    Later entries override earlier ones, so file-sourced pairs followed by
    command-line pairs give the command line the last word.
    """
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    defaults = ExperimentConfig.__init__.__defaults__
    kw = {}
    for raw in pairs:
        if "=" not in raw:
            raise ConfigError(f"expected key=value, got {raw!r}")
        key, text = raw.split("=", 1)
        key = key.strip()
        if key not in types:
            raise ConfigError(f"unknown configuration key {key!r}")
        kind = types[key]
        try:
            if kind == "int" or kind is int:
                kw[key] = int(text)
            elif kind == "float" or kind is float:
                kw[key] = float(text)
            else:
                kw[key] = text.strip()
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {text!r}") from exc
    if "modes" not in kw and "size" in kw:
        # Scale the retained band with resolution, mirroring the stock
        # 12-of-32 ratio, and keep it inside the representable range.
        scaled = int(round(12 * kw["size"] / 32))
        kw["modes"] = min(max(scaled, 1), kw["size"] // 2)
    return ExperimentConfig(**kw)

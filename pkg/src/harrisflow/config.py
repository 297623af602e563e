"""Flat key=value experiment configuration.

The file format is a deliberately plain ``key = value`` text format (one key
per line, ``#`` comments): reproducibility beats expressiveness here, and a
config file round-trips losslessly so a run manifest can embed the exact
configuration hash.  All time-like quantities are dimensionless model time.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


_DEFAULT_EPSILONS = (0.8, 0.4, 0.2, 0.1)


@dataclass
class ExperimentConfig:
    alpha: float = 1.0
    beta: float = 1.0
    epsilons: tuple[float, ...] = _DEFAULT_EPSILONS
    mollifier: str = "gaussian"
    quadrature_points: int = 256
    window_m: float = 6.0
    dyadic_level: int = 6
    starts: tuple[tuple[float, float], ...] = ((-0.5, 0.0), (0.5, 0.0))
    t_final: float = 1.0
    dt: float = 1e-3
    checkpoints: tuple[float, ...] = (0.25, 0.5, 1.0)
    replicas: int = 2000
    root_seed: int = 2024
    merge_c: float = 0.05
    mass_s: float = 1.0
    dump_spacing: float = 0.05
    max_grid_atoms: int = 2_000_000
    output_dir: str = "out"
    formats: tuple[str, ...] = ("csv",)

    def validate(self) -> None:
        if not (0.0 < self.alpha < 2.0):
            raise ConfigError(f"alpha: must be in (0, 2), got {self.alpha}")
        if not self.beta > 0:
            raise ConfigError(f"beta: must be positive, got {self.beta}")
        for e in self.epsilons:
            if not (0.0 < e < 1.0):
                raise ConfigError(f"epsilons: entries must be in (0, 1), got {e}")
        if list(self.epsilons) != sorted(self.epsilons, reverse=True):
            raise ConfigError("epsilons: must be descending")
        if self.mollifier not in ("gaussian", "compact-bump"):
            raise ConfigError(f"mollifier: unknown {self.mollifier!r}")
        if not self.starts:
            raise ConfigError("starts: must be nonempty")
        for x, t in self.starts:
            if not (0.0 <= t <= self.t_final):
                raise ConfigError(f"starts: start time {t} outside [0, t_final]")
        if not (0.0 < self.dt <= self.t_final):
            raise ConfigError(f"dt: must be in (0, t_final], got {self.dt}")
        for c in self.checkpoints:
            if not (0.0 < c <= self.t_final):
                raise ConfigError(f"checkpoints: {c} outside (0, t_final]")
        if self.replicas < 1:
            raise ConfigError(f"replicas: must be >= 1, got {self.replicas}")
        if not (0.0 < self.mass_s <= self.window_m):
            raise ConfigError("mass_s: must be in (0, window_m]")
        grid_atoms = (2 * self.window_m * 2 ** self.dyadic_level + 1)
        waves = self.t_final * 2 ** self.dyadic_level + 1
        if grid_atoms * waves > self.max_grid_atoms:
            raise ConfigError(
                f"dyadic_level: grid of {int(grid_atoms * waves)} atoms exceeds "
                f"max_grid_atoms={self.max_grid_atoms}")
        if "csv" not in self.formats:
            raise ConfigError("formats: must include 'csv'")

    # -- serialisation ----------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "starts":
                v = ", ".join(f"{x!r}:{t!r}" for x, t in v)
            elif isinstance(v, tuple):
                v = ", ".join(repr(u) if isinstance(u, float) else str(u) for u in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @staticmethod
    def from_text(text: str) -> "ExperimentConfig":
        known = {f.name: f for f in fields(ExperimentConfig)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{key}: unknown key (line {lineno})")
            kwargs[key] = _parse_value(key, val)
        return ExperimentConfig(**kwargs)

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return ExperimentConfig.from_text(fh.read())

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def _parse_value(key: str, val: str):
    try:
        if key == "starts":
            pairs = []
            for chunk in val.split(","):
                chunk = chunk.strip()
                if not chunk:
                    continue
                x, t = chunk.split(":")
                pairs.append((float(x), float(t)))
            return tuple(sorted(pairs, key=lambda p: (p[1], p[0])))
        if key in ("epsilons", "checkpoints"):
            return tuple(float(c) for c in val.split(",") if c.strip())
        if key == "formats":
            return tuple(c.strip() for c in val.split(",") if c.strip())
        if key in ("mollifier", "output_dir"):
            return val
        if key in ("quadrature_points", "dyadic_level", "replicas",
                   "root_seed", "max_grid_atoms"):
            return int(val)
        return float(val)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{key}: cannot parse {val!r} ({exc})") from None


def start_arrays(config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    xs = np.array([x for x, _ in config.starts])
    ts = np.array([t for _, t in config.starts])
    return xs, ts

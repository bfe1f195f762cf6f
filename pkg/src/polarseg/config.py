"""Pipeline configuration: ``key = value`` text files with ``include`` support.

Blank lines and ``#`` comments are ignored. ``include = other.cfg`` pulls in
another file (relative to the including one) at that point; later keys win.
Path keys may be overridden from the environment (``POLARSEG_DATA_DIR`` and
friends), nothing else can.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


PATH_ENV = {
    "data_dir": "POLARSEG_DATA_DIR",
    "model_dir": "POLARSEG_MODEL_DIR",
    "out_dir": "POLARSEG_OUT_DIR",
}


@dataclass(frozen=True)
class PipelineConfig:
    # paths
    data_dir: str = "data"
    model_dir: str = "model"
    out_dir: str = "out"
    # data
    image_size: int = 96
    n_train: int = 300
    n_test: int = 60
    data_seed: int = 0
    max_arc_deg: float = 60.0
    # serialization and cascade
    scales: tuple = (16, 10, 8)
    n_angle: tuple = (80,)
    n_radius: tuple = (48,)
    viewpoint_offsets_deg: tuple = (0.0, 120.0, 240.0)
    uniform_init_value: float = 0.5
    # network and optimizer
    hidden: int = 64
    init_std: float = 0.01
    learning_rate: float = 0.001
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    clip_norm: float = 5.0
    epochs: tuple = (30,)
    train_seed: int = 0
    # shape model
    asm_variance_kept: float = 0.98
    asm_iters: int = 30
    asm_profile_len: int = 8
    jobs: int = field(default=0)

    def per_level(self, name):
        values = getattr(self, name)
        if len(values) == 1:
            return values * len(self.scales)
        return values

    def validate(self):
        n = len(self.scales)
        if n < 1:
            raise ConfigError("at least one scale is required")
        for name in ("n_angle", "n_radius", "epochs"):
            if len(getattr(self, name)) not in (1, n):
                raise ConfigError(f"{name} needs 1 or {n} values, got {len(getattr(self, name))}")
        for k, (s, na) in enumerate(zip(self.scales, self.per_level("n_angle"))):
            if s < 1 or na % s:
                raise ConfigError(f"level {k}: scale {s} does not divide n_angle {na}")
        if min(self.per_level("n_radius")) < 4 or min(self.per_level("n_angle")) < 4:
            raise ConfigError("polar grids must be at least 4x4")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= self.rmsprop_decay < 1:
            raise ConfigError("rmsprop_decay must lie in [0, 1)")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        if not 0 <= self.uniform_init_value <= 1:
            raise ConfigError("uniform_init_value must lie in [0, 1]")
        if not 0 < self.asm_variance_kept <= 1:
            raise ConfigError("asm_variance_kept must lie in (0, 1]")
        if not self.viewpoint_offsets_deg:
            raise ConfigError("at least one viewpoint offset is required")
        if not 0 < self.max_arc_deg <= 75:
            raise ConfigError("max_arc_deg must lie in (0, 75]")
        return self

    @property
    def viewpoint_offsets(self):
        return tuple(math.radians(d) for d in self.viewpoint_offsets_deg)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _convert(name, raw):
    default = _FIELDS[name].default
    try:
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(x.strip()) for x in raw.split(",") if x.strip())
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        return type(default)(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def read_pairs(path, _seen=None):
    path = Path(path).resolve()
    seen = _seen or set()
    if path in seen:
        raise ConfigError(f"include cycle at {path}")
    seen = seen | {path}
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "include":
            pairs.extend(read_pairs(path.parent / value, seen))
        elif key not in _FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        else:
            pairs.append((key, value))
    return pairs


def load_config(path=None, overrides=None, environ=None):
    """Defaults, then the file (if any), then path env vars, then explicit overrides."""
    values = {}
    if path is not None:
        for key, raw in read_pairs(path):
            values[key] = _convert(key, raw)
    env = os.environ if environ is None else environ
    for key, var in PATH_ENV.items():
        if env.get(var):
            values[key] = env[var]
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = _convert(key, val) if isinstance(val, str) else val
    return replace(PipelineConfig(), **values).validate()

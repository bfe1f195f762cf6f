"""Multiscale auto-context cascade of BiLSTM levels.

Level k sees the raw image together with the fused prediction map of level
k-1 (a constant map for the first level) and serializes both into bands of
``scale`` polar rows. Levels are trained strictly one after another, each on
the frozen outputs of the levels before it.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nncore
from .fusion import (
    PolarConfig,
    ViewpointSet,
    check_model_dims,
    input_sequence,
    label_sequence,
    predict_fused,
    uniform_map,
)

log = logging.getLogger(__name__)

PAPER_SCALES = (16, 10, 8)
CASCADE_FORMAT = "polarseg-cascade"
CASCADE_VERSION = 1


@dataclass(frozen=True)
class LevelConfig:
    scale: int
    n_angle: int = 80
    n_radius: int = 48

    def __post_init__(self):
        if self.scale < 1 or self.n_angle % self.scale:
            raise ValueError(f"scale {self.scale} does not divide n_angle={self.n_angle}")

    def polar(self, r_max=None, center=None):
        return PolarConfig(self.n_angle, self.n_radius, r_max, center)

    @property
    def band_size(self):
        return self.scale * self.n_radius

    @property
    def input_dim(self):
        return 2 * self.band_size


@dataclass
class CascadeModel:
    levels: list  # [(BiLstmModel, LevelConfig), ...]
    uniform_init_value: float = 0.5
    views: ViewpointSet = field(default_factory=ViewpointSet)
    r_max: float | None = None
    image_shape: tuple | None = None  # (height, width) the levels were trained on

    def __post_init__(self):
        if not self.levels:
            raise ValueError("a cascade needs at least one level")
        for model, cfg in self.levels:
            check_model_dims(model, cfg.scale, cfg.polar())

    def __len__(self):
        return len(self.levels)


def run_cascade(cascade, img, views=None, n_levels=None):
    """Returns ``(final map, per-level maps)``; ``n_levels`` truncates the cascade."""
    img = np.asarray(img, dtype=np.float64)
    if cascade.image_shape is not None and tuple(img.shape) != tuple(cascade.image_shape):
        raise ValueError(f"image of shape {img.shape} but the cascade was trained on {tuple(cascade.image_shape)}")
    views = views or cascade.views
    levels = cascade.levels[:n_levels] if n_levels else cascade.levels
    context = uniform_map(img.shape, cascade.uniform_init_value, levels[0][1].polar(cascade.r_max))
    per_level = []
    for model, cfg in levels:
        context = predict_fused(model, img, context, views, cfg.scale, cfg.polar(cascade.r_max))
        per_level.append(context)
    return per_level[-1], per_level


def level_changes(per_level):
    """Mean absolute change inside the valid annulus between consecutive level maps."""
    out = []
    for prev, cur in zip(per_level, per_level[1:]):
        valid = prev.valid & cur.valid
        out.append(float(np.abs(cur.data - prev.data)[valid].mean()) if valid.any() else 0.0)
    return out


def level_inputs(cascade, images, k, jobs=1):
    """Fused level-(k-1) maps for every image (the constant map when k == 0)."""
    if k == 0:
        cfg = cascade.levels[0][1]
        return [uniform_map(np.shape(im), cascade.uniform_init_value, cfg.polar(cascade.r_max)) for im in images]

    def one(im):
        return run_cascade(cascade, im, n_levels=k)[0]

    return _map(one, images, jobs)


def _map(fn, items, jobs):
    if jobs and jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


@dataclass(frozen=True)
class CascadeTrainParams:
    hidden: int = 64
    epochs: int | tuple = 30  # one count for all levels, or one per level
    init_std: float = 0.01
    optimizer: nncore.TrainConfig = field(default_factory=nncore.TrainConfig)
    uniform_init_value: float = 0.5
    views: ViewpointSet = field(default_factory=ViewpointSet)
    r_max: float | None = None


def _level_seeds(seed, k):
    init_seed, shuffle_seed = np.random.SeedSequence([int(seed), k]).generate_state(2)
    return int(init_seed), int(shuffle_seed)


def build_level_dataset(images, labels, contexts, cfg, views, r_max=None):
    polar = cfg.polar(r_max)
    data = []
    for img, lab, ctx in zip(images, labels, contexts):
        for off in views.offsets:
            data.append((input_sequence(img, ctx, off, cfg.scale, polar), label_sequence(lab, off, cfg.scale, polar)))
    return data


def train_cascade(configs, images, labels, params=CascadeTrainParams(), seed=0, jobs=1, on_level=None):
    """Train one BiLSTM per level configuration, coarse to fine.

    Returns the `CascadeModel` and one list of `nncore.LossReport` per level.
    ``on_level(k, cascade_so_far, reports)`` is called after each level.
    """
    if not images or len(images) != len(labels):
        raise ValueError("need a non-empty dataset with one label per image")
    configs = list(configs)
    levels = []
    curves = []
    for k, cfg in enumerate(configs):
        init_seed, shuffle_seed = _level_seeds(seed, k)
        model = nncore.init_bilstm(cfg.input_dim, params.hidden, cfg.band_size, params.init_std, init_seed)
        partial = CascadeModel(levels + [(model, cfg)], params.uniform_init_value, params.views, params.r_max)
        contexts = level_inputs(partial, images, k, jobs)
        data = build_level_dataset(images, labels, contexts, cfg, params.views, params.r_max)
        log.info("level %d: scale %d, %d sequences of length %d", k, cfg.scale, len(data), len(data[0][0]))
        epochs = params.epochs if isinstance(params.epochs, int) else params.epochs[k]
        model, reports = nncore.train_bilstm(model, data, epochs, params.optimizer, shuffle_seed)
        levels.append((model, cfg))
        curves.append(reports)
        if on_level is not None:
            on_level(k, CascadeModel(list(levels), params.uniform_init_value, params.views, params.r_max), reports)
    return CascadeModel(levels, params.uniform_init_value, params.views, params.r_max), curves


def save_cascade(directory, cascade, meta=None):
    """Write ``cascade.json`` plus one model file (and sidecar) per level.

    ``meta`` is recorded in every model sidecar.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, (model, cfg) in enumerate(cascade.levels):
        name = f"level{k}.bin"
        nncore.save_bilstm(d / name, model, {"level": k, "scale": cfg.scale, **(meta or {})})
        entries.append({"model": name, "scale": cfg.scale, "n_angle": cfg.n_angle, "n_radius": cfg.n_radius})
    manifest = {
        "format": CASCADE_FORMAT,
        "version": CASCADE_VERSION,
        "uniform_init_value": cascade.uniform_init_value,
        "viewpoint_offsets": list(cascade.views.offsets),
        "r_max": cascade.r_max,
        "image_shape": list(cascade.image_shape) if cascade.image_shape else None,
        "levels": entries,
    }
    path = d / "cascade.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_cascade(path):
    path = Path(path)
    if path.is_dir():
        path = path / "cascade.json"
    manifest = json.loads(path.read_text())
    if manifest.get("format") != CASCADE_FORMAT:
        raise ValueError(f"{path}: not a cascade manifest")
    levels = []
    for entry in manifest["levels"]:
        cfg = LevelConfig(entry["scale"], entry["n_angle"], entry["n_radius"])
        levels.append((nncore.load_bilstm(path.parent / entry["model"]), cfg))
    return CascadeModel(
        levels,
        manifest["uniform_init_value"],
        ViewpointSet(tuple(manifest["viewpoint_offsets"])),
        manifest.get("r_max"),
        tuple(manifest["image_shape"]) if manifest.get("image_shape") else None,
    )

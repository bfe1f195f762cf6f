"""Shape prediction from several serialization viewpoints and their fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .nncore import bilstm_forward

DEFAULT_OFFSETS = (0.0, 2 * np.pi / 3, 4 * np.pi / 3)


@dataclass(frozen=True)
class PolarConfig:
    n_angle: int = 80
    n_radius: int = 48
    r_max: float | None = None  # default: half the shorter image side
    center: tuple | None = None  # default: image centre

    def resolve(self, shape):
        center = self.center if self.center is not None else geometry.default_center(shape)
        r_max = self.r_max if self.r_max is not None else geometry.default_r_max(shape)
        return center, r_max


@dataclass(frozen=True)
class ViewpointSet:
    offsets: tuple = DEFAULT_OFFSETS

    def __post_init__(self):
        if not self.offsets:
            raise ValueError("at least one viewpoint offset is required")
        wrapped = np.mod(np.asarray(self.offsets, dtype=np.float64), 2 * np.pi)
        gaps = np.abs(wrapped[:, None] - wrapped[None, :])
        gaps = np.minimum(gaps, 2 * np.pi - gaps)
        if np.any(gaps[np.triu_indices(len(wrapped), 1)] < 1e-9):
            raise ValueError(f"viewpoint offsets {self.offsets} are not distinct modulo 2*pi")


@dataclass
class PredictionMap:
    data: np.ndarray
    valid: np.ndarray  # annulus indicator

    @property
    def shape(self):
        return self.data.shape


def uniform_map(shape, value, polar=PolarConfig()):
    center, r_max = polar.resolve(shape)
    valid = geometry.annulus_mask(shape, center, r_max)
    return PredictionMap(np.full(shape, float(value)), valid)


def serialize_bands(img, offset, s, polar):
    center, r_max = polar.resolve(img.shape)
    pol = geometry.serialize(img, center, polar.n_angle, polar.n_radius, r_max, offset)
    return geometry.partition(pol, s)


def input_sequence(img, context, offset, s, polar=PolarConfig()):
    """Per-timestep vectors: the image band followed by the context band."""
    img = np.asarray(img, dtype=np.float64)
    ctx = np.asarray(getattr(context, "data", context), dtype=np.float64)
    if ctx.shape != img.shape:
        raise ValueError(f"context shape {ctx.shape} != image shape {img.shape}")
    xb = serialize_bands(img, offset, s, polar).bands
    cb = serialize_bands(ctx, offset, s, polar).bands
    return np.concatenate([xb, cb], axis=1)


def label_sequence(label, offset, s, polar=PolarConfig()):
    return serialize_bands(np.asarray(label, dtype=np.float64), offset, s, polar).bands


def check_model_dims(model, s, polar):
    band = s * polar.n_radius
    if model.input_dim != 2 * band or model.output_dim != band:
        raise ValueError(
            f"model dims {model.input_dim}->{model.output_dim} do not match scale {s} "
            f"with n_radius {polar.n_radius} (expected {2 * band}->{band})"
        )
    if polar.n_angle % s:
        raise ValueError(f"scale {s} does not divide n_angle={polar.n_angle}")


def outputs_to_map(outputs, shape, offset, s, polar):
    center, r_max = polar.resolve(shape)
    seq = geometry.BandSequence(np.asarray(outputs), s, polar.n_radius, offset)
    pol = geometry.assemble(seq, center, r_max)
    data = geometry.deserialize(pol, shape[1], shape[0])
    valid = geometry.annulus_mask(shape, center, r_max)
    return PredictionMap(np.clip(data, 0.0, 1.0), valid)


def predict_view(model, img, context, offset, s, polar=PolarConfig()):
    """Shape map predicted by ``model`` from one serialization viewpoint."""
    check_model_dims(model, s, polar)
    X = input_sequence(img, context, offset, s, polar)
    Y, _ = bilstm_forward(model, X)
    return outputs_to_map(Y, np.shape(img), offset, s, polar)


def fuse_views(maps):
    """Pixel-wise mean of equally weighted maps."""
    maps = list(maps)
    if not maps:
        raise ValueError("nothing to fuse")
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ValueError("prediction maps differ in size")
    data = np.mean([m.data for m in maps], axis=0)
    valid = np.logical_and.reduce([m.valid for m in maps])
    return PredictionMap(np.clip(data, 0.0, 1.0), valid)


def predict_fused(model, img, context, views, s, polar=PolarConfig()):
    return fuse_views(predict_view(model, img, context, off, s, polar) for off in views.offsets)

"""Polar serialization of Cartesian images and band partitioning.

Conventions: images are ``(height, width)`` arrays indexed ``img[y, x]`` with
pixel centres at integer coordinates. Angles are measured from the +x axis
towards +y (counter-clockwise in ``(x, y)`` coordinates, which appears
clockwise on a screen whose y axis points down). Polar rows are angle samples
and columns are radius samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PolarImage:
    data: np.ndarray  # (n_angle, n_radius)
    center: tuple[float, float]
    r_max: float
    viewpoint_offset: float = 0.0

    @property
    def n_angle(self):
        return self.data.shape[0]

    @property
    def n_radius(self):
        return self.data.shape[1]

    def angles(self):
        return self.viewpoint_offset + TWO_PI * np.arange(self.n_angle) / self.n_angle

    def radii(self):
        return polar_radii(self.n_radius, self.r_max)


@dataclass(frozen=True)
class BandSequence:
    bands: np.ndarray  # (T, scale * n_radius), one flattened band per row
    scale: int
    n_radius: int
    viewpoint_offset: float = 0.0

    @property
    def length(self):
        return self.bands.shape[0]

    def __len__(self):
        return self.bands.shape[0]


def default_center(shape):
    """Geometric centre of an image of the given ``(height, width)``."""
    h, w = shape
    return ((w - 1) / 2.0, (h - 1) / 2.0)


def default_r_max(shape):
    return min(shape) / 2.0


def polar_radii(n_radius, r_max):
    return r_max * (np.arange(n_radius) + 0.5) / n_radius


def bilinear(img, x, y):
    """Bilinear samples of ``img`` at float coordinates; 0 outside the pixel grid."""
    h, w = img.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return np.where(inside, top * (1 - fy) + bottom * fy, 0.0)


def _check_dims(*dims):
    for d in dims:
        if int(d) != d or d < 1:
            raise ValueError(f"dimensions must be positive integers, got {dims}")


def serialize(img, center=None, n_angle=96, n_radius=96, r_max=None, offset=0.0):
    """Resample ``img`` on a polar grid around ``center``.

    Row i samples angle ``offset + 2*pi*i/n_angle``; column j samples radius
    ``r_max*(j + 0.5)/n_radius``.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if n_angle < 4 or n_radius < 4:
        raise ValueError(f"polar grid must be at least 4x4, got {n_angle}x{n_radius}")
    _check_dims(n_angle, n_radius)
    if center is None:
        center = default_center(img.shape)
    if r_max is None:
        r_max = default_r_max(img.shape)
    if not r_max > 0:
        raise ValueError(f"r_max must be positive, got {r_max}")
    cx, cy = float(center[0]), float(center[1])
    h, w = img.shape
    if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
        raise ValueError(f"center {center} outside image of size {w}x{h}")
    theta = offset + TWO_PI * np.arange(n_angle) / n_angle
    radii = polar_radii(n_radius, r_max)
    xs = cx + np.outer(np.cos(theta), radii)
    ys = cy + np.outer(np.sin(theta), radii)
    return PolarImage(bilinear(img, xs, ys), (cx, cy), float(r_max), float(offset))


def deserialize(polar, width, height):
    """Map a polar image back onto a ``height x width`` Cartesian grid.

    Pixels with radius in ``(0, r_max]`` interpolate the polar grid bilinearly,
    wrapping across the first and last angle rows; radii below the first
    sample column hold the first column. Everything else is 0.
    """
    _check_dims(width, height)
    n_angle, n_radius = polar.data.shape
    cx, cy = polar.center
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    dx = xs - cx
    dy = ys - cy
    r = np.hypot(dx, dy)
    theta = np.mod(np.arctan2(dy, dx) - polar.viewpoint_offset, TWO_PI)

    u = theta * n_angle / TWO_PI
    u0 = np.floor(u).astype(np.intp) % n_angle
    fu = u - np.floor(u)
    u1 = (u0 + 1) % n_angle

    v = np.clip(r * n_radius / polar.r_max - 0.5, 0.0, n_radius - 1)
    v0 = np.minimum(np.floor(v).astype(np.intp), n_radius - 2)
    fv = v - v0
    v1 = v0 + 1

    d = polar.data
    left = d[u0, v0] * (1 - fu) + d[u1, v0] * fu
    right = d[u0, v1] * (1 - fu) + d[u1, v1] * fu
    out = left * (1 - fv) + right * fv
    valid = (r > 0) & (r <= polar.r_max)
    return np.where(valid, out, 0.0)


def annulus_mask(shape, center, r_max):
    """Pixels the deserializer fills: radius in (0, r_max]."""
    h, w = shape
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    r = np.hypot(xs - center[0], ys - center[1])
    return (r > 0) & (r <= r_max)


def partition(polar, s):
    """Split the polar image into ``n_angle // s`` bands of ``s`` rows each."""
    data = polar.data if isinstance(polar, PolarImage) else np.asarray(polar)
    offset = polar.viewpoint_offset if isinstance(polar, PolarImage) else 0.0
    n_angle, n_radius = data.shape
    if s < 1 or n_angle % s:
        raise ValueError(f"scale {s} does not divide n_angle={n_angle}")
    bands = data.reshape(n_angle // s, s * n_radius)
    return BandSequence(bands.copy(), int(s), n_radius, offset)


def assemble(bands, center=(0.0, 0.0), r_max=1.0):
    """Stack a `BandSequence` back into a polar image (inverse of `partition`)."""
    arr = np.asarray(bands.bands, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != bands.scale * bands.n_radius:
        raise ValueError(f"bands of shape {arr.shape} do not match scale {bands.scale} x n_radius {bands.n_radius}")
    data = arr.reshape(arr.shape[0] * bands.scale, bands.n_radius)
    return PolarImage(data, tuple(center), float(r_max), bands.viewpoint_offset)


def band_sequence(bands, scale, n_radius, offset=0.0):
    """Build a `BandSequence` from a list of flat vectors, rejecting ragged input."""
    lengths = {len(b) for b in bands}
    if len(lengths) != 1 or lengths != {scale * n_radius}:
        raise ValueError(f"ragged bands: lengths {sorted(lengths)}, expected {scale * n_radius}")
    return BandSequence(np.array([np.asarray(b, dtype=np.float64) for b in bands]), scale, n_radius, offset)

"""Synthetic ultrasound-like images of star-convex objects with known masks.

Shapes are Fourier-perturbed ellipses. Rendering adds a smooth multiplicative
inhomogeneity field, grainy multiplicative speckle and occlusion arcs inside
which the object/background edge is blended away.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import fileio
from .asm import contour_to_mask

log = logging.getLogger(__name__)

N_CONTOUR_POINTS = 256
MIN_RADIUS_FRACTION = 0.3
HARMONICS = (2, 3, 4, 5)


@dataclass(frozen=True)
class ShapeSpec:
    base_radius: float
    aspect: float = 1.0
    orientation: float = 0.0
    harmonics: tuple = ()  # (amplitude as fraction of base radius, phase) for orders 2..5
    center_offset: tuple = (0.0, 0.0)

    def radius(self, theta):
        t = np.asarray(theta, dtype=np.float64) - self.orientation
        a = np.sqrt(self.aspect)
        r = self.base_radius / np.sqrt((np.cos(t) / a) ** 2 + (np.sin(t) * a) ** 2)
        for order, (amp, phase) in zip(HARMONICS, self.harmonics):
            r = r + self.base_radius * amp * np.cos(order * np.asarray(theta) + phase)
        return r

    def min_radius(self):
        return float(self.radius(np.linspace(0, 2 * np.pi, 4096, endpoint=False)).min())


@dataclass(frozen=True)
class ShapeRanges:
    base_radius: tuple = (17.0, 27.0)
    aspect: tuple = (0.7, 1.4)
    harmonic_amplitude: float = 0.06
    center_jitter: float = 3.0


@dataclass(frozen=True)
class DegradationSpec:
    arcs: tuple = ()  # (start angle, span) in radians, about the object centre
    speckle_variance: float = 0.0
    object_intensity: float = 0.3
    background_intensity: float = 0.6
    inhomogeneity: float = 0.0
    blend_width: float = 7.0  # half-width in px of the blended band across the boundary
    speckle_grain: float = 0.8  # Gaussian smoothing sigma of the speckle pattern

    def __post_init__(self):
        if self.speckle_variance < 0:
            raise ValueError("speckle variance must be non-negative")
        for start, span in self.arcs:
            if not (0 <= start < 2 * np.pi) or not (0 < span < 2 * np.pi):
                raise ValueError(f"bad occlusion arc ({start}, {span})")


@dataclass(frozen=True)
class DegradationRanges:
    max_arcs: int = 2
    arc_span_deg: tuple = (20.0, 60.0)
    speckle_variance: tuple = (0.02, 0.06)
    object_intensity: tuple = (0.2, 0.4)
    contrast: tuple = (0.2, 0.4)
    inhomogeneity: tuple = (0.0, 0.25)


@dataclass(frozen=True)
class DatasetRanges:
    size: int = 96
    shape: ShapeRanges = field(default_factory=ShapeRanges)
    degradation: DegradationRanges = field(default_factory=DegradationRanges)


def sample_shape_spec(rng, ranges=ShapeRanges()):
    amps = rng.uniform(0, ranges.harmonic_amplitude, len(HARMONICS))
    phases = rng.uniform(0, 2 * np.pi, len(HARMONICS))
    jitter = rng.uniform(-ranges.center_jitter, ranges.center_jitter, 2)
    return ShapeSpec(
        base_radius=float(rng.uniform(*ranges.base_radius)),
        aspect=float(np.exp(rng.uniform(np.log(ranges.aspect[0]), np.log(ranges.aspect[1])))),
        orientation=float(rng.uniform(0, np.pi)),
        harmonics=tuple((float(a), float(p)) for a, p in zip(amps, phases)),
        center_offset=(float(jitter[0]), float(jitter[1])),
    )


def shape_contour(spec, size, n_points=N_CONTOUR_POINTS):
    """Closed contour of ``spec`` placed in a ``size x size`` image."""
    if spec.min_radius() <= MIN_RADIUS_FRACTION * spec.base_radius:
        raise ValueError(
            f"radial function dips to {spec.min_radius():.3f} <= {MIN_RADIUS_FRACTION} x base radius"
        )
    theta = 2 * np.pi * np.arange(n_points) / n_points
    r = spec.radius(theta)
    cx = (size - 1) / 2.0 + spec.center_offset[0]
    cy = (size - 1) / 2.0 + spec.center_offset[1]
    return np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)


def gen_shape(seed, ranges=ShapeRanges(), size=96, spec=None):
    """Random (or given) star-convex shape; returns ``(contour points, mask, spec)``."""
    if spec is None:
        spec = sample_shape_spec(np.random.default_rng(seed), ranges)
    pts = shape_contour(spec, size)
    return pts, contour_to_mask(pts, size, size), spec


def _smooth_field(rng, shape, sigma):
    noise = ndimage.gaussian_filter(rng.normal(size=shape), sigma, mode="wrap")
    return noise / max(noise.std(), 1e-12)


def _arc_weight(angle, arcs, soft=np.deg2rad(4.0)):
    w = np.zeros_like(angle)
    for start, span in arcs:
        rel = np.mod(angle - start, 2 * np.pi)
        # distance inside the arc from its nearest end, wrapping
        inside = np.minimum(rel, span - rel)
        wa = np.where(rel <= span, np.clip(inside / soft + 0.5, 0, 1), 0.0)
        w = np.maximum(w, wa)
    return w


def render_image(mask, degradation, seed, center=None):
    """Render an image of the region ``mask`` under ``degradation``.

    Arcs are measured about ``center`` (default: mask centroid).
    """
    mask = np.asarray(mask, dtype=np.float64)
    rng = np.random.default_rng(seed)
    d = degradation
    base = d.background_intensity + (d.object_intensity - d.background_intensity) * mask
    if d.arcs:
        if center is None:
            ys, xs = np.nonzero(mask > 0.5)
            center = (xs.mean(), ys.mean())
        yy, xx = np.mgrid[: mask.shape[0], : mask.shape[1]].astype(np.float64)
        angle = np.mod(np.arctan2(yy - center[1], xx - center[0]), 2 * np.pi)
        inside = mask > 0.5
        signed = np.where(
            inside, ndimage.distance_transform_edt(inside), -ndimage.distance_transform_edt(~inside)
        )
        band = np.clip((d.blend_width - np.abs(signed - 0.5)) / 2.0, 0.0, 1.0)
        w = _arc_weight(angle, d.arcs) * band
        mid = 0.5 * (d.object_intensity + d.background_intensity)
        base = (1 - w) * base + w * mid
    field_ = np.ones_like(mask)
    if d.inhomogeneity > 0:
        field_ = 1.0 + d.inhomogeneity * np.tanh(_smooth_field(rng, mask.shape, mask.shape[0] / 6.0))
    img = base * field_
    if d.speckle_variance > 0:
        grain = _smooth_field(rng, mask.shape, d.speckle_grain)
        img = img * (1.0 + np.sqrt(d.speckle_variance) * grain)
    return np.clip(img, 0.0, 1.0)


def sample_degradation(rng, ranges=DegradationRanges()):
    n_arcs = int(rng.integers(1, ranges.max_arcs + 1)) if ranges.max_arcs else 0
    arcs = []
    start = rng.uniform(0, 2 * np.pi)
    for _ in range(n_arcs):
        span = np.deg2rad(rng.uniform(*ranges.arc_span_deg))
        arcs.append((float(np.mod(start, 2 * np.pi)), float(span)))
        # keep arcs apart so each one is a separate gap
        start += span + rng.uniform(np.deg2rad(60), np.deg2rad(150))
    obj = float(rng.uniform(*ranges.object_intensity))
    return DegradationSpec(
        arcs=tuple(arcs),
        speckle_variance=float(rng.uniform(*ranges.speckle_variance)),
        object_intensity=obj,
        background_intensity=obj + float(rng.uniform(*ranges.contrast)),
        inhomogeneity=float(rng.uniform(*ranges.inhomogeneity)),
    )


@dataclass
class Sample:
    seed: int
    image: np.ndarray
    mask: np.ndarray
    contour: np.ndarray
    shape: ShapeSpec
    degradation: DegradationSpec


def gen_sample(seed, ranges=DatasetRanges()):
    rng = np.random.default_rng(seed)
    spec = sample_shape_spec(rng, ranges.shape)
    pts, mask, _ = gen_shape(None, size=ranges.size, spec=spec)
    deg = sample_degradation(rng, ranges.degradation)
    center = ((ranges.size - 1) / 2.0 + spec.center_offset[0], (ranges.size - 1) / 2.0 + spec.center_offset[1])
    image = render_image(mask, deg, int(rng.integers(2**31)), center=center)
    return Sample(seed, image, mask, pts, spec, deg)


TEST_SEED_OFFSET = 500_000


def split_seeds(master_seed, n_train, n_test):
    """Per-sample seeds; train and test draw from disjoint ranges."""
    if n_train >= TEST_SEED_OFFSET or n_test >= TEST_SEED_OFFSET:
        raise ValueError("too many samples for the seed layout")
    base = int(master_seed) * 1_000_000
    return [base + i for i in range(n_train)], [base + TEST_SEED_OFFSET + i for i in range(n_test)]


@dataclass(frozen=True)
class ManifestEntry:
    split: str
    image: Path
    mask: Path
    contour: Path
    seed: int


MANIFEST_NAME = "manifest.tsv"


def gen_dataset(out_dir, n_train=300, n_test=60, ranges=DatasetRanges(), seed=0):
    """Write images, masks and contours plus a tab-separated manifest.

    Returns the manifest path. Paths in the manifest are relative to ``out_dir``.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    out = Path(out_dir)
    train_seeds, test_seeds = split_seeds(seed, n_train, n_test)
    rows = []
    for split, seeds in (("train", train_seeds), ("test", test_seeds)):
        sub = out / split
        try:
            sub.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create {sub}: {exc}") from exc
        for i, s in enumerate(seeds):
            sample = gen_sample(s, ranges)
            names = (f"{split}/img_{i:04d}.pgm", f"{split}/mask_{i:04d}.pgm", f"{split}/contour_{i:04d}.txt")
            try:
                fileio.write_pgm(out / names[0], sample.image)
                fileio.write_pgm(out / names[1], sample.mask)
                fileio.write_contour(out / names[2], sample.contour)
            except OSError as exc:
                raise OSError(f"writing sample {names[0]} under {out}: {exc}") from exc
            rows.append("\t".join((split, *names, str(s))))
    size = ranges.size
    header = [
        f"# polar center={(size - 1) / 2.0},{(size - 1) / 2.0} r_max={size / 2.0} offset=0",
        f"# master_seed={seed} size={size} ranges={_ranges_repr(ranges)}",
        "# split\timage\tmask\tcontour\tseed",
    ]
    path = out / MANIFEST_NAME
    path.write_text("\n".join(header + rows) + "\n")
    log.info("wrote %d train / %d test samples to %s", n_train, n_test, out)
    return path


def _ranges_repr(ranges):
    return repr(asdict(ranges)).replace("\t", " ")


def read_manifest(path):
    """Parse a dataset manifest into `ManifestEntry` rows with absolute paths."""
    path = Path(path)
    root = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(fields)}")
        split, img, mask, contour, seed = fields
        entries.append(ManifestEntry(split, root / img, root / mask, root / contour, int(seed)))
    return entries

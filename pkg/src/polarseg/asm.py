"""Point-distribution shape model and its fit to a shape prediction map.

Landmarks come from equal-angle rays about the region centroid, the model from
generalized Procrustes alignment plus PCA, and fitting searches along contour
normals for the steepest inside-to-outside descent of the map before
projecting the proposal back into the model space.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .geometry import bilinear

SHAPE_MAGIC = b"PSEGSHAP"
N_MAIN = 12
N_SECONDARY = 60


class FitDomainError(ValueError):
    """The mask or map cannot support landmark placement."""


class NoEdgeError(FitDomainError):
    """The prediction map has no usable edge; ``contour`` holds the unmodified init."""

    def __init__(self, message, contour):
        super().__init__(message)
        self.contour = contour


@dataclass(frozen=True)
class Contour:
    points: np.ndarray  # (n, 2) x, y; closed implicitly
    n_main: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise ValueError(f"a contour needs >= 3 (x, y) points, got shape {pts.shape}")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self):
        return len(self.points)

    def main_indices(self):
        """Indices of the main landmarks (evenly spread among the secondaries)."""
        if not self.n_main:
            return np.arange(0)
        return np.arange(0, self.n_points, self.n_points // self.n_main)

    def save(self, path):
        fileio.write_contour(path, self.points)

    @classmethod
    def load(cls, path):
        return cls(fileio.read_contour(path))


# -- polygons -------------------------------------------------------------------


def polygon_area(points):
    """Signed shoelace area (positive when angles increase along the points)."""
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def is_simple(points):
    """True when no two non-adjacent edges of the closed polygon intersect."""
    p = np.asarray(points, dtype=np.float64)
    n = len(p)
    a, b = p, np.roll(p, -1, axis=0)
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]

    def orient(p1, p2, p3):
        return np.sign((p2[:, 0] - p1[:, 0]) * (p3[:, 1] - p1[:, 1]) - (p2[:, 1] - p1[:, 1]) * (p3[:, 0] - p1[:, 0]))

    o1 = orient(a[i], b[i], a[j])
    o2 = orient(a[i], b[i], b[j])
    o3 = orient(a[j], b[j], a[i])
    o4 = orient(a[j], b[j], b[i])
    return not np.any((o1 * o2 < 0) & (o3 * o4 < 0))


def points_in_polygon(points, px, py):
    """Even-odd rule membership of query points ``(px, py)``."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    inside = np.zeros(px.shape, dtype=bool)
    xs, ys = points[:, 0], points[:, 1]
    xe, ye = np.roll(xs, -1), np.roll(ys, -1)
    for x0, y0, x1, y1 in zip(xs, ys, xe, ye):
        if y0 == y1:
            continue
        crosses = (y0 > py) != (y1 > py)
        xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < xint)
    return inside


def contour_to_mask(contour, width, height):
    """Binary mask whose pixels are set iff their centre lies inside the polygon."""
    pts = contour.points if isinstance(contour, Contour) else np.asarray(contour, dtype=np.float64)
    if not is_simple(pts):
        raise ValueError("contour is self-intersecting")
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    return points_in_polygon(pts, xs, ys).astype(np.float64)


# -- landmarks --------------------------------------------------------------------


def ray_crossings(img, origin, angles, level=0.5, step=0.05, max_r=None):
    """Distance along each ray where the bilinear image first drops below
    ``level``; NaN for rays that start below it or never cross."""
    h, w = img.shape
    max_r = max_r or float(np.hypot(h, w))
    r = np.arange(0.0, max_r, step)
    angles = np.asarray(angles, dtype=np.float64)
    vals = bilinear(
        img, origin[0] + np.outer(np.cos(angles), r), origin[1] + np.outer(np.sin(angles), r)
    )
    below = vals < level
    k = np.argmax(below, axis=1)
    ok = below.any(axis=1) & (k > 0)
    k = np.where(ok, k, 1)
    rows = np.arange(len(angles))
    v0, v1 = vals[rows, k - 1], vals[rows, k]
    dist = r[k - 1] + step * (v0 - level) / np.where(v0 == v1, 1.0, v0 - v1)
    return np.where(ok, dist, np.nan)


def sample_landmarks(mask, n_main=N_MAIN, n_secondary=N_SECONDARY):
    """Boundary points of a binary region at equal angles about its centroid.

    The boundary is the 0.5 level of the bilinearly interpolated mask. Points
    start at angle 0 and advance with increasing angle; every
    ``(n_main + n_secondary) // n_main``-th point is a main landmark.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.sum() == 0:
        raise FitDomainError("empty mask")
    n = n_main + n_secondary
    if n_main < 1 or n % n_main:
        raise ValueError(f"{n_main} main landmarks do not evenly divide {n} points")
    ys, xs = np.nonzero(mask > 0.5)
    c = (xs.mean(), ys.mean())
    if bilinear(mask, c[0], c[1]) < 0.5:
        raise FitDomainError(f"centroid {c} lies outside the region")
    angles = 2.0 * np.pi * np.arange(n) / n
    r = ray_crossings(mask, c, angles)
    if np.isnan(r).any():
        raise FitDomainError("some rays never leave the region")
    pts = np.stack([c[0] + r * np.cos(angles), c[1] + r * np.sin(angles)], axis=1)
    return Contour(pts, n_main)


# -- similarity alignment ----------------------------------------------------------


def similarity_fit(src, dst, weights=None):
    """Least-squares ``(scale, R, t)`` with ``dst ~ scale * src @ R.T + t`` (no reflection).

    Optional per-point ``weights`` (non-negative) weight the squared residuals.
    """
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    ms, md = w @ src, w @ dst
    a, b = src - ms, dst - md
    denom = float(np.sum(w[:, None] * a * a))
    if denom == 0:
        return 1.0, np.eye(2), md - ms
    u, sv, vt = np.linalg.svd((w[:, None] * b).T @ a)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    R = u @ np.diag([1.0, d]) @ vt
    scale = float(sv[0] + d * sv[1]) / denom
    return scale, R, md - scale * ms @ R.T


def apply_similarity(points, pose):
    scale, R, t = pose
    return scale * points @ R.T + t


def invert_similarity(points, pose):
    scale, R, t = pose
    return (points - t) @ R / scale


def _normalize(shape):
    c = shape - shape.mean(axis=0)
    return c / np.linalg.norm(c)


def procrustes_align(shapes, iters=50, tol=1e-12):
    """Generalized Procrustes alignment to a unit-norm, zero-centred mean.

    Returns the aligned shapes (each a similarity image of its input) and the mean.
    """
    shapes = [np.asarray(s, dtype=np.float64) for s in shapes]
    mean = _normalize(shapes[0])
    aligned = shapes
    for _ in range(iters):
        aligned = [apply_similarity(s, similarity_fit(s, mean)) for s in shapes]
        new_mean = _normalize(np.mean(aligned, axis=0))
        # keep the reference orientation of the first shape
        new_mean = apply_similarity(new_mean, similarity_fit(new_mean, mean))
        new_mean = _normalize(new_mean)
        if np.linalg.norm(new_mean - mean) < tol:
            mean = new_mean
            break
        mean = new_mean
    aligned = [apply_similarity(s, similarity_fit(s, mean)) for s in shapes]
    return np.array(aligned), mean


@dataclass
class ShapeModel:
    mean: np.ndarray  # (n, 2), zero-centred, unit Frobenius norm
    modes: np.ndarray  # (2n, m) orthonormal columns over the flattened x0, y0, x1, ... layout
    eigenvalues: np.ndarray  # (m,) descending

    @property
    def n_points(self):
        return len(self.mean)

    @property
    def n_modes(self):
        return self.modes.shape[1]

    def limits(self, n_std=3.0):
        return n_std * np.sqrt(self.eigenvalues)

    def shape(self, coeffs=None):
        flat = self.mean.reshape(-1)
        if coeffs is not None and self.n_modes:
            flat = flat + self.modes @ coeffs
        return flat.reshape(-1, 2)

    def save(self, path):
        fileio.write_container(
            path, SHAPE_MAGIC, (self.n_points, self.n_modes), [self.mean, self.modes, self.eigenvalues]
        )

    @classmethod
    def load(cls, path):
        _, blocks = fileio.read_container(path, SHAPE_MAGIC, lambda h: [(h[0], 2), (2 * h[0], h[1]), (h[1],)])
        return cls(*blocks)


def build_shape_model(contours, variance_kept=0.98):
    """Procrustes-align the contours and keep the fewest PCA modes whose
    cumulative variance reaches ``variance_kept``."""
    shapes = [c.points if isinstance(c, Contour) else np.asarray(c, dtype=np.float64) for c in contours]
    if len(shapes) < 2:
        raise ValueError("need at least two contours")
    if len({s.shape for s in shapes}) != 1:
        raise ValueError("contours must have equal point counts")
    aligned, ref = procrustes_align(shapes)
    # tangent-space projection: residuals become orthogonal to the scale and
    # rotation directions of the reference, so pose and shape decouple
    aligned = aligned / np.einsum("kij,ij->k", aligned, ref)[:, None, None]
    # centre on the sample mean so N shapes span at most N - 1 modes
    mean = aligned.mean(axis=0)
    X = aligned.reshape(len(shapes), -1) - mean.reshape(-1)
    _, sv, vt = np.linalg.svd(X, full_matrices=False)
    eig = sv**2 / (len(shapes) - 1)
    total = eig.sum()
    if total <= 1e-24:
        return ShapeModel(mean, np.zeros((mean.size, 0)), np.zeros(0))
    # eigenvalues at round-off level carry no shape variation
    significant = eig > total * 1e-18
    m = int(significant.sum())
    if variance_kept < 1.0:
        cum = np.cumsum(eig) / total
        m = min(m, int(np.searchsorted(cum, variance_kept - 1e-12) + 1))
    return ShapeModel(mean, vt[:m].T.copy(), eig[:m].copy())


def project(model, points, n_std=3.0, iters=10, weights=None):
    """Fit pose and clamped mode coefficients so the model instance matches ``points``.

    Returns ``(coeffs, pose)``; ``apply_similarity(model.shape(coeffs), pose)``
    is the regularised shape. Points with zero weight do not constrain the fit.
    """
    coeffs = np.zeros(model.n_modes)
    limits = model.limits(n_std)
    w2 = None
    if weights is not None:
        w2 = np.repeat(np.asarray(weights, dtype=np.float64), 2)
        # weighted normal equations for the mode coefficients
        gram = model.modes.T @ (w2[:, None] * model.modes)
    for _ in range(iters):
        pose = similarity_fit(model.shape(coeffs), points, weights)
        resid = invert_similarity(points, pose).reshape(-1) - model.mean.reshape(-1)
        if w2 is None:
            new = model.modes.T @ resid
        else:
            new = np.linalg.lstsq(gram, model.modes.T @ (w2 * resid), rcond=None)[0]
        new = np.clip(new, -limits, limits)
        if np.allclose(new, coeffs, atol=1e-12, rtol=0):
            coeffs = new
            break
        coeffs = new
    pose = similarity_fit(model.shape(coeffs), points, weights)
    return coeffs, pose


def outward_normals(points):
    tangent = np.roll(points, -1, axis=0) - np.roll(points, 1, axis=0)
    normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
    normal /= np.maximum(np.linalg.norm(normal, axis=1, keepdims=True), 1e-12)
    if np.sum(np.einsum("ij,ij->i", normal, points - points.mean(axis=0))) < 0:
        normal = -normal
    return normal


def init_at_centroid(model, pmap, level=0.5):
    """Mean shape centred on the map's superlevel set with matching area."""
    region = pmap >= level
    area = float(region.sum())
    if area == 0:
        return None
    ys, xs = np.nonzero(region)
    mean_area = abs(polygon_area(model.mean))
    scale = np.sqrt(area / mean_area)
    return model.mean * scale + np.array([xs.mean(), ys.mean()])


@dataclass
class AsmFit:
    contour: Contour
    coeffs: np.ndarray
    pose: tuple
    iterations: int


def fit_asm(
    model, pmap, init=None, iters=30, profile_len=8, n_std=3.0, tol=0.1, min_edge=1e-6, edge_fraction=0.25
):
    """Fit ``model`` to a prediction map.

    At every iteration each landmark moves to the position within
    ``profile_len`` samples along its outward normal where the map descends
    most steeply; the proposal is then projected into the model space with
    coefficients clamped to ``n_std`` standard deviations. Landmarks whose
    strongest descent is below ``edge_fraction`` of the median over all
    landmarks do not move and get zero weight in the projection, so the model
    bridges gaps in the map. Stops once the mean landmark movement falls
    below ``tol`` pixels.
    """
    pmap = np.asarray(getattr(pmap, "data", pmap), dtype=np.float64)
    flat = np.ptp(pmap) < min_edge
    if init is None or (isinstance(init, str) and init == "mean-at-centroid"):
        pts = init_at_centroid(model, pmap)
        if pts is None:
            fallback = Contour(model.mean * 0 + np.array(pmap.shape[::-1]) / 2.0)
            raise NoEdgeError("prediction map has no region above 0.5", fallback)
    else:
        pts = np.array(init.points if isinstance(init, Contour) else init, dtype=np.float64)
    init_contour = Contour(pts.copy(), N_MAIN if len(pts) == N_MAIN + N_SECONDARY else 0)
    if flat:
        raise NoEdgeError("prediction map is constant", init_contour)

    offsets = np.arange(-profile_len, profile_len + 1, dtype=np.float64)
    coeffs, pose = project(model, pts, n_std)
    it = 0
    for it in range(1, iters + 1):
        normals = outward_normals(pts)
        # one extra sample at each end so the central difference covers every offset
        ext = np.arange(-profile_len - 1, profile_len + 2, dtype=np.float64)
        sx = pts[:, :1] + ext * normals[:, :1]
        sy = pts[:, 1:] + ext * normals[:, 1:]
        prof = bilinear(pmap, sx, sy)
        descent = -(prof[:, 2:] - prof[:, :-2]) / 2.0
        if it == 1 and np.max(np.abs(descent)) < min_edge:
            raise NoEdgeError("prediction map is flat along every search profile", init_contour)
        best = np.argmax(descent, axis=1)
        shift = offsets[best].copy()
        # landmarks whose strongest descent is weak next to the typical one
        # carry no edge evidence and are left to the model
        peak = descent[np.arange(len(best)), best]
        evidence = peak > max(min_edge, edge_fraction * float(np.median(peak)))
        if evidence.sum() < 3:
            evidence[:] = peak > min_edge
        shift[~evidence] = 0.0
        # parabolic sub-sample refinement of the peak
        inner = (best > 0) & (best < len(offsets) - 1)
        rows = np.nonzero(inner)[0]
        l, c, r = descent[rows, best[rows] - 1], descent[rows, best[rows]], descent[rows, best[rows] + 1]
        den = l - 2 * c + r
        frac = np.where(np.abs(den) > 1e-12, 0.5 * (l - r) / np.where(den == 0, 1, den), 0.0)
        shift[rows] += np.clip(frac, -0.5, 0.5)
        proposed = pts + shift[:, None] * normals
        coeffs, pose = project(model, proposed, n_std, weights=evidence.astype(np.float64))
        new_pts = apply_similarity(model.shape(coeffs), pose)
        moved = float(np.mean(np.linalg.norm(new_pts - pts, axis=1)))
        pts = new_pts
        if moved < tol:
            break
    return AsmFit(Contour(pts, init_contour.n_main), coeffs, pose, it)


def save_shape_model(path, model):
    model.save(Path(path))


def load_shape_model(path):
    return ShapeModel.load(Path(path))

"""On-disk formats: binary PGM images, raw float map dumps, contour text files
and the versioned little-endian parameter container shared by network and
shape-model files."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


def write_pgm(path, image):
    """Write a [0, 1] image as binary P5 graymap, maxval 255."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    pixels = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(pixels.tobytes())


def _pgm_tokens(data):
    # Header tokens are whitespace separated; '#' starts a comment to end of line.
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path):
    """Read a P5 graymap into a float64 array scaled to [0, 1]."""
    data = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(data)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary graymap (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval < 256:
        raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
    else:
        raster = np.frombuffer(data, dtype=">u2", count=width * height, offset=offset)
    return raster.reshape(height, width).astype(np.float64) / maxval


RAW_MAGIC = b"PSEGRAW\x00"


def write_raw_map(path, values):
    """Lossless dump of a 2-D float map: magic, height, width, then '<f8' data."""
    arr = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<II", *arr.shape))
        fh.write(arr.tobytes())


def read_raw_map(path):
    data = Path(path).read_bytes()
    if data[:8] != RAW_MAGIC:
        raise ValueError(f"{path}: bad raw map magic")
    h, w = struct.unpack_from("<II", data, 8)
    return np.frombuffer(data, dtype="<f8", count=h * w, offset=16).reshape(h, w).copy()


def write_contour(path, points):
    """One header line with the point count, then 'x y' per line."""
    pts = np.asarray(points, dtype=np.float64)
    lines = [str(len(pts))]
    lines += [f"{x!r} {y!r}" for x, y in pts.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_contour(path):
    lines = Path(path).read_text().split("\n")
    n = int(lines[0])
    pts = np.array([[float(v) for v in line.split()] for line in lines[1 : n + 1]])
    if pts.shape != (n, 2):
        raise ValueError(f"{path}: expected {n} points, got {pts.shape}")
    return pts


CONTAINER_VERSION = 1


def write_container(path, magic, header, blocks):
    """Write `magic` (8 bytes), format version and `header` as little-endian
    uint32, followed by every block as C-ordered little-endian float64."""
    if len(magic) != 8:
        raise ValueError("container magic must be 8 bytes")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", CONTAINER_VERSION, len(header)))
        fh.write(struct.pack(f"<{len(header)}I", *header))
        for block in blocks:
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def read_container(path, magic, block_shapes):
    """Inverse of `write_container`. `block_shapes(header)` returns the list of
    block shapes implied by the dimension header."""
    data = Path(path).read_bytes()
    if data[:8] != magic:
        raise ValueError(f"{path}: expected magic {magic!r}, found {data[:8]!r}")
    version, n_header = struct.unpack_from("<II", data, 8)
    if version != CONTAINER_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    header = struct.unpack_from(f"<{n_header}I", data, 16)
    offset = 16 + 4 * n_header
    blocks = []
    for shape in block_shapes(header):
        count = int(np.prod(shape))
        blocks.append(
            np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        )
        offset += 8 * count
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return header, blocks

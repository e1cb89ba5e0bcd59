"""On-disk formats: binary field series, text equations, PGM heatmaps."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .model import PDEModel, reconstruct
from .pointcloud import Domain, PointSet
from .spectral import FieldSeries
from .stencil import derivative_indices

__all__ = [
    "MAGIC",
    "VERSION",
    "series_nbytes",
    "write_series",
    "read_series",
    "format_equation",
    "parse_equation",
    "write_equation",
    "read_equation",
    "rasterize",
    "write_pgm",
    "read_pgm",
]

MAGIC = b"TPDN"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


def series_nbytes(n, T):
    return _HEADER.size + 16 * n + 8 * T * n


def write_series(path, series: FieldSeries):
    """Write ``series`` as little-endian binary: header, coordinates, snapshots."""
    ps = series.pointset
    header = _HEADER.pack(MAGIC, VERSION, ps.n, series.T, ps.domain.extent, series.dt)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ps.points, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(series.snapshots, dtype="<f8").tobytes())


def read_series(path) -> FieldSeries:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, T, extent, dt = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    if len(raw) != series_nbytes(n, T):
        raise ValueError(
            f"{path}: expected {series_nbytes(n, T)} bytes for n={n}, T={T}, got {len(raw)}"
        )
    off = _HEADER.size
    pts = np.frombuffer(raw, dtype="<f8", count=2 * n, offset=off).reshape(n, 2)
    off += 16 * n
    snaps = np.frombuffer(raw, dtype="<f8", count=T * n, offset=off).reshape(T, n)
    ps = PointSet(Domain(extent), pts.astype(float))
    return FieldSeries(ps, dt, snaps.astype(float))


def format_equation(model: PDEModel) -> str:
    """``w0 <value>`` then one ``q r value`` line per derivative, in canonical order.

    Values use ``repr`` so parsing them back is exact. A trailing comment records
    ``dt`` and the human-readable equation.
    """
    lines = [f"w0 {float(model.w0)!r}"]
    for (q, r), v in zip(derivative_indices(model.Q), model.w):
        lines.append(f"{q} {r} {float(v)!r}")
    lines.append(f"# dt {float(model.dt)!r}")
    lines.append(f"# {reconstruct(model)}")
    return "\n".join(lines) + "\n"


def parse_equation(text: str, dt: float | None = None) -> PDEModel:
    w0 = None
    terms = {}
    file_dt = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "dt":
                file_dt = float(parts[1])
            continue
        parts = line.split()
        if parts[0] == "w0" and len(parts) == 2:
            w0 = float(parts[1])
        elif len(parts) == 3:
            terms[(int(parts[0]), int(parts[1]))] = float(parts[2])
        else:
            raise ValueError(f"equation line {lineno}: cannot parse {line!r}")
    if w0 is None:
        raise ValueError("equation file has no 'w0' line")
    Q = max((q + r for q, r in terms), default=0)
    if Q < 1 or sorted(terms) != sorted(derivative_indices(Q)):
        raise ValueError(f"equation terms {sorted(terms)} are not a complete derivative set")
    dt = file_dt if dt is None else dt
    if dt is None:
        raise ValueError("equation file carries no dt and none was given")
    return PDEModel(Q, dt, w0, [terms[i] for i in derivative_indices(Q)])


def write_equation(path, model: PDEModel):
    Path(path).write_text(format_equation(model))


def read_equation(path, dt=None) -> PDEModel:
    return parse_equation(Path(path).read_text(), dt)


def rasterize(pointset: PointSet, values, size=256):
    """Nearest-neighbor image of scattered values; row 0 is the top (largest y)."""
    extent = pointset.domain.extent
    centers = (np.arange(size) + 0.5) * (extent / size)
    xx, yy = np.meshgrid(centers, centers[::-1])
    tree = cKDTree(pointset.points, boxsize=extent)
    _, idx = tree.query(np.column_stack([xx.ravel(), yy.ravel()]))
    return np.asarray(values, dtype=float)[idx].reshape(size, size)


def write_pgm(path, image):
    """Binary 8-bit PGM with per-image linear min-max scaling (recorded in a comment)."""
    image = np.asarray(image, dtype=float)
    lo, hi = float(np.min(image)), float(np.max(image))
    span = hi - lo
    scaled = np.zeros_like(image) if span == 0 else (image - lo) / span
    pixels = np.clip(np.rint(scaled * 255), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    header = f"P5\n# linear min-max scaling: 0 -> {lo!r}, 255 -> {hi!r}\n{w} {h}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path):
    """Read a binary PGM written by :func:`write_pgm`; returns ``(pixels, comments)``."""
    raw = Path(path).read_bytes()
    tokens, comments = [], []
    pos = 0
    while len(tokens) < 4:
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            comments.append(line[1:].strip())
        else:
            tokens.extend(line.split())
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return pixels, comments

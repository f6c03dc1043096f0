"""Point-cloud containers, file I/O, normalization and the synthetic shape corpus."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInputError, EmptyCloudError, ParseError

SHAPE_KINDS = ("sphere", "torus", "box", "cylinder", "cone")


@dataclass
class PointCloud:
    """A set of P points in 3-space, stored as a (P, 3) float64 array."""

    points: np.ndarray
    label: Optional[str] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (P, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class NormStats:
    centroid: np.ndarray
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


# I/O


def _parse_floats(fields, lineno):
    try:
        return [float(f) for f in fields]
    except ValueError:
        raise ParseError(f"non-numeric field in {' '.join(fields)!r}", line=lineno) from None


def _read_xyz(lines):
    pts = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.replace(",", " ").split()
        if len(fields) < 3:
            raise ParseError(f"expected 3 coordinates, got {len(fields)}", line=lineno)
        pts.append(_parse_floats(fields[:3], lineno))
    return pts


def _read_ply_ascii(lines):
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", line=1)
    elements = []  # (name, count, [property names])
    lineno = 1
    header_end = None
    for lineno in range(2, len(lines) + 1):
        tokens = lines[lineno - 1].split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise ParseError(f"only ascii PLY is supported, got {' '.join(tokens[1:])!r}", line=lineno)
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ParseError("malformed element line", line=lineno)
            try:
                count = int(tokens[2])
            except ValueError:
                raise ParseError("non-integer element count", line=lineno) from None
            elements.append((tokens[1], count, []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before any element", line=lineno)
            elements[-1][2].append(tokens[-1])
        elif tokens[0] == "end_header":
            header_end = lineno
            break
        else:
            raise ParseError(f"unexpected header keyword {tokens[0]!r}", line=lineno)
    if header_end is None:
        raise ParseError("missing end_header", line=lineno)

    body = header_end  # index into lines of the first body line
    for name, count, props in elements:
        if name != "vertex":
            body += count
            continue
        try:
            cols = [props.index(axis) for axis in ("x", "y", "z")]
        except ValueError:
            raise ParseError("vertex element lacks x/y/z properties", line=header_end) from None
        pts = []
        for lineno in range(body + 1, body + count + 1):
            if lineno > len(lines):
                raise ParseError("unexpected end of file inside vertex data", line=lineno)
            fields = lines[lineno - 1].split()
            if len(fields) < len(props):
                raise ParseError(f"expected {len(props)} vertex fields, got {len(fields)}", line=lineno)
            pts.append(_parse_floats([fields[c] for c in cols], lineno))
        return pts
    raise ParseError("no vertex element in header", line=header_end)


def load_point_cloud(path, format=None):
    """Read a cloud from an ``xyz-text`` or ``ply-ascii`` file, keeping file order."""
    if format is None:
        format = "ply-ascii" if str(path).lower().endswith(".ply") else "xyz-text"
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    if format == "xyz-text":
        pts = _read_xyz(lines)
    elif format == "ply-ascii":
        pts = _read_ply_ascii(lines)
    else:
        raise ValueError(f"unknown point-cloud format {format!r}")
    if not pts:
        raise EmptyCloudError(f"{path}: file contains no points")
    arr = np.array(pts, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr))[0, 0])
        raise ParseError("non-finite coordinate", line=bad + 1)
    return PointCloud(arr)


def save_xyz(pc, path):
    tmp = f"{path}.tmp"
    np.savetxt(tmp, pc.points, fmt="%.17g")
    os.replace(tmp, path)


# sampling and normalization


def sample_points(pc, P, seed):
    """Draw P points, with replacement only if the cloud has fewer than P."""
    if P <= 0:
        raise ValueError(f"P must be positive, got {P}")
    n = len(pc)
    if n == 0:
        raise EmptyCloudError("cannot sample from an empty cloud")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=P, replace=n < P)
    return PointCloud(pc.points[idx], label=pc.label)


def normalize(pc):
    """Center the cloud and divide by the pooled per-coordinate standard deviation."""
    pts = pc.points
    if len(pts) < 2:
        raise DegenerateInputError("normalization needs at least 2 points")
    mu = pts.mean(axis=0)
    centered = pts - mu
    sigma = float(np.sqrt(np.sum(centered * centered) / (3 * len(pts))))
    if sigma < 1e-12:
        raise DegenerateInputError(f"cloud has no spread (sigma={sigma:.3g})")
    return PointCloud(centered / sigma, label=pc.label), NormStats(mu, sigma)


def denormalize(pc, stats):
    return PointCloud(pc.points * stats.scale + np.asarray(stats.centroid, dtype=np.float64), label=pc.label)


# synthetic primitives


def _sphere(rng, P):
    v = rng.standard_normal((P, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _torus(rng, P, major=1.0, minor=0.25):
    # rejection on the tube angle makes density proportional to surface area
    out = np.empty((0, 3))
    while len(out) < P:
        m = 2 * (P - len(out)) + 8
        u = rng.uniform(0, 2 * np.pi, m)
        v = rng.uniform(0, 2 * np.pi, m)
        keep = rng.uniform(0, 1, m) < (major + minor * np.cos(v)) / (major + minor)
        u, v = u[keep], v[keep]
        ring = major + minor * np.cos(v)
        out = np.vstack([out, np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1)])
    return out[:P]


def _box(rng, P):
    pts = rng.uniform(-0.5, 0.5, (P, 3))
    axis = rng.integers(0, 3, P)
    side = np.where(rng.integers(0, 2, P) == 1, 0.5, -0.5)
    pts[np.arange(P), axis] = side
    return pts


def _cylinder(rng, P, radius=0.5, height=1.0):
    lateral = 2 * np.pi * radius * height
    cap = np.pi * radius**2
    part = rng.choice(3, size=P, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, P)
    r = np.where(part == 0, radius, radius * np.sqrt(rng.uniform(0, 1, P)))
    z = np.select([part == 0, part == 1], [rng.uniform(-height / 2, height / 2, P), height / 2], -height / 2)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _cone(rng, P, radius=0.5, height=1.0):
    lateral = np.pi * radius * np.hypot(radius, height)
    base = np.pi * radius**2
    on_base = rng.uniform(0, 1, P) < base / (lateral + base)
    theta = rng.uniform(0, 2 * np.pi, P)
    # fraction of the way from apex to rim; sqrt gives area-uniform density on both parts
    s = np.sqrt(rng.uniform(0, 1, P))
    r = radius * s
    z = np.where(on_base, -height / 2, height / 2 - height * s)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


_GENERATORS = {
    "sphere": _sphere,
    "torus": _torus,
    "box": _box,
    "cylinder": _cylinder,
    "cone": _cone,
}


def gen_shape(kind, P, jitter=0.0, seed=0):
    """Sample P points uniformly by area on a unit-scale primitive, plus Gaussian jitter."""
    if kind not in _GENERATORS:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {', '.join(SHAPE_KINDS)}")
    if P < 1:
        raise ValueError(f"P must be positive, got {P}")
    if jitter < 0:
        raise ValueError(f"jitter must be nonnegative, got {jitter}")
    rng = np.random.default_rng(seed)
    pts = _GENERATORS[kind](rng, P)
    if jitter > 0:
        pts = pts + jitter * rng.standard_normal(pts.shape)
    return PointCloud(pts, label=kind)


# normals


def estimate_normals(pc, k=16):
    """PCA normals over k nearest neighbours (the point itself included), oriented away from the centroid."""
    pts = pc.points
    P = len(pts)
    if k < 3:
        raise ValueError(f"k must be at least 3, got {k}")
    if P < k:
        raise ValueError(f"need at least k={k} points, got {P}")
    _, idx = cKDTree(pts).query(pts, k=k)
    nbrs = pts[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("pki,pkj->pij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    outward = np.einsum("pi,pi->p", normals, pts - pts.mean(axis=0))
    # points level with the centroid get a fixed convention: largest component positive
    dominant = normals[np.arange(P), np.argmax(np.abs(normals), axis=1)]
    flip = np.where(np.abs(outward) > 1e-12, outward < 0, dominant < 0)
    normals[flip] *= -1
    return normals

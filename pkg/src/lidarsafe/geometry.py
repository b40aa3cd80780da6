"""2D geometric primitives: obstacle maps, polar scans, and frame translation.

Everything here is a plain value type; operations are pure functions, so
concurrent use is safe.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


class MapParseError(ValueError):
    """A map or scan file line could not be parsed."""


@dataclass(frozen=True)
class Pose:
    """Planar position in meters.

    Heading is deliberately absent: beam angles are treated as world-frame
    directions, so a pose is a pure translation.
    """

    x1: float
    x2: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x1) and math.isfinite(self.x2)):
            raise ValueError(f"pose components must be finite, got ({self.x1}, {self.x2})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2])

    @classmethod
    def from_array(cls, a) -> "Pose":
        a = np.asarray(a, dtype=float).ravel()
        return cls(float(a[0]), float(a[1]))

    def shifted(self, d) -> "Pose":
        d = np.asarray(d, dtype=float).ravel()
        return Pose(self.x1 + float(d[0]), self.x2 + float(d[1]))


class PointCloudMap:
    """A priori known obstacle map: a set of world-frame 2D points."""

    def __init__(self, points) -> None:
        pts = np.array(points, dtype=float).reshape(-1, 2)
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("map coordinates must be finite")
        pts.setflags(write=False)
        self.points = pts

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def __repr__(self) -> str:
        return f"PointCloudMap(n={len(self)})"

    def without(self, drop_mask) -> "PointCloudMap":
        """New map with the flagged points removed."""
        drop = np.asarray(drop_mask, dtype=bool).ravel()
        if drop.shape[0] != len(self):
            raise ValueError("mask length must match point count")
        return PointCloudMap(self.points[~drop])


class PolarScan:
    """One LiDAR sweep: per-beam (range, angle) plus an explicit validity mask.

    Angles are strictly increasing in [0, 2*pi). Invalid beams carry NaN in
    the range array, but the boolean mask is the source of truth; the NaN is
    only hygiene.
    """

    def __init__(self, ranges, angles, valid=None) -> None:
        r = np.array(ranges, dtype=float).ravel()
        a = np.array(angles, dtype=float).ravel()
        if r.shape != a.shape:
            raise ValueError("ranges and angles must have equal length")
        if valid is None:
            v = np.isfinite(r) & (r > 0.0)
        else:
            v = np.array(valid, dtype=bool).ravel()
            if v.shape != r.shape:
                raise ValueError("validity mask length must match beam count")
        if a.size:
            if np.any(a < 0.0) or np.any(a >= TWO_PI):
                raise ValueError("angles must lie in [0, 2*pi)")
            if np.any(np.diff(a) <= 0.0):
                raise ValueError("angles must be strictly increasing")
        rv = r[v]
        if rv.size and (np.any(~np.isfinite(rv)) or np.any(rv <= 0.0)):
            raise ValueError("valid ranges must be finite and positive")
        r = r.copy()
        r[~v] = np.nan
        for arr in (r, a, v):
            arr.setflags(write=False)
        self.ranges = r
        self.angles = a
        self.valid = v

    def __len__(self) -> int:
        return int(self.angles.shape[0])

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def __repr__(self) -> str:
        return f"PolarScan(beams={len(self)}, valid={self.n_valid})"


class CartesianScan:
    """World-frame translation of a scan: one point per valid beam."""

    def __init__(self, points, origin: Pose) -> None:
        pts = np.array(points, dtype=float).reshape(-1, 2)
        pts.setflags(write=False)
        self.points = pts
        self.origin = origin

    def __len__(self) -> int:
        return int(self.points.shape[0])


def load_map(path) -> PointCloudMap:
    """Read a map file: UTF-8 text, one "x,y" pair per line, '#' comment lines."""
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise MapParseError(f"{path}: line {lineno}: expected 'x,y', got {raw.rstrip()!r}")
            try:
                x, y = float(parts[0]), float(parts[1])
            except ValueError:
                raise MapParseError(
                    f"{path}: line {lineno}: expected two numbers, got {raw.rstrip()!r}"
                ) from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise MapParseError(f"{path}: line {lineno}: coordinates must be finite")
            pts.append((x, y))
    return PointCloudMap(np.array(pts, dtype=float).reshape(-1, 2))


def save_map(cloud: PointCloudMap, path, header: str | None = None) -> None:
    """Write a map in the same "x,y" text format that load_map reads."""
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for x, y in cloud.points:
            fh.write(f"{x:.17g},{y:.17g}\n")


def to_cartesian(pose: Pose, scan: PolarScan) -> CartesianScan:
    """Translate a scan's valid beams into world-frame points about `pose`.

    Invalid beams are omitted; angles are used as world-frame directions.
    """
    r = scan.ranges[scan.valid]
    a = scan.angles[scan.valid]
    pts = np.column_stack((pose.x1 + r * np.cos(a), pose.x2 + r * np.sin(a)))
    return CartesianScan(pts, pose)


def polar_about(center: Pose, points) -> tuple[np.ndarray, np.ndarray]:
    """Radii and angles (normalized to [0, 2*pi)) of world points about a center."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    d = pts - center.as_array()
    radii = np.hypot(d[:, 0], d[:, 1])
    ang = np.mod(np.arctan2(d[:, 1], d[:, 0]), TWO_PI)
    # mod can round up to exactly 2*pi for angles just below zero
    ang[ang >= TWO_PI] = 0.0
    return radii, ang

"""Synthetic 2D LiDAR: scan reconstruction from a map and the noisy sensor channel.

Reconstruction divides the full circle into equal angular sectors and keeps,
per sector, the nearest map point within range. The simulated sensor is the
same reconstruction from the true pose, with bounded radial noise added per
beam.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import TWO_PI, PointCloudMap, PolarScan, Pose, polar_about


@dataclass(frozen=True)
class ScanParams:
    """Angular resolution (radians per sector) and maximum range of the unit."""

    angular_resolution: float
    max_range: float

    def __post_init__(self) -> None:
        if not self.angular_resolution > 0.0:
            raise ValueError("angular_resolution must be positive")
        if not self.max_range > 0.0:
            raise ValueError("max_range must be positive")
        ratio = TWO_PI / self.angular_resolution
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"angular_resolution must divide the full circle: 2*pi/c_r = {ratio!r}"
            )

    @property
    def sector_count(self) -> int:
        return int(round(TWO_PI / self.angular_resolution))

    def beam_angles(self) -> np.ndarray:
        """Beam angle per sector: the sector center (k + 1/2) * c_r."""
        k = np.arange(self.sector_count, dtype=float)
        return (k + 0.5) * self.angular_resolution

    def sector_of(self, angles) -> np.ndarray:
        """Sector index for each angle in [0, 2*pi); sector k covers [k*c_r, (k+1)*c_r)."""
        a = np.asarray(angles, dtype=float)
        idx = np.floor(a / self.angular_resolution).astype(np.int64)
        return np.clip(idx, 0, self.sector_count - 1)

    @classmethod
    def from_degrees(cls, resolution_deg: float, max_range: float) -> "ScanParams":
        return cls(math.radians(resolution_deg), max_range)


@dataclass(frozen=True)
class LidarNoise:
    """Per-beam radial noise: zero-mean Gaussian (std `sigma`) truncated to [-bound, bound]."""

    sigma: float = 0.0
    bound: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma < 0.0 or self.bound < 0.0:
            raise ValueError("noise parameters must be nonnegative")
        if self.bound != 0.0 and self.bound < self.sigma:
            raise ValueError("truncation bound must be at least sigma (or zero for noiseless)")


def reconstruct_scan(center: Pose, cloud: PointCloudMap, params: ScanParams) -> PolarScan:
    """Simulate the scan that would be observed from `center` given the map.

    Each sector's range is the smallest polar radius of any map point falling
    in that sector, restricted to radius <= max_range; sectors with no such
    point are invalid. Points exactly at the center have no defined direction
    and are ignored.
    """
    n = params.sector_count
    best = np.full(n, np.inf)
    if len(cloud):
        radii, ang = polar_about(center, cloud.points)
        keep = (radii > 0.0) & (radii <= params.max_range)
        if keep.any():
            sectors = params.sector_of(ang[keep])
            np.minimum.at(best, sectors, radii[keep])
    valid = np.isfinite(best)
    ranges = np.where(valid, best, np.nan)
    return PolarScan(ranges, params.beam_angles(), valid)


def _truncated_normal(rng: np.random.Generator, sigma: float, bound: float, size: int) -> np.ndarray:
    """Zero-mean Gaussian draws conditioned on |x| <= bound (rejection sampling)."""
    out = rng.normal(0.0, sigma, size)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(0.0, sigma, int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def sense_lidar(
    true_pose: Pose,
    cloud: PointCloudMap,
    params: ScanParams,
    noise: LidarNoise,
    rng: np.random.Generator,
) -> PolarScan:
    """Simulated measurement channel: reconstruction from the true pose plus bounded noise.

    Perturbed ranges are clamped into (0, max_range].
    """
    scan = reconstruct_scan(true_pose, cloud, params)
    if noise.sigma == 0.0 or noise.bound == 0.0 or scan.n_valid == 0:
        return scan
    perturb = _truncated_normal(rng, noise.sigma, noise.bound, scan.n_valid)
    ranges = scan.ranges.copy()
    ranges[scan.valid] = np.clip(ranges[scan.valid] + perturb, 1e-9, params.max_range)
    return PolarScan(ranges, scan.angles, scan.valid.copy())

"""Threat-model realization: additive sensor bias and LiDAR scan spoofing.

The scan spoof merges injected returns into a sweep the way a first-return
unit would see a near obstacle: inside the spoofed angular window an injected
range replaces the real one only when it is nearer (or the beam had no
return). Spoofer hardware limits the window to 8 degrees; wider windows are
rejected at construction unless explicitly overridden.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import TWO_PI, PolarScan

MAX_SPOOF_WIDTH = math.radians(8.0)


def _in_window(k: int, start: int, end: int | None) -> bool:
    return k >= start and (end is None or k <= end)


@dataclass(frozen=True)
class FdiSpec:
    """False-data injection on proprioceptive sensors: y -> y + bias.

    `biases` maps each targeted sensor id to its additive bias vector; the
    injection's support is confined to those ids. Active for steps in
    [start, end] (end None = open-ended).
    """

    biases: dict
    start: int = 0
    end: int | None = None

    def __post_init__(self) -> None:
        clean = {int(k): np.asarray(v, dtype=float).ravel() for k, v in self.biases.items()}
        for sid, b in clean.items():
            if not np.all(np.isfinite(b)):
                raise ValueError(f"bias for sensor {sid} must be finite")
        object.__setattr__(self, "biases", clean)

    @property
    def targets(self) -> frozenset:
        return frozenset(self.biases)


def inject_fdi(y: np.ndarray, spec: FdiSpec | None, sensor_id: int, k: int) -> np.ndarray:
    """Perturbed measurement for one sensor at step k; untouched outside the attack."""
    y = np.asarray(y, dtype=float).ravel()
    if spec is None or sensor_id not in spec.biases or not _in_window(k, spec.start, spec.end):
        return y
    return y + spec.biases[sensor_id]


@dataclass(frozen=True)
class LidarSpoofSpec:
    """Scan spoof: inject returns drawn from [range_lo, range_hi] into an angular window.

    Angles are radians; the window [angle_lo, angle_hi] is inclusive and may
    be given with negative values (normalized mod 2*pi). Windows wider than
    the 8-degree hardware limit are rejected unless widen_beyond_hw_limit is
    set, in which case the departure is reported through `departures()`.
    """

    angle_lo: float
    angle_hi: float
    range_lo: float
    range_hi: float
    start: int = 0
    end: int | None = None
    widen_beyond_hw_limit: bool = False

    def __post_init__(self) -> None:
        if not (0.0 < self.range_lo <= self.range_hi):
            raise ValueError("injected range interval must satisfy 0 < lo <= hi")
        lo = float(np.mod(self.angle_lo, TWO_PI))
        hi = float(np.mod(self.angle_hi, TWO_PI))
        object.__setattr__(self, "angle_lo", lo)
        object.__setattr__(self, "angle_hi", hi)
        if self.width > MAX_SPOOF_WIDTH + 1e-12 and not self.widen_beyond_hw_limit:
            raise ValueError(
                f"spoof window {math.degrees(self.width):.3g} deg exceeds the "
                f"{math.degrees(MAX_SPOOF_WIDTH):.3g} deg hardware limit"
            )

    @property
    def width(self) -> float:
        return float(np.mod(self.angle_hi - self.angle_lo, TWO_PI))

    def covers(self, angles) -> np.ndarray:
        """Inclusive membership of angles in the (possibly wrapped) window."""
        a = np.asarray(angles, dtype=float)
        rel = np.mod(a - self.angle_lo, TWO_PI)
        return rel <= self.width + 1e-12

    def departures(self) -> list[str]:
        """Human-readable notes on deliberate deviations from the hardware limit."""
        if self.width > MAX_SPOOF_WIDTH + 1e-12:
            return [
                f"lidar spoof window {math.degrees(self.width):.4g} deg exceeds the "
                f"{math.degrees(MAX_SPOOF_WIDTH):.4g} deg spoofer hardware limit "
                "(widen_beyond_hw_limit enabled)"
            ]
        return []

    @classmethod
    def from_degrees(cls, angle_lo_deg, angle_hi_deg, range_lo, range_hi,
                     start=0, end=None, widen_beyond_hw_limit=False) -> "LidarSpoofSpec":
        return cls(math.radians(angle_lo_deg), math.radians(angle_hi_deg),
                   range_lo, range_hi, start, end, widen_beyond_hw_limit)


def spoof_scan(scan: PolarScan, spec: LidarSpoofSpec | None, k: int,
               rng: np.random.Generator) -> PolarScan:
    """Merge injected returns into a scan for step k.

    For every beam inside the active window one candidate range is drawn
    uniformly from [range_lo, range_hi]; the beam is modified only when the
    candidate is nearer than the current return (an empty beam always gains
    the injected return). Beams outside the window are untouched, so the
    spoof never increases any range.
    """
    if spec is None or not _in_window(k, spec.start, spec.end):
        return scan
    window = spec.covers(scan.angles)
    n_win = int(window.sum())
    if n_win == 0:
        return scan
    draws = rng.uniform(spec.range_lo, spec.range_hi, n_win)
    ranges = scan.ranges.copy()
    valid = scan.valid.copy()
    idx = np.nonzero(window)[0]
    current = np.where(valid[idx], ranges[idx], np.inf)
    wins = draws < current
    ranges[idx[wins]] = draws[wins]
    valid[idx[wins]] = True
    return PolarScan(ranges, scan.angles, valid)

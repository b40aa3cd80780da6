"""Fault-tolerant estimation: sector-removal scan screening and trust selection.

Every estimator's hypothesized scan (reconstructed from the map at its
estimate) is matched against the actual sweep. An estimator is trusted when
the match is consistent, either directly (case I) or after removing one
candidate angular sector suspected to carry spoofed returns (case II). Two
interleaved sector partitions guarantee that any sufficiently narrow spoofed
arc fits entirely inside at least one candidate sector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import EstimatorEntry
from .geometry import TWO_PI, PointCloudMap, PolarScan, Pose, polar_about, to_cartesian
from .ndt import MatchResult, SolverConfig, build_grid, match_to_grid, score_terms
from .scanner import ScanParams, reconstruct_scan

CASE_I = "case_i"
CASE_II = "case_ii"
EXCLUDED = "excluded"


@dataclass(frozen=True)
class Sector:
    """Half-open angular interval [lo, lo + width) mod 2*pi.

    Intervals from the offset partition can wrap past 2*pi; membership is
    evaluated modulo the full circle, which realizes the wrap-around as the
    union of two plain intervals.
    """

    partition: int
    index: int
    lo: float
    width: float

    @property
    def hi(self) -> float:
        return self.lo + self.width

    def covers(self, angles) -> np.ndarray:
        rel = np.mod(np.asarray(angles, dtype=float) - self.lo, TWO_PI)
        return rel < self.width

    def contains_interval(self, lo: float, hi: float) -> bool:
        """Whether the inclusive interval [lo, hi] (mod 2*pi) lies inside the sector."""
        start = float(np.mod(lo - self.lo, TWO_PI))
        span = float(np.mod(hi - lo, TWO_PI))
        return start + span < self.width + 1e-12


class NoConsistentSectorError(RuntimeError):
    """No single-sector removal reconciled the estimate with the scan."""

    def __init__(self, message: str, evaluated=None):
        super().__init__(message)
        self.evaluated = evaluated or []


class EmptyTrustError(RuntimeError):
    """Every estimator failed both trust criteria."""

    def __init__(self, report: "TrustReport"):
        super().__init__("all estimators excluded")
        self.report = report


@dataclass(frozen=True)
class FtLidarResult:
    """Outcome of the sector-removal search.

    `shift` and `shortfall` describe the match after removing
    `removed_sector`; `n_points_after` counts the surviving valid beams.
    `evaluated` lists (sector, shortfall) for every candidate actually tried,
    in trial order.
    """

    removed_sector: Sector
    shift: np.ndarray
    shortfall: float
    n_points_after: int
    match: MatchResult
    evaluated: tuple


@dataclass(frozen=True)
class TrustDecision:
    """Per-estimator screening outcome."""

    est_id: int
    criterion: str
    shift: np.ndarray | None
    shift_norm: float
    shortfall: float
    full_shortfall: float
    removed_sector: Sector | None


@dataclass(frozen=True)
class TrustReport:
    trusted: frozenset
    excluded: frozenset
    decisions: dict
    lidar_trusted: bool


def candidate_sectors(n_sectors: int) -> list[Sector]:
    """Two interleaved equal partitions of the circle (offsets 0 and half a sector).

    Any angular interval of width at most half a sector is fully contained in
    at least one of the 2 * n_sectors candidates.
    """
    if n_sectors < 2:
        raise ValueError("need at least two sectors")
    width = TWO_PI / n_sectors
    out = []
    for part, offset in enumerate((0.0, 0.5 * width)):
        for k in range(n_sectors):
            out.append(Sector(part, k, float(np.mod(k * width + offset, TWO_PI)), width))
    return out


def _reference_cloud(estimate: Pose, cloud: PointCloudMap, params: ScanParams):
    return to_cartesian(estimate, reconstruct_scan(estimate, cloud, params))


def _full_match(estimate: Pose, cloud: PointCloudMap, scan: PolarScan,
                params: ScanParams, cfg: SolverConfig):
    """Full-scan match of the sweep against the reconstruction at the estimate."""
    measured = to_cartesian(estimate, scan)
    grid = build_grid(_reference_cloud(estimate, cloud, params), cfg.cell_size,
                      cfg.min_points, cfg.eig_floor)
    match = match_to_grid(grid, measured.points, scan.n_valid, cfg)
    return match, grid, measured


def ft_lidar_estimation(
    estimate: Pose,
    n_sectors: int,
    cloud: PointCloudMap,
    scan: PolarScan,
    shortfall_limit: float,
    params: ScanParams,
    cfg: SolverConfig = SolverConfig(),
) -> FtLidarResult:
    """Search for one removable sector that restores scan consistency.

    Candidates from the two interleaved partitions are tried most-suspicious
    first, suspicion being the summed per-beam misfit of the full-scan match
    inside the sector. For each candidate the reference is rebuilt from the
    map with the sector's points removed (angles about the estimate), the
    sweep's beams inside the sector are dropped, and the match is accepted as
    soon as its shortfall is within the limit.
    """
    if scan.n_valid == 0:
        raise ValueError("scan has no valid beams")
    full, grid, measured = _full_match(estimate, cloud, scan, params, cfg)
    terms, _ = score_terms(grid, measured.points, full.shift)
    beam_angles = scan.angles[scan.valid]

    sectors = candidate_sectors(n_sectors)
    suspicion = np.empty(len(sectors))
    for i, sector in enumerate(sectors):
        inside = sector.covers(beam_angles)
        suspicion[i] = float((1.0 - terms[inside]).sum())
    order = sorted(range(len(sectors)),
                   key=lambda i: (-suspicion[i], sectors[i].partition, sectors[i].index))

    _, map_angles = polar_about(estimate, cloud.points) if len(cloud) else \
        (np.empty(0), np.empty(0))
    evaluated = []
    for i in order:
        sector = sectors[i]
        kept_map = cloud.without(sector.covers(map_angles)) if len(cloud) else cloud
        reference = _reference_cloud(estimate, kept_map, params)
        keep_beams = scan.valid & ~sector.covers(scan.angles)
        n_after = int(keep_beams.sum())
        if n_after == 0:
            continue
        pts = np.column_stack((
            estimate.x1 + scan.ranges[keep_beams] * np.cos(scan.angles[keep_beams]),
            estimate.x2 + scan.ranges[keep_beams] * np.sin(scan.angles[keep_beams]),
        ))
        sub_grid = build_grid(reference, cfg.cell_size, cfg.min_points, cfg.eig_floor)
        match = match_to_grid(sub_grid, pts, n_after, cfg)
        evaluated.append((sector, match.shortfall))
        if match.shortfall <= shortfall_limit:
            return FtLidarResult(
                removed_sector=sector,
                shift=match.shift,
                shortfall=match.shortfall,
                n_points_after=n_after,
                match=match,
                evaluated=tuple(evaluated),
            )
    raise NoConsistentSectorError(
        f"no sector removal brought the shortfall under {shortfall_limit!r}",
        evaluated,
    )


def select_trusted(
    bank: list[EstimatorEntry],
    cloud: PointCloudMap,
    scan: PolarScan,
    pose_tolerance: float | None,
    shortfall_limit: float,
    params: ScanParams,
    n_sectors: int = 18,
    cfg: SolverConfig = SolverConfig(),
    case2_gate: float | None = 2.0,
) -> TrustReport:
    """Split the estimator bank into trusted and excluded sets.

    Case I trusts an estimator whose full-scan match has both a small shift
    (<= pose_tolerance) and a small shortfall (<= shortfall_limit). Otherwise
    the sector-removal search runs and case II applies the same two checks to
    its result. pose_tolerance defaults to the smallest configured estimator
    error bound.

    The sector search is skipped when the full-scan shift already exceeds
    `case2_gate` times the tolerance: removing one sector cannot repair a
    global pose offset, and case II could never accept the result. Pass
    case2_gate=None to disable the gate.

    Raises EmptyTrustError (carrying the report) when nobody survives.
    """
    if not bank:
        raise ValueError("estimator bank is empty")
    if pose_tolerance is None:
        pose_tolerance = min(e.error_bound for e in bank)

    decisions = {}
    trusted = set()
    lidar_trusted = True
    for entry in bank:
        estimate = Pose.from_array(entry.state)
        full, _, _ = _full_match(estimate, cloud, scan, params, cfg)
        full_norm = float(np.linalg.norm(full.shift))
        if full.shortfall > shortfall_limit:
            lidar_trusted = False
        if full_norm <= pose_tolerance and full.shortfall <= shortfall_limit:
            trusted.add(entry.est_id)
            decisions[entry.est_id] = TrustDecision(
                entry.est_id, CASE_I, full.shift, full_norm,
                full.shortfall, full.shortfall, None)
            continue
        decision = TrustDecision(entry.est_id, EXCLUDED, full.shift, full_norm,
                                 full.shortfall, full.shortfall, None)
        gate_open = case2_gate is None or full_norm <= case2_gate * pose_tolerance
        if gate_open:
            try:
                ft = ft_lidar_estimation(estimate, n_sectors, cloud, scan,
                                         shortfall_limit, params, cfg)
            except NoConsistentSectorError:
                ft = None
            if ft is not None and float(np.linalg.norm(ft.shift)) <= pose_tolerance:
                trusted.add(entry.est_id)
                decision = TrustDecision(
                    entry.est_id, CASE_II, ft.shift, float(np.linalg.norm(ft.shift)),
                    ft.shortfall, full.shortfall, ft.removed_sector)
        decisions[entry.est_id] = decision

    report = TrustReport(
        trusted=frozenset(trusted),
        excluded=frozenset(e.est_id for e in bank) - frozenset(trusted),
        decisions=decisions,
        lidar_trusted=lidar_trusted,
    )
    if not trusted:
        raise EmptyTrustError(report)
    return report

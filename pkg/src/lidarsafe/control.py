"""Fault-tolerant control: nominal law, ball-constrained input selection, and
the three-step exclusion escalation.

Each active estimator i contributes a ball around its nominal input with
radius xi - ||K_c|| * error_bound_i; any input inside every ball stays within
the certificate's deviation budget of the true-state nominal input whenever
some honest estimator remains. When the balls have empty intersection the
step escalates: first the scan-consistency screening removes estimators, then
largest-residual pruning guarantees an input is always emitted.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import EstimatorEntry, SensorModel, residual
from .geometry import PointCloudMap, PolarScan
from .ndt import SolverConfig
from .scanner import ScanParams
from .trust import EmptyTrustError, TrustReport, select_trusted

DIRECT = "direct"
QCQP = "qcqp"
POST_FT_QCQP = "post_ft_qcqp"
RESIDUE_PRUNE = "residue_prune"


@dataclass(frozen=True)
class NominalController:
    """Affine nominal law u = offset + gain @ estimate."""

    offset: np.ndarray
    gain: np.ndarray

    def __post_init__(self) -> None:
        offset = np.asarray(self.offset, dtype=float).ravel()
        gain = np.asarray(self.gain, dtype=float)
        if not (np.all(np.isfinite(offset)) and np.all(np.isfinite(gain))):
            raise ValueError("controller parameters must be finite")
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "gain", gain)

    @property
    def gain_norm(self) -> float:
        return float(np.linalg.norm(self.gain, 2))


def nominal(ctrl: NominalController, estimate: np.ndarray) -> np.ndarray:
    """Nominal input at an estimate."""
    return ctrl.offset + ctrl.gain @ np.asarray(estimate, dtype=float).ravel()


@dataclass(frozen=True)
class BallConstraint:
    """Feasible-input ball around one estimator's nominal input."""

    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0.0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).ravel())

    def violation(self, u: np.ndarray) -> float:
        return max(0.0, float(np.linalg.norm(u - self.center)) - self.radius)

    def project(self, u: np.ndarray) -> np.ndarray:
        d = u - self.center
        n = float(np.linalg.norm(d))
        if n <= self.radius:
            return u
        return self.center + d * (self.radius / n)


@dataclass(frozen=True)
class QuadraticCost:
    """J(u) = (u - target)' W (u - target), W positive definite (default identity)."""

    target: np.ndarray
    weight: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float).ravel())
        if self.weight is not None:
            w = np.asarray(self.weight, dtype=float)
            if np.linalg.eigvalsh(0.5 * (w + w.T)).min() <= 0.0:
                raise ValueError("cost weight must be positive definite")
            object.__setattr__(self, "weight", 0.5 * (w + w.T))

    def value(self, u: np.ndarray) -> float:
        d = np.asarray(u, dtype=float).ravel() - self.target
        if self.weight is None:
            return float(d @ d)
        return float(d @ self.weight @ d)

    def grad(self, u: np.ndarray) -> np.ndarray:
        d = u - self.target
        if self.weight is None:
            return 2.0 * d
        return 2.0 * (self.weight @ d)

    def lipschitz(self) -> float:
        if self.weight is None:
            return 2.0
        return 2.0 * float(np.linalg.eigvalsh(self.weight).max())


@dataclass(frozen=True)
class ProjectionConfig:
    tol_step: float = 1e-8
    max_iter: int = 2000
    feas_tol: float = 1e-7
    feas_rounds: int = 2000
    polish_tol: float = 1e-12


def _cyclic_project(u: np.ndarray, balls: list[BallConstraint], rounds: int,
                    tol: float) -> tuple[np.ndarray, float]:
    """Sequential projections onto each ball until all are met within tol."""
    for _ in range(rounds):
        worst = max(b.violation(u) for b in balls)
        if worst <= tol:
            return u, worst
        for b in balls:
            u = b.project(u)
    return u, max(b.violation(u) for b in balls)


def feasible_point(balls: list[BallConstraint], cfg: ProjectionConfig = ProjectionConfig()):
    """A point satisfying every ball within feas_tol, or None when the
    intersection appears empty (cyclic projections stall above the tolerance)."""
    start = np.mean([b.center for b in balls], axis=0)
    u, worst = _cyclic_project(start, balls, cfg.feas_rounds, cfg.feas_tol)
    return u if worst <= cfg.feas_tol else None


def solve_constrained(cost: QuadraticCost, balls: list[BallConstraint],
                      cfg: ProjectionConfig = ProjectionConfig()) -> np.ndarray | None:
    """Minimize a convex quadratic over an intersection of balls.

    Projected gradient: a gradient step on the cost followed by cyclic
    projection onto each ball, stopping when the iterate moves less than
    tol_step. Returns None (infeasible) when no point satisfies every ball.
    The returned point is polished until every constraint holds within
    polish_tol.
    """
    if not balls:
        raise ValueError("need at least one ball constraint")
    u = feasible_point(balls, cfg)
    if u is None:
        return None
    step = 1.0 / cost.lipschitz()
    for _ in range(cfg.max_iter):
        candidate = u - step * cost.grad(u)
        candidate, _ = _cyclic_project(candidate, balls, 64, cfg.feas_tol)
        if float(np.linalg.norm(candidate - u)) < cfg.tol_step:
            u = candidate
            break
        u = candidate
    u, worst = _cyclic_project(u, balls, cfg.feas_rounds, cfg.polish_tol)
    if worst > cfg.feas_tol:
        raise ArithmeticError("projected-gradient iterate failed to stay feasible")
    return u


@dataclass(frozen=True)
class ControlDecision:
    """Input emitted for one step, with the escalation path that produced it."""

    u: np.ndarray
    deviation: np.ndarray  # from the final anchor estimator's nominal input
    path: str
    excluded: frozenset
    anchor: int
    trust_report: TrustReport | None = None


@dataclass(frozen=True)
class BankMember:
    """One estimator with the sensor feeding it."""

    sensor: SensorModel
    entry: EstimatorEntry


@dataclass(frozen=True)
class ControlThresholds:
    """Screening and budget parameters used by the per-step controller."""

    xi: float
    pose_tolerance: float | None
    shortfall_limit: float
    n_sectors: int = 18
    case2_gate: float | None = 2.0


def _anchor(members: list[BankMember]) -> BankMember:
    """Trusted estimator with the smallest error bound, ties broken by lower id."""
    return min(members, key=lambda m: (m.entry.error_bound, m.entry.est_id))


def _balls(members: list[BankMember], ctrl: NominalController, xi: float):
    balls = []
    for m in members:
        radius = xi - ctrl.gain_norm * m.entry.error_bound
        if radius <= 0.0:
            raise ValueError(
                f"estimator {m.entry.est_id}: deviation budget leaves no feasible ball "
                f"(xi={xi}, ||gain||*bound={ctrl.gain_norm * m.entry.error_bound})")
        balls.append(BallConstraint(nominal(ctrl, m.entry.state), radius))
    return balls


def ft_control_step(
    bank: list[BankMember],
    measurements: dict,
    ctrl: NominalController,
    thresholds: ControlThresholds,
    cloud: PointCloudMap,
    scan: PolarScan,
    params: ScanParams,
    solver: SolverConfig = SolverConfig(),
    projection: ProjectionConfig = ProjectionConfig(),
    initial_excluded: frozenset = frozenset(),
    trust_report: TrustReport | None = None,
) -> ControlDecision:
    """One fault-tolerant control step.

    Escalation: emit the anchor's nominal input when it already satisfies
    every active ball; otherwise solve the ball-constrained program; on
    infeasibility run the trust screening and re-solve; if still infeasible,
    prune the largest-residual estimator until feasible or one remains.
    A precomputed trust report may be injected to avoid recomputing the scan
    matches; semantics are unchanged.
    """
    if not bank:
        raise ValueError("estimator bank is empty")
    active = [m for m in bank if m.entry.est_id not in initial_excluded]
    if not active:
        raise ValueError("every estimator is excluded before the step")
    excluded = set(initial_excluded)

    anchor = _anchor(active)
    balls = _balls(active, ctrl, thresholds.xi)
    u_anchor = nominal(ctrl, anchor.entry.state)
    if all(b.violation(u_anchor) <= 0.0 for b in balls):
        return ControlDecision(u_anchor, np.zeros_like(u_anchor), DIRECT,
                               frozenset(excluded), anchor.entry.est_id, trust_report)

    cost = QuadraticCost(u_anchor)
    u = solve_constrained(cost, balls, projection)
    if u is not None:
        return ControlDecision(u, u - u_anchor, QCQP, frozenset(excluded),
                               anchor.entry.est_id, trust_report)

    # STEP 2: screen estimators against the scan, rebuild the balls, re-solve.
    report = trust_report
    if report is None:
        try:
            report = select_trusted(
                [m.entry for m in active], cloud, scan,
                thresholds.pose_tolerance, thresholds.shortfall_limit,
                params, thresholds.n_sectors, solver, thresholds.case2_gate)
        except EmptyTrustError as err:
            report = err.report
    if report.trusted:
        survivors = [m for m in active if m.entry.est_id in report.trusted]
        if survivors and len(survivors) < len(active):
            excluded.update(m.entry.est_id for m in active
                            if m.entry.est_id not in report.trusted)
            active = survivors
        anchor = _anchor(active)
        u_anchor = nominal(ctrl, anchor.entry.state)
        balls = _balls(active, ctrl, thresholds.xi)
        u = solve_constrained(QuadraticCost(u_anchor), balls, projection)
        if u is not None:
            return ControlDecision(u, u - u_anchor, POST_FT_QCQP, frozenset(excluded),
                                   anchor.entry.est_id, report)

    # STEP 3: prune by residual magnitude until feasible or a single estimator remains.
    while len(active) > 1:
        ranked = sorted(
            active,
            key=lambda m: (-float(np.linalg.norm(
                residual(m.sensor, m.entry, measurements[m.entry.est_id]))),
                m.entry.est_id),
        )
        worst = ranked[0]
        excluded.add(worst.entry.est_id)
        active = [m for m in active if m.entry.est_id != worst.entry.est_id]
        anchor = _anchor(active)
        u_anchor = nominal(ctrl, anchor.entry.state)
        balls = _balls(active, ctrl, thresholds.xi)
        u = solve_constrained(QuadraticCost(u_anchor), balls, projection)
        if u is not None:
            return ControlDecision(u, u - u_anchor, RESIDUE_PRUNE, frozenset(excluded),
                                   anchor.entry.est_id, report)
    anchor = _anchor(active)
    u_anchor = nominal(ctrl, anchor.entry.state)
    return ControlDecision(u_anchor, np.zeros_like(u_anchor), RESIDUE_PRUNE,
                           frozenset(excluded), anchor.entry.est_id, report)

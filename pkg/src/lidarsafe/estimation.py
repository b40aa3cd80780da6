"""Discrete-time EKF bank: per-sensor state estimators and boundedness monitoring.

The filter is the one-step-ahead predictor form: with A and C the transition
and observation Jacobians at the current estimate,

    K = A P C' (C P C' + R)^-1
    x+ = f(x) + g(x) u + K (y - o(x))
    P+ = A P A' + Q - K (C P C' + R) K'

followed by symmetrization and an eigenvalue clamp at zero.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np


def _check_spd(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m).min() <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    return m


@dataclass(frozen=True)
class SystemModel:
    """Control-affine process model x+ = f(x) + g(x) u + w, w ~ N(0, Q)."""

    transition: Callable[[np.ndarray], np.ndarray]
    input_map: Callable[[np.ndarray], np.ndarray]
    process_cov: np.ndarray
    jac_transition: Callable[[np.ndarray, np.ndarray], np.ndarray]
    # set for linear systems; lets verifiers vectorize over state grids
    a_matrix: np.ndarray | None = None
    b_matrix: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "process_cov", _check_spd(self.process_cov, "process_cov"))

    def predict(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.transition(x) + self.input_map(x) @ u


@dataclass(frozen=True)
class SensorModel:
    """One proprioceptive sensor: observation map, its Jacobian, and noise."""

    sensor_id: int
    observe: Callable[[np.ndarray], np.ndarray]
    jac_observe: Callable[[np.ndarray], np.ndarray]
    meas_cov: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "meas_cov", _check_spd(self.meas_cov, "meas_cov"))


@dataclass(frozen=True)
class EstimatorEntry:
    """One EKF instance: estimate, covariance, configured error bound, trust flag."""

    est_id: int
    state: np.ndarray
    cov: np.ndarray
    error_bound: float
    trusted: bool = True
    last_residual: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.error_bound > 0.0:
            raise ValueError("error_bound must be positive")
        object.__setattr__(self, "state", np.asarray(self.state, dtype=float).ravel())
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))


def linear_system(a, b, q) -> SystemModel:
    """Linear process model x+ = A x + B u + w."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return SystemModel(
        transition=lambda x: a @ x,
        input_map=lambda x: b,
        process_cov=q,
        jac_transition=lambda x, u: a,
        a_matrix=a,
        b_matrix=b,
    )


def position_sensor(sensor_id: int, r) -> SensorModel:
    """Direct position observation o(x) = x."""
    r = np.asarray(r, dtype=float)
    eye = np.eye(r.shape[0])
    return SensorModel(sensor_id, lambda x: x.copy(), lambda x: eye, r)


def stacked_sensor(sensor_id: int, sensors: list[SensorModel]) -> SensorModel:
    """Fused sensor observing the concatenation of several sensors' outputs."""
    covs = [s.meas_cov for s in sensors]
    block = np.zeros((sum(c.shape[0] for c in covs),) * 2)
    at = 0
    for c in covs:
        block[at:at + c.shape[0], at:at + c.shape[0]] = c
        at += c.shape[0]
    return SensorModel(
        sensor_id,
        lambda x: np.concatenate([s.observe(x) for s in sensors]),
        lambda x: np.vstack([s.jac_observe(x) for s in sensors]),
        block,
    )


def _clamp_psd(p: np.ndarray) -> np.ndarray:
    p = 0.5 * (p + p.T)
    w, v = np.linalg.eigh(p)
    if w.min() < 0.0:
        p = (v * np.maximum(w, 0.0)) @ v.T
        p = 0.5 * (p + p.T)
    return p


def ekf_step(model: SystemModel, sensor: SensorModel, entry: EstimatorEntry,
             u: np.ndarray, y: np.ndarray) -> EstimatorEntry:
    """Advance one estimator by one predictor step; returns a new entry."""
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    a = model.jac_transition(entry.state, u)
    c = sensor.jac_observe(entry.state)
    p = entry.cov
    innov_cov = c @ p @ c.T + sensor.meas_cov
    try:
        gain = np.linalg.solve(innov_cov.T, (a @ p @ c.T).T).T
    except np.linalg.LinAlgError as exc:  # cannot occur with R > 0; guarded anyway
        raise ArithmeticError("singular innovation covariance") from exc
    resid = y - sensor.observe(entry.state)
    state_next = model.predict(entry.state, u) + gain @ resid
    cov_next = a @ p @ a.T + model.process_cov - gain @ innov_cov @ gain.T
    return replace(entry, state=state_next, cov=_clamp_psd(cov_next), last_residual=resid)


def residual(sensor: SensorModel, entry: EstimatorEntry, y: np.ndarray) -> np.ndarray:
    """Measurement residual y - o(x_hat)."""
    return np.asarray(y, dtype=float).ravel() - sensor.observe(entry.state)


@dataclass(frozen=True)
class AssumptionBounds:
    """Configured bounds on the filter matrices: ||A||<=a_max, ||C||<=c_max,
    p_min I <= P <= p_max I, q_min I <= Q, r_min I <= R."""

    a_max: float
    c_max: float
    p_min: float
    p_max: float
    q_min: float = 0.0
    r_min: float = 0.0


@dataclass(frozen=True)
class AssumptionReport:
    """Extremes realized over a monitored run of (A_k, C_k, P_k) triples."""

    max_a_norm: float
    max_c_norm: float
    min_p_eig: float
    max_p_eig: float
    nonsingular_a: bool
    steps: int
    bounds: AssumptionBounds | None = None
    within_bounds: bool | None = None


def monitor_assumption(trace, bounds: AssumptionBounds | None = None) -> AssumptionReport:
    """Scan a run's (A_k, C_k, P_k) triples for the boundedness conditions.

    A_k counts as nonsingular when |det A_k| > 1e-12.
    """
    max_a = max_c = 0.0
    min_p = np.inf
    max_p = -np.inf
    nonsingular = True
    steps = 0
    for a, c, p in trace:
        steps += 1
        a = np.asarray(a, dtype=float)
        max_a = max(max_a, float(np.linalg.norm(a, 2)))
        max_c = max(max_c, float(np.linalg.norm(np.asarray(c, dtype=float), 2)))
        eigs = np.linalg.eigvalsh(np.asarray(p, dtype=float))
        min_p = min(min_p, float(eigs.min()))
        max_p = max(max_p, float(eigs.max()))
        if abs(float(np.linalg.det(a))) <= 1e-12:
            nonsingular = False
    if steps == 0:
        raise ValueError("trace must be nonempty")
    within = None
    if bounds is not None:
        within = (
            nonsingular
            and max_a <= bounds.a_max
            and max_c <= bounds.c_max
            and bounds.p_min <= min_p
            and max_p <= bounds.p_max
        )
    return AssumptionReport(max_a, max_c, min_p, max_p, nonsingular, steps, bounds, within)

"""Barrier certificates: exact Gaussian expectations, grid verification, and
the probabilistic safety bound.

A certificate is a polynomial B >= 0 with constants (gamma, c, xi). The three
verified conditions, over deterministic sample grids, are

    1. B(x) <= gamma            on the safe set C,
    2. B(x) >= 1                on the unsafe region D,
    3. E[B(x+)] <= B(x) + c     on the state space X, for every input
       deviation u_hat with ||u_hat|| <= xi_eff,

where x+ = f(x) + g(x)(pi_0 + K_c x + u_hat) + w and xi_eff = xi - ||K_c||
times the estimation error bound. A passing certificate bounds the
probability of reaching D within T steps by gamma + c*T.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc, norm

from .estimation import SystemModel


class Poly:
    """Polynomial in n variables, stored as {exponent tuple: coefficient}."""

    def __init__(self, n_vars: int, terms: dict) -> None:
        self.n_vars = int(n_vars)
        clean = {}
        for powers, coeff in terms.items():
            powers = tuple(int(p) for p in powers)
            if len(powers) != self.n_vars or any(p < 0 for p in powers):
                raise ValueError(f"bad exponent tuple {powers!r}")
            coeff = float(coeff)
            if coeff != 0.0:
                clean[powers] = clean.get(powers, 0.0) + coeff
        self.terms = clean

    @property
    def degree(self) -> int:
        return max((sum(p) for p in self.terms), default=0)

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 1
        pts = x.reshape(-1, self.n_vars)
        out = np.zeros(pts.shape[0])
        for powers, coeff in self.terms.items():
            term = np.full(pts.shape[0], coeff)
            for i, p in enumerate(powers):
                if p:
                    term *= pts[:, i] ** p
            out += term
        return float(out[0]) if scalar else out

    def hessian(self) -> np.ndarray:
        """Constant Hessian; defined only for degree <= 2."""
        if self.degree > 2:
            raise ValueError("hessian is constant only for quadratic polynomials")
        h = np.zeros((self.n_vars, self.n_vars))
        for powers, coeff in self.terms.items():
            idx = [i for i, p in enumerate(powers) for _ in range(p)]
            if len(idx) == 2:
                i, j = idx
                if i == j:
                    h[i, i] += 2.0 * coeff
                else:
                    h[i, j] += coeff
                    h[j, i] += coeff
        return h

    @classmethod
    def quadratic(cls, n_vars: int, const: float = 0.0, linear=None, quad=None) -> "Poly":
        """Build c0 + linear' x + x' quad x (quad need not be symmetric)."""
        terms = {}
        if const:
            terms[(0,) * n_vars] = const
        if linear is not None:
            for i, c in enumerate(np.asarray(linear, dtype=float).ravel()):
                if c:
                    e = [0] * n_vars
                    e[i] = 1
                    terms[tuple(e)] = terms.get(tuple(e), 0.0) + c
        if quad is not None:
            q = np.asarray(quad, dtype=float)
            for i in range(n_vars):
                for j in range(n_vars):
                    if q[i, j]:
                        e = [0] * n_vars
                        e[i] += 1
                        e[j] += 1
                        terms[tuple(e)] = terms.get(tuple(e), 0.0) + q[i, j]
        return cls(n_vars, terms)


@dataclass(frozen=True)
class BarrierCertificate:
    """Nonnegative polynomial certificate with level gamma, drift budget c,
    and total input-deviation budget xi."""

    b: Poly
    gamma: float
    c: float
    xi: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.c < 0.0:
            raise ValueError("c must be nonnegative")
        if not self.xi > 0.0:
            raise ValueError("xi must be positive")


@dataclass(frozen=True)
class Region:
    """Semialgebraic region {x: all polys >= 0} with a sampling bounding box."""

    polys: tuple
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "polys", tuple(self.polys))
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float).ravel())
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float).ravel())
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ValueError("bounding box must be finite")
        if np.any(self.hi < self.lo):
            raise ValueError("bounding box upper corner must dominate the lower corner")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        mask = np.ones(np.asarray(pts).reshape(-1, len(self.lo)).shape[0], dtype=bool)
        for p in self.polys:
            mask &= p(pts) >= 0.0
        return mask

    def mesh(self, resolution: int) -> np.ndarray:
        """Deterministic grid over the bounding box, filtered to the region."""
        axes = [np.linspace(self.lo[i], self.hi[i], resolution)
                for i in range(len(self.lo))]
        pts = np.array(list(itertools.product(*axes)))
        return pts[self.contains(pts)]


@dataclass(frozen=True)
class SetSpec:
    """State space X, safe set C (inside X), and unsafe sample region D."""

    state_space: Region
    safe: Region
    unsafe: Region


@dataclass(frozen=True)
class GridSpec:
    resolution: int = 101
    ball_radii: int = 8
    ball_angles: int = 16


@dataclass
class VerificationReport:
    condition1_ok: bool
    condition2_ok: bool
    condition3_ok: bool
    margin1: float
    margin2: float
    margin3: float
    witness1: np.ndarray | None
    witness2: np.ndarray | None
    witness3: tuple | None  # (state, deviation)
    b_min: float
    xi_eff: float
    grid: GridSpec
    horizon: int
    safety_probability: float
    counts: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return (self.condition1_ok and self.condition2_ok and self.condition3_ok
                and self.b_min >= -1e-12)


def safety_probability(gamma: float, c: float, horizon: float) -> float:
    """Lower bound 1 - gamma - c*T on the probability of staying safe, clamped to [0, 1]."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if c < 0.0 or horizon < 0:
        raise ValueError("c and horizon must be nonnegative")
    return float(min(1.0, max(0.0, 1.0 - gamma - c * horizon)))


def _next_mean(model: SystemModel, gain, offset, x, deviation) -> np.ndarray:
    u = offset + gain @ x + deviation
    return model.transition(x) + model.input_map(x) @ u


def expected_next_b(
    cert: BarrierCertificate,
    model: SystemModel,
    gain: np.ndarray,
    offset: np.ndarray,
    x: np.ndarray,
    deviation: np.ndarray,
    samples: int = 1 << 14,
    seed: int = 0,
    with_tolerance: bool = False,
):
    """Expected certificate value after one closed-loop step from state x.

    For quadratic B the Gaussian expectation is exact:
    E[B(mu + w)] = B(mu) + 0.5 * trace(H_B Q). Higher-degree certificates fall
    back to a quasi-Monte-Carlo average over `samples` Sobol points; with
    with_tolerance=True the (value, standard_error) pair is returned (the
    standard error is 0 for the exact path).
    """
    x = np.asarray(x, dtype=float).ravel()
    deviation = np.asarray(deviation, dtype=float).ravel()
    gain = np.asarray(gain, dtype=float)
    offset = np.asarray(offset, dtype=float).ravel()
    mu = _next_mean(model, gain, offset, x, deviation)
    if cert.b.degree <= 2:
        value = float(cert.b(mu)) + 0.5 * float(np.trace(cert.b.hessian() @ model.process_cov))
        return (value, 0.0) if with_tolerance else value
    n = mu.shape[0]
    chol = np.linalg.cholesky(model.process_cov)
    sob = qmc.Sobol(d=n, scramble=True, seed=seed)
    u = sob.random(samples)
    z = norm.ppf(np.clip(u, 1e-12, 1.0 - 1e-12))
    vals = cert.b(mu + z @ chol.T)
    value = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(samples))
    return (value, stderr) if with_tolerance else value


def ball_cover(radius: float, n_radii: int = 8, n_angles: int = 16) -> np.ndarray:
    """Deterministic covering of the 2D disk ||u|| <= radius: center plus a
    radial-angular lattice whose outermost ring lies exactly on the boundary."""
    if radius <= 0.0:
        return np.zeros((1, 2))
    radii = np.linspace(radius / n_radii, radius, n_radii)
    angles = np.linspace(0.0, 2.0 * math.pi, n_angles, endpoint=False)
    ring = np.array([[r * math.cos(a), r * math.sin(a)] for r in radii for a in angles])
    return np.vstack([np.zeros((1, 2)), ring])


def verify_certificate(
    cert: BarrierCertificate,
    sets: SetSpec,
    model: SystemModel,
    gain: np.ndarray,
    offset: np.ndarray,
    est_error_bound: float,
    grid: GridSpec = GridSpec(),
    horizon: int = 1,
) -> VerificationReport:
    """Check the three certificate conditions on deterministic grids.

    Violations are reported with the worst witness point, never raised. The
    effective deviation radius xi_eff = xi - ||gain|| * est_error_bound must
    be positive.
    """
    gain = np.asarray(gain, dtype=float)
    offset = np.asarray(offset, dtype=float).ravel()
    xi_eff = cert.xi - float(np.linalg.norm(gain, 2)) * float(est_error_bound)
    if xi_eff <= 0.0:
        raise ValueError("effective deviation radius xi_eff must be positive")

    safe_pts = sets.safe.mesh(grid.resolution)
    safe_pts = safe_pts[sets.state_space.contains(safe_pts)]
    unsafe_pts = sets.unsafe.mesh(grid.resolution)
    unsafe_pts = unsafe_pts[sets.state_space.contains(unsafe_pts)]
    space_pts = sets.state_space.mesh(grid.resolution)
    if safe_pts.shape[0] == 0 or space_pts.shape[0] == 0:
        raise ValueError("safe set or state space produced no grid samples")
    if unsafe_pts.shape[0] and np.any(sets.safe.contains(unsafe_pts)):
        raise ValueError("safe and unsafe regions overlap under sampling")

    b_safe = cert.b(safe_pts)
    margin1 = float(cert.gamma - b_safe.max())
    witness1 = None if margin1 >= 0.0 else safe_pts[int(np.argmax(b_safe))]

    if unsafe_pts.shape[0]:
        b_unsafe = cert.b(unsafe_pts)
        margin2 = float(b_unsafe.min() - 1.0)
        witness2 = None if margin2 >= 0.0 else unsafe_pts[int(np.argmin(b_unsafe))]
    else:
        margin2, witness2 = math.inf, None

    # condition 3: expected decrease over X x deviation ball
    deviations = ball_cover(xi_eff, grid.ball_radii, grid.ball_angles)
    trace_term = 0.5 * float(np.trace(cert.b.hessian() @ model.process_cov)) \
        if cert.b.degree <= 2 else None
    b_space = cert.b(space_pts)
    margin3 = math.inf
    witness3 = None
    if model.a_matrix is not None and model.b_matrix is not None and trace_term is not None:
        closed = model.a_matrix + model.b_matrix @ gain
        base = space_pts @ closed.T + model.b_matrix @ offset
        for dev in deviations:
            mu = base + model.b_matrix @ dev
            gap = b_space + cert.c - (cert.b(mu) + trace_term)
            i = int(np.argmin(gap))
            if float(gap[i]) < margin3:
                margin3 = float(gap[i])
                witness3 = (space_pts[i], dev)
    else:
        for i, x in enumerate(space_pts):
            for dev in deviations:
                expv = expected_next_b(cert, model, gain, offset, x, dev)
                gap = float(b_space[i]) + cert.c - expv
                if gap < margin3:
                    margin3 = gap
                    witness3 = (x, dev)

    all_pts = np.vstack([space_pts, safe_pts] + ([unsafe_pts] if unsafe_pts.shape[0] else []))
    b_min = float(cert.b(all_pts).min())

    return VerificationReport(
        condition1_ok=margin1 >= 0.0,
        condition2_ok=margin2 >= 0.0,
        condition3_ok=margin3 >= 0.0,
        margin1=margin1,
        margin2=margin2,
        margin3=margin3,
        witness1=witness1,
        witness2=witness2,
        witness3=None if margin3 >= 0.0 else witness3,
        b_min=b_min,
        xi_eff=xi_eff,
        grid=grid,
        horizon=horizon,
        safety_probability=safety_probability(cert.gamma, cert.c, horizon),
        counts={"safe": int(safe_pts.shape[0]), "unsafe": int(unsafe_pts.shape[0]),
                "space": int(space_pts.shape[0]), "deviations": int(deviations.shape[0])},
    )

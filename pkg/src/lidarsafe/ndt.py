"""2D normal-distributions-transform (NDT) scan matching over pure translations.

A reference cloud is summarized per grid cell by a Gaussian (sample mean,
eigenvalue-floored sample covariance). A measured cloud is aligned to the
grid by maximizing the summed per-point likelihood score

    L(r) = sum_i exp(-0.5 * d_i' * inv(Sigma_i) * d_i),   d_i = (p_i - r) - q_i,

where (q_i, Sigma_i) belong to the cell containing the shifted point p_i - r.
Points falling in no stored cell contribute zero. The maximization runs a
damped Newton iteration with analytic gradient and Hessian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CartesianScan


@dataclass(frozen=True)
class SolverConfig:
    """Grid construction and Newton solver settings."""

    cell_size: float = 2.0
    min_points: int = 3
    eig_floor: float = 1e-3  # smallest covariance eigenvalue, relative to the largest
    tol_step: float = 1e-4
    max_iter: int = 50
    max_halvings: int = 20


@dataclass(frozen=True)
class MatchResult:
    """Outcome of one scan match.

    `shift` maps measured points onto the reference: measured ~ reference + shift.
    `n_points` counts the valid measured points; `shortfall` = n_points - loss
    is the gap to the perfect-alignment score. `n_unmatched` flags how many of
    those points fell in no stored cell at the final shift (coverage
    discrepancy between the clouds; these points score zero).
    """

    shift: np.ndarray
    loss: float
    n_points: int
    shortfall: float
    iterations: int
    converged: bool
    n_unmatched: int


class NdtGrid:
    """Sparse per-cell Gaussian summary of a reference cloud.

    Cells with fewer than `min_points` source points are absent. Every stored
    covariance is symmetric with its smallest eigenvalue floored, so the
    inverses are well defined.
    """

    def __init__(self, cell_size: float, keys: np.ndarray, means: np.ndarray,
                 covs: np.ndarray, counts: np.ndarray) -> None:
        self.cell_size = float(cell_size)
        self.keys = keys.reshape(-1, 2).astype(np.int64)
        self.means = means.reshape(-1, 2)
        self.covs = covs.reshape(-1, 2, 2)
        self.counts = counts.astype(np.int64).ravel()
        n = self.keys.shape[0]
        if n:
            w, v = np.linalg.eigh(self.covs)
            self.inv_covs = np.einsum("kij,kj,klj->kil", v, 1.0 / w, v)
            self.max_inv_eig = 1.0 / w.min(axis=1)
        else:
            self.inv_covs = np.empty_like(self.covs)
            self.max_inv_eig = np.empty(0)
        # dense lookup table over the occupied bounding box for O(1) cell queries
        if n:
            self._lo = self.keys.min(axis=0)
            shape = self.keys.max(axis=0) - self._lo + 1
            self._table = np.full(shape, -1, dtype=np.int64)
            self._table[self.keys[:, 0] - self._lo[0], self.keys[:, 1] - self._lo[1]] = \
                np.arange(n)
        else:
            self._lo = np.zeros(2, dtype=np.int64)
            self._table = np.full((1, 1), -1, dtype=np.int64)

    @property
    def n_cells(self) -> int:
        return int(self.keys.shape[0])

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Row index of the cell containing each point, -1 where no cell is stored."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        keys = np.floor(pts / self.cell_size).astype(np.int64) - self._lo
        inside = np.all((keys >= 0) & (keys < self._table.shape), axis=1)
        rows = np.full(pts.shape[0], -1, dtype=np.int64)
        rows[inside] = self._table[keys[inside, 0], keys[inside, 1]]
        return rows

    def key_of_row(self, row: int) -> tuple[int, int]:
        return (int(self.keys[row, 0]), int(self.keys[row, 1]))

    def row_of_key(self, key) -> int:
        """Row index of a cell key, -1 when the cell is not stored."""
        i = int(key[0]) - int(self._lo[0])
        j = int(key[1]) - int(self._lo[1])
        if 0 <= i < self._table.shape[0] and 0 <= j < self._table.shape[1]:
            return int(self._table[i, j])
        return -1


def _as_points(cloud) -> np.ndarray:
    if isinstance(cloud, CartesianScan):
        return cloud.points
    return np.asarray(cloud, dtype=float).reshape(-1, 2)


def build_grid(reference, cell_size: float, min_points: int = 3,
               eig_floor: float = 1e-3) -> NdtGrid:
    """Summarize a reference cloud into per-cell Gaussians.

    The sample covariance (n-1 divisor) of each cell is eigenvalue-floored:
    eigenvalues below eig_floor times the largest are raised to exactly that
    value, which keeps degenerate (e.g. collinear) cells invertible.
    """
    if cell_size <= 0.0:
        raise ValueError("cell_size must be positive")
    pts = _as_points(reference)
    if pts.shape[0] == 0:
        empty = np.empty((0,))
        return NdtGrid(cell_size, np.empty((0, 2)), np.empty((0, 2)), np.empty((0, 2, 2)), empty)
    keys = np.floor(pts / cell_size).astype(np.int64)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    sel = np.nonzero(counts >= min_points)[0]
    if sel.size == 0:
        empty = np.empty((0,))
        return NdtGrid(cell_size, np.empty((0, 2)), np.empty((0, 2)), np.empty((0, 2, 2)), empty)
    order = np.argsort(inverse, kind="stable")
    sorted_pts = pts[order]
    bounds = np.searchsorted(inverse[order], np.arange(uniq.shape[0] + 1))
    means = np.empty((sel.size, 2))
    covs = np.empty((sel.size, 2, 2))
    for out_i, cell_id in enumerate(sel):
        members = sorted_pts[bounds[cell_id]:bounds[cell_id + 1]]
        mean = members.mean(axis=0)
        d = members - mean
        cov = (d.T @ d) / (members.shape[0] - 1)
        means[out_i] = mean
        covs[out_i] = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(covs)
    lam_max = np.maximum(w[:, -1], 1e-9 * cell_size * cell_size)  # guard: identical points
    w = np.maximum(w, eig_floor * lam_max[:, None])
    w[:, -1] = np.maximum(w[:, -1], lam_max)
    covs = np.einsum("kij,kj,klj->kil", v, w, v)
    covs = 0.5 * (covs + covs.transpose(0, 2, 1))
    return NdtGrid(cell_size, uniq[sel], means, covs, counts[sel])


def score_terms(grid: NdtGrid, points, shift) -> tuple[np.ndarray, np.ndarray]:
    """Per-point score terms exp(-0.5 d'Md) at a given shift, with cell rows.

    Points in no stored cell get term 0 and row -1.
    """
    pts = _as_points(points)
    shift = np.asarray(shift, dtype=float).ravel()
    terms = np.zeros(pts.shape[0])
    if grid.n_cells == 0 or pts.shape[0] == 0:
        return terms, np.full(pts.shape[0], -1, dtype=np.int64)
    shifted = pts - shift
    rows = grid.cell_index(shifted)
    hit = rows >= 0
    if hit.any():
        d = shifted[hit] - grid.means[rows[hit]]
        md = np.einsum("kij,kj->ki", grid.inv_covs[rows[hit]], d)
        q = np.einsum("ki,ki->k", d, md)
        terms[hit] = np.exp(-0.5 * q)
    return terms, rows


def ndt_score(grid: NdtGrid, points, shift=(0.0, 0.0)) -> float:
    """Summed likelihood score L(shift) of a cloud against the grid."""
    terms, _ = score_terms(grid, points, shift)
    return float(terms.sum())


def score_gradient(grid: NdtGrid, points, shift) -> tuple[float, np.ndarray, np.ndarray]:
    """Score with its analytic gradient and Hessian with respect to the shift.

    d_i = (p_i - r) - q_i, M_i = inv(Sigma_i), t_i = exp(-0.5 d'Md):
        dL/dr   = sum_i t_i M_i d_i
        d2L/dr2 = sum_i t_i ((M_i d_i)(M_i d_i)' - M_i)
    """
    pts = _as_points(points)
    shift = np.asarray(shift, dtype=float).ravel()
    if grid.n_cells == 0 or pts.shape[0] == 0:
        return 0.0, np.zeros(2), np.zeros((2, 2))
    shifted = pts - shift
    rows = grid.cell_index(shifted)
    hit = rows >= 0
    if not hit.any():
        return 0.0, np.zeros(2), np.zeros((2, 2))
    minv = grid.inv_covs[rows[hit]]
    d = shifted[hit] - grid.means[rows[hit]]
    md = np.einsum("kij,kj->ki", minv, d)
    q = np.einsum("ki,ki->k", d, md)
    t = np.exp(-0.5 * q)
    loss = float(t.sum())
    grad = np.einsum("k,ki->i", t, md)
    hess = np.einsum("k,ki,kj->ij", t, md, md) - np.einsum("k,kij->ij", t, minv)
    return loss, grad, hess


def match_to_grid(grid: NdtGrid, points, n_points: int,
                  cfg: SolverConfig = SolverConfig()) -> MatchResult:
    """Damped Newton maximization of the score from shift = 0.

    The Newton direction uses the negated Hessian with eigenvalues floored to
    stay positive definite; steps are halved until the score improves, so the
    reported loss never decreases across accepted steps.
    """
    pts = _as_points(points)
    shift = np.zeros(2)
    if grid.n_cells == 0 or pts.shape[0] == 0:
        return MatchResult(shift, 0.0, n_points, float(n_points), 0, False, pts.shape[0])
    loss, grad, hess = score_gradient(grid, pts, shift)
    iterations = 0
    converged = False
    for iterations in range(1, cfg.max_iter + 1):
        neg_hess = -hess
        w, v = np.linalg.eigh(neg_hess)
        floor = max(1e-12, 1e-6 * float(np.abs(w).max()))
        w = np.maximum(w, floor)
        step = v @ ((v.T @ grad) / w)
        # trust region: a Newton step larger than one cell is extrapolating
        # past the quadratic model's validity
        norm = float(np.linalg.norm(step))
        if norm > cfg.cell_size:
            step *= cfg.cell_size / norm
        if float(np.linalg.norm(step)) < cfg.tol_step:
            converged = True
            break
        alpha = 1.0
        accepted = False
        for _ in range(cfg.max_halvings):
            cand = shift + alpha * step
            new_loss, new_grad, new_hess = score_gradient(grid, pts, cand)
            if new_loss > loss:
                shift, loss, grad, hess = cand, new_loss, new_grad, new_hess
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no improving step along the Newton direction: stationary point
            converged = float(np.linalg.norm(grad)) <= 1e-8 * (1.0 + abs(loss))
            break
    terms, rows = score_terms(grid, pts, shift)
    return MatchResult(
        shift=shift,
        loss=loss,
        n_points=n_points,
        shortfall=float(n_points) - loss,
        iterations=iterations,
        converged=converged,
        n_unmatched=int(np.count_nonzero(rows < 0)),
    )


def scan_match(reference, measured, cfg: SolverConfig = SolverConfig()) -> MatchResult:
    """Match a measured cloud against a reference cloud (grid built here).

    `n_points` in the result is the measured cloud's valid point count.
    """
    ref_pts = _as_points(reference)
    mea_pts = _as_points(measured)
    if mea_pts.shape[0] == 0:
        raise ValueError("measured cloud is empty")
    grid = build_grid(ref_pts, cfg.cell_size, cfg.min_points, cfg.eig_floor)
    return match_to_grid(grid, mea_pts, mea_pts.shape[0], cfg)


def match_cells(grid: NdtGrid, points, shift) -> list[tuple[int, int] | None]:
    """Cell key per point at the given shift, None where no cell is stored."""
    pts = _as_points(points)
    rows = grid.cell_index(pts - np.asarray(shift, dtype=float).ravel())
    return [grid.key_of_row(r) if r >= 0 else None for r in rows]


def shortfall_bound(noise_bounds, grid: NdtGrid, matched_cells) -> float:
    """Noise-only upper bound on the match shortfall.

    For each point with per-beam disturbance norm at most w_i, matched to a
    cell with covariance Sigma_i, the bound is

        n - sum_i exp(-0.5 * w_i**2 * lambda_max(inv(Sigma_i))),

    with n the number of points passed in. Every point must come with its
    matched cell; callers decide what to do with unmatched points.
    """
    w = np.asarray(noise_bounds, dtype=float).ravel()
    cells = list(matched_cells)
    if len(cells) != w.shape[0]:
        raise ValueError("need exactly one matched cell per noise bound")
    lam = np.empty(w.shape[0])
    for i, key in enumerate(cells):
        if key is None:
            raise ValueError(f"point {i} has no matched cell")
        row = grid.row_of_key(key)
        if row < 0:
            raise KeyError(f"cell {key} is not stored in the grid")
        lam[i] = grid.max_inv_eig[row]
    return float(w.shape[0] - np.exp(-0.5 * w * w * lam).sum())

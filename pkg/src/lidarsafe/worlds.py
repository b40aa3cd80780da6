"""Built-in environments: axis-aligned buildings rasterized into boundary point clouds."""
from __future__ import annotations

import numpy as np

from .geometry import PointCloudMap


def rectangle_outline(x0: float, y0: float, x1: float, y1: float,
                      spacing: float = 0.25) -> np.ndarray:
    """Points along a rectangle's boundary at the given spacing.

    Each edge is sampled half-open so corners appear exactly once.
    """
    if not (x1 > x0 and y1 > y0):
        raise ValueError("rectangle corners must satisfy x1 > x0 and y1 > y0")
    xs = np.arange(x0, x1, spacing)
    ys = np.arange(y0, y1, spacing)
    bottom = np.column_stack((xs, np.full_like(xs, y0)))
    right = np.column_stack((np.full_like(ys, x1), ys))
    top = np.column_stack((x0 + x1 - xs, np.full_like(xs, y1)))
    left = np.column_stack((np.full_like(ys, x0), y0 + y1 - ys))
    return np.vstack([bottom, right, top, left])


def corridor_world(
    half_width: float = 5.0,
    block_depth: float = 4.0,
    block_length: float = 10.0,
    gap: float = 4.0,
    y_start: float = -10.0,
    y_end: float = 150.0,
    spacing: float = 0.25,
) -> PointCloudMap:
    """Urban corridor: two rows of rectangular buildings flanking a straight street.

    Blocks of `block_length` alternate with `gap`-wide cross streets, giving
    the scan matcher structure along both axes.
    """
    pts = []
    pitch = block_length + gap
    y = y_start
    while y + block_length <= y_end:
        for x0, x1 in ((-half_width - block_depth, -half_width),
                       (half_width, half_width + block_depth)):
            pts.append(rectangle_outline(x0, y, x1, y + block_length, spacing))
        y += pitch
    return PointCloudMap(np.vstack(pts))

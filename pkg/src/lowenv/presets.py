"""Named level-function configurations used by tests, examples and the CLI."""

from __future__ import annotations

import numpy as np

from .envelope import GridSpec, LevelFunctionSet


def example25(n: int) -> LevelFunctionSet:
    """Three phases meeting at (1/2, 1/2): phi = (0, x2 - x1, 1 - x1 - x2)."""
    grid = GridSpec(n, 2)
    return LevelFunctionSet.from_functions(
        grid, [None, lambda x, y: y - x, lambda x, y: 1.0 - x - y], pinned_zero=True
    )


def example211(n: int) -> LevelFunctionSet:
    """Four phases in 3D meeting at (1/2, 1/2, 1/2)."""
    grid = GridSpec(n, 3)
    return LevelFunctionSet.from_functions(
        grid,
        [None, lambda x, y, z: y - x, lambda x, y, z: 1.0 - x - y, lambda x, y, z: z - 0.5],
        pinned_zero=True,
    )


def three_planes(n: int, center, g1, g2) -> LevelFunctionSet:
    """phi = (0, g1.(x - c), g2.(x - c)): a straight triple junction at ``center``."""
    grid = GridSpec(n, 2)
    cx, cy = center
    return LevelFunctionSet.from_functions(
        grid,
        [
            None,
            lambda x, y: g1[0] * (x - cx) + g1[1] * (y - cy),
            lambda x, y: g2[0] * (x - cx) + g2[1] * (y - cy),
        ],
        pinned_zero=True,
    )


def symmetric_junction(n: int, center=(0.5, 0.5)) -> LevelFunctionSet:
    """Three phases with 120 degree sectors at ``center``.

    With unit vectors e_k at angles 90, 210 and 330 degrees, phase k is the
    sector around e_k when phi_k = -e_k.(x - c) + e_0.(x - c).
    """
    ang = np.deg2rad([90.0, 210.0, 330.0])
    e = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    g1 = e[0] - e[1]
    g2 = e[0] - e[2]
    return three_planes(n, center, g1, g2)


def ground_truth(n: int, amp=0.08, ellipses=((0.35, 0.65, 0.2, 0.1), (0.75, 0.35, 0.15, 0.25)),
                 scale=0.2) -> LevelFunctionSet:
    """Curvy two-phase background plus high-conductivity inclusions (phase 2)."""
    grid = GridSpec(n, 2)

    def phi1(x, y):
        return y - 0.5 - amp * np.sin(2.0 * np.pi * x)

    def phi2(x, y):
        q = [((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 - 1.0 for cx, cy, rx, ry in ellipses]
        return scale * np.minimum.reduce(q)

    return LevelFunctionSet.from_functions(grid, [None, phi1, phi2], pinned_zero=True)


def disc_inclusions(n: int, discs=((0.3, 0.7, 0.12), (0.7, 0.3, 0.12)), scale=1.0) -> LevelFunctionSet:
    """Flat interface ``x2 = 1/2`` with phase 2 exactly the union of ``discs``.

    ``phi_2 = min(phi_1, 0) + scale * min_e (|x - c_e| - r_e)``: outside the
    discs the second term is positive, inside it wins against both other
    fields, and each disc boundary is a smooth interface.
    """
    grid = GridSpec(n, 2)
    x, y = grid.mesh()
    phi1 = y - 0.5
    d = np.minimum.reduce([np.hypot(x - cx, y - cy) - r for cx, cy, r in discs])
    phi2 = np.minimum(phi1, 0.0) + scale * d
    return LevelFunctionSet(grid, np.stack([np.zeros(grid.shape), phi1, phi2]), pinned_zero=True)


def fd_validation_case(n: int = 64) -> LevelFunctionSet:
    """Standard smooth two-inclusion partition used to validate the shape gradient.

    One disc of radius 0.12 sits in each background phase; data come from
    the default ground truth.
    """
    return disc_inclusions(n, ((0.3, 0.7, 0.12), (0.7, 0.3, 0.12)))


PRESETS = {
    "example25": example25,
    "example211": example211,
    "symmetric_junction": symmetric_junction,
    "ground_truth": ground_truth,
    "fd_validation_case": fd_validation_case,
}

"""Transport of all level functions by one common velocity field.

Every non-pinned field solves ``phi_t + theta . grad(phi) = 0`` with an
explicit first-order upwind scheme on the level-function grid.  Moving all
fields with the same velocity moves every phase, interface and triple point
along the flow of ``theta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .envelope import GridSpec, LevelFunctionSet, pairwise_interface
from .errors import ConfigError, PreconditionError, StepSizeError

EPS_VEL = 1e-14


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Nodal 2D velocity on a :class:`GridSpec`.

    The normal component is set to zero at boundary nodes on construction
    (``vx`` on the left/right sides, ``vy`` on the lower/upper sides);
    ``removed_normal`` keeps the max-norm of what was removed.
    """

    grid: GridSpec
    vx: np.ndarray
    vy: np.ndarray
    removed_normal: float = 0.0

    def __post_init__(self):
        if self.grid.dim != 2:
            raise PreconditionError("velocity fields are 2D only")
        vx = np.array(np.broadcast_to(np.asarray(self.vx, dtype=float), self.grid.shape))
        vy = np.array(np.broadcast_to(np.asarray(self.vy, dtype=float), self.grid.shape))
        if not (np.all(np.isfinite(vx)) and np.all(np.isfinite(vy))):
            raise PreconditionError("velocity must be finite")
        removed = max(
            float(np.max(np.abs(vx[[0, -1], :]))),
            float(np.max(np.abs(vy[:, [0, -1]]))),
        )
        vx[[0, -1], :] = 0.0
        vy[:, [0, -1]] = 0.0
        vx.setflags(write=False)
        vy.setflags(write=False)
        object.__setattr__(self, "vx", vx)
        object.__setattr__(self, "vy", vy)
        object.__setattr__(self, "removed_normal", max(float(self.removed_normal), removed))

    @classmethod
    def constant(cls, grid: GridSpec, value) -> "VelocityField":
        return cls(grid, np.full(grid.shape, float(value[0])), np.full(grid.shape, float(value[1])))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VelocityField":
        return cls(grid, np.zeros(grid.shape), np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: GridSpec, f: Callable) -> "VelocityField":
        """``f(x1, x2) -> (vx, vy)`` evaluated at the nodes."""
        x, y = grid.mesh()
        vx, vy = f(x, y)
        return cls(grid, vx, vy)

    @classmethod
    def from_nodal(cls, grid: GridSpec, theta) -> "VelocityField":
        """From an ``(N, 2)`` array in node order."""
        theta = np.asarray(theta, dtype=float)
        return cls(grid, theta[:, 0].reshape(grid.shape), theta[:, 1].reshape(grid.shape))

    def nodal(self) -> np.ndarray:
        return np.stack([self.vx.ravel(), self.vy.ravel()], axis=1)

    def norm(self) -> float:
        """max over nodes of ``|vx| + |vy|`` (the quantity the upwind CFL bound uses)."""
        return float(np.max(np.abs(self.vx) + np.abs(self.vy)))

    def scaled(self, c: float) -> "VelocityField":
        return VelocityField(self.grid, c * self.vx, c * self.vy, self.removed_normal)

    def is_zero(self) -> bool:
        return not (np.any(self.vx) or np.any(self.vy))


@dataclass(frozen=True)
class TransportParams:
    cfl: float = 0.5
    t0: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.cfl <= 1.0):
            raise ConfigError(f"cfl must lie in (0, 1], got {self.cfl!r}")
        if not (self.t0 >= 0.0) or not np.isfinite(self.t0):
            raise ConfigError(f"end time must be >= 0, got {self.t0!r}")


def cfl_dt(theta: VelocityField | float, h: float, cfl: float) -> float:
    """Largest stable explicit step ``cfl * h / max(|theta|, EPS_VEL)``.

    ``theta`` may be a velocity field or directly its norm.
    """
    speed = theta.norm() if isinstance(theta, VelocityField) else float(theta)
    return cfl * h / max(speed, EPS_VEL)


def _check_grids(phi, theta):
    if phi.grid != theta.grid:
        raise PreconditionError("level functions and velocity live on different grids")
    if phi.grid.dim != 2:
        raise PreconditionError("transport is implemented in 2D only")


def _advance(phi: LevelFunctionSet, theta: VelocityField, dts) -> LevelFunctionSet:
    vals = np.array(phi.values)
    h = phi.grid.h
    start = 1 if phi.pinned_zero else 0
    for k in range(start, phi.kappa):
        vals[k] = kernels.upwind_advect(phi.values[k], theta.vx, theta.vy, h, dts)
    return phi.with_values(vals)


def advect_step(phi: LevelFunctionSet, theta: VelocityField, dt: float) -> LevelFunctionSet:
    """One explicit upwind step.  Raises StepSizeError if ``dt`` exceeds the CFL=1 limit."""
    _check_grids(phi, theta)
    if dt < 0:
        raise StepSizeError(f"negative time step {dt!r}")
    limit = cfl_dt(theta, phi.grid.h, 1.0)
    if dt > limit * (1.0 + 1e-12):
        raise StepSizeError(f"dt={dt!r} exceeds the CFL limit {limit!r}")
    if dt == 0.0 or theta.is_zero():
        return phi
    return _advance(phi, theta, [dt])


def step_schedule(t0: float, dt_max: float) -> list[float]:
    """Steps ``min(dt_max, remaining)`` until ``t0`` is reached."""
    steps = []
    t = 0.0
    while t0 - t > 0.0:
        dt = min(dt_max, t0 - t)
        if dt <= 1e-15 * t0:
            break
        steps.append(dt)
        t += dt
    return steps


def advect(phi: LevelFunctionSet, theta: VelocityField, params: TransportParams) -> LevelFunctionSet:
    """Transport ``phi`` by ``theta`` over the pseudo-time ``params.t0``."""
    _check_grids(phi, theta)
    if params.t0 == 0.0 or theta.is_zero():
        return phi
    dts = step_schedule(params.t0, cfl_dt(theta, phi.grid.h, params.cfl))
    return _advance(phi, theta, dts)


def interface_gradient_scale(phi: LevelFunctionSet) -> float:
    """Mean of ``|grad(phi_k - phi_l)|`` over all true-interface segment midpoints."""
    vals = []
    for k in range(phi.kappa):
        for l in range(k + 1, phi.kappa):
            seg = pairwise_interface(phi, k, l).segments
            if len(seg) == 0:
                continue
            mid = seg.mean(axis=1)
            g = phi.fd_gradient(mid)
            vals.append(np.linalg.norm(g[k] - g[l], axis=1))
    if not vals:
        return 1.0
    return float(np.mean(np.concatenate(vals)))


def rescale_by_interface_gradient(phi: LevelFunctionSet) -> LevelFunctionSet:
    """Divide every field by the mean interface gradient norm.

    One common positive factor leaves every phase unchanged while bringing
    interface gradients back to order one.  Off by default in the optimiser.
    """
    s = interface_gradient_scale(phi)
    if not np.isfinite(s) or s <= 0:
        return phi
    return phi.with_values(phi.values / s)

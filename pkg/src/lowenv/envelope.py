"""Multiphase configurations represented as the lower envelope of level functions.

A configuration is a set of ``kappa`` scalar fields sampled at the nodes of a
uniform grid on the unit box.  Phase ``k`` is where field ``k`` is the
smallest one; ties go to the lowest index.  Between nodes the fields are
multilinearly interpolated.

Grid arrays are indexed ``[ix, iy]`` (or ``[ix, iy, iz]``) with node
coordinates ``ix / n``; flattening in C order gives the node numbering used
everywhere else in the package.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateJunctionError, DomainError, PreconditionError

TOL_EQ_REL = 1e-10
EPS_RANK = 1e-6
NEWTON_MAXITER = 50


@dataclass(frozen=True)
class GridSpec:
    """Uniform node grid on the unit box, ``n`` cells per side."""

    n: int
    dim: int = 2

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise PreconditionError(f"grid needs n >= 2 cells per side, got {self.n!r}")
        if self.dim not in (2, 3):
            raise PreconditionError(f"grid dimension must be 2 or 3, got {self.dim!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n + 1,) * self.dim

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    def axis(self) -> np.ndarray:
        # i / n keeps the last coordinate exactly 1.0
        return np.arange(self.n + 1) / self.n

    def mesh(self) -> tuple[np.ndarray, ...]:
        ax = self.axis()
        return np.meshgrid(*([ax] * self.dim), indexing="ij")

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(N, dim)``, in C order of the grid arrays."""
        return np.stack([c.ravel() for c in self.mesh()], axis=1)

    def cell_centroids(self) -> np.ndarray:
        c = (np.arange(self.n) + 0.5) / self.n
        grids = np.meshgrid(*([c] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


def _corner_slices(dim):
    """Yield (corner offsets, slice tuple selecting that corner of every cell)."""
    for corner in itertools.product((0, 1), repeat=dim):
        sl = tuple(slice(1, None) if c else slice(None, -1) for c in corner)
        yield corner, sl


@dataclass(frozen=True, eq=False)
class LevelFunctionSet:
    """``kappa`` nodal fields on a common grid.

    ``values`` has shape ``(kappa, *grid.shape)`` and is stored read-only.
    """

    grid: GridSpec
    values: np.ndarray
    pinned_zero: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != self.grid.dim + 1 or vals.shape[1:] != self.grid.shape:
            raise PreconditionError(
                f"level functions have shape {vals.shape[1:]}, grid expects {self.grid.shape}"
            )
        if vals.shape[0] < 2:
            raise PreconditionError("need at least two level functions")
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("level functions must be finite")
        if self.pinned_zero and np.max(np.abs(vals[0])) != 0.0:
            raise PreconditionError("pinned_zero set but field 0 is not identically zero")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_functions(cls, grid: GridSpec, funcs: Sequence[Callable], pinned_zero=None):
        """Sample callables ``f(x1, x2[, x3])`` at the grid nodes.

        A ``None`` entry stands for the identically-zero field.  When
        ``pinned_zero`` is None it is inferred from field 0.
        """
        coords = grid.mesh()
        vals = []
        for f in funcs:
            if f is None:
                vals.append(np.zeros(grid.shape))
            else:
                vals.append(np.broadcast_to(np.asarray(f(*coords), dtype=float), grid.shape))
        vals = np.array(vals)
        if pinned_zero is None:
            pinned_zero = bool(np.max(np.abs(vals[0])) == 0.0)
        return cls(grid, vals, pinned_zero)

    def with_values(self, values) -> "LevelFunctionSet":
        return LevelFunctionSet(self.grid, values, self.pinned_zero)

    @property
    def kappa(self) -> int:
        return self.values.shape[0]

    @property
    def tol_eq(self) -> float:
        return TOL_EQ_REL * float(np.max(np.abs(self.values)))

    def nodal(self) -> np.ndarray:
        """Values as ``(kappa, N)`` in node order."""
        return self.values.reshape(self.kappa, -1)

    # -- interpolation -----------------------------------------------------

    def _locate(self, points):
        pts = np.asarray(points, dtype=float)
        pts = pts.reshape(-1, self.grid.dim)
        if not np.all(np.isfinite(pts)) or np.any(pts < 0.0) or np.any(pts > 1.0):
            raise DomainError("point outside the unit box")
        s = pts * self.grid.n
        idx = np.minimum(np.floor(s).astype(np.intp), self.grid.n - 1)
        return idx, s - idx

    def interpolate(self, points) -> np.ndarray:
        """Multilinear interpolation; returns ``(kappa, m)`` for ``m`` points."""
        idx, frac = self._locate(points)
        out = np.zeros((self.kappa, idx.shape[0]))
        for corner in itertools.product((0, 1), repeat=self.grid.dim):
            w = np.ones(idx.shape[0])
            for a, c in enumerate(corner):
                w = w * (frac[:, a] if c else 1.0 - frac[:, a])
            ind = tuple(idx[:, a] + c for a, c in enumerate(corner))
            out += w * self.values[(slice(None),) + ind]
        return out

    def interp_gradient(self, points) -> np.ndarray:
        """Exact gradient of the interpolant inside the containing cell, ``(kappa, m, dim)``."""
        idx, frac = self._locate(points)
        d = self.grid.dim
        out = np.zeros((self.kappa, idx.shape[0], d))
        for corner in itertools.product((0, 1), repeat=d):
            ind = tuple(idx[:, a] + c for a, c in enumerate(corner))
            v = self.values[(slice(None),) + ind]
            for a in range(d):
                w = np.full(idx.shape[0], float(self.grid.n) if corner[a] else -float(self.grid.n))
                for b, c in enumerate(corner):
                    if b != a:
                        w = w * (frac[:, b] if c else 1.0 - frac[:, b])
                out[:, :, a] += w * v
        return out

    def fd_gradient(self, points) -> np.ndarray:
        """Central differences (stencil h) of the interpolated fields, ``(kappa, m, dim)``.

        Near the boundary the stencil is clipped to the box and the quotient
        uses the actual spacing.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, self.grid.dim)
        self._locate(pts)
        h = self.grid.h
        out = np.empty((self.kappa, pts.shape[0], self.grid.dim))
        for a in range(self.grid.dim):
            xp = pts.copy()
            xm = pts.copy()
            xp[:, a] = np.minimum(pts[:, a] + h, 1.0)
            xm[:, a] = np.maximum(pts[:, a] - h, 0.0)
            out[:, :, a] = (self.interpolate(xp) - self.interpolate(xm)) / (xp[:, a] - xm[:, a])
        return out


def _argmin_lowest(vals: np.ndarray, tol: float) -> np.ndarray:
    """Smallest index whose value is within ``tol`` of the minimum (axis 0)."""
    mins = vals.min(axis=0)
    return np.argmax(vals <= mins + tol, axis=0)


def lower_envelope(phi: LevelFunctionSet, x) -> float | np.ndarray:
    """Pointwise minimum of the interpolated fields.

    A single point gives a float; an ``(m, d)`` array gives ``m`` values.
    """
    vals = phi.interpolate(x).min(axis=0)
    return float(vals[0]) if np.ndim(x) == 1 else vals


def argmin_label(phi: LevelFunctionSet, x) -> int | np.ndarray:
    """Phase label at ``x``: the lowest index attaining the minimum (within tol_eq)."""
    labels = _argmin_lowest(phi.interpolate(x), phi.tol_eq)
    return int(labels[0]) if np.ndim(x) == 1 else labels


@dataclass(frozen=True, eq=False)
class PhaseLabelField:
    """One phase label per grid cell (evaluated at the cell centroid)."""

    grid: GridSpec
    labels: np.ndarray
    kappa: int

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.kappa)

    def areas(self) -> np.ndarray:
        """Measure of each phase at cell resolution; sums to 1."""
        return self.counts() / float(self.grid.n**self.grid.dim)


def extract_phases(phi: LevelFunctionSet) -> PhaseLabelField:
    grid = phi.grid
    centroid = np.zeros((phi.kappa,) + grid.cell_shape)
    for _, sl in _corner_slices(grid.dim):
        centroid += phi.values[(slice(None),) + sl]
    centroid /= 2**grid.dim
    labels = _argmin_lowest(centroid, phi.tol_eq).astype(np.intp)
    return PhaseLabelField(grid, labels, phi.kappa)


# -- interfaces ------------------------------------------------------------

# marching-squares edge table; corner bits: 1=(i,j) 2=(i+1,j) 4=(i+1,j+1) 8=(i,j+1)
# edges: 0 bottom, 1 right, 2 top, 3 left
_MS_EDGES = {
    1: ((3, 0),), 14: ((3, 0),),
    2: ((0, 1),), 13: ((0, 1),),
    4: ((1, 2),), 11: ((1, 2),),
    8: ((2, 3),), 7: ((2, 3),),
    3: ((1, 3),), 12: ((1, 3),),
    6: ((0, 2),), 9: ((0, 2),),
}
_EDGE_CORNERS = ((0, 1), (1, 2), (2, 3), (3, 0))
_CORNER_OFFSETS = ((0, 0), (1, 0), (1, 1), (0, 1))


def zero_contour(field2d: np.ndarray, tol: float = 0.0):
    """Marching-squares zero contour of a nodal field on the unit square.

    Returns ``(segments, degenerate)`` where ``segments`` has shape
    ``(m, 2, 2)`` and ``degenerate`` lists cells on which ``|field| <= tol``
    at all four corners (skipped).  Nodes with value exactly 0 count as
    positive; saddle cells are disambiguated by the cell-centre average.
    """
    f = np.asarray(field2d, dtype=float)
    n = f.shape[0] - 1
    h = 1.0 / n
    c = [f[:-1, :-1], f[1:, :-1], f[1:, 1:], f[:-1, 1:]]
    case = sum((ci < 0).astype(np.int64) << b for b, ci in enumerate(c))
    degenerate_mask = np.ones(case.shape, dtype=bool)
    for ci in c:
        degenerate_mask &= np.abs(ci) <= tol
    degenerate = [tuple(int(v) for v in ij) for ij in np.argwhere(degenerate_mask)]
    active = np.argwhere((case != 0) & (case != 15) & ~degenerate_mask)
    segs = []
    for i, j in active:
        vals = [f[i + di, j + dj] for di, dj in _CORNER_OFFSETS]
        cs = int(case[i, j])
        if cs in (5, 10):
            centre = 0.25 * sum(vals)
            pairs = ((0, 1), (2, 3)) if (centre < 0) == (vals[0] < 0) else ((3, 0), (1, 2))
        else:
            pairs = _MS_EDGES[cs]
        pts = {}
        for e in {e for p in pairs for e in p}:
            a, b = _EDGE_CORNERS[e]
            fa, fb = vals[a], vals[b]
            t = fa / (fa - fb)
            pa = np.array(_CORNER_OFFSETS[a], dtype=float)
            pb = np.array(_CORNER_OFFSETS[b], dtype=float)
            pts[e] = ((np.array([i, j]) + pa + t * (pb - pa)) * h)
        for e0, e1 in pairs:
            p0, p1 = pts[e0], pts[e1]
            if np.hypot(*(p1 - p0)) > 1e-14 * h:
                segs.append((p0, p1))
    out = np.array(segs, dtype=float).reshape(-1, 2, 2)
    return out, degenerate


@dataclass
class PairInterface:
    """Zero contour of ``phi_k - phi_l`` split into true (E) and ghost (M \\ E) parts."""

    pair: tuple[int, int]
    segments: np.ndarray
    ghost: np.ndarray
    degenerate_cells: list = field(default_factory=list)


def pairwise_interface(phi: LevelFunctionSet, k: int, l: int) -> PairInterface:
    """Segments approximating the interface between phases ``k`` and ``l`` (2D only).

    A contour segment belongs to the true interface when the two smallest
    interpolated fields at its midpoint are ``k`` and ``l``; otherwise it
    lies on a ghost interface.
    """
    if phi.grid.dim != 2:
        raise PreconditionError("pairwise_interface is only available in 2D")
    if k == l or not (0 <= k < phi.kappa and 0 <= l < phi.kappa):
        raise PreconditionError(f"invalid phase pair ({k}, {l})")
    diff = phi.values[k] - phi.values[l]
    segs, degenerate = zero_contour(diff, phi.tol_eq)
    if len(segs) == 0:
        empty = np.zeros((0, 2, 2))
        return PairInterface((k, l), empty, empty.copy(), degenerate)
    mid = 0.5 * (segs[:, 0] + segs[:, 1])
    vals = phi.interpolate(mid)
    order = np.argsort(vals, axis=0, kind="stable")[:2]
    true = ((order[0] == k) & (order[1] == l)) | ((order[0] == l) & (order[1] == k))
    return PairInterface((k, l), segs[true], segs[~true], degenerate)


# -- tuple points ----------------------------------------------------------


@dataclass
class TupleSearch:
    points: np.ndarray
    jac_min_sv: list
    failures: list


def _hat(phi, subset, pts):
    v = phi.interpolate(pts)[list(subset)]
    return v[0] - v[1:]


def _hat_jac(phi, subset, pt):
    g = phi.interp_gradient(pt)[list(subset), 0]
    return g[0] - g[1:]


def _newton(phi, subset, x0, tol):
    x = x0.copy()
    F = _hat(phi, subset, x)[:, 0]
    for _ in range(NEWTON_MAXITER):
        res = np.max(np.abs(F))
        if res <= tol:
            return x, "converged"
        J = _hat_jac(phi, subset, x)
        sv = np.linalg.svd(J, compute_uv=False)
        if sv[-1] <= 1e-14 * max(sv[0], 1e-300):
            return x, "singular"
        dx = np.linalg.solve(J, -F)
        lam = 1.0
        while True:
            xn = np.clip(x + lam * dx, 0.0, 1.0)
            Fn = _hat(phi, subset, xn)[:, 0]
            if np.max(np.abs(Fn)) < res or lam < 1e-4:
                break
            lam *= 0.5
        if np.array_equal(xn, x):
            break
        x, F = xn, Fn
    return x, ("converged" if np.max(np.abs(F)) <= tol else "no-convergence")


def tuple_search(phi: LevelFunctionSet, subset=None) -> TupleSearch:
    """Locate points where the ``d + 1`` fields in ``subset`` all coincide.

    Candidate cells are those on which every difference ``phi_{k1} - phi_kj``
    changes sign over the corners; this contains every cell whose corner
    labels show all phases.  Damped Newton runs from each candidate centroid
    on the interpolated system, and converged points are deduplicated within
    one grid spacing.
    """
    grid = phi.grid
    subset = tuple(range(phi.kappa)) if subset is None else tuple(sorted(subset))
    if len(subset) != grid.dim + 1:
        raise PreconditionError(f"tuple points need exactly {grid.dim + 1} fields, got {len(subset)}")
    vals = phi.values[list(subset)]
    cand = np.ones(grid.cell_shape, dtype=bool)
    for j in range(1, len(subset)):
        diff = vals[0] - vals[j]
        lo = np.full(grid.cell_shape, np.inf)
        hi = np.full(grid.cell_shape, -np.inf)
        for _, sl in _corner_slices(grid.dim):
            lo = np.minimum(lo, diff[sl])
            hi = np.maximum(hi, diff[sl])
        cand &= (lo <= 0.0) & (hi >= 0.0)
    h = grid.h
    tol = phi.tol_eq
    found, svs, failures = [], [], []
    for cell in np.argwhere(cand):
        lo = cell * h
        x, status = _newton(phi, subset, lo + 0.5 * h, tol)
        if status != "converged":
            failures.append((tuple(int(c) for c in cell), status))
            continue
        if np.any(x < lo - h - 1e-12) or np.any(x > lo + 2 * h + 1e-12):
            continue
        if any(np.max(np.abs(x - y)) <= h for y in found):
            continue
        found.append(x)
    pts = np.array(sorted(found, key=tuple), dtype=float).reshape(-1, grid.dim)
    for x in pts:
        g = phi.fd_gradient(x)[list(subset), 0]
        svs.append(float(np.linalg.svd(g[0] - g[1:], compute_uv=False)[-1]))
    return TupleSearch(pts, svs, failures)


def detect_tuple_points(phi: LevelFunctionSet) -> np.ndarray:
    """(d+1)-tuple points of a configuration with ``kappa == d + 1``; shape ``(m, d)``."""
    if phi.kappa != phi.grid.dim + 1:
        raise PreconditionError(
            f"tuple points need kappa = d + 1 = {phi.grid.dim + 1}, got {phi.kappa}"
        )
    return tuple_search(phi).points


def triple_angles(phi: LevelFunctionSet, x_hat, eps_rank: float = EPS_RANK) -> np.ndarray:
    """Opening angles ``(beta_0, beta_1, beta_2)`` of the three phases at a triple point.

    ``beta_k`` is the angle between grad(phi_{k+1} - phi_k) and
    grad(phi_k - phi_{k+2}) (indices mod 3), which equals the opening of the
    sector occupied by phase ``k``.
    """
    if phi.grid.dim != 2 or phi.kappa != 3:
        raise PreconditionError("triple angles need d = 2 and kappa = 3")
    if not phi.pinned_zero:
        raise PreconditionError("triple angles need field 0 pinned to zero")
    x_hat = np.asarray(x_hat, dtype=float).reshape(2)
    v = phi.interpolate(x_hat)[:, 0]
    if np.max(v) - np.min(v) > phi.tol_eq:
        raise PreconditionError(f"{tuple(x_hat)} is not a triple point (spread {np.ptp(v):.3g})")
    g = phi.fd_gradient(x_hat)[:, 0]
    jac = np.array([g[0] - g[1], g[0] - g[2]])
    smin = np.linalg.svd(jac, compute_uv=False)[-1]
    if smin <= eps_rank:
        raise DegenerateJunctionError(f"singular junction: min singular value {smin:.3g}")
    betas = np.empty(3)
    for k in range(3):
        a = g[(k + 1) % 3] - g[k]
        b = g[k] - g[(k + 2) % 3]
        cosb = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
        betas[k] = np.arccos(np.clip(cosb, -1.0, 1.0))
    return betas


# -- regularity --------------------------------------------------------------


@dataclass
class RegularityReport:
    """Smallest gradient/singular-value diagnostics over the sampled interfaces.

    ``pair_min[(k, l)]`` is the minimum of |grad(phi_k - phi_l)| over sampled
    points of the coincidence set (``inf`` if the pair never meets, ``0`` if
    degenerate cells were found); ``tuple_min_sv[I]`` lists the smallest
    singular value of the difference Jacobian at each point found for the
    index set ``I``.
    """

    eps_rank: float
    pair_min: dict = field(default_factory=dict)
    tuple_min_sv: dict = field(default_factory=dict)
    degenerate_cells: dict = field(default_factory=dict)
    newton_failures: dict = field(default_factory=dict)

    @property
    def minima(self) -> list:
        vals = list(self.pair_min.values())
        for svs in self.tuple_min_sv.values():
            vals.extend(svs)
        return vals

    @property
    def passed(self) -> bool:
        return all(v > self.eps_rank for v in self.minima)

    def summary(self) -> str:
        lines = [f"eps_rank={self.eps_rank:g}", f"status={'pass' if self.passed else 'fail'}"]
        for (k, l), v in sorted(self.pair_min.items()):
            nd = self.degenerate_cells.get((k, l), 0)
            lines.append(f"pair {k},{l}: min_grad={v!r} degenerate_cells={nd}")
        for I, svs in sorted(self.tuple_min_sv.items()):
            s = ",".join(repr(v) for v in svs) if svs else "none"
            nf = len(self.newton_failures.get(I, []))
            lines.append(f"tuple {','.join(map(str, I))}: min_sv={s} newton_failures={nf}")
        return "\n".join(lines) + "\n"


def _edge_crossings(diff: np.ndarray) -> np.ndarray:
    """Zero crossings of a nodal field along grid edges (any dimension)."""
    n = diff.shape[0] - 1
    h = 1.0 / n
    out = []
    for a in range(diff.ndim):
        lo = [slice(None)] * diff.ndim
        hi = [slice(None)] * diff.ndim
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        fa, fb = diff[tuple(lo)], diff[tuple(hi)]
        mask = (fa < 0) != (fb < 0)
        idx = np.argwhere(mask)
        t = fa[mask] / (fa[mask] - fb[mask])
        p = idx.astype(float)
        p[:, a] += t
        out.append(p * h)
    return np.concatenate(out, axis=0) if out else np.zeros((0, diff.ndim))


def check_regularity(phi: LevelFunctionSet, eps_rank: float = EPS_RANK) -> RegularityReport:
    """Check the gradient conditions that make the phases a proper partition."""
    rep = RegularityReport(eps_rank)
    d = phi.grid.dim
    for k, l in itertools.combinations(range(phi.kappa), 2):
        diff = phi.values[k] - phi.values[l]
        if d == 2:
            segs, degenerate = zero_contour(diff, phi.tol_eq)
            samples = 0.5 * (segs[:, 0] + segs[:, 1])
        else:
            mask = np.ones(phi.grid.cell_shape, dtype=bool)
            for _, sl in _corner_slices(d):
                mask &= np.abs(diff[sl]) <= phi.tol_eq
            degenerate = [tuple(int(v) for v in c) for c in np.argwhere(mask)]
            samples = _edge_crossings(diff)
        rep.degenerate_cells[(k, l)] = len(degenerate)
        if degenerate:
            rep.pair_min[(k, l)] = 0.0
        elif len(samples) == 0:
            rep.pair_min[(k, l)] = float("inf")
        else:
            g = phi.fd_gradient(samples)
            rep.pair_min[(k, l)] = float(np.min(np.linalg.norm(g[k] - g[l], axis=1)))
    if phi.kappa >= d + 1:
        for I in itertools.combinations(range(phi.kappa), d + 1):
            res = tuple_search(phi, I)
            rep.tuple_min_sv[I] = res.jac_min_sv
            rep.newton_failures[I] = res.failures
            if any(status == "singular" for _, status in res.failures):
                rep.tuple_min_sv[I] = res.jac_min_sv + [0.0]
    return rep


@dataclass
class InterfaceGeometry:
    """All pairwise interfaces (true and ghost) plus tuple points of a 2D configuration."""

    segments: dict
    ghost: dict
    tuple_points: np.ndarray


def interface_geometry(phi: LevelFunctionSet) -> InterfaceGeometry:
    segs, ghost = {}, {}
    for k, l in itertools.combinations(range(phi.kappa), 2):
        pi = pairwise_interface(phi, k, l)
        segs[(k, l)] = pi.segments
        ghost[(k, l)] = pi.ghost
    if phi.kappa == phi.grid.dim + 1:
        tp = detect_tuple_points(phi)
    else:
        tp = np.zeros((0, phi.grid.dim))
    return InterfaceGeometry(segs, ghost, tp)

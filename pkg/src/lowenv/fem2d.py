"""P1 finite elements on the structured triangulation of the unit square.

Nodes are numbered like the level-function grid (``ix * (n + 1) + iy``).
Every cell ``(ix, iy)`` is split along its lower-left to upper-right
diagonal into a lower triangle ``(i,j), (i+1,j), (i+1,j+1)`` and an upper
triangle ``(i,j), (i+1,j+1), (i,j+1)``; elements are numbered cell by cell,
lower triangle first.

Boundary sides are ``left`` (x=0), ``right`` (x=1), ``lower`` (y=0) and
``upper`` (y=1).  Boundary data on a side is given as ``n + 1`` samples at
the tangential coordinate ``s_j = j / n`` (``s`` is y on left/right and x on
lower/upper), so corner values belong to each side separately.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .envelope import GridSpec, LevelFunctionSet, PhaseLabelField, argmin_label
from .errors import ConfigError, DataError, GaugeError, SolverError

SIDES = ("left", "right", "lower", "upper")
TOL_LIN = 1e-10
TOL_COMPAT = 1e-6


@dataclass(frozen=True, eq=False)
class TriMesh:
    n: int
    nodes: np.ndarray
    tri: np.ndarray
    grads: np.ndarray  # (ne, 3, 2) gradients of the barycentric basis
    area: float
    side_nodes: dict = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.tri.shape[0]

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.n, 2)

    def centroids(self) -> np.ndarray:
        return self.nodes[self.tri].mean(axis=1)

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(np.concatenate([self.side_nodes[s] for s in SIDES]))

    def tags(self, node: int) -> set:
        return {s for s in SIDES if node in self.side_nodes[s]}

    def nodes_of(self, sides) -> np.ndarray:
        if not sides:
            return np.zeros(0, dtype=np.intp)
        return np.unique(np.concatenate([self.side_nodes[s] for s in sides]))

    def gradient(self, u) -> np.ndarray:
        """Element-constant gradient of a P1 field, ``(ne, 2)``."""
        return np.einsum("eai,ea->ei", self.grads, np.asarray(u)[self.tri])

    def centroid_values(self, u) -> np.ndarray:
        return np.asarray(u)[self.tri].mean(axis=1)

    @functools.cached_property
    def mass(self) -> sp.csr_matrix:
        """Consistent P1 mass matrix."""
        loc = self.area / 12.0 * (np.ones((3, 3)) + np.eye(3))
        return _assemble(self, np.broadcast_to(loc, (self.n_elements, 3, 3)))

    @functools.cached_property
    def boundary_mass(self) -> sp.csr_matrix:
        """Trapezoid-rule (lumped) boundary mass: h/2 per side end, h inside."""
        w = np.zeros(self.n_nodes)
        for s in SIDES:
            w[self.side_nodes[s]] += self.side_weights()
        return sp.diags(w).tocsr()

    def side_weights(self) -> np.ndarray:
        w = np.full(self.n + 1, self.h)
        w[[0, -1]] = 0.5 * self.h
        return w


def build_mesh(n: int) -> TriMesh:
    """Structured P1 mesh with ``n`` cells per side (``n >= 2``)."""
    if int(n) != n or n < 2:
        raise ConfigError(f"mesh needs n >= 2, got {n!r}")
    n = int(n)
    grid = GridSpec(n, 2)
    nodes = grid.nodes()
    ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ix, iy = ix.ravel(), iy.ravel()

    def nid(i, j):
        return i * (n + 1) + j

    lower = np.stack([nid(ix, iy), nid(ix + 1, iy), nid(ix + 1, iy + 1)], axis=1)
    upper = np.stack([nid(ix, iy), nid(ix + 1, iy + 1), nid(ix, iy + 1)], axis=1)
    tri = np.stack([lower, upper], axis=1).reshape(-1, 3)

    # barycentric gradients: same two reference shapes everywhere
    grads = np.empty((tri.shape[0], 3, 2))
    grads[0::2] = n * np.array([[-1.0, 0.0], [1.0, -1.0], [0.0, 1.0]])
    grads[1::2] = n * np.array([[0.0, -1.0], [1.0, 0.0], [-1.0, 1.0]])

    j = np.arange(n + 1)
    side_nodes = {
        "left": nid(0, j),
        "right": nid(n, j),
        "lower": nid(j, 0),
        "upper": nid(j, n),
    }
    return TriMesh(n, nodes, tri, grads, 0.5 / n**2, side_nodes)


def _assemble(mesh: TriMesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(mesh.tri, 3, axis=1).ravel()
    cols = np.tile(mesh.tri, (1, 3)).ravel()
    A = sp.coo_matrix((np.asarray(local).ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2)
    return A.tocsr()


# -- conductivity ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhaseConductivity:
    """Per-phase 2x2 conductivity matrices, ``(kappa, 2, 2)``."""

    matrices: np.ndarray
    lower_bound: float = 1e-12

    def __post_init__(self):
        m = np.array(self.matrices, dtype=float)
        if m.ndim != 3 or m.shape[1:] != (2, 2):
            raise ConfigError("conductivities must be an array of 2x2 matrices")
        for k, s in enumerate(m):
            if not np.allclose(s, s.T, rtol=0, atol=1e-14 * np.abs(s).max()):
                raise ConfigError(f"conductivity of phase {k} is not symmetric")
            if np.linalg.eigvalsh(s).min() < self.lower_bound:
                raise ConfigError(f"conductivity of phase {k} is not positive definite")
        for k in range(len(m)):
            for l in range(k + 1, len(m)):
                if np.array_equal(m[k], m[l]):
                    raise ConfigError(f"phases {k} and {l} have the same conductivity")
        m.setflags(write=False)
        object.__setattr__(self, "matrices", m)

    @classmethod
    def isotropic(cls, values) -> "PhaseConductivity":
        values = np.asarray(values, dtype=float)
        return cls(values[:, None, None] * np.eye(2))

    @property
    def kappa(self) -> int:
        return self.matrices.shape[0]

    @property
    def is_isotropic(self) -> bool:
        m = self.matrices
        return bool(np.all(m[:, 0, 1] == 0) and np.all(m[:, 0, 0] == m[:, 1, 1]))

    @property
    def scalars(self) -> np.ndarray:
        return self.matrices[:, 0, 0].copy()


def element_labels(phi: LevelFunctionSet | PhaseLabelField, mesh: TriMesh) -> np.ndarray:
    """Phase label of every triangle.

    From level functions the label is ``argmin_label`` at the triangle
    centroid; from a cell label field each triangle inherits its cell label.
    """
    if phi.grid.n != mesh.n or phi.grid.dim != 2:
        raise ConfigError(f"phase grid n={phi.grid.n} does not match mesh n={mesh.n}")
    if isinstance(phi, PhaseLabelField):
        return np.repeat(phi.labels.ravel(), 2)
    return argmin_label(phi, mesh.centroids())


def phase_fractions(phi: LevelFunctionSet, mesh: TriMesh, mode: str = "fraction") -> np.ndarray:
    """Share of each phase in each triangle, ``(ne, kappa)``.

    ``fraction`` clips each triangle exactly against the (linear) level
    functions; ``centroid`` puts the whole triangle in its centroid phase.
    """
    if phi.grid.n != mesh.n or phi.grid.dim != 2:
        raise ConfigError(f"phase grid n={phi.grid.n} does not match mesh n={mesh.n}")
    if mode == "centroid":
        lab = element_labels(phi, mesh)
        return np.eye(phi.kappa)[lab]
    if mode in ("fraction", "laminate"):
        return kernels.cut_fractions(phi.nodal(), mesh.tri, mesh.nodes)
    raise ConfigError(f"unknown sigma mode {mode!r}")


@dataclass(frozen=True, eq=False)
class LaminateCells:
    """Two-phase cut triangles: indices, phase pair ``(k, l)``, shares and unit normal."""

    cells: np.ndarray
    k: np.ndarray
    l: np.ndarray
    fk: np.ndarray
    fl: np.ndarray
    nu: np.ndarray


def laminate_cells(phi: LevelFunctionSet, frac: np.ndarray, mesh: TriMesh) -> LaminateCells:
    """Triangles shared by exactly two phases whose interface normal is defined."""
    nz = frac > 0.0
    cut = np.nonzero(nz.sum(axis=1) == 2)[0]
    order = np.argsort(~nz[cut], axis=1, kind="stable")[:, :2]
    k, l = order[:, 0], order[:, 1]
    vals = phi.nodal()
    tri = mesh.tri[cut]
    diff = vals[k[:, None], tri] - vals[l[:, None], tri]
    g = np.einsum("eai,ea->ei", mesh.grads[cut], diff)
    norm = np.linalg.norm(g, axis=1)
    ok = norm > 0
    nu = g[ok] / norm[ok, None]
    cut, k, l = cut[ok], k[ok], l[ok]
    return LaminateCells(cut, k, l, frac[cut, k], frac[cut, l], nu)


def laminate_sigma(phi: LevelFunctionSet, frac: np.ndarray, sigma: "PhaseConductivity",
                   mesh: TriMesh, cells: LaminateCells | None = None) -> np.ndarray:
    """Cut-element conductivity from the laminate rule.

    In a triangle shared by exactly two isotropic phases the interface is a
    straight segment with unit normal ``nu`` (from the P1 gradient of
    ``phi_k - phi_l``).  The effective tensor of such a layered element is
    the arithmetic mean along the interface and the harmonic mean across it:
    ``s_a (I - nu nu^T) + s_h nu nu^T``.  Other elements use the arithmetic
    mix (which is exact for uncut ones).
    """
    sig = np.einsum("ek,kij->eij", frac, sigma.matrices)
    if not sigma.is_isotropic:
        return sig
    if cells is None:
        cells = laminate_cells(phi, frac, mesh)
    if cells.cells.size == 0:
        return sig
    s = sigma.scalars
    s_a = cells.fk * s[cells.k] + cells.fl * s[cells.l]
    s_h = 1.0 / (cells.fk / s[cells.k] + cells.fl / s[cells.l])
    P = np.einsum("ei,ej->eij", cells.nu, cells.nu)
    sig[cells.cells] = s_a[:, None, None] * (np.eye(2) - P) + s_h[:, None, None] * P
    return sig


SIGMA_MODES = ("laminate", "fraction", "centroid")


def element_sigma(phi, sigma: PhaseConductivity, mesh: TriMesh, mode: str = "centroid") -> np.ndarray:
    """Per-element conductivity matrices ``(ne, 2, 2)``.

    ``phi`` is a :class:`LevelFunctionSet` or a :class:`PhaseLabelField`.
    ``centroid`` gives each triangle the conductivity of its centroid phase.
    From level functions, ``fraction`` mixes the phase conductivities by
    their exact area shares in the triangle and ``laminate`` also accounts
    for the interface orientation in two-phase cut triangles.
    """
    if mode not in SIGMA_MODES:
        raise ConfigError(f"unknown sigma mode {mode!r}")
    if isinstance(phi, PhaseLabelField) or mode == "centroid":
        lab = element_labels(phi, mesh)
        if lab.max() >= sigma.kappa:
            raise ConfigError("more phases than conductivities")
        return sigma.matrices[lab]
    frac = phase_fractions(phi, mesh, "fraction")
    if frac.shape[1] != sigma.kappa:
        raise ConfigError("number of phases and conductivities differ")
    if mode == "laminate":
        return laminate_sigma(phi, frac, sigma, mesh)
    return np.einsum("ek,kij->eij", frac, sigma.matrices)


def as_matrices(sig) -> np.ndarray:
    """Accept ``(ne,)`` scalars or ``(ne, 2, 2)`` matrices."""
    sig = np.asarray(sig, dtype=float)
    if sig.ndim == 1:
        return sig[:, None, None] * np.eye(2)
    return sig


# -- assembly ------------------------------------------------------------------


def stiffness(mesh: TriMesh, sig, transpose: bool = False) -> sp.csr_matrix:
    """``A[a, b] = sum_e area * grad(w_a) . sigma_e grad(w_b)`` (sigma^T if ``transpose``)."""
    s = as_matrices(sig)
    if transpose:
        s = np.swapaxes(s, 1, 2)
    G = mesh.grads
    local = mesh.area * np.einsum("eai,eij,ebj->eab", G, s, G)
    return _assemble(mesh, local)


def load_vector(mesh: TriMesh, f) -> np.ndarray:
    """One-point rule for an element-constant source: ``f_e * area / 3`` per vertex."""
    b = np.zeros(mesh.n_nodes)
    if f is None:
        return b
    f = np.broadcast_to(np.asarray(f, dtype=float), (mesh.n_elements,))
    np.add.at(b, mesh.tri.ravel(), np.repeat(f * mesh.area / 3.0, 3))
    return b


def neumann_vector(mesh: TriMesh, g: Mapping[str, np.ndarray]) -> np.ndarray:
    """Trapezoid rule of ``int g w`` on each listed side."""
    b = np.zeros(mesh.n_nodes)
    w = mesh.side_weights()
    for side, vals in g.items():
        if side not in SIDES:
            raise ConfigError(f"unknown boundary side {side!r}")
        vals = np.broadcast_to(np.asarray(vals, dtype=float), (mesh.n + 1,))
        np.add.at(b, mesh.side_nodes[side], w * vals)
    return b


def side_coordinate(mesh: TriMesh) -> np.ndarray:
    return np.arange(mesh.n + 1) / mesh.n


@dataclass
class BoundaryData:
    """Dirichlet values on ``dirichlet`` sides and fluxes ``g`` on the others.

    ``dirichlet_values`` is a full nodal array (only Dirichlet nodes are
    read); ``neumann`` maps side name to ``n + 1`` samples.
    """

    dirichlet: tuple = ()
    dirichlet_values: np.ndarray | None = None
    neumann: dict = field(default_factory=dict)

    def validate(self, mesh: TriMesh):
        sides = set(self.dirichlet) | set(self.neumann)
        if set(self.dirichlet) & set(self.neumann):
            raise ConfigError("a side is both Dirichlet and Neumann")
        unknown = sides - set(SIDES)
        if unknown:
            raise ConfigError(f"unknown boundary sides {sorted(unknown)}")
        if sides != set(SIDES):
            raise ConfigError("boundary data must cover all four sides")


# -- solvers -------------------------------------------------------------------


class MixedSolver:
    """Factorised P1 operator with Dirichlet rows eliminated on ``dirichlet`` sides.

    ``solve`` handles the forward problem with ``sigma``; ``solve_transpose``
    the problem with ``sigma^T`` and homogeneous Dirichlet data on the same
    nodes (the adjoint), reusing the same factorisation.
    """

    def __init__(self, mesh: TriMesh, sig, dirichlet_sides, method: str = "direct",
                 pin_node: int | None = None):
        self.mesh = mesh
        self.A = stiffness(mesh, sig)
        dn = mesh.nodes_of(tuple(dirichlet_sides))
        if pin_node is not None:
            dn = np.union1d(dn, [pin_node])
        if dn.size == 0:
            raise GaugeError("mixed solve needs at least one Dirichlet node")
        mask = np.zeros(mesh.n_nodes, dtype=bool)
        mask[dn] = True
        self.dir_nodes = dn
        self.free = np.nonzero(~mask)[0]
        self.A_ff = self.A[self.free][:, self.free].tocsc()
        self.A_fd = self.A[self.free][:, dn].tocsc()
        self.method = method
        self._lu = None
        if method == "direct":
            try:
                self._lu = spla.splu(self.A_ff, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise SolverError(f"factorisation failed: {exc}") from exc
        elif method != "cg":
            raise ConfigError(f"unknown linear solver {method!r}")

    def _solve_reduced(self, rhs: np.ndarray, trans: bool) -> np.ndarray:
        A = self.A_ff.T if trans else self.A_ff
        if self._lu is not None:
            x = self._lu.solve(rhs, trans="T" if trans else "N")
        else:
            x = _iterative(A, rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("linear solve produced non-finite values")
        res = A @ x - rhs
        scale = np.linalg.norm(rhs, axis=0)
        bad = np.linalg.norm(res, axis=0) > 1e3 * TOL_LIN * np.maximum(scale, 1e-300)
        if np.any(bad & (scale > 0)):
            raise SolverError("linear system is singular or ill-conditioned")
        return x

    def solve(self, rhs_full, dirichlet_values=None) -> np.ndarray:
        """Solve ``A u = rhs`` on free nodes with ``u = dirichlet_values`` on the others.

        Accepts one right-hand side ``(N,)`` or several ``(N, m)``.
        """
        rhs_full = np.asarray(rhs_full, dtype=float)
        u = np.zeros_like(rhs_full)
        if dirichlet_values is not None:
            g = np.asarray(dirichlet_values, dtype=float)[self.dir_nodes]
            u[self.dir_nodes] = g
            rhs = rhs_full[self.free] - self.A_fd @ g
        else:
            rhs = rhs_full[self.free]
        u[self.free] = self._solve_reduced(rhs, trans=False)
        return u

    def solve_transpose(self, rhs_full) -> np.ndarray:
        """``A^T p = rhs`` on free nodes, ``p = 0`` on Dirichlet nodes."""
        rhs_full = np.asarray(rhs_full, dtype=float)
        p = np.zeros_like(rhs_full)
        p[self.free] = self._solve_reduced(rhs_full[self.free], trans=True)
        return p


def _iterative(A, rhs):
    """CG with Jacobi preconditioning (BiCGSTAB when ``A`` is not symmetric)."""
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("non-positive diagonal: system is not SPD")
    P = spla.LinearOperator(A.shape, matvec=lambda x: x / d, dtype=float)
    sym = abs(A - A.T).max() <= 1e-14 * abs(A).max()
    method = spla.cg if sym else spla.bicgstab
    cols = rhs.reshape(rhs.shape[0], -1)
    out = np.empty_like(cols)
    for c in range(cols.shape[1]):
        if not np.any(cols[:, c]):
            out[:, c] = 0.0
            continue
        x, info = method(A, cols[:, c], rtol=TOL_LIN, atol=0.0, M=P, maxiter=20 * A.shape[0])
        if info != 0:
            raise SolverError(f"iterative solver did not converge (info={info})")
        out[:, c] = x
    return out.reshape(rhs.shape)


def solve_mixed(mesh: TriMesh, sig, f, bc: BoundaryData, method: str = "direct") -> np.ndarray:
    """P1 Galerkin solution of the mixed problem with weak form
    ``int sigma grad u . grad w = int f w + int_N g w``.
    """
    bc.validate(mesh)
    if not bc.dirichlet:
        raise GaugeError("no Dirichlet side given; use solve_neumann_gauged")
    solver = MixedSolver(mesh, sig, bc.dirichlet, method)
    rhs = load_vector(mesh, f) + neumann_vector(mesh, bc.neumann)
    vals = bc.dirichlet_values if bc.dirichlet_values is not None else np.zeros(mesh.n_nodes)
    return solver.solve(rhs, vals)


def neumann_integral(mesh: TriMesh, g: Mapping[str, np.ndarray], f=None) -> float:
    """Discrete ``int_dD g + int_D f`` (trapezoid / one-point)."""
    total = float(neumann_vector(mesh, g).sum())
    if f is not None:
        total += float(load_vector(mesh, f).sum())
    return total


def solve_neumann_gauged(mesh: TriMesh, sig, f, g: Mapping[str, np.ndarray],
                         method: str = "direct", solver: MixedSolver | None = None) -> np.ndarray:
    """Pure-Neumann solve, gauged to zero nodal mean.

    Node 0 is pinned during the solve and the result is shifted afterwards.
    Raises DataError when the data violate the compatibility condition.
    """
    if set(g) != set(SIDES):
        raise ConfigError("pure-Neumann data must cover all four sides")
    rhs = load_vector(mesh, f) + neumann_vector(mesh, g)
    scale = float(np.abs(rhs).sum())
    if abs(rhs.sum()) > TOL_COMPAT * max(1.0, scale):
        raise DataError(f"incompatible Neumann data: net flux {rhs.sum():.3e}")
    if solver is None:
        solver = MixedSolver(mesh, sig, (), method, pin_node=0)
    u = solver.solve(rhs, np.zeros(mesh.n_nodes))
    return u - u.mean(axis=0)


def solve_adjoints(mesh: TriMesh, sig, u, v, solver_a: MixedSolver | None = None,
                   solver_b: MixedSolver | None = None,
                   gamma_a=("left", "right"), gamma_b=("lower", "upper")):
    """Adjoint states ``p`` (zero on Gamma_a) and ``q`` (zero on Gamma_b).

    ``sigma^T grad p . grad w = -int (u - v) w`` and the same with ``+`` for
    ``q``; the load uses the consistent mass matrix.  Pass the solvers used
    for ``u`` and ``v`` to reuse their factorisations.
    """
    if solver_a is None:
        solver_a = MixedSolver(mesh, sig, gamma_a)
    if solver_b is None:
        solver_b = MixedSolver(mesh, sig, gamma_b)
    r = mesh.mass @ (np.asarray(u) - np.asarray(v))
    p = solver_a.solve_transpose(-r)
    q = solver_b.solve_transpose(r)
    return p, q

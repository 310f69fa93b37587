"""Volume (distributed) shape derivative and the regularised descent direction.

With P1 states and element-constant conductivity the tensor ``S1`` is
constant on every triangle, so it is stored per element together with the
vector ``S0``.  The derivative in direction ``theta`` is

    dJ(theta) = sum_e area_e * (S1_e : D theta_e + S0_e . theta(centroid_e)),

with ``(D theta)_ij = d theta_i / d x_j``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, PreconditionError, SolverError
from .fem2d import TriMesh, as_matrices, stiffness
from .transport import TransportParams, VelocityField, advect


@dataclass(frozen=True, eq=False)
class ShapeGradientData:
    """Per-element ``S1`` ``(ne, 2, 2)`` and ``S0`` ``(ne, 2)``."""

    S1: np.ndarray
    S0: np.ndarray

    def __post_init__(self):
        if self.S1.ndim != 3 or self.S1.shape[1:] != (2, 2) or self.S0.shape != (self.S1.shape[0], 2):
            raise PreconditionError("S1 must be (ne, 2, 2) and S0 (ne, 2)")

    @property
    def n_elements(self) -> int:
        return self.S1.shape[0]

    def scaled(self, c: float) -> "ShapeGradientData":
        return ShapeGradientData(c * self.S1, c * self.S0)

    def __add__(self, other: "ShapeGradientData") -> "ShapeGradientData":
        return ShapeGradientData(self.S1 + other.S1, self.S0 + other.S0)

    @classmethod
    def zeros(cls, ne: int) -> "ShapeGradientData":
        return cls(np.zeros((ne, 2, 2)), np.zeros((ne, 2)))


@dataclass(frozen=True)
class RegParams:
    alpha1: float = 0.2
    alpha2: float = 0.8
    alpha3: float = 1e5

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3"):
            v = getattr(self, name)
            if not (v > 0 and np.isfinite(v)):
                raise ConfigError(f"{name} must be positive, got {v!r}")


def _columns(*fields):
    """Promote ``(N,)`` fields to ``(N, 1)`` so several currents can be summed."""
    out = [np.asarray(f, dtype=float) for f in fields]
    out = [f[:, None] if f.ndim == 1 else f for f in out]
    if len({f.shape for f in out}) != 1:
        raise PreconditionError("state fields must have matching shapes")
    return out


def _check_mesh(mesh: TriMesh, *fields):
    for f in fields:
        if f.shape[0] != mesh.n_nodes:
            raise PreconditionError(f"field has {f.shape[0]} nodes, mesh has {mesh.n_nodes}")


def _elem_grads(mesh, f, cells=slice(None)):
    # (ne, 2, m), optionally restricted to a subset of elements
    return np.einsum("eai,eam->eim", mesh.grads[cells], f[mesh.tri[cells]])


def assemble_S1_iso(mesh: TriMesh, u, v, p, q, sig) -> ShapeGradientData:
    """Isotropic tensor, summed over currents when the states are ``(N, m)``.

    ``S1 = [ubar^2/2 + s gu.gp + s gv.gq] I - 2 s (gu (.) gp + gv (.) gq)``
    with ``ubar`` the centroid value of ``u - v`` and ``(.)`` the symmetrised
    outer product; ``S0 = 0``.
    """
    u, v, p, q = _columns(u, v, p, q)
    _check_mesh(mesh, u, v, p, q)
    s = np.asarray(sig, dtype=float)
    if s.ndim == 3:
        s = s[:, 0, 0]
    if s.shape != (mesh.n_elements,):
        raise PreconditionError("isotropic assembly needs one conductivity per element")
    gu, gv, gp, gq = (_elem_grads(mesh, f) for f in (u, v, p, q))
    ubar = mesh.centroid_values(u - v)  # (ne, m)
    trace = 0.5 * np.sum(ubar**2, axis=1) + s * (
        np.einsum("eim,eim->e", gu, gp) + np.einsum("eim,eim->e", gv, gq)
    )
    outer = np.einsum("eim,ejm->eij", gu, gp) + np.einsum("eim,ejm->eij", gv, gq)
    sym = outer + np.swapaxes(outer, 1, 2)  # = 2 * (u (.) p + v (.) q)
    S1 = trace[:, None, None] * np.eye(2) - s[:, None, None] * sym
    return ShapeGradientData(S1, np.zeros((mesh.n_elements, 2)))


def assemble_S1_general(mesh: TriMesh, u, v, p, q, sig, f=None, *,
                        fractions=None, dsigma: Sequence[Callable] | None = None,
                        grad_f: Sequence[Callable] | None = None,
                        varying: bool = False) -> ShapeGradientData:
    """Full tensor for matrix-valued conductivity and a source term.

    ``S1 = [ubar^2/2 - f(p+q) + gp.s gu + gq.s gv] I
           - gp (x) s gu - gu (x) s^T gp - gq (x) s gv - gv (x) s^T gq``.

    ``S0`` needs the per-phase callbacks ``dsigma[k](x, a, b)``, returning
    ``sum_ij d_l sigma_ij a_j b_i`` for ``l = 1, 2`` (shape ``(m, 2)`` for
    ``m`` points), and ``grad_f[k](x)``; phases are weighted by
    ``fractions`` ``(ne, kappa)``.  Without callbacks the coefficients are
    taken constant per phase and ``S0 = 0``; ``varying=True`` makes the
    callbacks mandatory.
    """
    u, v, p, q = _columns(u, v, p, q)
    _check_mesh(mesh, u, v, p, q)
    s = as_matrices(sig)
    if s.shape != (mesh.n_elements, 2, 2):
        raise PreconditionError("need one conductivity matrix per element")
    ne = mesh.n_elements
    fe = np.zeros(ne) if f is None else np.broadcast_to(np.asarray(f, dtype=float), (ne,))
    gu, gv, gp, gq = (_elem_grads(mesh, x) for x in (u, v, p, q))
    ubar = mesh.centroid_values(u - v)
    pq = mesh.centroid_values(p + q)  # (ne, m)
    sgu = np.einsum("eij,ejm->eim", s, gu)
    sgv = np.einsum("eij,ejm->eim", s, gv)
    stgp = np.einsum("eji,ejm->eim", s, gp)
    stgq = np.einsum("eji,ejm->eim", s, gq)
    trace = (
        0.5 * np.sum(ubar**2, axis=1)
        - fe * np.sum(pq, axis=1)
        + np.einsum("eim,eim->e", gp, sgu)
        + np.einsum("eim,eim->e", gq, sgv)
    )
    S1 = trace[:, None, None] * np.eye(2) - (
        np.einsum("eim,ejm->eij", gp, sgu)
        + np.einsum("eim,ejm->eij", gu, stgp)
        + np.einsum("eim,ejm->eij", gq, sgv)
        + np.einsum("eim,ejm->eij", gv, stgq)
    )
    S0 = np.zeros((ne, 2))
    if varying and (dsigma is None or grad_f is None or fractions is None):
        raise ConfigError("non-constant coefficients need dsigma and grad_f callbacks and fractions")
    if dsigma is not None or grad_f is not None:
        if fractions is None:
            raise ConfigError("S0 callbacks need per-element phase fractions")
        fractions = np.asarray(fractions, dtype=float)
        xc = mesh.centroids()
        for k in range(fractions.shape[1]):
            w = fractions[:, k]
            sel = np.nonzero(w)[0]
            if sel.size == 0:
                continue
            term = np.zeros((sel.size, 2))
            for m in range(u.shape[1]):
                if dsigma is not None:
                    term += dsigma[k](xc[sel], gu[sel, :, m], gp[sel, :, m])
                    term += dsigma[k](xc[sel], gv[sel, :, m], gq[sel, :, m])
                if grad_f is not None:
                    term -= pq[sel, m, None] * grad_f[k](xc[sel])
            S0[sel] += w[sel, None] * term
    return ShapeGradientData(S1, S0)


def assemble_S1_laminate(mesh: TriMesh, u, v, p, q, sig, cells, sigma_values) -> ShapeGradientData:
    """Isotropic tensor with the laminate sub-cell model on two-phase cut triangles.

    Uncut triangles are treated as in :func:`assemble_S1_general`.  In a cut
    triangle (``cells`` from :func:`lowenv.fem2d.laminate_cells`) each P1
    gradient ``g`` is split into the one-sided gradients of a layered
    medium: the tangential part is shared and the normal part on side ``j``
    is ``s_h (g . nu) / s_j`` (continuous normal flux).  ``S1`` is then the
    area-weighted mean of the per-phase isotropic tensors, plus the
    ``ubar^2 / 2`` trace term.
    """
    S = assemble_S1_general(mesh, u, v, p, q, sig)
    if cells.cells.size == 0:
        return S
    u, v, p, q = _columns(u, v, p, q)
    c = cells.cells
    s = np.asarray(sigma_values, dtype=float)
    sk, sl = s[cells.k], s[cells.l]
    s_h = 1.0 / (cells.fk / sk + cells.fl / sl)
    nu = cells.nu
    grads = [_elem_grads(mesh, f, c) for f in (u, v, p, q)]  # (c, 2, m)
    ubar = (u - v)[mesh.tri[c]].mean(axis=1)
    S1 = 0.5 * np.sum(ubar**2, axis=1)[:, None, None] * np.eye(2)
    for frac, sj in ((cells.fk, sk), (cells.fl, sl)):
        ratio = s_h / sj - 1.0
        gu, gv, gp, gq = (
            g + ratio[:, None, None] * np.einsum("ei,eim->em", nu, g)[:, None, :] * nu[:, :, None]
            for g in grads
        )
        tr = np.einsum("eim,eim->e", gu, gp) + np.einsum("eim,eim->e", gv, gq)
        outer = np.einsum("eim,ejm->eij", gu, gp) + np.einsum("eim,ejm->eij", gv, gq)
        S1 += (frac * sj)[:, None, None] * (tr[:, None, None] * np.eye(2) - outer - np.swapaxes(outer, 1, 2))
    S1all = S.S1.copy()
    S1all[c] = S1
    return ShapeGradientData(S1all, S.S0)


def evaluate_dJ(S: ShapeGradientData, mesh: TriMesh, theta) -> float:
    """``dJ(theta)`` for a nodal vector field ``(N, 2)`` or a VelocityField."""
    if isinstance(theta, VelocityField):
        theta = theta.nodal()
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (mesh.n_nodes, 2) or S.n_elements != mesh.n_elements:
        raise PreconditionError("theta / shape data do not match the mesh")
    Dtheta = np.einsum("eaj,eai->eij", mesh.grads, theta[mesh.tri])
    vol = np.einsum("eij,eij->e", S.S1, Dtheta)
    vol = vol + np.einsum("ei,ei->e", S.S0, theta[mesh.tri].mean(axis=1))
    return float(mesh.area * vol.sum())


def dJ_rhs(S: ShapeGradientData, mesh: TriMesh) -> np.ndarray:
    """Nodal representation ``r`` with ``dJ(theta) = sum r * theta``, shape ``(N, 2)``."""
    loc = mesh.area * np.einsum("eij,eaj->eai", S.S1, mesh.grads)
    loc = loc + (mesh.area / 3.0) * S.S0[:, None, :]
    r = np.zeros((mesh.n_nodes, 2))
    np.add.at(r, mesh.tri.ravel(), loc.reshape(-1, 2))
    return r


@functools.lru_cache(maxsize=8)
def _reg_factor(n: int, alpha1: float, alpha2: float, alpha3: float):
    from .fem2d import build_mesh

    mesh = build_mesh(n)
    B = (alpha1 * stiffness(mesh, np.ones(mesh.n_elements))
         + alpha2 * mesh.mass + alpha3 * mesh.boundary_mass)
    B = sp.csc_matrix(B)
    try:
        return B, spla.splu(B, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:  # pragma: no cover - B is SPD for positive alphas
        raise SolverError(f"regularisation operator factorisation failed: {exc}") from exc


def regularisation_operator(mesh: TriMesh, alpha: RegParams):
    """Scalar operator ``alpha1 K + alpha2 M + alpha3 Mb`` and its factorisation."""
    return _reg_factor(mesh.n, alpha.alpha1, alpha.alpha2, alpha.alpha3)


def descent_direction(S: ShapeGradientData, mesh: TriMesh, alpha: RegParams = RegParams(),
                      return_raw: bool = False):
    """Solve ``B(theta, xi) = -dJ(xi)`` for all P1 ``xi``, componentwise.

    The returned :class:`VelocityField` has its boundary normal component
    removed (``removed_normal`` records how large it was).  With
    ``return_raw`` the unprojected nodal solution is returned as well.
    """
    if S.n_elements != mesh.n_elements:
        raise PreconditionError("shape data do not match the mesh")
    _, lu = regularisation_operator(mesh, alpha)
    rhs = -dJ_rhs(S, mesh)
    theta = lu.solve(rhs)
    if not np.all(np.isfinite(theta)):
        raise SolverError("descent direction solve produced non-finite values")
    field = VelocityField.from_nodal(mesh.grid, theta)
    return (field, theta) if return_raw else field


def B_form(mesh: TriMesh, alpha: RegParams, theta, xi=None) -> float:
    B, _ = regularisation_operator(mesh, alpha)
    theta = np.asarray(theta, dtype=float)
    xi = theta if xi is None else np.asarray(xi, dtype=float)
    return float(np.sum(theta * (B @ xi)))


def fd_check(cost: Callable, phi, theta: VelocityField, dJ: float, t: float,
             J: float | None = None, cfl: float = 0.5, eps: float = 1e-300) -> float:
    """Relative error of the one-sided difference quotient against ``dJ``.

    ``cost(phi) -> float`` is the (normalised) cost; ``phi`` is advected by
    ``theta`` for pseudo-time ``t``.  A zero field gives 0 by definition.
    """
    if t <= 0:
        raise PreconditionError("fd_check needs t > 0")
    if theta.is_zero():
        return 0.0
    if J is None:
        J = cost(phi)
    Jt = cost(advect(phi, theta, TransportParams(cfl=cfl, t0=t)))
    quotient = (Jt - J) / t
    return abs(quotient - dJ) / max(abs(dJ), eps)

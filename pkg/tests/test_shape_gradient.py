import numpy as np
import pytest

from lowenv import io
from lowenv.envelope import GridSpec, LevelFunctionSet
from lowenv.errors import ConfigError, PreconditionError
from lowenv.fem2d import PhaseConductivity, build_mesh, laminate_cells, phase_fractions
from lowenv.shape_gradient import (
    B_form, RegParams, ShapeGradientData, assemble_S1_general, assemble_S1_iso,
    assemble_S1_laminate, descent_direction, dJ_rhs, evaluate_dJ, fd_check,
)
from lowenv.transport import VelocityField


def random_states(mesh, rng, m=3):
    return [rng.standard_normal((mesh.n_nodes, m)) for _ in range(4)]


def test_zero_mismatch_kills_S1(rng):
    mesh = build_mesh(6)
    u = rng.standard_normal(mesh.n_nodes)
    z = np.zeros(mesh.n_nodes)
    S = assemble_S1_iso(mesh, u, u, z, z, rng.uniform(1, 3, mesh.n_elements))
    assert not np.any(S.S1) and not np.any(S.S0)
    theta = descent_direction(S, mesh)
    assert theta.is_zero()


def test_pair_swap_symmetry(rng):
    mesh = build_mesh(6)
    u, v, p, q = random_states(mesh, rng)
    sig = rng.uniform(1, 3, mesh.n_elements)
    a = assemble_S1_iso(mesh, u, v, p, q, sig).S1
    b = assemble_S1_iso(mesh, v, u, q, p, sig).S1
    assert np.allclose(a, b, atol=1e-13)


def test_hand_evaluated_element():
    # sigma = 2, grad u = (1, 0), grad p = (0, 1), v and q constant
    mesh = build_mesh(2)
    x, y = mesh.nodes.T
    u, p = x.copy(), y.copy()
    v = q = np.zeros(mesh.n_nodes)
    S = assemble_S1_iso(mesh, u, v, p, q, np.full(mesh.n_elements, 2.0))
    ubar = mesh.centroid_values(u)
    for e in range(mesh.n_elements):
        expected = 0.5 * ubar[e] ** 2 * np.eye(2) + np.array([[0.0, -2.0], [-2.0, 0.0]])
        assert np.allclose(S.S1[e], expected, atol=1e-14)


def test_general_matches_iso(rng):
    mesh = build_mesh(8)
    u, v, p, q = random_states(mesh, rng)
    sig = rng.uniform(1, 15, mesh.n_elements)
    a = assemble_S1_iso(mesh, u, v, p, q, sig).S1
    b = assemble_S1_general(mesh, u, v, p, q, sig[:, None, None] * np.eye(2)).S1
    assert np.max(np.abs(a - b)) <= 1e-14 * np.abs(a).max()


def test_general_symmetric_for_isotropic_matrices(rng):
    mesh = build_mesh(6)
    u, v, p, q = random_states(mesh, rng, 1)
    sig = rng.uniform(1, 5, mesh.n_elements)[:, None, None] * np.eye(2)
    S1 = assemble_S1_general(mesh, u, v, p, q, sig).S1
    assert np.allclose(S1, np.transpose(S1, (0, 2, 1)), atol=1e-12)


def test_general_not_symmetric_for_anisotropic_sigma():
    # sigma = diag(1, 2), grad u = e1, grad p = e2: the outer-product pair is
    # e2 (x) sigma e1 + e1 (x) sigma e2 = [[0, 2], [1, 0]], which is not symmetric
    mesh = build_mesh(2)
    x, y = mesh.nodes.T
    z = np.zeros(mesh.n_nodes)
    sig = np.broadcast_to(np.diag([1.0, 2.0]), (mesh.n_elements, 2, 2))
    S1 = assemble_S1_general(mesh, x, x, y, z, sig).S1
    assert np.allclose(S1[0], [[0.0, -2.0], [-1.0, 0.0]], atol=1e-14)


def moved_lagrangian(mesh, nodes, u, v, p, q, sig):
    """sum_e |T_e| (ubar^2/2 + sigma grad u . grad p + sigma grad v . grad q) on moved nodes."""
    total = 0.0
    for e, t in enumerate(mesh.tri):
        P = nodes[t]
        T = np.array([P[1] - P[0], P[2] - P[0]]).T
        G = np.linalg.solve(T.T, np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]))
        area = 0.5 * abs(np.linalg.det(T))
        gu, gv, gp, gq = (G @ f[t] for f in (u, v, p, q))
        ubar = (u - v)[t].mean()
        total += area * (0.5 * ubar**2 + gp @ sig[e] @ gu + gq @ sig[e] @ gv)
    return total


def test_general_matches_moving_mesh_derivative(rng):
    # P1 fields carried with the nodes: the derivative of the discrete Lagrangian
    # along a mesh velocity theta is exactly int S1 : D theta
    mesh = build_mesh(4)
    u, v, p, q = (rng.standard_normal(mesh.n_nodes) for _ in range(4))
    B = rng.standard_normal((mesh.n_elements, 2, 2))
    sig = np.einsum("eij,ekj->eik", B, B) + 0.5 * np.eye(2)
    theta = rng.standard_normal((mesh.n_nodes, 2))
    t = 1e-6
    fd = (moved_lagrangian(mesh, mesh.nodes + t * theta, u, v, p, q, sig)
          - moved_lagrangian(mesh, mesh.nodes - t * theta, u, v, p, q, sig)) / (2 * t)
    dJ = evaluate_dJ(assemble_S1_general(mesh, u, v, p, q, sig), mesh, theta)
    assert dJ == pytest.approx(fd, rel=1e-7)


def test_source_term_hand_assembly(rng):
    mesh = build_mesh(2)
    u, v, p, q = random_states(mesh, rng, 1)
    sig = np.ones(mesh.n_elements)
    c = 1.7
    base = assemble_S1_general(mesh, u, v, p, q, sig).S1
    withf = assemble_S1_general(mesh, u, v, p, q, sig, f=c).S1
    pq = (p + q)[:, 0]
    for e, t in enumerate(mesh.tri):
        assert np.allclose(withf[e] - base[e], -c * pq[t].mean() * np.eye(2), atol=1e-14)


def test_varying_coefficients_need_callbacks(rng):
    mesh = build_mesh(2)
    u, v, p, q = random_states(mesh, rng, 1)
    with pytest.raises(ConfigError):
        assemble_S1_general(mesh, u, v, p, q, np.ones(mesh.n_elements), varying=True)


def test_S0_callbacks(rng):
    mesh = build_mesh(4)
    u, v, p, q = random_states(mesh, rng, 1)
    frac = np.zeros((mesh.n_elements, 2))
    frac[:, 0] = 1.0
    gf = [lambda x: np.tile([1.0, 0.0], (len(x), 1)), lambda x: np.zeros((len(x), 2))]
    S = assemble_S1_general(mesh, u, v, p, q, np.ones(mesh.n_elements), fractions=frac, grad_f=gf)
    pq = mesh.centroid_values(p + q)[:, 0]
    assert np.allclose(S.S0[:, 0], -pq) and np.allclose(S.S0[:, 1], 0.0)


def test_evaluate_dJ_divergence():
    mesh = build_mesh(8)
    S = ShapeGradientData(np.broadcast_to(np.eye(2), (mesh.n_elements, 2, 2)).copy(), np.zeros((mesh.n_elements, 2)))
    assert evaluate_dJ(S, mesh, mesh.nodes) == pytest.approx(2.0, rel=1e-12)
    assert evaluate_dJ(S, mesh, np.zeros((mesh.n_nodes, 2))) == 0.0


def test_dJ_bilinear(rng):
    mesh = build_mesh(6)
    ne, N = mesh.n_elements, mesh.n_nodes
    S1 = ShapeGradientData(rng.standard_normal((ne, 2, 2)), rng.standard_normal((ne, 2)))
    S2 = ShapeGradientData(rng.standard_normal((ne, 2, 2)), rng.standard_normal((ne, 2)))
    t1, t2 = rng.standard_normal((2, N, 2))
    a, b = rng.standard_normal(2)
    lhs = evaluate_dJ(S1, mesh, a * t1 + b * t2)
    assert lhs == pytest.approx(a * evaluate_dJ(S1, mesh, t1) + b * evaluate_dJ(S1, mesh, t2), rel=1e-10)
    lhs = evaluate_dJ(S1.scaled(a) + S2.scaled(b), mesh, t1)
    assert lhs == pytest.approx(a * evaluate_dJ(S1, mesh, t1) + b * evaluate_dJ(S2, mesh, t1), rel=1e-10)
    # nodal representation
    assert np.sum(dJ_rhs(S1, mesh) * t1) == pytest.approx(evaluate_dJ(S1, mesh, t1), rel=1e-10)


def test_descent_direction_identity(rng):
    mesh = build_mesh(8)
    ne = mesh.n_elements
    S = ShapeGradientData(rng.standard_normal((ne, 2, 2)), rng.standard_normal((ne, 2)))
    alpha = RegParams()
    field, raw = descent_direction(S, mesh, alpha, return_raw=True)
    assert evaluate_dJ(S, mesh, raw) == pytest.approx(-B_form(mesh, alpha, raw), rel=1e-9)
    assert evaluate_dJ(S, mesh, raw) < 0
    # the projection only removes a penalised (small) normal part
    assert evaluate_dJ(S, mesh, field) < 0


def test_descent_direction_linear_in_S(rng):
    mesh = build_mesh(6)
    ne = mesh.n_elements
    S = ShapeGradientData(rng.standard_normal((ne, 2, 2)), np.zeros((ne, 2)))
    a = descent_direction(S, mesh).nodal()
    b = descent_direction(S.scaled(2.5), mesh).nodal()
    assert np.allclose(b, 2.5 * a, rtol=1e-10, atol=1e-14)


def test_regparams_validated():
    with pytest.raises(ConfigError):
        RegParams(alpha1=0.0)


def test_mesh_mismatch():
    mesh = build_mesh(4)
    with pytest.raises(PreconditionError):
        evaluate_dJ(ShapeGradientData.zeros(3), mesh, np.zeros((mesh.n_nodes, 2)))


def test_laminate_tangential_gradients_use_arithmetic_mean():
    # vertical interface x = 0.53: the normal is (1, 0); fields depending on y only
    # have purely tangential gradients, so the laminate tensor reduces to the
    # isotropic one with the arithmetic mean conductivity
    n = 10
    grid = GridSpec(n)
    phi = LevelFunctionSet.from_functions(grid, [None, lambda x, y: x - 0.53, lambda x, y: 5.0 + 0 * x])
    mesh = build_mesh(n)
    frac = phase_fractions(phi, mesh, "fraction")
    cells = laminate_cells(phi, frac, mesh)
    assert cells.cells.size > 0
    y = mesh.nodes[:, 1]
    u, v, p, q = y, 0.3 * y**2, -y, 0.5 * y
    s = np.array([1.0, 3.0, 15.0])
    lam = assemble_S1_laminate(mesh, u, v, p, q, frac @ s, cells, s)
    iso = assemble_S1_iso(mesh, u, v, p, q, frac @ s)
    assert np.allclose(lam.S1, iso.S1, atol=1e-13)


def test_laminate_reduces_to_general_without_cut_cells(rng):
    n = 6
    phi = LevelFunctionSet.from_functions(GridSpec(n), [None, lambda x, y: 1 + x, lambda x, y: 2 + y])
    mesh = build_mesh(n)
    frac = phase_fractions(phi, mesh, "fraction")
    cells = laminate_cells(phi, frac, mesh)
    assert cells.cells.size == 0
    u, v, p, q = random_states(mesh, rng, 2)
    sig = np.ones(mesh.n_elements)
    assert np.array_equal(
        assemble_S1_laminate(mesh, u, v, p, q, sig, cells, [1.0, 3.0, 15.0]).S1,
        assemble_S1_general(mesh, u, v, p, q, sig).S1,
    )


def test_fd_check_zero_velocity_and_bad_t():
    grid = GridSpec(4)
    phi = LevelFunctionSet.from_functions(grid, [None, lambda x, y: y - 0.5])
    assert fd_check(lambda f: 1.0, phi, VelocityField.zeros(grid), 0.0, 1e-3) == 0.0
    with pytest.raises(PreconditionError):
        fd_check(lambda f: 1.0, phi, VelocityField.zeros(grid), 0.0, 0.0)


def test_shape_gradient_csv(tmp_path, rng):
    mesh = build_mesh(2)
    S = ShapeGradientData(rng.standard_normal((8, 2, 2)), rng.standard_normal((8, 2)))
    path = io.write_shape_gradient(tmp_path / "S.csv", S)
    lines = path.read_text().splitlines()
    assert lines[0] == "element,S1_xx,S1_xy,S1_yx,S1_yy,S0_x,S0_y"
    row = [float(t) for t in lines[4].split(",")]
    assert row[0] == 3 and row[1:5] == list(S.S1[3].ravel()) and row[5:] == list(S.S0[3])
    assert PhaseConductivity.isotropic([1.0, 2.0]).is_isotropic and mesh.n_elements == 8

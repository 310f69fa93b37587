import math

import numpy as np
import pytest

from lowenv.config import ExperimentConfig
from lowenv.eit import (
    EITProblem, MeasurementSet, build_currents, delta_for_level, error_metric, gaussian_stream,
    initial_phi, noise_level, reconstruct, select_currents, splitmix64, synthesize, truth_phi,
)
from lowenv.envelope import GridSpec, LevelFunctionSet, check_regularity, extract_phases
from lowenv.errors import DataError, PreconditionError
from lowenv.fem2d import build_mesh
from lowenv.presets import example25


# -- currents ----------------------------------------------------------------------


def test_g1_values():
    g1 = build_currents()[0]
    assert g1((0.0, 0.3)) == 1.0
    assert g1((0.3, 0.0)) == -1.0
    assert g1((1.0, 0.7)) == 1.0 and g1((0.2, 1.0)) == -1.0


def test_arctan_and_sine_currents():
    cur = build_currents()
    assert len(cur) == 11
    assert cur[3]((0.0, 0.5)) == 0.0
    assert cur[3]((0.0, 0.6)) == pytest.approx(math.atan(50.0))
    assert cur[3]((1.0, 0.6)) == 0.0
    # g5..g7 on right, upper, lower; g8..g11 sines on left, right, upper, lower
    assert cur[4]((1.0, 0.6)) == pytest.approx(math.atan(50.0))
    assert cur[5]((0.6, 1.0)) == pytest.approx(math.atan(50.0))
    assert cur[6]((0.6, 0.0)) == pytest.approx(math.atan(50.0))
    assert cur[7]((0.0, 0.125)) == pytest.approx(1.0)
    assert cur[10]((0.125, 0.0)) == pytest.approx(1.0)
    assert cur[10]((0.0, 0.125)) == 0.0


def test_current_off_boundary():
    with pytest.raises(PreconditionError):
        build_currents()[0]((0.5, 0.5))


def test_currents_trapezoid_compatible():
    n = 64
    s = np.arange(n + 1) / n
    w = np.full(n + 1, 1.0 / n)
    w[[0, -1]] *= 0.5
    for c in build_currents():
        total = sum(np.sum(w * c.on_side(side, s)) for side in ("left", "right", "lower", "upper"))
        assert abs(total) <= 1e-6, c.name


def test_select_currents():
    assert [c.name for c in select_currents((1, 4, 11))] == ["g1", "g4", "g11"]


# -- RNG --------------------------------------------------------------------------


def test_splitmix64_reference():
    # reference values of SplitMix64 seeded with 0
    w = splitmix64(0, 3)
    assert [int(x) for x in w] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_gaussian_stream_statistics():
    z = gaussian_stream(7, 200001)
    assert z.shape == (200001,)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1.0) < 0.01
    assert np.array_equal(z[:10], gaussian_stream(7, 10))
    assert not np.array_equal(z[:10], gaussian_stream(8, 10))


def test_gaussian_box_muller_layout():
    w = splitmix64(3, 2)
    u1 = ((int(w[0]) >> 11) + 1) * 2.0**-53
    u2 = (int(w[1]) >> 11) * 2.0**-53
    r = math.sqrt(-2 * math.log(u1))
    z = gaussian_stream(3, 2)
    assert z[0] == r * math.cos(2 * math.pi * u2) and z[1] == r * math.sin(2 * math.pi * u2)


# -- synthesis and noise -------------------------------------------------------------------


def test_synthesize_deterministic(small_cfg, small_meas):
    again = synthesize(small_cfg)
    assert np.array_equal(again.h, small_meas.h)
    assert not small_meas.noisy
    # zero-mean gauge on every current
    assert np.allclose(small_meas.h.mean(axis=1), 0.0, atol=1e-14)
    assert small_meas.h.shape == (11, 4 * small_cfg.n)


def test_noisy_synthesis_seeded(small_cfg, small_meas):
    cfg = small_cfg.replace(delta=0.01, seed=3)
    a, b = synthesize(cfg), synthesize(cfg)
    assert a.noisy and np.array_equal(a.h, b.h)
    c = synthesize(cfg.replace(seed=4))
    assert not np.array_equal(a.h, c.h)
    # per-current stream seed + i with std delta |h_i|_inf
    i = 5
    std = 0.01 * np.max(np.abs(small_meas.h[i]))
    assert np.allclose(a.h[i], small_meas.h[i] + std * gaussian_stream(3 + i, a.h.shape[1]), atol=1e-15)


def test_synthesis_refuses_irregular_truth(small_cfg):
    grid = GridSpec(small_cfg.n)
    bad = LevelFunctionSet(grid, np.zeros((3,) + grid.shape), True)
    with pytest.raises(PreconditionError):
        synthesize(small_cfg, phi_true=bad)


def test_noise_level_identities(small_meas):
    assert noise_level(small_meas, small_meas) == 0.0
    doubled = MeasurementSet(small_meas.n, small_meas.nodes, 2 * small_meas.h)
    assert noise_level(small_meas, doubled) == pytest.approx(1.0, rel=1e-14)
    zero = MeasurementSet(small_meas.n, small_meas.nodes, 0 * small_meas.h)
    with pytest.raises(DataError):
        noise_level(zero, small_meas)


def independent_boundary_l2(n, nodes, h):
    """Edge trapezoid rule walking the four sides explicitly."""
    mesh = build_mesh(n)
    val = dict(zip(nodes.tolist(), h))
    total = 0.0
    xy = mesh.nodes
    for side in ("left", "right", "lower", "upper"):
        ids = sorted(mesh.nodes_of((side,)), key=lambda i: tuple(xy[i]))
        for a, b in zip(ids[:-1], ids[1:]):
            total += 0.5 * (val[a] ** 2 + val[b] ** 2) * np.linalg.norm(xy[a] - xy[b])
    return math.sqrt(total)


def test_noise_level_matches_independent_formula(small_cfg, small_meas):
    noisy = synthesize(small_cfg.replace(delta=0.02, seed=11))
    got = noise_level(small_meas, noisy)
    num = sum(independent_boundary_l2(small_cfg.n, small_meas.nodes, a - b) for a, b in zip(small_meas.h, noisy.h))
    den = sum(independent_boundary_l2(small_cfg.n, small_meas.nodes, a) for a in small_meas.h)
    assert got == pytest.approx(num / den, abs=1e-12)


def test_noise_level_linear_in_delta(small_cfg, small_meas):
    d = delta_for_level(small_cfg, 0.01, small_meas)
    level = noise_level(small_meas, synthesize(small_cfg.replace(delta=d)))
    assert level == pytest.approx(0.01, rel=1e-10)


def test_fine_synthesis(small_cfg):
    fine = synthesize(small_cfg.replace(synth_factor=2))
    coarse = synthesize(small_cfg)
    assert fine.h.shape == coarse.h.shape
    # same data up to discretisation error
    assert np.max(np.abs(fine.h - coarse.h)) < 0.2 * np.max(np.abs(coarse.h))


# -- cost ------------------------------------------------------------------------------


def test_cost_zero_at_truth(small_cfg, small_meas):
    prob = EITProblem(small_cfg, small_meas)
    st = prob.forward(truth_phi(small_cfg))
    scale = float(np.einsum("im,im->", st.U, prob.mesh.mass @ st.U))
    assert st.J <= 1e-16 * scale


def test_cost_zero_uniform_sigma():
    # one phase everywhere and data from the same medium
    cfg = ExperimentConfig(n=16, currents=(1, 2, 8))
    grid = GridSpec(16)
    uniform = LevelFunctionSet.from_functions(grid, [None, lambda x, y: 1 + 0 * x, lambda x, y: 2 + 0 * x])
    meas = synthesize(cfg, phi_true=uniform)
    prob = EITProblem(cfg, meas)
    st = prob.forward(uniform)
    assert np.all(st.J_raw <= 1e-25)


def test_initial_cost_normalised(small_cfg, small_meas):
    prob = EITProblem(small_cfg, small_meas)
    phi0 = initial_phi(small_cfg)
    assert prob.set_normalisation(prob.forward(phi0))
    assert prob.cost(phi0) == 1.0


def test_first_current_normalisation(small_cfg, small_meas):
    cfg = small_cfg.replace(paper_norm="first_current")
    prob = EITProblem(cfg, small_meas)
    st = prob.forward(initial_phi(cfg))
    prob.set_normalisation(st)
    assert prob.J0 == st.J_raw[0]


def test_stationary_at_truth(small_cfg, small_meas):
    prob = EITProblem(small_cfg, small_meas)
    phi0 = initial_phi(small_cfg)
    prob.set_normalisation(prob.forward(phi0))
    _, theta, dJ = prob.direction(prob.forward(truth_phi(small_cfg)))
    assert abs(dJ) <= 1e-10


def test_seeded_initial_guess_regular(small_cfg):
    phi = initial_phi(small_cfg)
    assert check_regularity(phi).passed
    assert np.all(extract_phases(phi).areas() > 0)
    flat = initial_phi(small_cfg.replace(init="flat"))
    assert extract_phases(flat).areas()[2] == 0.0


# -- error metric ----------------------------------------------------------------------


def fields_all(grid, k):
    vals = np.ones((3,) + grid.shape)
    vals[0] = 0.0
    if k:
        vals[k] = -1.0
    return LevelFunctionSet(grid, vals, True)


def test_error_metric_identity(small_cfg):
    phi = truth_phi(small_cfg)
    assert error_metric(phi, phi, small_cfg.sigma) == 0.0


def test_error_metric_constant_phases():
    grid = GridSpec(8)
    assert error_metric(fields_all(grid, 0), fields_all(grid, 1), (1.0, 3.0, 15.0)) == pytest.approx(200.0)


def test_error_metric_example25():
    n = 256
    e = error_metric(example25(n), fields_all(GridSpec(n), 0), (1.0, 3.0, 15.0))
    assert e == pytest.approx(100 * 6 / 7, abs=0.5)


# -- loop -------------------------------------------------------------------------------


def test_reconstruct_from_truth_stops_immediately(small_cfg, small_meas):
    st = reconstruct(small_cfg, small_meas, phi0=truth_phi(small_cfg))
    assert st.accepted_steps == 0 and st.iteration == 0
    assert st.history[0][1] <= 1e-12


def test_short_reconstruction_invariants(small_cfg, small_meas):
    seen = []
    st = reconstruct(small_cfg, small_meas, callback=lambda s: seen.append(s.iteration))
    costs = [row[1] for row in st.history]
    assert costs[0] == 1.0
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert [row[0] for row in st.history] == list(range(len(st.history)))
    assert seen == list(range(1, st.iteration + 1))
    assert np.max(np.abs(st.phi.values[0])) == 0.0 and st.phi.pinned_zero
    assert st.history_csv().startswith("iter,cost,error_pct,step\n")
    assert costs[-1] < 0.9


def test_ncg_descent_runs(small_cfg, small_meas):
    st = reconstruct(small_cfg.replace(descent="ncg"), small_meas)
    costs = [row[1] for row in st.history]
    assert all(b <= a for a, b in zip(costs, costs[1:])) and costs[-1] < 1.0


def test_measurement_mismatch(small_cfg, small_meas):
    with pytest.raises(DataError):
        EITProblem(small_cfg.replace(n=20), small_meas)

import itertools
import math

import numpy as np
import pytest

from lowenv.envelope import (
    GridSpec, LevelFunctionSet, argmin_label, check_regularity, detect_tuple_points,
    extract_phases, interface_geometry, lower_envelope, pairwise_interface, triple_angles,
)
from lowenv.errors import DegenerateJunctionError, DomainError, PreconditionError
from lowenv.presets import example25, example211, symmetric_junction, three_planes


def two_field(n, f):
    return LevelFunctionSet.from_functions(GridSpec(n), [None, f])


# -- point queries ---------------------------------------------------------------


def test_lower_envelope_constant_fields():
    phi = two_field(8, lambda x, y: np.ones_like(x))
    assert lower_envelope(phi, (0.3, 0.7)) == 0.0


@pytest.mark.parametrize("x, expected", [((0.9, 0.9), -0.8), ((0.5, 0.5), 0.0), ((0.2, 0.5), 0.0)])
def test_lower_envelope_example25(x, expected):
    assert lower_envelope(example25(16), x) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("x, label", [((0.2, 0.5), 0), ((0.5, 0.5), 0), ((0.9, 0.1), 1)])
def test_argmin_label_example25(x, label):
    assert argmin_label(example25(16), x) == label


def test_points_outside_domain_rejected():
    with pytest.raises(DomainError):
        lower_envelope(example25(8), (1.2, 0.5))


def test_pinned_flag_validated():
    vals = np.ones((2, 5, 5))
    with pytest.raises(PreconditionError):
        LevelFunctionSet(GridSpec(4), vals, pinned_zero=True)


def test_values_are_read_only():
    phi = example25(4)
    with pytest.raises(ValueError):
        phi.values[1, 0, 0] = 3.0


# -- phases ----------------------------------------------------------------------


def test_example25_areas():
    n = 256
    areas = extract_phases(example25(n)).areas()
    assert np.allclose(areas, [0.25, 0.375, 0.375], atol=4.0 / n)
    assert areas.sum() == 1.0


def test_constant_positive_field_all_phase_zero():
    lab = extract_phases(two_field(8, lambda x, y: np.ones_like(x)))
    assert np.all(lab.labels == 0)


def test_example211_eight_cells_show_all_labels():
    lab = extract_phases(example211(32)).labels
    block = lab[15:17, 15:17, 15:17]
    assert set(np.unique(block)) == {0, 1, 2, 3}


# -- interfaces ------------------------------------------------------------------


def test_example25_pair01_true_and_ghost():
    pi = pairwise_interface(example25(32), 0, 1)
    for seg, upper in ((pi.segments, False), (pi.ghost, True)):
        assert len(seg) > 0
        pts = seg.reshape(-1, 2)
        assert np.allclose(pts[:, 0], pts[:, 1], atol=1e-12)
        mids = seg.mean(axis=1)
        assert np.all(mids[:, 1] > 0.5) if upper else np.all(mids[:, 1] < 0.5)


def test_two_phase_contour_has_no_ghost():
    pi = pairwise_interface(two_field(16, lambda x, y: y - 0.5), 0, 1)
    assert len(pi.ghost) == 0
    assert np.allclose(pi.segments[..., 1], 0.5)
    # the line spans the whole width
    assert pi.segments[..., 0].min() == 0.0 and pi.segments[..., 0].max() == 1.0


def test_example25_pair12():
    pi = pairwise_interface(example25(32), 1, 2)
    pts = pi.segments.reshape(-1, 2)
    assert np.allclose(pts[:, 1], 0.5)
    assert pts[:, 0].min() == pytest.approx(0.5, abs=1.0 / 32)
    assert pts[:, 0].max() == 1.0


def test_true_segments_lie_on_coincidence_set():
    phi = example25(32)
    for k, l in itertools.combinations(range(3), 2):
        seg = pairwise_interface(phi, k, l).segments.reshape(-1, 2)
        v = phi.interpolate(seg)
        assert np.max(np.abs(v[k] - v[l])) <= 1e-12


def test_interface_hausdorff_first_order():
    # distance between E_{0,1} and the exact half-diagonal
    dists = []
    for n in (32, 64, 128):
        seg = pairwise_interface(example25(n), 0, 1).segments.reshape(-1, 2)
        exact = np.linspace(0, 0.5, 2001)
        exact = np.stack([exact, exact], axis=1)
        d = np.linalg.norm(seg[:, None] - exact[None], axis=2)
        dists.append(max(d.min(axis=1).max(), d.min(axis=0).max()))
    assert dists[0] >= dists[1] >= dists[2]
    assert dists[2] <= 2.0 / 128


def test_pairwise_interface_rejects_bad_pair():
    with pytest.raises(PreconditionError):
        pairwise_interface(example25(8), 1, 1)


# -- tuple points and angles ------------------------------------------------------------


def test_example25_tuple_point():
    pts = detect_tuple_points(example25(64))
    assert pts.shape == (1, 2)
    assert np.allclose(pts[0], 0.5, atol=1e-8)


def test_example211_tuple_point():
    pts = detect_tuple_points(example211(16))
    assert pts.shape == (1, 3)
    assert np.allclose(pts[0], 0.5, atol=1.0 / 16)


def test_inactive_third_phase_has_no_tuple_point():
    phi = LevelFunctionSet.from_functions(GridSpec(32), [None, lambda x, y: y - x, lambda x, y: 10 + x])
    assert len(detect_tuple_points(phi)) == 0


def test_tuple_points_need_kappa_d_plus_one():
    with pytest.raises(PreconditionError):
        detect_tuple_points(two_field(8, lambda x, y: y - x))


def test_example25_angles():
    b = triple_angles(example25(64), (0.5, 0.5))
    assert np.allclose(b, [math.pi / 2, 3 * math.pi / 4, 3 * math.pi / 4], atol=1e-12)


def test_symmetric_angles():
    phi = symmetric_junction(64)
    x = detect_tuple_points(phi)[0]
    assert np.allclose(triple_angles(phi, x), 2 * math.pi / 3, atol=1e-10)


def test_angles_need_a_triple_point():
    with pytest.raises(PreconditionError):
        triple_angles(example25(32), (0.2, 0.7))


def test_degenerate_junction():
    # phi_1 and phi_2 parallel: the difference Jacobian is singular
    phi = three_planes(32, (0.5, 0.5), (1.0, 0.0), (2.0, 0.0))
    with pytest.raises(DegenerateJunctionError):
        triple_angles(phi, (0.5, 0.5))


def sector_oracle(phi, x, radius, samples=7200):
    """Angular widths of each phase on a small circle around ``x``."""
    a = (np.arange(samples) + 0.5) * 2 * np.pi / samples
    pts = np.stack([x[0] + radius * np.cos(a), x[1] + radius * np.sin(a)], axis=1)
    lab = argmin_label(phi, pts)
    return np.bincount(lab, minlength=3) * 2 * np.pi / samples


def test_example25_angles_match_sector_oracle():
    phi = example25(64)
    w = sector_oracle(phi, (0.5, 0.5), 4.0 / 64)
    assert np.allclose(w, triple_angles(phi, (0.5, 0.5)), atol=np.deg2rad(0.2))


# -- regularity ------------------------------------------------------------------


def test_regularity_example25():
    rep = check_regularity(example25(32))
    assert rep.passed
    assert rep.pair_min[(0, 1)] == pytest.approx(math.sqrt(2), rel=1e-10)
    assert rep.pair_min[(0, 2)] == pytest.approx(math.sqrt(2), rel=1e-10)
    assert rep.pair_min[(1, 2)] == pytest.approx(2.0, rel=1e-10)


def test_regularity_identical_fields_fail():
    rep = check_regularity(two_field(8, lambda x, y: np.zeros_like(x)))
    assert not rep.passed
    assert rep.pair_min[(0, 1)] == 0.0


def test_regularity_parabola():
    rep = check_regularity(two_field(200, lambda x, y: (x - 0.5) ** 2 - 0.01))
    assert rep.passed
    assert rep.pair_min[(0, 1)] == pytest.approx(0.2, rel=1e-6)
    assert "status=pass" in rep.summary()


def test_interface_geometry_bundle():
    geom = interface_geometry(example25(32))
    assert set(geom.segments) == {(0, 1), (0, 2), (1, 2)}
    assert np.allclose(geom.tuple_points, [[0.5, 0.5]])


def test_label_changes_lie_near_true_interfaces():
    # every cell edge across which the label changes is within one cell of E_{k,l}
    n = 48
    phi = example25(n)
    lab = extract_phases(phi).labels
    geom = interface_geometry(phi)
    h = 1.0 / n
    cent = (np.arange(n) + 0.5) * h
    for axis in (0, 1):
        a = lab[:-1, :] if axis == 0 else lab[:, :-1]
        b = lab[1:, :] if axis == 0 else lab[:, 1:]
        for i, j in np.argwhere(a != b):
            p = np.array([cent[i], cent[j]])
            p[axis] += 0.5 * h
            k, l = sorted((a[i, j], b[i, j]))
            seg = geom.segments[(k, l)].reshape(-1, 2)
            near = np.min(np.linalg.norm(seg - p, axis=1)) if len(seg) else np.inf
            near_tp = np.min(np.linalg.norm(geom.tuple_points - p, axis=1))
            assert min(near, near_tp) <= 1.5 * h

import math

import numpy as np
import pytest

from module.branch_tracking import (
    BranchSet,
    branch_displacement_bound,
    branch_length,
    branches_to_frame,
    circle_bottleneck,
    common_node_agreement,
    min_spectral_gap,
    multiset_consistency,
    track_branches,
    window_columns,
)
from module.circle_lifting import TWO_PI, optimal_scalar_homotopy
from module.error_utils import AmbiguousMatching, InvalidParameter, TooFarApart
from module.examples_goodearl import build_example_u, family_to_homotopy
from module.multiset_metric import bottleneck_distance
from module.unitary_core import (
    UnitaryHomotopy,
    homotopy_length,
    perturb_to_simple_spectrum,
    random_unitary,
)

SLOPES = np.array([-0.3, 0.1, 0.25, 0.4])


def _distinct_slopes(grid=(30, 20)):
    s, t = np.linspace(0, 1, grid[0]), np.linspace(0, 1, grid[1])
    angles = s[:, None, None] * TWO_PI * SLOPES[None, None, :] * t[None, :, None]
    F = UnitaryHomotopy.diagonal(s, t, angles)
    return F, perturb_to_simple_spectrum(F, 0.01, seed=0)


def test_min_spectral_gap():
    F, G = _distinct_slopes()
    assert min_spectral_gap(F) == 0.0
    assert min_spectral_gap(G) > 0.0


def test_window_columns():
    t = np.linspace(0, 1, 11)
    np.testing.assert_array_equal(window_columns(t), np.arange(11))
    np.testing.assert_array_equal(window_columns(t, (0.05, 0.95)), np.arange(1, 10))
    with pytest.raises(InvalidParameter):
        window_columns(t, (0.9, 0.1))
    with pytest.raises(InvalidParameter):
        window_columns(t, (0.01, 0.02))


def test_tracking_requires_simple_spectrum():
    F, _ = _distinct_slopes()
    with pytest.raises(AmbiguousMatching) as info:
        track_branches(F)
    assert info.value.details["node"]["s_index"] == 0


def test_diagonal_branches_recover_angle_functions():
    _, G = _distinct_slopes()
    B = track_branches(G)
    assert isinstance(B, BranchSet)
    assert B.k == 4
    for k in range(4):
        j = int(np.argmin(np.abs(B.lifts[:, 0, 0] - G.angles[0, 0, k])))
        np.testing.assert_allclose(B.branch(j), G.angles[:, :, k], atol=1e-9)
    assert multiset_consistency(B, G) < 1e-9
    lengths = [branch_length(B, j) for j in range(B.k)]
    assert max(lengths) <= homotopy_length(G) + 1e-12


def test_dense_tracking_matches_diagonal():
    _, G = _distinct_slopes()
    dense = G.conjugate(random_unitary(4, np.random.default_rng(3))).to_dense()
    B_diag = track_branches(G)
    B_dense = track_branches(dense)
    np.testing.assert_allclose(B_dense.lifts, B_diag.lifts, atol=1e-8)
    assert multiset_consistency(B_dense, dense) < 1e-9
    # dày nhưng giao hoán: đi đường nâng slot
    assert B_dense.meta["method"] == "slot_unwrap"

    B_matched = track_branches(dense, force_matching=True)
    assert B_matched.meta["method"] == "forced_matching"
    np.testing.assert_allclose(B_matched.lifts, B_diag.lifts, atol=1e-8)


def test_results_do_not_depend_on_thread_count():
    _, G = _distinct_slopes((40, 33))
    one = track_branches(G, threads=1)
    many = track_branches(G, threads=3)
    np.testing.assert_array_equal(one.lifts, many.lifts)


def test_refinement_agrees_on_common_nodes():
    _, G = _distinct_slopes((41, 21))
    fine = track_branches(G)
    coarse = track_branches(G.subgrid(range(0, 41, 2), range(0, 21, 2)))
    assert common_node_agreement(coarse, fine) < 1e-9


def test_scalar_branch_length():
    H = optimal_scalar_homotopy(math.pi, np.linspace(0, 1, 1000), np.linspace(0, 1, 101))
    B = track_branches(H)
    assert branch_length(B, 0) == pytest.approx(math.pi, abs=1e-3)
    assert branch_displacement_bound(B, 0) == pytest.approx(math.pi, abs=1e-9)


def test_constant_branch():
    F = UnitaryHomotopy.diagonal(np.linspace(0, 1, 4), np.linspace(0, 1, 3), np.full((4, 3, 1), 0.7))
    B = track_branches(F)
    assert branch_length(B, 0) == 0.0
    assert branch_displacement_bound(B, 0) == 0.0
    with pytest.raises(InvalidParameter):
        B.branch(1)


def test_fast_branch_of_example_displaces_by_nine_fifths_pi():
    # t dừng trước 1: các slot chỉ cắt nhau khi s·t > 1 − max|η|/2π
    s, t = np.linspace(0, 1, 80), np.linspace(0, 0.999, 60)
    F = family_to_homotopy(build_example_u(), [], s, t)
    G = perturb_to_simple_spectrum(F, 0.001, seed=0, pin=0)
    B = track_branches(G, force_matching=True)
    j = int(np.argmin(B.lifts[:, -1, -1]))
    assert B.lifts[j, -1, -1] == pytest.approx(-1.8 * math.pi * 0.999, abs=1e-9)
    assert branch_displacement_bound(B, j) == pytest.approx(1.8 * math.pi, abs=0.02)
    assert B.bisections > 0
    assert B.meta["method"] == "forced_matching"

    fast = track_branches(G)
    assert fast.meta["method"] == "slot_unwrap"
    np.testing.assert_allclose(fast.lifts, B.lifts, atol=1e-9)


def test_branches_to_frame():
    _, G = _distinct_slopes()
    B = track_branches(G)
    df = branches_to_frame(B, max_nodes=10)
    assert list(df.columns) == ["j", "s", "t", "phi"]
    assert len(df) == 4 * 10 * 10
    assert sorted(df["j"].unique().tolist()) == [0, 1, 2, 3]
    only = branches_to_frame(B, [2], max_nodes=5)
    assert set(only["j"]) == {2}


def test_slot_path_steps_must_stay_below_half_turn():
    s, t = np.linspace(0, 1, 3), np.linspace(0, 1, 2)
    angles = np.stack([s * TWO_PI, 1.0 - s * 0.2], axis=-1)[:, None, :].repeat(2, axis=1)
    with pytest.raises(TooFarApart):
        track_branches(UnitaryHomotopy.diagonal(s, t, angles))


def test_geodesic_through_minus_one_is_ambiguous():
    A = np.diag(np.exp(1j * np.array([0.3, -0.3])))
    mats = np.stack([np.stack([A, A]), np.stack([-A, -A])])
    F = UnitaryHomotopy.dense([0.0, 1.0], [0.0, 1.0], mats)
    with pytest.raises(AmbiguousMatching) as info:
        track_branches(F, force_matching=True)
    assert info.value.details["node"] == {"s_index": 1, "t_index": 0}


def test_circle_bottleneck_is_exact(rng):
    for _ in range(200):
        n = int(rng.integers(1, 7))
        a = rng.uniform(-math.pi, math.pi, n)
        b = rng.uniform(-math.pi, math.pi, n)
        assert circle_bottleneck(a, b)[0] == pytest.approx(bottleneck_distance(a, b), abs=1e-12)

    # hai điểm sát −π ở hai phía: ghép qua điểm cắt
    assert circle_bottleneck([math.pi - 0.01, 0.0], [-math.pi + 0.01, 0.0])[0] == pytest.approx(
        2 * math.sin(0.01), abs=1e-12
    )

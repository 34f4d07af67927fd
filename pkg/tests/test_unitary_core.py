import math

import numpy as np
import pytest

from module.circle_lifting import TWO_PI, optimal_scalar_homotopy
from module.error_utils import (
    BranchCut,
    DimensionMismatch,
    InvalidParameter,
    NotUnitary,
    TooFarApart,
)
from module.examples_goodearl import (
    GoodearlStage,
    build_example_u,
    build_u_eps,
    family_to_homotopy,
    goodearl_image,
    pinned_rank_offsets,
)
from module.unitary_core import (
    EPS1,
    UnitaryHomotopy,
    check_unitary,
    expm_hermitian,
    geodesic_interpolate,
    homotopy_length,
    operator_norm,
    perturb_to_simple_spectrum,
    pinned_offsets,
    random_unitary,
    spectral_gaps,
    spectrum,
    sup_distance,
    reference_angles,
    reference_column,
    try_diagonal_form,
    unitary_log,
)


def _diag(*angles):
    return np.diag(np.exp(1j * np.asarray(angles, dtype=float)))


# ------------------------------
# Phổ, chuẩn, log
# ------------------------------
def test_spectrum_examples():
    np.testing.assert_allclose(spectrum(np.eye(3)), [0.0, 0.0, 0.0], atol=1e-12)
    u_half = build_example_u().to_matrix(0.5)
    np.testing.assert_allclose(spectrum(u_half), [-0.9 * math.pi] + [0.1 * math.pi] * 9, atol=1e-12)


def test_spectrum_of_conjugated_diagonal(rng):
    theta = np.sort(rng.uniform(-3.0, 3.0, 6))
    V = random_unitary(6, rng)
    U = V @ _diag(*theta) @ V.conj().T
    np.testing.assert_allclose(spectrum(U), theta, atol=1e-9)


def test_check_unitary_rejects():
    with pytest.raises(NotUnitary):
        check_unitary(2 * np.eye(2))
    with pytest.raises(DimensionMismatch):
        check_unitary(np.ones((2, 3)))


def test_spectral_gaps():
    assert spectral_gaps(np.zeros(3)) == 0.0
    assert spectral_gaps(np.zeros(1)) == 2.0
    assert spectral_gaps(np.array([0.0, math.pi])) == pytest.approx(2.0)


def test_operator_norm_examples(rng):
    assert operator_norm(np.eye(4)) == pytest.approx(1.0)
    theta = 1.3
    assert operator_norm(_diag(theta, 0.0) - np.eye(2)) == pytest.approx(2 * abs(math.sin(theta / 2)))
    U, V = random_unitary(5, rng), random_unitary(5, rng)
    oracle = np.linalg.svd(U - V, compute_uv=False).max()
    assert operator_norm(U - V) == pytest.approx(oracle, abs=1e-9)


def test_unitary_log_examples():
    np.testing.assert_allclose(unitary_log(np.eye(2)), np.zeros((2, 2)), atol=1e-12)
    H = unitary_log(_diag(math.pi / 3, -math.pi / 3))
    np.testing.assert_allclose(H, np.diag([math.pi / 3, -math.pi / 3]), atol=1e-12)
    with pytest.raises(BranchCut):
        unitary_log(_diag(math.pi, 0.0))


def test_unitary_log_inverts_exponential(rng):
    V = random_unitary(4, rng)
    U = V @ _diag(0.3, -2.0, 1.5, 2.9) @ V.conj().T
    np.testing.assert_allclose(expm_hermitian(unitary_log(U)), U, atol=1e-10)


def test_geodesic_interpolate():
    G = random_unitary(3, np.random.default_rng(5))
    for s in (0.0, 0.3, 1.0):
        np.testing.assert_allclose(geodesic_interpolate(G, G, s), G, atol=1e-12)

    mid = geodesic_interpolate(np.eye(2), _diag(math.pi / 4, math.pi / 8), 0.5)
    np.testing.assert_allclose(mid, _diag(math.pi / 8, math.pi / 16), atol=1e-12)

    with pytest.raises(TooFarApart):
        geodesic_interpolate(np.eye(2), -np.eye(2), 0.5)
    with pytest.raises(InvalidParameter):
        geodesic_interpolate(np.eye(2), np.eye(2), 1.5)


# ------------------------------
# UnitaryHomotopy
# ------------------------------
def test_homotopy_requires_exactly_one_form():
    with pytest.raises(InvalidParameter):
        UnitaryHomotopy([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(DimensionMismatch):
        UnitaryHomotopy.diagonal([0.0, 1.0], [0.0, 1.0], np.zeros((2, 3, 1)))
    with pytest.raises(InvalidParameter):
        UnitaryHomotopy.diagonal([0.0, 0.0], [0.0, 1.0], np.zeros((2, 2, 1)))


def test_validate_flags_non_unitary_node():
    mats = np.tile(np.eye(2, dtype=complex), (3, 2, 1, 1))
    mats[1, 1] *= 1.1
    F = UnitaryHomotopy.dense(np.linspace(0, 1, 3), [0.0, 1.0], mats)
    with pytest.raises(NotUnitary) as info:
        F.validate()
    assert info.value.details["s_index"] == 1
    assert info.value.details["t_index"] == 1


def test_json_codec_dense_and_errors():
    s, t = np.linspace(0, 1, 4), np.linspace(0, 1, 3)
    F = family_to_homotopy(build_example_u(), [], s, t).conjugate(random_unitary(10, np.random.default_rng(1)))
    back = UnitaryHomotopy.from_json_dict(F.to_dense().to_json_dict())
    assert not back.is_diagonal
    assert sup_distance(F, back) < 1e-12

    payload = F.to_json_dict()
    assert payload["form"] == "diagonal"
    with pytest.raises(InvalidParameter):
        UnitaryHomotopy.from_json_dict({"s_grid": [0.0, 1.0]})
    with pytest.raises(DimensionMismatch):
        UnitaryHomotopy.from_json_dict(dict(payload, n=3))


def test_constant_homotopy_has_zero_length():
    F = UnitaryHomotopy.diagonal(np.linspace(0, 1, 5), np.linspace(0, 1, 4), np.ones((5, 4, 2)))
    assert homotopy_length(F) == 0.0
    assert homotopy_length(F.to_dense()) == pytest.approx(0.0, abs=1e-12)


def test_scalar_homotopy_length():
    H = optimal_scalar_homotopy(math.pi, np.linspace(0, 1, 1000), np.linspace(0, 1, 101))
    assert homotopy_length(H) == pytest.approx(math.pi, abs=1e-3)


def test_example_geodesic_length():
    s, t = np.linspace(0, 1, 200), np.linspace(0, 1, 200)
    F = family_to_homotopy(build_example_u(), [], s, t)
    assert homotopy_length(F) == pytest.approx(9 * math.pi / 5, abs=0.01)

    small = F.subgrid(range(0, 200, 5), range(0, 200, 5))
    conj = small.conjugate(random_unitary(10, np.random.default_rng(2)))
    assert homotopy_length(conj.to_dense()) == pytest.approx(homotopy_length(small), abs=1e-9)


def test_try_diagonal_form_recovers_commuting_family(rng):
    s, t = np.linspace(0, 1, 6), np.linspace(0, 1, 5)
    angles = s[:, None, None] * np.array([-1.0, 0.5, 2.0])[None, None, :] * (1 + t[None, :, None])
    F = UnitaryHomotopy.diagonal(s, t, angles, random_unitary(3, rng))
    D = try_diagonal_form(F.to_dense())
    assert D.is_diagonal
    assert sup_distance(F, D) < 1e-9


def test_try_diagonal_form_keeps_non_commuting_family(rng):
    s, t = np.linspace(0, 1, 3), np.linspace(0, 1, 2)
    V = random_unitary(2, rng)
    mats = np.empty((3, 2, 2, 2), dtype=complex)
    for i, si in enumerate(s):
        for l, tl in enumerate(t):
            # s = 1 chéo, s = ½ trong cơ sở V: không chung cơ sở riêng
            mats[i, l] = _diag(si, -si) if i != 1 else V @ _diag(0.4, -0.4 - tl) @ V.conj().T
    F = UnitaryHomotopy.dense(s, t, mats)
    assert try_diagonal_form(F) is F


def test_reference_angles_follow_the_lift_along_s():
    s, t = np.linspace(0, 1, 20), np.linspace(0, 1, 3)
    slopes = np.array([-3.8, 0.0, 2.5])
    angles = s[:, None, None] * slopes[None, None, :] * np.ones((1, t.size, 1))
    F = UnitaryHomotopy.diagonal(s, t, angles)
    l_ref = reference_column(t)
    # −3.8 quấn về ≈ 2.48 nhưng góc nâng giữ nguyên thứ tự
    np.testing.assert_allclose(reference_angles(F, l_ref), slopes, atol=1e-12)


def test_eps1_constant():
    assert EPS1 == pytest.approx(4.17e-4, rel=1e-2)


# ------------------------------
# Nhiễu về phổ đơn
# ------------------------------
def test_pinned_offsets_are_strictly_increasing():
    eta = pinned_offsets(6, 0.01, 2)
    assert eta[2] == 0.0
    assert np.all(np.diff(eta) > 0)
    assert np.all(np.abs(eta) < 0.01)
    with pytest.raises(InvalidParameter):
        pinned_offsets(3, 0.01, 3)


def test_simple_homotopy_is_returned_unchanged():
    s, t = np.linspace(0, 1, 5), np.linspace(0, 1, 4)
    angles = np.broadcast_to(np.array([-1.0, 0.5, 2.0]), (5, 4, 3)) + s[:, None, None] * 0.1
    F = UnitaryHomotopy.diagonal(s, t, angles)
    assert perturb_to_simple_spectrum(F, 0.01) is F


def test_identity_homotopy_is_separated():
    s, t = np.linspace(0, 1, 10), np.linspace(0, 1, 10)
    F = UnitaryHomotopy.dense(s, t, np.tile(np.eye(3, dtype=complex), (10, 10, 1, 1)))
    G = perturb_to_simple_spectrum(F, 0.01, seed=0)
    assert sup_distance(F, G) <= 0.01
    assert float(G.node_gaps().min()) > 0.0
    assert abs(homotopy_length(G) - homotopy_length(F)) <= 0.01
    assert G.meta["perturbation"]["pinned_row"] is False


def test_repeated_slots_keep_target_branch():
    s, t = np.linspace(0, 1, 60), np.linspace(0, 1, 40)
    F = family_to_homotopy(build_example_u(), [], s, t)
    G = perturb_to_simple_spectrum(F, 0.005, seed=0, pin=0)
    assert G.is_diagonal
    np.testing.assert_array_equal(G.angles[:, :, 0], F.angles[:, :, 0])
    assert float(G.node_gaps().min()) > 0.0
    assert sup_distance(F, G) <= 0.005


@pytest.mark.parametrize("dense", [False, True])
def test_simple_terminal_row_is_pinned(dense):
    s, t = np.linspace(0, 1, 30), np.linspace(0, 1, 20)
    terminal = np.array([-1.0, 0.5, 2.0])[None, :] + 0.3 * t[:, None]
    F = UnitaryHomotopy.diagonal(s, t, s[:, None, None] * terminal[None, :, :], random_unitary(3, np.random.default_rng(4)))
    if dense:
        F = F.to_dense()
    G = perturb_to_simple_spectrum(F, 0.01, seed=1)
    assert G.meta["perturbation"]["pinned_row"] is True
    last = F.s_grid.size - 1
    if dense:
        np.testing.assert_array_equal(G.matrices[last], F.matrices[last])
    else:
        np.testing.assert_array_equal(G.angles[last], F.angles[last])
    assert float(G.node_gaps().min()) > 0.0


def test_perturbation_rejects_bad_delta():
    F = UnitaryHomotopy.diagonal([0.0, 1.0], [0.0, 1.0], np.zeros((2, 2, 2)))
    with pytest.raises(InvalidParameter):
        perturb_to_simple_spectrum(F, 0.0)


def test_perturbation_keeps_rank_order_of_goodearl_block():
    eps = 0.005
    stage = GoodearlStage((2, 2), eps=eps)
    image = goodearl_image(build_u_eps(eps), stage)
    L, alpha = image.total_size, stage.alpha
    ranks = [0, alpha - 1, L - 1]
    s, t = np.linspace(0, 1, 40), np.linspace(0, 1, 40)
    F = family_to_homotopy(image, pinned_rank_offsets(L, alpha, eps, ranks), s, t, ranks)
    G = perturb_to_simple_spectrum(F, eps, pin=1)
    # ba slot không đổi chỗ ở bất kỳ nút nào
    assert np.all(np.diff(G.angles, axis=-1) > 0)
    assert G.node_gaps().min() > 0

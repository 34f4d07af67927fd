import math

import numpy as np
import pytest

from module.certifier import (
    CelCertificate,
    TargetBranch,
    certify_example_310,
    certify_lower_bound,
    corollary_bound,
    eps_sweep,
    example_310_homotopy,
    goodearl_certificate,
    make_grids,
    near_2pi_example,
    propagate_cel_bounds,
    upper_bound_single_exponential,
)
from module.circle_lifting import TWO_PI, optimal_scalar_homotopy
from module.error_utils import (
    BranchCut,
    BranchNotFound,
    EpsOutOfRange,
    GapTooLarge,
    InadmissibleStage,
    InvalidParameter,
)
from module.examples_goodearl import (
    AffineAngleFamily,
    GoodearlStage,
    build_example_u,
    build_u_eps,
)
from module.unitary_core import EPS1, UnitaryHomotopy, homotopy_length, random_unitary

NINE_PI_FIFTHS = 9 * math.pi / 5


# ------------------------------
# Cận trên và lan truyền
# ------------------------------
def test_upper_bound_examples():
    assert upper_bound_single_exponential(AffineAngleFamily.from_terms([(0.0, 0.0, 1)])) == 0.0
    assert upper_bound_single_exponential(build_example_u()) == pytest.approx(NINE_PI_FIFTHS)
    assert upper_bound_single_exponential(build_u_eps(0.005)) == pytest.approx(TWO_PI * 0.895)


def test_upper_bound_from_homotopy_terminal_row():
    F = example_310_homotopy((10, 50))
    assert upper_bound_single_exponential(F) == pytest.approx(NINE_PI_FIFTHS, abs=1e-12)
    # log chính của đường dày nhảy khi góc nhanh vượt qua −π
    with pytest.raises(BranchCut):
        upper_bound_single_exponential(F.to_dense())


def test_upper_bound_rejects_bad_array():
    with pytest.raises(InvalidParameter):
        upper_bound_single_exponential(np.eye(2))


def test_propagate_cel_bounds():
    assert propagate_cel_bounds(1.0, 0.1, "norm_perturbation") == pytest.approx(1.0 - 0.05 * math.pi)
    assert propagate_cel_bounds(2.5, 0.3, "conjugation") == 2.5
    with pytest.raises(EpsOutOfRange):
        propagate_cel_bounds(1.0, 1.0, "norm_perturbation")
    with pytest.raises(InvalidParameter):
        propagate_cel_bounds(1.0, 0.1, "similarity")


# ------------------------------
# TargetBranch / lưới
# ------------------------------
def test_target_branch_window():
    target = TargetBranch.isolated(-1.0, 0.5, 0.1)
    assert target.window == (0.1, 0.9)
    np.testing.assert_allclose(target.value([0.0, 1.0]), [0.5, -0.5])
    with pytest.raises(InvalidParameter):
        TargetBranch.isolated(1.0, width=0.6)
    with pytest.raises(InvalidParameter):
        TargetBranch(1.0, window=(0.8, 0.2))


def test_make_grids():
    s, t = make_grids((3, 5))
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])
    assert t.size == 5
    with pytest.raises(InvalidParameter):
        make_grids((1, 5))


# ------------------------------
# Cận dưới theo nhánh
# ------------------------------
def test_identity_certificate_is_zero():
    F = UnitaryHomotopy.diagonal(np.linspace(0, 1, 5), np.linspace(0, 1, 4), np.zeros((5, 4, 1)))
    cert = certify_lower_bound(F, TargetBranch.isolated(0.0, upper_bound=0.0))
    assert isinstance(cert, CelCertificate)
    assert cert.lower_bound == 0.0
    assert cert.upper_bound == 0.0
    assert cert.bracket_width == 0.0
    assert cert.extras["perturbed"] is False


def test_scalar_rotation_certificate():
    H = optimal_scalar_homotopy(math.pi, np.linspace(0, 1, 100), np.linspace(0, 1, 20))
    cert = certify_lower_bound(H, TargetBranch(math.pi, window=(0.0, 1.0), upper_bound=math.pi))
    assert cert.lower_bound == pytest.approx(math.pi / (1 + EPS1), abs=1e-6)
    assert cert.lower_bound <= homotopy_length(H) + 1e-6
    assert cert.extras["winding"] == 0
    assert [item.name for item in cert.slack] == [
        "grid_window", "chord_arc", "perturbation_start", "perturbation_end", "length_change",
    ]


def test_start_row_must_be_identity():
    F = UnitaryHomotopy.diagonal(np.linspace(0, 1, 5), np.linspace(0, 1, 4), np.full((5, 4, 1), 0.7))
    with pytest.raises(InvalidParameter):
        certify_lower_bound(F, TargetBranch.isolated(0.0))


def test_coarse_s_grid_is_rejected():
    H = optimal_scalar_homotopy(math.pi, np.linspace(0, 1, 3), np.linspace(0, 1, 20))
    with pytest.raises(GapTooLarge) as info:
        certify_lower_bound(H, TargetBranch.isolated(math.pi))
    assert info.value.details["max_step"] > 0.1


def test_unmatched_target_raises():
    H = optimal_scalar_homotopy(math.pi, np.linspace(0, 1, 100), np.linspace(0, 1, 20))
    with pytest.raises(BranchNotFound):
        certify_lower_bound(H, TargetBranch.isolated(0.5))


def test_bad_delta():
    H = optimal_scalar_homotopy(math.pi, np.linspace(0, 1, 100), np.linspace(0, 1, 20))
    with pytest.raises(InvalidParameter):
        certify_lower_bound(H, TargetBranch.isolated(math.pi), delta=0.0)


def test_example_310_on_small_grid():
    cert = certify_example_310(grid=(100, 100))
    assert NINE_PI_FIFTHS * 0.98 <= cert.lower_bound <= NINE_PI_FIFTHS
    assert cert.upper_bound == pytest.approx(NINE_PI_FIFTHS)
    assert cert.lower_bound <= cert.length + 1e-6
    assert cert.extras["perturbed"] is True
    assert cert.extras["winding"] == 0
    assert cert.grids == {"s": 100, "t": 100, "window_columns": 98}

    payload = cert.to_json_dict()
    assert payload["schema_version"] == "1.0"
    assert payload["seed"] == 0
    assert {"lower_bound", "upper_bound", "slack", "provenance", "grids"} <= payload.keys()


def test_example_310_is_reproducible():
    a = certify_example_310(grid=(60, 40), seed=7)
    b = certify_example_310(grid=(60, 40), seed=7, threads=2)
    assert a.lower_bound == b.lower_bound


def test_certificate_is_invariant_under_conjugation(rng):
    F = example_310_homotopy((60, 40))
    V = random_unitary(F.dim, rng)
    target = TargetBranch.isolated(-TWO_PI * 9 / 10, upper_bound=NINE_PI_FIFTHS)
    plain = certify_lower_bound(F, target, seed=1)
    for G in (F.conjugate(V), F.conjugate(V).to_dense()):
        cert = certify_lower_bound(G, target, seed=1)
        assert cert.lower_bound == pytest.approx(plain.lower_bound, abs=1e-8)
        assert cert.length == pytest.approx(plain.length, abs=1e-8)


# ------------------------------
# Tầng Goodearl
# ------------------------------
def test_goodearl_certificate_small_grid():
    stage = GoodearlStage((2,))
    cert = goodearl_certificate(stage, 0.005, grid=(120, 120))
    assert TWO_PI * 0.895 * 0.98 - 0.03 <= cert.lower_bound <= cert.upper_bound
    assert cert.extras["counts"] == {"alpha": 99, "beta": 891, "gamma": 10, "L": 1000}
    assert cert.extras["middle_branch"]["passed"] is True
    assert cert.extras["w_tilde_distance"] < 0.005
    assert cert.target["ranks"] == [1, 99, 1000]


def test_goodearl_two_level_stage_small_grid():
    cert = goodearl_certificate(GoodearlStage((2, 2)), 0.005, grid=(120, 120))
    assert TWO_PI * 0.895 * 0.98 - 0.03 <= cert.lower_bound <= cert.upper_bound
    assert cert.extras["counts"] == {"alpha": 9801, "beta": 88209, "gamma": 1990, "L": 100000}
    assert cert.target["ranks"] == [1, 9801, 100000]


def test_goodearl_certificate_rejects_bad_inputs():
    with pytest.raises(InadmissibleStage):
        goodearl_certificate(GoodearlStage((1,)), 0.005, grid=(120, 120))
    with pytest.raises(EpsOutOfRange):
        goodearl_certificate(GoodearlStage((2,)), 0.2, grid=(120, 120))


def test_corollary_subtracts_distance_to_u():
    stage = GoodearlStage((2,))
    base = goodearl_certificate(stage, 0.005, grid=(120, 120))
    cert = corollary_bound(stage, 0.005, grid=(120, 120))
    assert cert.lower_bound == pytest.approx(base.lower_bound - TWO_PI * 0.005, abs=1e-12)
    assert cert.upper_bound == pytest.approx(NINE_PI_FIFTHS)
    assert cert.slack[-1].name == "u_vs_u_eps"
    assert cert.target["family"] == "u"


# ------------------------------
# Lưới chấp nhận
# ------------------------------
@pytest.mark.slow
def test_example_310_acceptance_grid():
    cert = certify_example_310()
    assert NINE_PI_FIFTHS - 0.02 <= cert.lower_bound <= NINE_PI_FIFTHS
    assert cert.bracket_width <= 0.02


@pytest.mark.slow
def test_goodearl_acceptance_grid():
    cert = goodearl_certificate(GoodearlStage((2,)), 0.005)
    assert cert.lower_bound >= 5.57845
    assert cert.lower_bound <= TWO_PI * 0.9


@pytest.mark.slow
def test_eps_sweep_approaches_nine_pi_fifths():
    certs, monotone = eps_sweep(GoodearlStage((2,)), [0.002, 0.01, 0.005])
    assert monotone
    assert [c.target["eps"] for c in certs] == [0.01, 0.005, 0.002]
    assert certs[-1].lower_bound > 5.6


@pytest.mark.slow
def test_near_2pi_example():
    family, cert = near_2pi_example(2)
    assert family.total_size == 100
    assert cert.lower_bound >= TWO_PI * 0.99 - 0.05
    assert cert.upper_bound == pytest.approx(TWO_PI * 0.99)
    assert cert.target["N"] == 100


@pytest.mark.slow
def test_goodearl_two_level_acceptance_grid():
    cert = goodearl_certificate(GoodearlStage((2, 2)), 0.005)
    assert cert.lower_bound >= 5.57845

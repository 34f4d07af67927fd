import math

import numpy as np
import pytest
from hypothesis import given, seed, settings
from hypothesis import strategies as st

from module.error_utils import DimensionMismatch, InvalidParameter, SizeMismatch
from module.multiset_metric import (
    bottleneck_brute_force,
    bottleneck_distance,
    bottleneck_matching,
    pairwise_distances,
    sort_lift_theta,
    theta_distance,
    weyl_gap,
)
from module.unitary_core import random_unitary

angles = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False)


def multiset_pair(max_size=7):
    return st.integers(min_value=1, max_value=max_size).flatmap(
        lambda k: st.tuples(st.lists(angles, min_size=k, max_size=k), st.lists(angles, min_size=k, max_size=k))
    )


def test_identical_multisets_are_at_distance_zero():
    a = [0.3, -1.0, 2.0, 2.0]
    assert bottleneck_distance(a, list(reversed(a)), "chordal") == 0.0
    assert bottleneck_distance(a, a, "absolute") == 0.0


def test_absolute_example():
    assert bottleneck_distance([0, 1, 4], [1, 2, 3], "absolute") == 1.0
    assert bottleneck_brute_force([0, 1, 4], [1, 2, 3], "absolute") == 1.0


def test_chordal_example_against_identity_spectrum():
    expected = 2 * math.sin(math.pi / 8)
    assert bottleneck_distance([0, 0], [math.pi / 4, -math.pi / 4]) == pytest.approx(expected)


def test_matching_is_a_permutation_achieving_the_distance():
    a = np.array([0.1, 2.0, -2.5, 1.0])
    b = np.array([-2.4, 0.0, 1.1, 2.2])
    d, sigma = bottleneck_matching(a, b, "arc")
    assert sorted(sigma.tolist()) == [0, 1, 2, 3]
    D = pairwise_distances(a, b, "arc")
    assert D[np.arange(4), sigma].max() == pytest.approx(d)


def test_size_and_metric_errors():
    with pytest.raises(SizeMismatch):
        bottleneck_distance([0.0, 1.0], [0.0])
    with pytest.raises(SizeMismatch):
        bottleneck_distance([], [])
    with pytest.raises(InvalidParameter):
        pairwise_distances([0.0], [1.0], "manhattan")
    with pytest.raises(InvalidParameter):
        bottleneck_brute_force(np.zeros(9), np.zeros(9))


@seed(11)
@settings(max_examples=200, deadline=None)
@given(multiset_pair(), st.sampled_from(["chordal", "arc", "absolute"]))
def test_matching_agrees_with_brute_force(pair, metric):
    a, b = pair
    assert bottleneck_distance(a, b, metric) == pytest.approx(bottleneck_brute_force(a, b, metric), abs=1e-15)


@seed(12)
@settings(max_examples=150, deadline=None)
@given(st.integers(min_value=1, max_value=6).flatmap(
    lambda k: st.tuples(*(st.lists(angles, min_size=k, max_size=k) for _ in range(3)))
))
def test_metric_axioms(triple):
    a, b, c = triple
    ab = bottleneck_distance(a, b)
    assert ab >= 0.0
    assert ab == pytest.approx(bottleneck_distance(b, a), abs=1e-15)
    assert bottleneck_distance(a, c) <= ab + bottleneck_distance(b, c) + 1e-12


# ------------------------------
# θ
# ------------------------------
def test_sort_lift_theta():
    assert sort_lift_theta([3, 1, 2]) == (1.0, 2.0, 3.0)


@seed(13)
@settings(max_examples=300, deadline=None)
@given(multiset_pair())
def test_theta_is_an_isometry(pair):
    a, b = pair
    assert theta_distance(a, b) == pytest.approx(bottleneck_brute_force(a, b, "absolute"), abs=1e-12)


# ------------------------------
# Weyl
# ------------------------------
def test_weyl_gap_identical_and_commuting():
    U = random_unitary(3, np.random.default_rng(0))
    assert weyl_gap(U, U) == pytest.approx((0.0, 0.0), abs=1e-12)

    V = np.diag(np.exp(1j * np.array([math.pi / 4, -math.pi / 4])))
    spectral, operator = weyl_gap(np.eye(2), V)
    assert spectral == pytest.approx(2 * math.sin(math.pi / 8))
    assert operator == pytest.approx(2 * math.sin(math.pi / 8))


def test_weyl_gap_random_pairs(rng):
    for _ in range(200):
        n = int(rng.integers(2, 9))
        spectral, operator = weyl_gap(random_unitary(n, rng), random_unitary(n, rng))
        assert spectral <= operator + 1e-9


def test_weyl_gap_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        weyl_gap(np.eye(2), np.eye(3))

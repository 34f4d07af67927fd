# =========================================================
# multiset_metric.py: Tích đối xứng P^kY và khoảng cách bottleneck
# =========================================================

from itertools import permutations
from typing import Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from module.circle_lifting import arc_distance, chord
from module.error_utils import DimensionMismatch, InvalidParameter, SizeMismatch

METRICS = ("chordal", "arc", "absolute")

# Với k ≤ 8 vét cạn hoán vị vẫn rẻ, dùng làm oracle
BRUTE_FORCE_MAX_K = 8


def _as_values(a) -> np.ndarray:
    values = np.asarray(a, dtype=float).ravel()
    if not np.all(np.isfinite(values)):
        raise InvalidParameter("Multiset chỉ chứa giá trị hữu hạn.")
    return values


def pairwise_distances(a, b, metric: str = "chordal") -> np.ndarray:
    """Ma trận D[i, j] = d(a_i, b_j) theo metric đã chọn."""
    a = _as_values(a)
    b = _as_values(b)
    if metric == "chordal":
        return chord(a[:, None], b[None, :])
    if metric == "arc":
        return arc_distance(a[:, None], b[None, :])
    if metric == "absolute":
        return np.abs(a[:, None] - b[None, :])
    raise InvalidParameter(f"Metric không hỗ trợ: {metric!r}. Chọn một trong {METRICS}.")


def _check_sizes(a, b) -> Tuple[np.ndarray, np.ndarray]:
    a = _as_values(a)
    b = _as_values(b)
    if a.size != b.size:
        raise SizeMismatch(
            f"Hai multiset phải cùng kích thước ({a.size} ≠ {b.size}).",
            {"left": int(a.size), "right": int(b.size)},
        )
    if a.size == 0:
        raise SizeMismatch("Multiset phải có ít nhất một phần tử.")
    return a, b


def _has_perfect_matching(mask: np.ndarray) -> bool:
    graph = csr_matrix(mask.astype(np.int8))
    matching = maximum_bipartite_matching(graph, perm_type="column")
    return bool(np.all(matching >= 0))


def bottleneck_matching(a, b, metric: str = "chordal") -> Tuple[float, np.ndarray]:
    """
    Tìm ngưỡng nhỏ nhất d trong k² khoảng cách ứng viên sao cho đồ thị
    {(i, j): D[i, j] ≤ d} có ghép cặp hoàn hảo (tìm kiếm nhị phân).
    Trả về (d, sigma) với sigma[i] = chỉ số của b được ghép với a_i.
    """
    a, b = _check_sizes(a, b)
    D = pairwise_distances(a, b, metric)
    candidates = np.unique(D)

    lo, hi = 0, candidates.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _has_perfect_matching(D <= candidates[mid]):
            hi = mid
        else:
            lo = mid + 1

    threshold = float(candidates[lo])
    graph = csr_matrix((D <= threshold).astype(np.int8))
    sigma = maximum_bipartite_matching(graph, perm_type="column")
    return threshold, np.asarray(sigma, dtype=int)


def bottleneck_brute_force(a, b, metric: str = "chordal") -> float:
    """Oracle vét cạn min_σ max_i d(a_i, b_σ(i)), chỉ dành cho k ≤ 8."""
    a, b = _check_sizes(a, b)
    if a.size > BRUTE_FORCE_MAX_K:
        raise InvalidParameter(f"Vét cạn chỉ cho k ≤ {BRUTE_FORCE_MAX_K}.")
    D = pairwise_distances(a, b, metric)
    idx = np.arange(a.size)
    return float(min(D[idx, list(p)].max() for p in permutations(range(a.size))))


def bottleneck_distance(a, b, metric: str = "chordal") -> float:
    return bottleneck_matching(a, b, metric)[0]


# ------------------------------
# Phép sắp xếp θ: P^Lℝ → (ℝ^L, d_max)
# ------------------------------
def sort_lift_theta(a: Sequence[float]) -> Tuple[float, ...]:
    values = _as_values(a)
    return tuple(float(v) for v in np.sort(values, kind="stable"))


def theta_distance(a, b) -> float:
    """max_i |θ(a)_i − θ(b)_i|; bằng bottleneck tuyệt đối."""
    a, b = _check_sizes(a, b)
    return float(np.max(np.abs(np.sort(a, kind="stable") - np.sort(b, kind="stable"))))


# ------------------------------
# Bất đẳng thức kiểu Weyl
# ------------------------------
def weyl_gap(U, V) -> Tuple[float, float]:
    """(bottleneck dây cung giữa hai phổ, ‖U − V‖)."""
    from module.unitary_core import check_unitary, operator_norm, spectrum

    U = np.asarray(U, dtype=complex)
    V = np.asarray(V, dtype=complex)
    if U.shape != V.shape:
        raise DimensionMismatch(
            f"Hai ma trận phải cùng cỡ ({U.shape} ≠ {V.shape}).",
            {"left": list(U.shape), "right": list(V.shape)},
        )
    check_unitary(U)
    check_unitary(V)

    spectral = bottleneck_distance(spectrum(U), spectrum(V), "chordal")
    operator = operator_norm(U - V)
    return spectral, operator

# =========================================================
# circle_lifting.py: Góc, nâng phủ đường tròn, cel vô hướng
# =========================================================

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from module.error_utils import GapTooLarge, InvalidParameter, ensure_finite

TWO_PI = 2.0 * math.pi

# Bước cung phải nhỏ hơn ngưỡng này thì phép nâng mới duy nhất
ARC_GAP_LIMIT = math.pi - 1e-6


# ------------------------------
# Số học góc
# ------------------------------
def wrap(a: float) -> float:
    """Đưa góc về đại diện trong (−π, π]."""
    x = ensure_finite(a, "angle")
    return math.pi - (math.pi - x) % TWO_PI


def wrap_array(a) -> np.ndarray:
    """Phiên bản vector hoá của wrap (không kiểm tra hữu hạn)."""
    a = np.asarray(a, dtype=float)
    return math.pi - np.mod(math.pi - a, TWO_PI)


def arc_distance(a, b):
    return np.abs(wrap_array(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def chord(a, b):
    """|e^{ia} − e^{ib}| = 2·sin(arcdist/2)."""
    return 2.0 * np.sin(arc_distance(a, b) / 2.0)


def chord_to_arc(c):
    """Nghịch đảo của chord trên [0, 2]."""
    return 2.0 * np.arcsin(np.clip(np.asarray(c, dtype=float) / 2.0, 0.0, 1.0))


@dataclass(frozen=True)
class AngleLift:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.shape != values.shape:
            raise InvalidParameter("grid và values của AngleLift phải cùng độ dài.")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise InvalidParameter("grid của AngleLift phải tăng ngặt.")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return int(self.values.size)

    def displacement(self) -> float:
        return float(np.max(np.abs(self.values - self.values[0])))


# ------------------------------
# Nâng phủ
# ------------------------------
def lift_circle_path(
    points: Sequence[float], base: float, grid: Optional[Sequence[float]] = None
) -> AngleLift:
    """
    Nâng một đường trên S¹ (cho bởi các góc) lên ℝ với điểm gốc `base`.

    Mỗi bước tăng là hiệu góc đã wrap; bước có cung ≥ π − 1e-6 bị từ chối
    (GapTooLarge) vì phép nâng không còn duy nhất, phải làm mịn lưới.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 1 or pts.size == 0:
        raise InvalidParameter("Cần ít nhất một điểm để nâng.")
    if not np.all(np.isfinite(pts)):
        raise InvalidParameter("Các góc phải hữu hạn.")

    base = ensure_finite(base, "base")
    if abs(wrap_array(base - pts[0])) > 1e-9:
        raise InvalidParameter("base phải đồng dư với điểm đầu modulo 2π.")

    if grid is None:
        grid = np.linspace(0.0, 1.0, pts.size) if pts.size > 1 else np.zeros(1)

    increments = wrap_array(np.diff(pts))
    too_large = np.flatnonzero(np.abs(increments) >= ARC_GAP_LIMIT)
    if too_large.size:
        i = int(too_large[0])
        raise GapTooLarge(
            f"Bước cung tại vị trí {i + 1} bằng {abs(increments[i]):.6f} ≥ π; cần làm mịn lưới.",
            {"index": i + 1, "arc": float(abs(increments[i]))},
        )

    values = np.concatenate([[base], base + np.cumsum(increments)])
    return AngleLift(grid=np.asarray(grid, dtype=float), values=values)


# ------------------------------
# cel của u(t) = e^{iαt}
# ------------------------------
def _winding_window(alpha: float) -> np.ndarray:
    K = int(math.ceil(abs(alpha) / TWO_PI)) + 1
    return np.arange(-K, K + 1)


def optimal_winding(alpha: float) -> int:
    """k₀ đạt min_k max(|2kπ|, |α − 2kπ|); hoà thì chọn |k| nhỏ rồi k nhỏ."""
    alpha = ensure_finite(alpha, "alpha")
    best_k, best_val = 0, None
    for k in sorted(_winding_window(alpha), key=lambda k: (abs(k), k)):
        val = max(abs(TWO_PI * k), abs(alpha - TWO_PI * k))
        if best_val is None or val < best_val:
            best_k, best_val = int(k), val
    return best_k


def cel_scalar_exponential(alpha: float) -> float:
    alpha = ensure_finite(alpha, "alpha")
    ks = _winding_window(alpha)
    values = np.maximum(np.abs(TWO_PI * ks), np.abs(alpha - TWO_PI * ks))
    return float(np.min(values))


def optimal_scalar_homotopy(alpha: float, s_grid, t_grid):
    """Đồng luân v_s(t) = exp(i·s·(αt − 2k₀π)) dưới dạng ma trận 1×1."""
    from module.unitary_core import UnitaryHomotopy

    alpha = ensure_finite(alpha, "alpha")
    s = np.asarray(s_grid, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    if s.size == 0 or t.size == 0:
        raise InvalidParameter("Lưới s và t không được rỗng.")
    if np.any((s < 0) | (s > 1)) or np.any((t < 0) | (t > 1)):
        raise InvalidParameter("Lưới s và t phải nằm trong [0, 1].")

    k0 = optimal_winding(alpha)
    angles = s[:, None] * (alpha * t[None, :] - TWO_PI * k0)
    return UnitaryHomotopy.diagonal(s, t, angles[:, :, None])

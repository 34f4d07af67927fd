# =========================================================
# examples_goodearl.py: Họ góc affine, ảnh Goodearl, nhánh đã sắp
# =========================================================
# Mọi họ chéo được giữ dưới dạng ký hiệu: danh sách (slope, intercept, mult)
# tính bằng radian. Không bao giờ dựng ma trận cỡ L = 10^5.

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from log.log import get_logger
from module.circle_lifting import TWO_PI, chord
from module.error_utils import (
    EpsOutOfRange,
    InadmissibleStage,
    InvalidParameter,
    OffsetCollision,
    SizeMismatch,
    ensure_finite,
    validate_levels,
    validate_unit_points,
)
from module.unitary_core import GAP_FLOOR, UnitaryHomotopy

logger = get_logger(__name__)

ADMISSIBILITY_RATIO = 11.0 / 12.0
EPS_MAX = 0.01
MATERIALIZE_MAX = 64        # chỉ dựng ma trận dày cho họ nhỏ
HOMOTOPY_SLOTS_MAX = 4096   # số slot tối đa khi đổi họ sang đồng luân chéo


# ==========================================================
# HỌ GÓC AFFINE
# ==========================================================
@dataclass(frozen=True)
class AngleTerm:
    slope: float
    intercept: float
    mult: int

    def __post_init__(self):
        ensure_finite(self.slope, "slope")
        ensure_finite(self.intercept, "intercept")
        if int(self.mult) != self.mult or self.mult < 1:
            raise InvalidParameter(f"Bội của số hạng phải là số nguyên dương, nhận {self.mult!r}.")

    def value(self, t):
        return self.slope * np.asarray(t, dtype=float) + self.intercept


@dataclass(frozen=True)
class AffineAngleFamily:
    """Đa tập các hàm góc t ↦ slope·t + intercept với bội, biểu diễn diag(e^{i·góc})."""

    terms: Tuple[AngleTerm, ...]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        terms = tuple(
            t if isinstance(t, AngleTerm) else AngleTerm(float(t[0]), float(t[1]), int(t[2]))
            for t in self.terms
        )
        if not terms:
            raise InvalidParameter("Họ góc phải có ít nhất một số hạng.")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def from_terms(cls, terms, meta=None) -> "AffineAngleFamily":
        return cls(tuple(terms), dict(meta or {}))

    @property
    def total_size(self) -> int:
        return int(sum(t.mult for t in self.terms))

    @property
    def slopes(self) -> np.ndarray:
        return np.array([t.slope for t in self.terms])

    @property
    def intercepts(self) -> np.ndarray:
        return np.array([t.intercept for t in self.terms])

    @property
    def mults(self) -> np.ndarray:
        return np.array([t.mult for t in self.terms], dtype=np.int64)

    def term_values(self, t_grid) -> np.ndarray:
        """Giá trị từng số hạng trên lưới → (T, số số hạng), radian."""
        t = np.atleast_1d(np.asarray(t_grid, dtype=float))
        return t[:, None] * self.slopes[None, :] + self.intercepts[None, :]

    def evaluate(self, t: float) -> np.ndarray:
        """Đa tập L góc tại t (kể cả bội), theo thứ tự số hạng."""
        return np.repeat(self.term_values([t])[0], self.mults)

    def to_matrix(self, t: float) -> np.ndarray:
        if self.total_size > MATERIALIZE_MAX:
            raise InvalidParameter(
                f"Chỉ dựng ma trận cho L ≤ {MATERIALIZE_MAX}, họ này có L = {self.total_size}."
            )
        return np.diag(np.exp(1j * self.evaluate(t)))

    def merged(self) -> "AffineAngleFamily":
        """Gộp các số hạng trùng (slope, intercept), giữ thứ tự xuất hiện đầu tiên."""
        acc = {}
        for term in self.terms:
            key = (term.slope, term.intercept)
            acc[key] = acc.get(key, 0) + term.mult
        return AffineAngleFamily(
            tuple(AngleTerm(k[0], k[1], m) for k, m in acc.items()), dict(self.meta)
        )

    def to_json_dict(self) -> dict:
        return {
            "terms": [{"slope": t.slope, "intercept": t.intercept, "mult": t.mult} for t in self.terms],
            "meta": self.meta,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "AffineAngleFamily":
        try:
            terms = [(float(t["slope"]), float(t["intercept"]), int(t["mult"])) for t in payload["terms"]]
        except (KeyError, TypeError) as exc:
            raise InvalidParameter("JSON họ góc phải có dạng {terms: [{slope, intercept, mult}]}.") from exc
        return cls.from_terms(terms, payload.get("meta"))


# ------------------------------
# Định thức / CU
# ------------------------------
def determinant_angle(f: AffineAngleFamily, t) -> np.ndarray:
    """Góc định thức Σ mult·(slope·t + intercept), chưa wrap."""
    values = f.term_values(t)
    return values @ f.mults.astype(float)


def is_in_cu(f: AffineAngleFamily, tol: float = 1e-9) -> bool:
    """det(f(t)) = 1 với mọi t: tổng slope có trọng bằng 0, tổng intercept ≡ 0 mod 2π."""
    weights = f.mults.astype(float)
    slope_sum = float(f.slopes @ weights)
    intercept_sum = float(f.intercepts @ weights)
    scale = max(1.0, float(np.abs(f.slopes) @ weights), float(np.abs(f.intercepts) @ weights))
    residual = abs(math.remainder(intercept_sum, TWO_PI))
    return abs(slope_sum) <= tol * scale and residual <= tol * scale


# ==========================================================
# CÁC VÍ DỤ
# ==========================================================
def build_example_u() -> AffineAngleFamily:
    return AffineAngleFamily.from_terms(
        [(-TWO_PI * 9 / 10, 0.0, 1), (TWO_PI * 1 / 10, 0.0, 9)],
        {"name": "ex310"},
    )


def validate_eps(eps) -> float:
    eps = ensure_finite(eps, "eps")
    if not 0.0 < eps <= EPS_MAX:
        raise EpsOutOfRange(f"eps phải nằm trong (0, {EPS_MAX}], nhận được {eps}.", {"eps": eps})
    return eps


def build_u_eps(eps: float) -> AffineAngleFamily:
    eps = validate_eps(eps)
    return AffineAngleFamily.from_terms(
        [(-TWO_PI * (9 / 10 - eps), 0.0, 1), (TWO_PI * (1 / 10 - eps), 0.0, 9)],
        {"name": "u_eps", "eps": eps},
    )


def build_near_2pi_family(k: int) -> AffineAngleFamily:
    """diag(e^{−2πit(N−1)/N}, e^{2πit/N} × (N−1)) với N = 10^k."""
    if int(k) != k or k < 1:
        raise InvalidParameter(f"Số mũ k phải là số nguyên ≥ 1, nhận được {k!r}.")
    N = 10 ** int(k)
    return AffineAngleFamily.from_terms(
        [(-TWO_PI * (N - 1) / N, 0.0, 1), (TWO_PI / N, 0.0, N - 1)],
        {"name": "near2pi", "k": int(k)},
    )


# ==========================================================
# TẦNG GOODEARL
# ==========================================================
@dataclass(frozen=True)
class GoodearlStage:
    levels: Tuple[int, ...]
    points: Tuple[float, ...] = ()
    eps: Optional[float] = None

    def __post_init__(self):
        levels = tuple(validate_levels(list(self.levels)))
        points = tuple(validate_unit_points(list(self.points)))
        if not points:
            points = default_points(len(levels))
        if len(points) != len(levels):
            raise SizeMismatch(
                f"Cần {len(levels)} điểm đánh giá cho {len(levels)} tầng, nhận {len(points)}.",
                {"levels": len(levels), "points": len(points)},
            )
        if len(set(points)) != len(points):
            raise InvalidParameter("Các điểm đánh giá phải phân biệt.")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "points", points)

    @property
    def multiplier(self) -> int:
        return math.prod(10 ** k for k in self.levels)

    @property
    def alpha(self) -> int:
        return math.prod(10 ** k - 1 for k in self.levels)

    @property
    def beta(self) -> int:
        return 9 * self.alpha

    @property
    def total_size(self) -> int:
        return 10 * self.multiplier

    @property
    def gamma(self) -> int:
        return self.total_size - self.alpha - self.beta

    @property
    def admissibility_ratio(self) -> float:
        return float(math.prod((10 ** k - 1) / 10 ** k for k in self.levels))

    @property
    def is_admissible(self) -> bool:
        return self.admissibility_ratio > ADMISSIBILITY_RATIO

    def require_admissible(self) -> None:
        if not self.is_admissible:
            raise InadmissibleStage(
                f"Tầng {list(self.levels)} không thoả Π(10^k − 1)/10^k > 11/12 "
                f"(tỉ số {self.admissibility_ratio:.6f}).",
                {"ratio": self.admissibility_ratio},
            )

    def counts(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "L": self.total_size}

    def to_json_dict(self) -> dict:
        return {"levels": list(self.levels), "points": list(self.points), "eps": self.eps}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "GoodearlStage":
        if not isinstance(payload, dict) or "levels" not in payload:
            raise InvalidParameter("JSON tầng phải có dạng {levels, points, eps}.")
        return cls(
            tuple(payload.get("levels") or ()),
            tuple(payload.get("points") or ()),
            payload.get("eps"),
        )


def default_points(count: int) -> Tuple[float, ...]:
    """x_i = i/(count+1)."""
    return tuple(i / (count + 1) for i in range(1, count + 1))


def goodearl_image(f: AffineAngleFamily, stage: GoodearlStage, check: bool = True) -> AffineAngleFamily:
    """
    Họ của φ_{1,n}(f): mỗi tầng k với điểm x thay f bằng diag(f, …, f, f(x))
    gồm 10^k − 1 bản sao f và một khối hằng f(x).
    """
    if check:
        stage.require_admissible()

    terms: List[AngleTerm] = list(f.terms)
    for k, x in zip(stage.levels, stage.points):
        copies = 10 ** k - 1
        scaled = [AngleTerm(t.slope, t.intercept, t.mult * copies) for t in terms]
        frozen = [AngleTerm(0.0, float(t.value(x)), t.mult) for t in terms]
        terms = list(AffineAngleFamily(tuple(scaled + frozen)).merged().terms)

    meta = dict(f.meta, stage=stage.to_json_dict())
    image = AffineAngleFamily(tuple(terms), meta)
    logger.debug("Ảnh Goodearl: %d số hạng, L = %d", len(image.terms), image.total_size)
    return image


def enumerate_block_image(f: AffineAngleFamily, stage: GoodearlStage, t: float) -> np.ndarray:
    """Dựng trực tiếp đa tập góc của φ_{1,n}(f)(t) bằng cách ghép khối từng tầng."""

    def values_at(level: int, point: float) -> np.ndarray:
        if level == 0:
            return f.evaluate(point)
        k = stage.levels[level - 1]
        x = stage.points[level - 1]
        inner = values_at(level - 1, point)
        return np.concatenate([np.tile(inner, 10 ** k - 1), values_at(level - 1, x)])

    return values_at(len(stage.levels), float(t))


# ==========================================================
# NHÁNH ĐÃ SẮP ȳ_k(t)
# ==========================================================
@dataclass
class SortedBranches:
    """
    ȳ_1(t) ≤ … ≤ ȳ_L(t) (đơn vị góc/2π) ở dạng nén: tại mỗi t, các giá trị
    số hạng đã sắp cùng bội cộng dồn.
    """

    t_grid: np.ndarray
    values: np.ndarray   # (T, số số hạng), đã sắp tăng theo từng hàng
    cum: np.ndarray      # (T, số số hạng), bội cộng dồn theo thứ tự sắp
    order: np.ndarray    # chỉ số số hạng theo thứ tự sắp

    @property
    def total_size(self) -> int:
        return int(self.cum[0, -1])

    def branch(self, k: int) -> np.ndarray:
        """ȳ_{k+1}(t) trên lưới (k là hạng 0-based)."""
        if not 0 <= k < self.total_size:
            raise InvalidParameter(f"Hạng {k} nằm ngoài [0, {self.total_size}).")
        pos = np.sum(self.cum <= k, axis=1)
        return self.values[np.arange(self.values.shape[0]), pos]

    def count_below(self, level: np.ndarray) -> np.ndarray:
        return np.sum(np.where(self.values < level[:, None], self._mult(), 0), axis=1)

    def count_above(self, level: np.ndarray) -> np.ndarray:
        return np.sum(np.where(self.values > level[:, None], self._mult(), 0), axis=1)

    def _mult(self) -> np.ndarray:
        return np.diff(np.concatenate([np.zeros((self.cum.shape[0], 1), dtype=np.int64), self.cum], axis=1), axis=1)

    def as_array(self) -> np.ndarray:
        """(T, L) đầy đủ; chỉ dùng cho họ nhỏ."""
        if self.total_size > HOMOTOPY_SLOTS_MAX:
            raise InvalidParameter(f"L = {self.total_size} quá lớn để trải phẳng.")
        mult = self._mult()
        return np.stack([np.repeat(self.values[i], mult[i]) for i in range(self.values.shape[0])])

    def to_frame(self) -> pd.DataFrame:
        """Bảng các đường cong phân biệt: (t, rank_start, rank_end, value), hạng 1-based."""
        mult = self._mult()
        rows = []
        for i, t in enumerate(self.t_grid):
            start = 1
            for v, m in zip(self.values[i], mult[i]):
                rows.append({"t": float(t), "rank_start": start, "rank_end": start + int(m) - 1, "value": float(v)})
                start += int(m)
        return pd.DataFrame(rows, columns=["t", "rank_start", "rank_end", "value"])


def sorted_branch_functions(f: AffineAngleFamily, t_grid) -> SortedBranches:
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    values = f.term_values(t_grid) / TWO_PI
    order = np.argsort(values, axis=1, kind="stable")
    sorted_values = np.take_along_axis(values, order, axis=1)
    cum = np.cumsum(f.mults[order], axis=1)
    return SortedBranches(t_grid=t_grid, values=sorted_values, cum=cum, order=order)


# ------------------------------
# Kiểm tra nhánh giữa
# ------------------------------
@dataclass
class MiddleBranchReport:
    passed: bool
    alpha: int
    beta: int
    gamma: int
    max_below: int
    max_above: int
    t_checked: int
    witnesses: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "max_below": self.max_below,
            "max_above": self.max_above,
            "t_checked": self.t_checked,
            "witnesses": self.witnesses,
        }


def _fast_and_slow(f: AffineAngleFamily):
    moving = [t for t in f.terms if t.slope != 0.0]
    if len(moving) < 2:
        raise InvalidParameter("Họ cần một số hạng quay nhanh và một số hạng quay chậm.")
    fast = min(moving, key=lambda t: t.slope)
    slow = max(moving, key=lambda t: t.slope)
    return fast, slow


def check_middle_branch(
    f: AffineAngleFamily, stage: GoodearlStage, eps: float, t_grid=None, max_witnesses: int = 10
) -> MiddleBranchReport:
    """
    Kiểm tra γ < α, số giá trị dưới −(9/10−ε)t không quá γ, trên không quá γ+β,
    và ȳ_k(t) = −(9/10−ε)t đúng tuyệt đối với γ+1 ≤ k ≤ α trên lưới.
    """
    if t_grid is None:
        t_grid = np.linspace(0.0, 1.0, 200)
    t_grid = np.asarray(t_grid, dtype=float)

    fast, slow = _fast_and_slow(f)
    alpha, beta = int(fast.mult), int(slow.mult)
    gamma = f.total_size - alpha - beta
    witnesses: List[dict] = []

    if gamma >= alpha:
        return MiddleBranchReport(
            passed=False, alpha=alpha, beta=beta, gamma=gamma, max_below=gamma,
            max_above=gamma + beta, t_checked=0,
            witnesses=[{"k": gamma + 1, "reason": "gamma >= alpha"}],
        )

    if abs(fast.slope / TWO_PI + (0.9 - eps)) > 1e-12:
        witnesses.append({"k": None, "reason": "fast slope differs from -(9/10-eps)"})

    sb = sorted_branch_functions(f, t_grid)
    level = fast.value(t_grid) / TWO_PI
    below = sb.count_below(level)
    above = sb.count_above(level)

    for i in np.flatnonzero(below > gamma)[:max_witnesses]:
        witnesses.append({"t": float(t_grid[i]), "k": int(below[i]), "reason": "too many below"})
    for i in np.flatnonzero(above > gamma + beta)[:max_witnesses]:
        witnesses.append({"t": float(t_grid[i]), "k": int(f.total_size - above[i]), "reason": "too many above"})

    for k in (gamma, alpha - 1):
        mismatch = np.flatnonzero(sb.branch(k) != level)
        for i in mismatch[:max_witnesses]:
            witnesses.append({"t": float(t_grid[i]), "k": k + 1, "reason": "middle branch differs"})

    report = MiddleBranchReport(
        passed=not witnesses,
        alpha=alpha, beta=beta, gamma=gamma,
        max_below=int(below.max()), max_above=int(above.max()),
        t_checked=int(t_grid.size), witnesses=witnesses,
    )
    logger.info(
        "Kiểm tra nhánh giữa: %s (α=%d, β=%d, γ=%d, %d điểm t)",
        "đạt" if report.passed else "không đạt", alpha, beta, gamma, t_grid.size,
    )
    return report


# ==========================================================
# HỌ → ĐỒNG LUÂN CHÉO
# ==========================================================
def pinned_rank_offsets(L: int, alpha: int, eps: float, ranks: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    −ε < ε_1 < … < ε_α = 0 < … < ε_L < ε (hạng 1-based trong công thức;
    `ranks` là hạng 0-based cần lấy, mặc định tất cả).
    """
    if not 1 <= alpha <= L:
        raise InvalidParameter(f"alpha phải nằm trong [1, {L}], nhận {alpha}.")
    k = np.arange(1, L + 1, dtype=float) if ranks is None else np.asarray(ranks, dtype=float) + 1
    below = -eps * (alpha - k) / alpha
    above = eps * (k - alpha) / (L - alpha + 1)
    return np.where(k < alpha, below, np.where(k > alpha, above, 0.0))


def family_to_homotopy(
    f: AffineAngleFamily,
    offsets: Sequence[float],
    s_grid,
    t_grid,
    ranks: Optional[Sequence[int]] = None,
) -> UnitaryHomotopy:
    """
    Đồng luân chéo F_s(t) = diag(e^{i·s·(2π·ȳ_k(t) + ε_k)}) trên các hạng `ranks`.
    Hàng s = 0 là đơn vị; hàng s = 1 là W̃.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    L = f.total_size
    ranks = np.arange(L) if ranks is None else np.asarray(ranks, dtype=int)
    if ranks.size > HOMOTOPY_SLOTS_MAX:
        raise InvalidParameter(
            f"Quá nhiều slot ({ranks.size}); hãy chọn khối hạng con (ranks)."
        )
    if np.any((ranks < 0) | (ranks >= L)):
        raise InvalidParameter(f"Hạng phải nằm trong [0, {L}).")

    offsets = np.asarray(list(offsets), dtype=float)
    if offsets.size == 0:
        eta = np.zeros(ranks.size)
    elif offsets.size == ranks.size:
        eta = offsets
    elif offsets.size == L:
        eta = offsets[ranks]
    else:
        raise SizeMismatch(
            f"Số độ lệch ({offsets.size}) phải bằng 0, số slot ({ranks.size}) hoặc L ({L}).",
            {"offsets": int(offsets.size), "slots": int(ranks.size), "L": L},
        )
    if eta.size > 1 and offsets.size and np.any(np.diff(eta) <= 0):
        raise InvalidParameter("Các độ lệch phải tăng ngặt theo hạng.")

    sb = sorted_branch_functions(f, t_grid)
    terminal = np.stack([sb.branch(int(k)) for k in ranks], axis=1) * TWO_PI + eta[None, :]

    if offsets.size and ranks.size > 1:
        gaps = _terminal_gaps(terminal)
        if float(gaps.min()) <= GAP_FLOOR:
            l = int(np.argmin(gaps))
            raise OffsetCollision(
                f"Các hàm góc đã lệch vẫn trùng nhau tại t = {t_grid[l]:.6f}.",
                {"t_index": l, "t": float(t_grid[l])},
            )

    angles = s_grid[:, None, None] * terminal[None, :, :]
    meta = {"family": f.meta, "ranks": ranks.tolist(), "offsets": eta.tolist()}
    return UnitaryHomotopy.diagonal(s_grid, t_grid, angles, meta=meta)


def _terminal_gaps(terminal: np.ndarray) -> np.ndarray:
    """Khe dây cung nhỏ nhất giữa các slot ở hàng s = 1 theo từng t."""
    D = chord(terminal[:, :, None], terminal[:, None, :])
    n = terminal.shape[1]
    D[:, np.arange(n), np.arange(n)] = np.inf
    return D.min(axis=(1, 2))


def w_tilde_distance(offsets: Sequence[float]) -> float:
    """‖W̃ − W‖ = max_k |e^{iε_k} − 1|."""
    eta = np.asarray(list(offsets), dtype=float)
    return float(np.max(chord(eta, 0.0))) if eta.size else 0.0


def family_distance(f: AffineAngleFamily, g: AffineAngleFamily, t_grid) -> float:
    """sup_t ‖f(t) − g(t)‖ cho hai họ cùng cấu trúc số hạng."""
    if f.mults.tolist() != g.mults.tolist():
        raise SizeMismatch("Hai họ phải cùng cấu trúc số hạng.")
    return float(np.max(chord(f.term_values(t_grid), g.term_values(t_grid))))

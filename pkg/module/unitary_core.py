# =========================================================
# unitary_core.py: Ma trận unita, phổ, logarit, trắc địa, đồng luân
# =========================================================

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from log.log import get_logger
from module.circle_lifting import TWO_PI, chord, chord_to_arc, wrap_array
from module.error_utils import (
    BranchCut,
    DimensionMismatch,
    EigensolverFailure,
    InvalidParameter,
    NotUnitary,
    PerturbationFailed,
    TooFarApart,
)

logger = get_logger(__name__)

UNITARY_TOL = 1e-10          # ‖U*U − I‖ ≤ n·UNITARY_TOL
EIGEN_RADIUS_TOL = 1e-8      # | |λ| − 1 | cho phép trước khi chiếu lên đường tròn
BRANCH_CUT_TOL = 1e-6        # khoảng cách tối thiểu tới −1 cho log chính
HERMITIAN_TOL = 1e-10
GAP_FLOOR = 1e-12            # khe phổ nhỏ hơn mức này coi như trùng
MAX_PERTURB_RETRIES = 16

# δ₀ và ε₁: |1 − e^{iθ}| ≤ δ₀  ⇒  |θ| ≤ (1 + ε₁)|1 − e^{iθ}|
DELTA0 = 0.1
EPS1 = float(chord_to_arc(DELTA0)) / DELTA0 - 1.0


# ------------------------------
# Kiểm tra & phổ
# ------------------------------
def _as_square(U, name="U") -> np.ndarray:
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1] or U.shape[0] == 0:
        raise DimensionMismatch(f"{name} phải là ma trận vuông khác rỗng, nhận shape {U.shape}.")
    if not np.all(np.isfinite(U)):
        raise InvalidParameter(f"{name} chứa giá trị không hữu hạn.")
    return U


def unitarity_residual(U) -> float:
    U = np.asarray(U, dtype=complex)
    n = U.shape[-1]
    return float(operator_norm(U.conj().T @ U - np.eye(n)))


def check_unitary(U, name="U") -> np.ndarray:
    U = _as_square(U, name)
    n = U.shape[0]
    residual = unitarity_residual(U)
    if residual > n * UNITARY_TOL:
        raise NotUnitary(
            f"{name} không unita: ‖U*U − I‖ = {residual:.3e} > {n * UNITARY_TOL:.1e}.",
            {"residual": residual},
        )
    return U


def _project_eigenvalues(lam: np.ndarray) -> np.ndarray:
    radius = np.abs(lam)
    worst = float(np.max(np.abs(radius - 1.0))) if lam.size else 0.0
    if worst > EIGEN_RADIUS_TOL:
        raise NotUnitary(
            f"Trị riêng lệch khỏi đường tròn đơn vị {worst:.3e} > {EIGEN_RADIUS_TOL:.0e}.",
            {"radius_error": worst},
        )
    return lam / radius


def _schur(U):
    try:
        T, Z = scipy.linalg.schur(U, output="complex")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigensolverFailure("Phân tích Schur không hội tụ.") from exc
    return T, Z


def spectrum(U) -> np.ndarray:
    """Các góc (sắp tăng, trong (−π, π]) của trị riêng của U."""
    U = check_unitary(U)
    T, _ = _schur(U)
    lam = _project_eigenvalues(np.diag(T))
    return np.sort(np.angle(lam))


def spectra_batch(mats: np.ndarray) -> np.ndarray:
    """Phổ của một lô ma trận (..., n, n) → góc (..., n), không sắp xếp."""
    try:
        lam = np.linalg.eigvals(mats)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure("Bộ giải trị riêng thất bại trên lô ma trận.") from exc
    return np.angle(_project_eigenvalues(lam))


def spectral_gaps(angles: np.ndarray) -> np.ndarray:
    """Khe dây cung nhỏ nhất giữa các trị riêng theo trục cuối; n = 1 cho 2.0."""
    angles = np.asarray(angles, dtype=float)
    n = angles.shape[-1]
    if n < 2:
        return np.full(angles.shape[:-1], 2.0)
    a = np.sort(wrap_array(angles), axis=-1)
    arcs = np.diff(a, axis=-1)
    closing = a[..., :1] + TWO_PI - a[..., -1:]
    min_arc = np.minimum(arcs.min(axis=-1), closing[..., 0])
    return 2.0 * np.sin(np.clip(min_arc, 0.0, math.pi) / 2.0)


def operator_norm(A) -> float:
    """Giá trị kỳ dị lớn nhất (hỗ trợ lô: trả về mảng)."""
    A = np.asarray(A, dtype=complex)
    if A.ndim == 2:
        return float(np.linalg.norm(A, 2))
    return np.linalg.svd(A, compute_uv=False)[..., 0]


# ------------------------------
# Logarit, mũ, trắc địa
# ------------------------------
def unitary_log(U) -> np.ndarray:
    """H Hermit với exp(iH) = U, phổ của H trong (−π, π)."""
    U = check_unitary(U)
    T, Z = _schur(U)
    lam = _project_eigenvalues(np.diag(T))
    nearest = float(np.min(np.abs(lam + 1.0)))
    if nearest < BRANCH_CUT_TOL:
        raise BranchCut(
            f"Trị riêng cách −1 chỉ {nearest:.2e}; nhánh chính của log không xác định.",
            {"distance_to_minus_one": nearest},
        )
    H = (Z * np.angle(lam)[None, :]) @ Z.conj().T
    return 0.5 * (H + H.conj().T)


def expm_hermitian(H, s: float = 1.0) -> np.ndarray:
    """exp(i·s·H) cho H Hermit, qua phân tích phổ."""
    H = np.asarray(H, dtype=complex)
    H = 0.5 * (H + H.conj().T)
    w, V = np.linalg.eigh(H)
    return (V * np.exp(1j * s * w)[None, :]) @ V.conj().T


def geodesic_interpolate(G0, G1, s: float) -> np.ndarray:
    """G0·exp(i·s·H) với H = log(G0*G1); cần ‖G0*G1 − I‖ < 1."""
    G0 = check_unitary(G0, "G0")
    G1 = check_unitary(G1, "G1")
    if G0.shape != G1.shape:
        raise DimensionMismatch(f"G0 và G1 phải cùng cỡ ({G0.shape} ≠ {G1.shape}).")
    if not 0.0 <= float(s) <= 1.0:
        raise InvalidParameter(f"s phải nằm trong [0, 1], nhận được {s}.")

    D = G0.conj().T @ G1
    distance = operator_norm(D - np.eye(D.shape[0]))
    if distance >= 1.0:
        raise TooFarApart(
            f"‖G0*G1 − I‖ = {distance:.4f} ≥ 1; không nội suy trắc địa được.",
            {"distance": distance},
        )
    if s == 0.0:
        return G0.copy()
    if s == 1.0:
        return G1.copy()
    return G0 @ expm_hermitian(unitary_log(D), s)


def polar_project(A: np.ndarray) -> np.ndarray:
    """Chiếu (lô) ma trận lên nhóm unita: phần unita của phân tích cực."""
    W, _, Vh = np.linalg.svd(A)
    return W @ Vh


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    Z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2.0)
    Q, R = np.linalg.qr(Z)
    d = np.diag(R)
    return Q * (d / np.abs(d))[None, :]


def random_hermitian(n: int, rng: np.random.Generator) -> np.ndarray:
    """Ma trận Hermit ngẫu nhiên chuẩn hoá ‖K‖ = 1."""
    Z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    K = 0.5 * (Z + Z.conj().T)
    return K / np.linalg.norm(K, 2)


# =========================================================
# ĐỒNG LUÂN TRÊN LƯỚI (s, t)
# =========================================================
@dataclass
class UnitaryHomotopy:
    """
    Lưới (s, t) các ma trận unita F_s(t).

    Hai dạng lưu trữ:
      - dense: matrices có shape (S, T, n, n)
      - diagonal: F_s(t) = Q·diag(e^{iφ(s,t)})·Q*, angles shape (S, T, n), basis Q (None = I)
    """

    s_grid: np.ndarray
    t_grid: np.ndarray
    matrices: Optional[np.ndarray] = None
    angles: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.s_grid = np.asarray(self.s_grid, dtype=float)
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        for name, grid in (("s_grid", self.s_grid), ("t_grid", self.t_grid)):
            if grid.ndim != 1 or grid.size == 0:
                raise InvalidParameter(f"{name} phải là mảng một chiều khác rỗng.")
            if np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > 1:
                raise InvalidParameter(f"{name} phải tăng ngặt trong [0, 1].")

        S, T = self.s_grid.size, self.t_grid.size
        if (self.matrices is None) == (self.angles is None):
            raise InvalidParameter("Cần đúng một trong hai: matrices hoặc angles.")

        if self.matrices is not None:
            self.matrices = np.asarray(self.matrices, dtype=complex)
            if self.matrices.ndim != 4 or self.matrices.shape[:2] != (S, T):
                raise DimensionMismatch(
                    f"matrices phải có shape (S, T, n, n) = ({S}, {T}, n, n), nhận {self.matrices.shape}."
                )
            n = self.matrices.shape[2]
            if self.matrices.shape[3] != n:
                raise DimensionMismatch("Các ma trận phải vuông.")
        else:
            self.angles = np.asarray(self.angles, dtype=float)
            if self.angles.ndim != 3 or self.angles.shape[:2] != (S, T):
                raise DimensionMismatch(
                    f"angles phải có shape (S, T, n) = ({S}, {T}, n), nhận {self.angles.shape}."
                )
            if self.basis is not None:
                self.basis = check_unitary(self.basis, "basis")
                if self.basis.shape[0] != self.angles.shape[2]:
                    raise DimensionMismatch("basis phải có cỡ n×n khớp với angles.")

    # ------------------------------
    # Khởi tạo
    # ------------------------------
    @classmethod
    def dense(cls, s_grid, t_grid, matrices, meta=None):
        return cls(s_grid, t_grid, matrices=matrices, meta=dict(meta or {}))

    @classmethod
    def diagonal(cls, s_grid, t_grid, angles, basis=None, meta=None):
        return cls(s_grid, t_grid, angles=angles, basis=basis, meta=dict(meta or {}))

    @classmethod
    def from_function(cls, s_grid, t_grid, fn, meta=None):
        """Lấy mẫu fn(s, t) → ma trận n×n trên lưới."""
        s_grid = np.asarray(s_grid, dtype=float)
        t_grid = np.asarray(t_grid, dtype=float)
        mats = np.array([[np.asarray(fn(s, t), dtype=complex) for t in t_grid] for s in s_grid])
        return cls.dense(s_grid, t_grid, mats, meta)

    # ------------------------------
    # Thuộc tính
    # ------------------------------
    @property
    def dim(self) -> int:
        return int(self.matrices.shape[2] if self.matrices is not None else self.angles.shape[2])

    @property
    def shape(self):
        return self.s_grid.size, self.t_grid.size

    @property
    def is_diagonal(self) -> bool:
        return self.angles is not None

    def _basis(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex) if self.basis is None else self.basis

    def node(self, i: int, cols=None) -> np.ndarray:
        """Ma trận tại hàng s thứ i, các cột t `cols` → (m, n, n)."""
        cols = slice(None) if cols is None else cols
        if self.matrices is not None:
            return self.matrices[i, cols]
        phases = np.exp(1j * self.angles[i, cols])
        Q = self._basis()
        return np.einsum("ij,mj,kj->mik", Q, phases, Q.conj())

    def matrix(self, i: int, l: int) -> np.ndarray:
        return self.node(i, [l])[0]

    def row_spectra(self, i: int, cols=None) -> np.ndarray:
        """Góc phổ tại hàng i (dạng chéo: theo thứ tự slot, đã wrap)."""
        cols = slice(None) if cols is None else cols
        if self.angles is not None:
            return wrap_array(self.angles[i, cols])
        return spectra_batch(self.matrices[i, cols])

    def node_gaps(self) -> np.ndarray:
        """Khe phổ (dây cung) tại mọi nút → (S, T)."""
        if self.angles is not None:
            return spectral_gaps(self.angles)
        return np.stack([spectral_gaps(self.row_spectra(i)) for i in range(self.s_grid.size)])

    def to_dense(self) -> "UnitaryHomotopy":
        if self.matrices is not None:
            return self
        mats = np.stack([self.node(i) for i in range(self.s_grid.size)])
        return UnitaryHomotopy.dense(self.s_grid, self.t_grid, mats, self.meta)

    def conjugate(self, V) -> "UnitaryHomotopy":
        """V·F·V* tại từng nút."""
        V = check_unitary(V, "V")
        if V.shape[0] != self.dim:
            raise DimensionMismatch("V phải cùng cỡ với đồng luân.")
        if self.angles is not None:
            return UnitaryHomotopy.diagonal(
                self.s_grid, self.t_grid, self.angles, V @ self._basis(), self.meta
            )
        mats = np.einsum("ij,stjk,lk->stil", V, self.matrices, V.conj())
        return UnitaryHomotopy.dense(self.s_grid, self.t_grid, mats, self.meta)

    def subgrid(self, s_index, t_index) -> "UnitaryHomotopy":
        s_index = np.asarray(s_index, dtype=int)
        t_index = np.asarray(t_index, dtype=int)
        if self.angles is not None:
            return UnitaryHomotopy.diagonal(
                self.s_grid[s_index], self.t_grid[t_index],
                self.angles[np.ix_(s_index, t_index)], self.basis, self.meta,
            )
        return UnitaryHomotopy.dense(
            self.s_grid[s_index], self.t_grid[t_index],
            self.matrices[np.ix_(s_index, t_index)], self.meta,
        )

    def validate(self) -> None:
        """Kiểm tra unita tại mọi nút (dạng chéo luôn unita)."""
        if self.matrices is None:
            return
        n = self.dim
        I = np.eye(n)
        for i in range(self.s_grid.size):
            M = self.matrices[i]
            residual = operator_norm(np.conj(np.swapaxes(M, -1, -2)) @ M - I)
            worst = int(np.argmax(residual))
            if residual[worst] > n * UNITARY_TOL:
                raise NotUnitary(
                    f"Nút (s={self.s_grid[i]:.4f}, t={self.t_grid[worst]:.4f}) không unita.",
                    {"s_index": i, "t_index": worst, "residual": float(residual[worst])},
                )

    # ------------------------------
    # JSON
    # ------------------------------
    def to_json_dict(self) -> dict:
        payload = {
            "n": self.dim,
            "s_grid": self.s_grid.tolist(),
            "t_grid": self.t_grid.tolist(),
            "meta": self.meta,
        }
        if self.matrices is not None:
            payload["form"] = "dense"
            payload["matrices"] = np.stack([self.matrices.real, self.matrices.imag], axis=-1).tolist()
        else:
            payload["form"] = "diagonal"
            payload["angles"] = self.angles.tolist()
            payload["basis"] = (
                None if self.basis is None
                else np.stack([self.basis.real, self.basis.imag], axis=-1).tolist()
            )
        return payload

    @classmethod
    def from_json_dict(cls, payload: dict) -> "UnitaryHomotopy":
        try:
            s_grid = payload["s_grid"]
            t_grid = payload["t_grid"]
            form = payload.get("form", "dense")
            meta = payload.get("meta") or {}
            if form == "dense":
                raw = np.asarray(payload["matrices"], dtype=float)
                F = cls.dense(s_grid, t_grid, raw[..., 0] + 1j * raw[..., 1], meta)
            elif form == "diagonal":
                basis = payload.get("basis")
                if basis is not None:
                    raw = np.asarray(basis, dtype=float)
                    basis = raw[..., 0] + 1j * raw[..., 1]
                F = cls.diagonal(s_grid, t_grid, payload["angles"], basis, meta)
            else:
                raise InvalidParameter(f"form không hợp lệ: {form!r}.")
        except KeyError as exc:
            raise InvalidParameter(f"JSON đồng luân thiếu trường {exc.args[0]!r}.") from exc

        if "n" in payload and int(payload["n"]) != F.dim:
            raise DimensionMismatch(f"Trường n = {payload['n']} không khớp cỡ ma trận {F.dim}.")
        F.validate()
        return F


def reference_column(t_grid) -> int:
    """Chỉ số cột t gần ½ nhất, dùng làm cột tham chiếu."""
    return int(np.argmin(np.abs(np.asarray(t_grid, dtype=float) - 0.5)))


def try_diagonal_form(F: UnitaryHomotopy, tol: float = 1e-9) -> UnitaryHomotopy:
    """
    Nếu cả họ chéo hoá được trong cơ sở riêng của F_1(t_ref) thì chuyển sang
    dạng chéo; ngược lại trả về F nguyên trạng.
    """
    if F.is_diagonal:
        return F
    S, T = F.shape
    n = F.dim
    _, Q = _schur(F.matrices[S - 1, reference_column(F.t_grid)])
    off_diagonal = ~np.eye(n, dtype=bool)
    angles = np.empty((S, T, n))
    # duyệt từ s = 1: hàng s = 0 thường là đơn vị, chéo trong mọi cơ sở
    for i in range(S - 1, -1, -1):
        rotated = Q.conj().T @ F.matrices[i] @ Q
        off = rotated[:, off_diagonal]
        if off.size and float(np.max(np.abs(off))) > tol:
            return F
        angles[i] = np.angle(_project_eigenvalues(np.diagonal(rotated, axis1=-2, axis2=-1)))
    logger.debug("Đồng luân dày giao hoán; chuyển sang dạng chéo (n = %d).", n)
    return UnitaryHomotopy.diagonal(F.s_grid, F.t_grid, angles, Q, F.meta)


# ------------------------------
# Độ dài & khoảng cách
# ------------------------------
def _step_norms(F: UnitaryHomotopy, j: int) -> np.ndarray:
    """‖F_{s_{j+1}}(t) − F_{s_j}(t)‖ theo từng cột t."""
    if F.angles is not None:
        return np.max(chord(F.angles[j + 1], F.angles[j]), axis=-1)
    return operator_norm(F.matrices[j + 1] - F.matrices[j])


def homotopy_length(F: UnitaryHomotopy) -> float:
    """Σ_j max_t ‖F_{s_{j+1}}(t) − F_{s_j}(t)‖."""
    S = F.s_grid.size
    if S < 2:
        return 0.0
    if F.angles is not None:
        steps = np.max(chord(F.angles[1:], F.angles[:-1]), axis=(1, 2))
        return float(np.sum(steps))
    return float(sum(float(np.max(_step_norms(F, j))) for j in range(S - 1)))


def sup_distance(F: UnitaryHomotopy, G: UnitaryHomotopy) -> float:
    """sup trên lưới của ‖F_s(t) − G_s(t)‖."""
    if F.shape != G.shape or F.dim != G.dim:
        raise DimensionMismatch("Hai đồng luân phải cùng lưới và cùng cỡ.")
    same_basis = (
        F.angles is not None and G.angles is not None
        and np.allclose(F._basis(), G._basis(), atol=1e-14)
    )
    if same_basis:
        return float(np.max(chord(F.angles, G.angles)))
    return float(max(
        float(np.max(operator_norm(F.node(i) - G.node(i)))) for i in range(F.s_grid.size)
    ))


# =========================================================
# NHIỄU VỀ PHỔ ĐƠN
# =========================================================
def pinned_offsets(n: int, spread: float, pin: int) -> np.ndarray:
    """
    Độ lệch tăng ngặt trong (−spread, spread) với vị trí `pin` bằng 0:
    −spread < ε_0 < … < ε_pin = 0 < … < ε_{n−1} < spread.
    """
    if not 0 <= pin < n:
        raise InvalidParameter(f"pin phải nằm trong [0, {n}), nhận được {pin}.")
    r = np.arange(n, dtype=float)
    below = -spread * (pin - r) / (pin + 1)
    above = spread * (r - pin) / (n - pin)
    return np.where(r < pin, below, np.where(r > pin, above, 0.0))


def _reference_basis(F: UnitaryHomotopy, l_ref: int):
    """Cơ sở riêng của F_1(t_ref) và góc dùng để xếp thứ tự các slot (xem reference_angles)."""
    if F.angles is not None:
        return F._basis(), reference_angles(F, l_ref)
    S = F.s_grid.size
    T, Z = _schur(F.matrices[S - 1, l_ref])
    return Z, np.angle(_project_eigenvalues(np.diag(T)))


def reference_angles(F: UnitaryHomotopy, l_ref: int) -> np.ndarray:
    """
    Góc của từng slot tại (s = 1, t_ref) để xếp thứ tự độ lệch.

    Dạng chéo: góc nâng liên tục dọc s từ hàng s = 0 (tổng góc đã quay), nên thứ tự
    không đổi khi một slot quay qua −π. Dạng dày: góc trị riêng của F_1(t_ref).
    """
    if F.angles is None:
        return _reference_basis(F, l_ref)[1]
    column = F.angles[:, l_ref, :]
    return wrap_array(column[0]) + np.sum(wrap_array(np.diff(column, axis=0)), axis=0)


def _apply_offsets(F, Q, eta, weights) -> UnitaryHomotopy:
    """G_s(t) = F_s(t)·Q·diag(e^{i·w(s)·η})·Q*."""
    meta = dict(F.meta, perturbed=True)
    if F.angles is not None:
        angles = F.angles + weights[:, None, None] * eta[None, None, :]
        return UnitaryHomotopy.diagonal(F.s_grid, F.t_grid, angles, F.basis, meta)

    mats = np.empty_like(F.matrices)
    for i, w in enumerate(weights):
        if w == 0.0:
            mats[i] = F.matrices[i]
            continue
        E = (Q * np.exp(1j * w * eta)[None, :]) @ Q.conj().T
        mats[i] = F.matrices[i] @ E
    return UnitaryHomotopy.dense(F.s_grid, F.t_grid, mats, meta)


def _apply_random(F, Q, eta, weights, K, mu) -> UnitaryHomotopy:
    """G = polar(F·E(s) + w(s)·μ·K): nhiễu Hermit ngẫu nhiên rồi chiếu cực."""
    dense = F.to_dense()
    mats = np.empty_like(dense.matrices)
    for i, w in enumerate(weights):
        if w == 0.0:
            mats[i] = dense.matrices[i]
            continue
        E = (Q * np.exp(1j * w * eta)[None, :]) @ Q.conj().T
        mats[i] = polar_project(dense.matrices[i] @ E + (w * mu) * K[None, :, :])
    return UnitaryHomotopy.dense(F.s_grid, F.t_grid, mats, dict(F.meta, perturbed=True))


def perturb_to_simple_spectrum(
    F: UnitaryHomotopy,
    delta: float,
    seed: Optional[int] = None,
    pin: Optional[int] = None,
    max_retries: int = MAX_PERTURB_RETRIES,
) -> UnitaryHomotopy:
    """
    Nhiễu F thành G có phổ đơn tại mọi nút lưới với ‖G − F‖ ≤ delta và
    |length(G) − length(F)| ≤ delta. Hàng s = 1 được giữ nguyên nếu đã có phổ đơn.

    `pin` là vị trí (theo reference_angles tăng) của slot F_1(t_ref) được giữ độ lệch 0.
    """
    delta = float(delta)
    if not np.isfinite(delta) or delta <= 0:
        raise InvalidParameter(f"delta phải dương, nhận được {delta}.")

    gaps = F.node_gaps()
    if float(gaps.min()) > GAP_FLOOR:
        logger.debug("Phổ đã đơn tại mọi nút; giữ nguyên đồng luân.")
        return F

    S, T = F.shape
    n = F.dim
    pinned_row = bool(float(gaps[S - 1].min()) > GAP_FLOOR)
    weights = (1.0 - F.s_grid) if pinned_row else np.ones(S)

    l_ref = reference_column(F.t_grid)
    Q, ref_angles = _reference_basis(F, l_ref)
    order = np.argsort(ref_angles, kind="stable")
    pin = 0 if pin is None else int(pin)

    base_length = homotopy_length(F)
    rng = np.random.default_rng(seed)
    best_gap = 0.0

    for attempt in range(max_retries + 1):
        eta = np.empty(n)
        if attempt == 0:
            eta[order] = pinned_offsets(n, 0.9 * delta, pin)
            G = _apply_offsets(F, Q, eta, weights)
        else:
            # lần thử lại: độ lệch nhỏ hơn + thành phần Hermit ngẫu nhiên, biên độ giảm dần
            eta[order] = pinned_offsets(n, 0.45 * delta, pin)
            mu = 0.25 * delta * 0.7 ** (attempt - 1)
            G = _apply_random(F, Q, eta, weights, random_hermitian(n, rng), mu)

        min_gap = float(G.node_gaps().min())
        best_gap = max(best_gap, min_gap)
        distance = sup_distance(F, G)
        length_change = abs(homotopy_length(G) - base_length)

        if min_gap > GAP_FLOOR and distance <= delta and length_change <= delta:
            logger.info(
                "Nhiễu chấp nhận ở lần %d: khe nhỏ nhất %.3e, ‖G−F‖ = %.3e, Δlength = %.3e, ghim s=1: %s",
                attempt, min_gap, distance, length_change, pinned_row,
            )
            G.meta.update(
                perturbation={
                    "delta": delta,
                    "attempt": attempt,
                    "sup_distance": distance,
                    "length_change": length_change,
                    "min_gap": min_gap,
                    "pinned_row": pinned_row,
                    "pin": pin,
                }
            )
            return G

        logger.debug(
            "Lần nhiễu %d bị loại: khe %.3e, ‖G−F‖ = %.3e, Δlength = %.3e",
            attempt, min_gap, distance, length_change,
        )

    raise PerturbationFailed(
        f"Không tách được phổ sau {max_retries} lần thử; khe nhỏ nhất đạt {best_gap:.3e}.",
        {"best_gap": best_gap, "retries": max_retries},
    )

# =========================================================
# branch_tracking.py: Bám nhánh trị riêng liên tục trên lưới (s, t)
# =========================================================

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from log.log import get_logger
from module.circle_lifting import ARC_GAP_LIMIT, chord, wrap_array
from module.error_utils import AmbiguousMatching, BranchCut, InvalidParameter, TooFarApart
from module.unitary_core import (
    DELTA0,
    GAP_FLOOR,
    UnitaryHomotopy,
    spectra_batch,
    spectral_gaps,
    try_diagonal_form,
    unitary_log,
)

logger = get_logger(__name__)

MAX_BISECTION_DEPTH = 20
ROW_CONTINUITY_LIMIT = math.pi / 2


@dataclass
class BranchSet:
    """
    k mặt nâng góc φ_j(s_i, t_l) trên các cột t được bám.

    lifts có shape (k, S, m); t_index là chỉ số cột trong lưới gốc.
    """

    s_grid: np.ndarray
    t_grid: np.ndarray
    t_index: np.ndarray
    lifts: np.ndarray
    gap: float
    bisections: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return int(self.lifts.shape[0])

    def branch(self, j: int) -> np.ndarray:
        if not 0 <= j < self.k:
            raise InvalidParameter(f"Chỉ số nhánh {j} nằm ngoài [0, {self.k}).")
        return self.lifts[j]


# ------------------------------
# Khe phổ
# ------------------------------
def min_spectral_gap(F: UnitaryHomotopy, t_window: Optional[Tuple[float, float]] = None) -> float:
    """min trên các nút của khoảng cách dây cung nhỏ nhất giữa hai trị riêng."""
    cols = window_columns(F.t_grid, t_window)
    return float(F.node_gaps()[:, cols].min())


def window_columns(t_grid, t_window=None) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_window is None:
        return np.arange(t_grid.size)
    lo, hi = (float(x) for x in t_window)
    if not lo <= hi:
        raise InvalidParameter(f"Cửa sổ t không hợp lệ: [{lo}, {hi}].")
    cols = np.flatnonzero((t_grid >= lo - 1e-12) & (t_grid <= hi + 1e-12))
    if cols.size == 0:
        raise InvalidParameter(f"Cửa sổ t [{lo}, {hi}] không chứa điểm lưới nào.")
    return cols


# ------------------------------
# Đoạn trắc địa giữa hai nút (để chia đôi bước)
# ------------------------------
class _Segment:
    """Các đoạn trắc địa A·exp(iτH) giữa hai dãy nút, tính phổ tại τ bất kỳ."""

    def __init__(self, F: UnitaryHomotopy, node_a, node_b):
        # node_a, node_b: (chỉ số s, mảng chỉ số t) cùng độ dài m
        self.F = F
        self.node_a = node_a
        self.node_b = node_b
        if F.is_diagonal:
            a = F.angles[node_a[0], node_a[1]]
            b = F.angles[node_b[0], node_b[1]]
            step = wrap_array(b - a)
            if np.any(np.abs(step) >= ARC_GAP_LIMIT):
                raise TooFarApart("Hai nút liền kề cách nhau quá xa; cần làm mịn lưới.")
            self._a, self._step = a, step
        else:
            self._A = F.matrices[node_a[0], node_a[1]]
            self._B = F.matrices[node_b[0], node_b[1]]
            self._eig = {}

    def _log_eig(self, idx: int):
        if idx not in self._eig:
            D = self._A[idx].conj().T @ self._B[idx]
            w, V = np.linalg.eigh(unitary_log(D))
            self._eig[idx] = (w, V)
        return self._eig[idx]

    def spectrum(self, tau: float, rows: np.ndarray) -> np.ndarray:
        if self.F.is_diagonal:
            return wrap_array(self._a[rows] + tau * self._step[rows])
        mats = []
        for idx in rows:
            w, V = self._log_eig(int(idx))
            mats.append(self._A[idx] @ (V * np.exp(1j * tau * w)[None, :]) @ V.conj().T)
        return spectra_batch(np.asarray(mats))


def _forced_match(lifts: np.ndarray, target: np.ndarray):
    """
    Ghép cưỡng bức nút hiện tại (lifts, shape (m, n)) với phổ kế tiếp (m, n).
    Trả về (ok theo từng dòng, lifts mới).
    """
    D = chord(lifts[:, :, None], target[:, None, :])
    nearest = np.argmin(D, axis=2)
    movement = np.take_along_axis(D, nearest[:, :, None], axis=2)[:, :, 0]

    gap = np.minimum(spectral_gaps(lifts), spectral_gaps(target))
    limit = np.minimum(gap / 2.0, DELTA0)
    bijective = np.all(np.sort(nearest, axis=1) == np.arange(lifts.shape[1])[None, :], axis=1)
    ok = bijective & np.all(movement < limit[:, None], axis=1) & (gap > GAP_FLOOR)

    chosen = np.take_along_axis(target, nearest, axis=1)
    return ok, lifts + wrap_array(chosen - lifts)


def _advance(segment: _Segment, lifts, rows, tau0, tau1, spec1, depth, counter, node_label):
    """Đi từ τ0 tới τ1 cho các dòng `rows`; chia đôi những dòng chưa ghép được."""
    ok, moved = _forced_match(lifts, spec1)
    out = moved
    if np.all(ok):
        return out

    bad = np.flatnonzero(~ok)
    if depth >= MAX_BISECTION_DEPTH:
        node = node_label(rows[bad[0]])
        raise AmbiguousMatching(
            f"Không ghép được nhánh tại nút {node} sau {MAX_BISECTION_DEPTH} lần chia đôi.",
            {"node": node, "tau": [tau0, tau1]},
        )

    counter[0] += 1
    mid = 0.5 * (tau0 + tau1)
    sub_rows = rows[bad]
    try:
        spec_mid = segment.spectrum(mid, sub_rows)
    except BranchCut as exc:
        # A*B có trị riêng tại −1: đoạn trắc địa giữa hai nút không xác định
        node = node_label(rows[bad[0]])
        raise AmbiguousMatching(
            f"Không chia đôi được bước tại nút {node}: hai nút liền kề đối xứng qua −1.",
            {"node": node, "tau": [tau0, tau1]},
        ) from exc
    half = _advance(segment, lifts[bad], sub_rows, tau0, mid, spec_mid, depth + 1, counter, node_label)
    out[bad] = _advance(segment, half, sub_rows, mid, tau1, spec1[bad], depth + 1, counter, node_label)
    return out


# ------------------------------
# Bám theo cột s
# ------------------------------
def _track_columns(F, cols, start_lifts, spectra, counter):
    """Bám dọc s cho một khối cột; start_lifts (m, n) tại s = 0."""
    S = F.s_grid.size
    m, n = start_lifts.shape
    out = np.empty((S, m, n))
    out[0] = start_lifts
    rows = np.arange(m)

    for i in range(S - 1):
        segment = _Segment(F, (i, cols), (i + 1, cols))

        def label(r, i=i):
            return {"s_index": i + 1, "t_index": int(cols[r])}

        out[i + 1] = _advance(segment, out[i], rows, 0.0, 1.0, spectra[i + 1], 0, counter, label)
    return out


def _track_base_row(F, cols, spectra0, counter) -> np.ndarray:
    """Bám dọc t ở hàng s = 0, bắt đầu từ nút (0, cols[0])."""
    m = cols.size
    n = F.dim
    lifts = np.empty((m, n))
    base = np.sort(wrap_array(spectra0[0]))
    if np.all(np.abs(base) < 1e-12):
        base = np.zeros(n)
    lifts[0] = base

    for l in range(m - 1):
        segment = _Segment(F, (0, cols[l:l + 1]), (0, cols[l + 1:l + 2]))

        def label(_, l=l):
            return {"s_index": 0, "t_index": int(cols[l + 1])}

        lifts[l + 1] = _advance(
            segment, lifts[l:l + 1], np.zeros(1, dtype=int), 0.0, 1.0,
            spectra0[l + 1:l + 2], 0, counter, label,
        )[0]
    return lifts


def _check_rows(lifts: np.ndarray, cols) -> None:
    """Kiểm tra nhất quán dọc t tại mọi hàng s."""
    # lifts: (S, m, n)
    if lifts.shape[1] < 2:
        return
    step = lifts[:, 1:, :] - lifts[:, :-1, :]
    bad = np.argwhere(np.abs(step) >= ROW_CONTINUITY_LIMIT)
    if bad.size:
        i, l, j = (int(x) for x in bad[0])
        node = {"s_index": i, "t_index": int(cols[l + 1]), "branch": j}
        raise AmbiguousMatching(f"Nhánh {j} nhảy gián đoạn theo t tại nút {node}.", {"node": node})

    labels = np.arange(lifts.shape[2])
    for i in range(lifts.shape[0]):
        left = lifts[i, :-1, :]
        right = lifts[i, 1:, :]
        D = chord(left[:, :, None], right[:, None, :])
        nearest = np.argmin(D, axis=-1)
        movement = np.min(D, axis=-1)
        gap = np.minimum(spectral_gaps(left), spectral_gaps(right))
        forced = np.all(movement < np.minimum(gap / 2.0, DELTA0)[:, None], axis=-1)
        mislabeled = forced & np.any(nearest != labels, axis=-1)
        if np.any(mislabeled):
            l = int(np.flatnonzero(mislabeled)[0])
            node = {"s_index": i, "t_index": int(cols[l + 1])}
            raise AmbiguousMatching(
                f"Nhãn nhánh theo cột s mâu thuẫn với ghép cưỡng bức theo t tại nút {node}.",
                {"node": node},
            )


def _unwrap_slots(F: UnitaryHomotopy, cols) -> np.ndarray:
    """
    Dạng chéo: mỗi slot đã là một hàm góc liên tục giữa các nút, nên nhánh là
    phép nâng từng slot, dọc t ở hàng s = 0 rồi dọc s trên từng cột → (S, m, n).
    Nhãn nhánh theo thứ tự góc tại nút (0, cols[0]), như đường ghép cưỡng bức.
    """
    angles = F.angles[:, cols, :]
    start = wrap_array(angles[0, 0])
    order = np.argsort(start, kind="stable")
    angles = angles[:, :, order]
    start = start[order]
    if np.all(np.abs(start) < 1e-12):
        start = np.zeros_like(start)

    t_steps = wrap_array(np.diff(angles[0], axis=0))      # (m − 1, n)
    s_steps = wrap_array(np.diff(angles, axis=0))         # (S − 1, m, n)
    for steps, axis in ((t_steps, "t"), (s_steps, "s")):
        if steps.size and float(np.max(np.abs(steps))) >= ARC_GAP_LIMIT:
            raise TooFarApart(f"Hai nút liền kề theo {axis} cách nhau quá xa; cần làm mịn lưới.")

    base = start[None, :] + np.concatenate([np.zeros((1, start.size)), np.cumsum(t_steps, axis=0)])
    return base[None, :, :] + np.concatenate([np.zeros((1,) + base.shape), np.cumsum(s_steps, axis=0)])


def track_branches(
    F: UnitaryHomotopy,
    t_window: Optional[Tuple[float, float]] = None,
    threads: int = 1,
    force_matching: bool = False,
) -> BranchSet:
    """
    Dựng k nhánh nâng liên tục bằng ghép bottleneck cưỡng bức giữa các nút kề nhau:
    trước hết theo t ở hàng s = 0, sau đó theo s trên từng cột t (trong cửa sổ).
    Bước nào có dịch chuyển ≥ gap/2 thì chia đôi theo đoạn trắc địa, tối đa 20 lần.

    Đồng luân dạng chéo (hoặc dày nhưng giao hoán, qua try_diagonal_form) đi đường
    nâng từng slot, không cần ghép; `force_matching=True` luôn dùng ghép cưỡng bức.
    """
    if not force_matching:
        F = try_diagonal_form(F)
    cols = window_columns(F.t_grid, t_window)
    gaps = F.node_gaps()[:, cols]
    gap = float(gaps.min())
    if gap <= GAP_FLOOR:
        i, l = np.unravel_index(int(np.argmin(gaps)), gaps.shape)
        node = {"s_index": int(i), "t_index": int(cols[l])}
        raise AmbiguousMatching(
            f"Phổ không đơn tại nút {node} (khe {gap:.2e}); cần nhiễu trước khi bám nhánh.",
            {"node": node, "gap": gap},
        )

    S = F.s_grid.size
    counter = [0]
    if F.is_diagonal and not force_matching:
        method = "slot_unwrap"
        lifts = _unwrap_slots(F, cols)
    else:
        method = "forced_matching"
        lifts = _match_lifts(F, cols, threads, counter)
    _check_rows(lifts, cols)

    B = BranchSet(
        s_grid=F.s_grid.copy(),
        t_grid=F.t_grid[cols].copy(),
        t_index=cols,
        lifts=np.transpose(lifts, (2, 0, 1)).copy(),
        gap=gap,
        bisections=counter[0],
        meta={"method": method},
    )
    logger.info(
        "Đã bám %d nhánh trên lưới %dx%d (%s, khe nhỏ nhất %.3e, %d lần chia đôi)",
        B.k, S, cols.size, method, gap, B.bisections,
    )
    return B


def _match_lifts(F: UnitaryHomotopy, cols, threads: int, counter) -> np.ndarray:
    """Ghép cưỡng bức: hàng s = 0 theo t, rồi các khối cột theo s (song song theo luồng)."""
    S = F.s_grid.size
    spectra = np.stack([F.row_spectra(i, cols) for i in range(S)])  # (S, m, n)
    base = _track_base_row(F, cols, spectra[0], counter)

    threads = max(1, int(threads))
    chunks = [c for c in np.array_split(np.arange(cols.size), threads) if c.size]

    def run(chunk):
        local = [0]
        lifts = _track_columns(F, cols[chunk], base[chunk], spectra[:, chunk], local)
        return lifts, local[0]

    if len(chunks) == 1:
        results = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(run, chunks))

    counter[0] += sum(r[1] for r in results)
    return np.concatenate([r[0] for r in results], axis=1)  # (S, m, n)


# ------------------------------
# Cận dưới theo nhánh
# ------------------------------
def branch_displacement_bound(B: BranchSet, j: int) -> float:
    """max_t |φ_j(1, t) − φ_j(0, t)|."""
    phi = B.branch(j)
    return float(np.max(np.abs(phi[-1] - phi[0])))


def branch_length(B: BranchSet, j: int) -> float:
    """Σ_i max_t chord(φ_j(s_{i+1}, t), φ_j(s_i, t))."""
    phi = B.branch(j)
    if phi.shape[0] < 2:
        return 0.0
    return float(np.sum(np.max(chord(phi[1:], phi[:-1]), axis=1)))


def circle_bottleneck(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Bottleneck dây cung giữa hai đa tập góc cùng cỡ trên đường tròn, theo dòng
    ((m, n), (m, n) → (m,)). Có ghép tối ưu là một phép quay vòng của thứ tự
    đã sắp, nên chỉ cần thử n phép quay.
    """
    a = np.sort(wrap_array(np.atleast_2d(a)), axis=-1)
    b = np.sort(wrap_array(np.atleast_2d(b)), axis=-1)
    n = a.shape[-1]
    best = np.full(a.shape[0], np.inf)
    for shift in range(n):
        best = np.minimum(best, np.max(chord(np.roll(a, shift, axis=-1), b), axis=-1))
    return best


def multiset_consistency(B: BranchSet, F: UnitaryHomotopy) -> float:
    """max trên mọi nút của bottleneck dây cung giữa {e^{iφ_j}} và phổ của F."""
    worst = 0.0
    for i in range(F.s_grid.size):
        lifted = B.lifts[:, i, :].T
        spectrum = F.row_spectra(i, B.t_index)
        worst = max(worst, float(circle_bottleneck(lifted, spectrum).max()))
    return worst


def common_node_agreement(coarse: BranchSet, fine: BranchSet) -> float:
    """Sai lệch lớn nhất giữa hai tập nhánh trên các nút (s, t) chung."""
    s_common, s_i, s_j = np.intersect1d(coarse.s_grid, fine.s_grid, return_indices=True)
    t_common, t_i, t_j = np.intersect1d(coarse.t_grid, fine.t_grid, return_indices=True)
    if s_common.size == 0 or t_common.size == 0:
        raise InvalidParameter("Hai lưới không có nút chung.")
    a = coarse.lifts[:, s_i][:, :, t_i]
    b = fine.lifts[:, s_j][:, :, t_j]
    return float(np.max(np.abs(a - b)))


def branches_to_frame(
    B: BranchSet, branches: Optional[Sequence[int]] = None, max_nodes: int = 101
) -> pd.DataFrame:
    """Xuất mẫu nhánh dạng bảng (j, s, t, phi), lấy thưa để vẽ."""
    branches = range(B.k) if branches is None else branches
    s_idx = np.unique(np.linspace(0, B.s_grid.size - 1, min(max_nodes, B.s_grid.size)).astype(int))
    t_idx = np.unique(np.linspace(0, B.t_grid.size - 1, min(max_nodes, B.t_grid.size)).astype(int))
    ss, tt = np.meshgrid(s_idx, t_idx, indexing="ij")

    frames = []
    for j in branches:
        phi = B.branch(int(j))
        frames.append(pd.DataFrame({
            "j": int(j),
            "s": B.s_grid[ss.ravel()],
            "t": B.t_grid[tt.ravel()],
            "phi": phi[ss.ravel(), tt.ravel()],
        }))
    if not frames:
        return pd.DataFrame(columns=["j", "s", "t", "phi"])
    return pd.concat(frames, ignore_index=True)

# =========================================================
# corpus.py: Bộ đồng luân đối kháng có seed
# =========================================================
# Tất cả đều có dạng giao hoán V·diag(e^{iφ(s,t)})·V* để bám nhánh nhanh.

import math
from typing import Callable, List, Optional, Tuple

import numpy as np

from log.log import get_logger
from module.circle_lifting import TWO_PI
from module.error_utils import InvalidParameter
from module.examples_goodearl import AffineAngleFamily, build_example_u, sorted_branch_functions
from module.unitary_core import UnitaryHomotopy, random_unitary

logger = get_logger(__name__)

KINDS = ("geodesic", "detour", "conjugation", "reparameterization")
LOOP_AMPLITUDE = 0.5


def terminal_angles(f: AffineAngleFamily, t_grid) -> np.ndarray:
    """Góc các slot (đã sắp theo hạng) của f trên lưới t → (T, L)."""
    sb = sorted_branch_functions(f, t_grid)
    return sb.as_array() * TWO_PI


def commuting_homotopy(
    s_grid,
    t_grid,
    terminal: np.ndarray,
    profile: Callable[[np.ndarray], np.ndarray],
    loop: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    loop_direction: Optional[np.ndarray] = None,
    basis: Optional[np.ndarray] = None,
    meta: Optional[dict] = None,
) -> UnitaryHomotopy:
    """φ(s, t) = ρ(s)·terminal(t) + λ(s)·p, trong cơ sở cố định V."""
    s_grid = np.asarray(s_grid, dtype=float)
    rho = np.asarray(profile(s_grid), dtype=float)
    if abs(rho[0]) > 1e-12 or abs(rho[-1] - 1.0) > 1e-12:
        raise InvalidParameter("Profile phải đi từ 0 tới 1.")
    angles = rho[:, None, None] * terminal[None, :, :]
    if loop is not None:
        lam = np.asarray(loop(s_grid), dtype=float)
        angles = angles + lam[:, None, None] * np.asarray(loop_direction, dtype=float)[None, None, :]
    return UnitaryHomotopy.diagonal(s_grid, t_grid, angles, basis, meta)


def _detour_profiles() -> Tuple[Callable, Callable]:
    def profile(s):
        return np.where(s <= 0.5, 0.0, 2.0 * s - 1.0)

    def loop(s):
        # vòng kín độ dài 1: λ đi 0 → ½ → 0 trên [0, ½]
        return np.where(s <= 0.5, LOOP_AMPLITUDE * np.sin(TWO_PI * s), 0.0)

    return profile, loop


def _loop_direction(rng: np.random.Generator, n: int) -> np.ndarray:
    """Hướng vòng p: tăng theo hạng, max|p| = 1."""
    p = np.sort(rng.uniform(-1.0, 1.0, n))
    return p / np.max(np.abs(p))


def _reparameterization(rng: np.random.Generator) -> Callable:
    c = float(rng.uniform(-0.5, 0.5))

    def profile(s):
        return s + c * np.sin(TWO_PI * s) / TWO_PI

    return profile


def build_corpus_homotopy(
    kind: str,
    seed: int,
    grid: Tuple[int, int] = (240, 240),
    family: Optional[AffineAngleFamily] = None,
) -> UnitaryHomotopy:
    """Một đồng luân từ 1 tới f (mặc định: u của ví dụ 10×10)."""
    if kind not in KINDS:
        raise InvalidParameter(f"Loại đồng luân không hỗ trợ: {kind!r}. Chọn một trong {KINDS}.")
    family = family or build_example_u()
    rng = np.random.default_rng(seed)
    s_grid = np.linspace(0.0, 1.0, int(grid[0]))
    t_grid = np.linspace(0.0, 1.0, int(grid[1]))
    terminal = terminal_angles(family, t_grid)
    n = terminal.shape[1]
    meta = {"kind": kind, "seed": int(seed), "family": family.meta}

    if kind == "geodesic":
        return commuting_homotopy(s_grid, t_grid, terminal, lambda s: s, meta=meta)

    if kind == "detour":
        profile, loop = _detour_profiles()
        return commuting_homotopy(
            s_grid, t_grid, terminal, profile, loop, _loop_direction(rng, n),
            basis=random_unitary(n, rng), meta=meta,
        )

    if kind == "conjugation":
        return commuting_homotopy(
            s_grid, t_grid, terminal, lambda s: s, basis=random_unitary(n, rng), meta=meta
        )

    return commuting_homotopy(
        s_grid, t_grid, terminal, _reparameterization(rng),
        basis=random_unitary(n, rng) if rng.uniform() < 0.5 else None, meta=meta,
    )


def adversarial_corpus(count: int = 20, seed: int = 0, grid: Tuple[int, int] = (240, 240)) -> List[UnitaryHomotopy]:
    """`count` đồng luân từ 1 tới u, xoay vòng giữa các loại đối kháng."""
    kinds = KINDS[1:]
    corpus = [build_corpus_homotopy(kinds[i % len(kinds)], seed + i, grid) for i in range(count)]
    logger.debug("Đã dựng bộ đối kháng %d đồng luân", len(corpus))
    return corpus


# ------------------------------
# Đồng luân có va chạm trị riêng
# ------------------------------
def collision_homotopy(
    seed: int, n: int = 4, grid: Tuple[int, int] = (40, 40), pinned: bool = False, dense: bool = False
) -> UnitaryHomotopy:
    """
    Đồng luân có trị riêng trùng tại một số nút.

    pinned=True: hàng s = 1 có phổ đơn (hệ số chặn cách nhau), va chạm nằm bên trong.
    pinned=False: hàng s = 1 có slot lặp lại.
    """
    if n < 2:
        raise InvalidParameter("Cần n ≥ 2 để có va chạm trị riêng.")
    rng = np.random.default_rng(seed)
    s_grid = np.linspace(0.0, 1.0, int(grid[0]))
    t_grid = np.linspace(0.0, 1.0, int(grid[1]))

    if pinned:
        slope = float(rng.uniform(-2.0, 2.0))
        intercepts = np.linspace(-0.6 * math.pi, 0.6 * math.pi, n) + rng.uniform(-0.05, 0.05, n)
        terminal = slope * t_grid[:, None] + intercepts[None, :]
        bump = rng.uniform(-1.0, 1.0, n)
        angles = (
            s_grid[:, None, None] * terminal[None, :, :]
            + np.sin(math.pi * s_grid)[:, None, None] * bump[None, None, :]
        )
    else:
        base = rng.uniform(-3.0, 3.0, max(1, n // 2))
        slopes = np.resize(base, n)
        terminal = slopes[None, :] * t_grid[:, None]
        angles = s_grid[:, None, None] * terminal[None, :, :]

    F = UnitaryHomotopy.diagonal(
        s_grid, t_grid, angles, random_unitary(n, rng),
        {"kind": "collision", "seed": int(seed), "pinned": pinned},
    )
    return F.to_dense() if dense else F


def collision_corpus(count: int = 20, seed: int = 0, grid: Tuple[int, int] = (40, 40)) -> List[UnitaryHomotopy]:
    return [
        collision_homotopy(seed + i, n=2 + i % 4, grid=grid, pinned=bool(i % 2), dense=(i % 5 == 4))
        for i in range(count)
    ]

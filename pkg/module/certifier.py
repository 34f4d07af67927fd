# =========================================================
# certifier.py: Chứng chỉ cận cel: cận dưới theo nhánh, cận trên, lan truyền
# =========================================================

import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from log.log import get_logger
from module.branch_tracking import (
    BranchSet,
    branch_displacement_bound,
    track_branches,
)
from module.circle_lifting import TWO_PI, chord, chord_to_arc, lift_circle_path, wrap_array
from module.error_utils import (
    BranchCut,
    BranchNotFound,
    EpsOutOfRange,
    GapTooLarge,
    InadmissibleStage,
    InvalidParameter,
    ensure_finite,
    guard_pipeline,
)
from module.examples_goodearl import (
    AffineAngleFamily,
    GoodearlStage,
    build_example_u,
    build_near_2pi_family,
    build_u_eps,
    check_middle_branch,
    family_distance,
    family_to_homotopy,
    goodearl_image,
    pinned_rank_offsets,
    validate_eps,
    w_tilde_distance,
)
from module.unitary_core import (
    DELTA0,
    EPS1,
    UnitaryHomotopy,
    homotopy_length,
    operator_norm,
    perturb_to_simple_spectrum,
    reference_angles,
    reference_column,
    try_diagonal_form,
    unitary_log,
)

logger = get_logger(__name__)

SCHEMA_VERSION = "1.0"
DEFAULT_DELTA = 0.001
DEFAULT_WINDOW = 0.0025
TARGET_TOLERANCE = 1e-9
MODES = ("norm_perturbation", "conjugation")


# ==========================================================
# KIỂU DỮ LIỆU
# ==========================================================
@dataclass(frozen=True)
class SlackItem:
    name: str
    value: float


@dataclass(frozen=True)
class TargetBranch:
    """Hàm góc đích t ↦ slope·t + intercept và cửa sổ cô lập [lo, hi]."""

    slope: float
    intercept: float = 0.0
    window: Tuple[float, float] = (DEFAULT_WINDOW, 1.0 - DEFAULT_WINDOW)
    upper_bound: Optional[float] = None
    tolerance: float = TARGET_TOLERANCE
    description: str = ""

    def __post_init__(self):
        ensure_finite(self.slope, "slope")
        ensure_finite(self.intercept, "intercept")
        lo, hi = (float(x) for x in self.window)
        if not 0.0 <= lo <= hi <= 1.0:
            raise InvalidParameter(f"Cửa sổ cô lập phải nằm trong [0, 1], nhận [{lo}, {hi}].")
        object.__setattr__(self, "window", (lo, hi))

    @classmethod
    def isolated(cls, slope, intercept=0.0, width=DEFAULT_WINDOW, **kwargs) -> "TargetBranch":
        width = ensure_finite(width, "window")
        if not 0.0 <= width < 0.5:
            raise InvalidParameter(f"Độ rộng cửa sổ phải trong [0, 0.5), nhận {width}.")
        return cls(slope, intercept, (width, 1.0 - width), **kwargs)

    def value(self, t):
        return self.slope * np.asarray(t, dtype=float) + self.intercept

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "window": list(self.window),
            "description": self.description,
        }


@dataclass
class CelCertificate:
    target: dict
    lower_bound: float
    upper_bound: Optional[float] = None
    slack: List[SlackItem] = field(default_factory=list)
    provenance: List[str] = field(default_factory=list)
    seed: Optional[int] = None
    grids: dict = field(default_factory=dict)
    length: Optional[float] = None
    extras: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION
    branches: Optional[BranchSet] = field(default=None, repr=False, compare=False)

    @property
    def total_slack(self) -> float:
        return float(sum(item.value for item in self.slack))

    @property
    def bracket_width(self) -> Optional[float]:
        if self.upper_bound is None:
            return None
        return float(self.upper_bound - self.lower_bound)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "target": self.target,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "length": self.length,
            "slack": [asdict(item) for item in self.slack],
            "provenance": list(self.provenance),
            "seed": self.seed,
            "grids": self.grids,
            "extras": self.extras,
        }


# ==========================================================
# CẬN TRÊN: MỘT HÀM MŨ
# ==========================================================
def _continuous_log_norm_diagonal(angles: np.ndarray) -> float:
    """sup_t max_k |h_k(t)| với h_k là phép nâng liên tục từ log chính tại t đầu."""
    worst = 0.0
    for k in range(angles.shape[1]):
        column = angles[:, k]
        lift = lift_circle_path(column, float(wrap_array(column[0])))
        worst = max(worst, float(np.max(np.abs(lift.values))))
    return worst


def _dense_path_log_norm(mats: np.ndarray) -> float:
    logs = [unitary_log(M) for M in mats]
    for a, b in zip(logs[:-1], logs[1:]):
        if operator_norm(b - a) > math.pi / 2:
            raise BranchCut("Logarit chính gián đoạn dọc đường đi; phổ vượt qua −1.")
    return float(max(operator_norm(H) for H in logs))


def upper_bound_single_exponential(path: Union[AffineAngleFamily, UnitaryHomotopy, np.ndarray]) -> float:
    """
    sup_t ‖h(t)‖ với u(t) = exp(i·h(t)), h liên tục; cel(u) ≤ giá trị này.

    - AffineAngleFamily: h là chính các hàm góc (cực đại tại đầu mút t).
    - UnitaryHomotopy: dùng hàng s = 1 làm đường đi.
    - mảng (T, n, n): đường đi dày, log chính tại từng t.
    """
    if isinstance(path, AffineAngleFamily):
        return float(max(max(abs(t.intercept), abs(t.slope + t.intercept)) for t in path.terms))

    if isinstance(path, UnitaryHomotopy):
        S = path.s_grid.size
        if path.is_diagonal:
            return _continuous_log_norm_diagonal(path.angles[S - 1])
        return _dense_path_log_norm(path.matrices[S - 1])

    mats = np.asarray(path, dtype=complex)
    if mats.ndim != 3:
        raise InvalidParameter("Đường đi dày phải có shape (T, n, n).")
    return _dense_path_log_norm(mats)


# ==========================================================
# LAN TRUYỀN CẬN
# ==========================================================
def propagate_cel_bounds(bound: float, eps: float, mode: str) -> float:
    """
    norm_perturbation: ‖a − b‖ < ε < 1 ⇒ cel(b) ≥ cel(a) − επ/2.
    conjugation: cel(uau*) = cel(a).
    """
    bound = ensure_finite(bound, "bound")
    if mode == "conjugation":
        return bound
    if mode != "norm_perturbation":
        raise InvalidParameter(f"Chế độ không hỗ trợ: {mode!r}. Chọn một trong {MODES}.")
    eps = ensure_finite(eps, "eps")
    if not 0.0 <= eps < 1.0:
        raise EpsOutOfRange(f"eps phải nằm trong [0, 1), nhận được {eps}.", {"eps": eps})
    return bound - eps * math.pi / 2.0


# ==========================================================
# CẬN DƯỚI THEO NHÁNH
# ==========================================================
def _identity_residual(F: UnitaryHomotopy) -> float:
    if F.is_diagonal:
        return float(np.max(chord(F.angles[0], 0.0)))
    n = F.dim
    return float(np.max(operator_norm(F.matrices[0] - np.eye(n))))


def _max_node_step(F: UnitaryHomotopy) -> float:
    if F.is_diagonal:
        return float(np.max(chord(F.angles[1:], F.angles[:-1]))) if F.s_grid.size > 1 else 0.0
    return float(max(
        (float(np.max(operator_norm(F.matrices[i + 1] - F.matrices[i]))) for i in range(F.s_grid.size - 1)),
        default=0.0,
    ))


def _pin_rank(F: UnitaryHomotopy, target: TargetBranch) -> int:
    """Vị trí (theo reference_angles tăng) của slot F_1(t_ref) gần đích nhất."""
    l_ref = reference_column(F.t_grid)
    angles = np.sort(reference_angles(F, l_ref), kind="stable")
    return int(np.argmin(chord(angles, target.value(F.t_grid[l_ref]))))


def _identify_branch(B: BranchSet, target: TargetBranch, budget: float) -> Tuple[int, float, int]:
    terminal = B.lifts[:, -1, :]                        # (k, m)
    goal = target.value(B.t_grid)[None, :]
    residual = np.max(chord(terminal, goal), axis=1)
    matches = np.flatnonzero(residual <= budget)
    if matches.size == 0:
        raise BranchNotFound(
            f"Không nhánh nào khớp đích trên cửa sổ (sai lệch nhỏ nhất {residual.min():.3e} > {budget:.3e}).",
            {"best_residual": float(residual.min()), "budget": budget},
        )
    if matches.size > 1:
        logger.warning("Có %d nhánh cùng khớp đích; chọn nhánh sai lệch nhỏ nhất.", matches.size)
    j = int(matches[np.argmin(residual[matches])])
    return j, float(residual[j]), int(matches.size)


def _closed_form_core(target: TargetBranch, m: int) -> float:
    return float(max(abs(target.intercept + TWO_PI * m), abs(target.slope + target.intercept + TWO_PI * m)))


def _certify_lower_bound(
    F: UnitaryHomotopy,
    target: TargetBranch,
    delta: float = DEFAULT_DELTA,
    seed: Optional[int] = 0,
    threads: int = 1,
) -> CelCertificate:
    delta = ensure_finite(delta, "delta")
    if delta <= 0:
        raise InvalidParameter(f"delta phải dương, nhận được {delta}.")

    start_residual = _identity_residual(F)
    if start_residual > 1e-9:
        raise InvalidParameter(
            f"Hàng s = 0 phải là đơn vị (sai lệch {start_residual:.3e}).",
            {"residual": start_residual},
        )
    F = try_diagonal_form(F)

    provenance = [
        "homotopy length as supremum-norm chord sum over the s-grid",
        "eigenvalue branches via forced bottleneck matching (movement < gap/2)",
        "branch length bounds homotopy length; winding displacement bounds branch arc length",
    ]

    pin = _pin_rank(F, target)
    G = perturb_to_simple_spectrum(F, delta, seed=seed, pin=pin)
    perturbed = G is not F
    info = G.meta.get("perturbation", {}) if perturbed else {}
    pinned = bool(info.get("pinned_row", False))

    step = _max_node_step(G)
    if step > DELTA0:
        raise GapTooLarge(
            f"Bước lưới theo s lớn nhất {step:.4f} vượt δ₀ = {DELTA0}; cần làm mịn lưới s.",
            {"max_step": step},
        )

    B = track_branches(G, target.window, threads=threads)

    start_chord = delta if perturbed else 0.0
    end_chord = (delta if perturbed and not pinned else 0.0) + target.tolerance
    j, end_residual, n_matches = _identify_branch(B, target, end_chord)

    phi = B.branch(j)
    start_measured = float(np.max(chord(phi[0], 0.0)))
    if start_measured > start_chord + 1e-9:
        raise BranchNotFound(
            f"Nhánh {j} không xuất phát gần 1 (sai lệch {start_measured:.3e}).",
            {"branch": j, "start_residual": start_measured},
        )

    goal = target.value(B.t_grid)
    displacement = phi[-1] - phi[0]
    m = int(np.round(np.median((displacement - goal) / TWO_PI)))

    core_window = float(np.max(np.abs(goal + TWO_PI * m)))
    core_full = _closed_form_core(target, m)
    r_start = float(chord_to_arc(start_chord))
    r_end = float(chord_to_arc(end_chord))
    length_F = homotopy_length(F)
    length_change = abs(homotopy_length(G) - length_F) if perturbed else 0.0

    scale = 1.0 + EPS1
    raw = (core_window - r_start - r_end) / scale - length_change
    lower = max(0.0, raw)

    slack = [
        SlackItem("grid_window", max(0.0, core_full - core_window)),
        SlackItem("chord_arc", core_window * EPS1 / scale),
        SlackItem("perturbation_start", r_start / scale),
        SlackItem("perturbation_end", r_end / scale),
        SlackItem("length_change", length_change),
    ]
    if perturbed:
        provenance.append("simple-spectrum perturbation within delta in sup norm and length")
    if pinned:
        provenance.append("terminal row pinned: perturbation fades to zero at s = 1")
    provenance.append("chord-to-arc correction 1 + eps1 at the delta0 = 0.1 step threshold")

    upper = target.upper_bound
    if upper is None:
        try:
            upper = upper_bound_single_exponential(F)
        except BranchCut:
            upper = None

    measured_disp = branch_displacement_bound(B, j)
    cert = CelCertificate(
        target=dict(target.to_dict(), winding=m),
        lower_bound=lower,
        upper_bound=upper,
        slack=slack,
        provenance=provenance,
        seed=seed,
        grids={"s": int(F.s_grid.size), "t": int(F.t_grid.size), "window_columns": int(B.t_grid.size)},
        length=length_F,
        extras={
            "branch": j,
            "matching_branches": n_matches,
            "winding": m,
            "delta": delta,
            "pin": pin,
            "perturbed": perturbed,
            "pinned_row": pinned,
            "end_residual": end_residual,
            "start_residual": start_measured,
            "displacement": measured_disp,
            "core_full": core_full,
            "min_gap": B.gap,
            "bisections": B.bisections,
        },
    )
    logger.info(
        "Chứng chỉ: cận dưới %.6f (nhánh %d, winding %d), độ dài đo %.6f",
        lower, j, m, length_F,
    )
    cert.branches = B
    return cert


certify_lower_bound = guard_pipeline(_certify_lower_bound, "chứng nhận cận dưới")


# ==========================================================
# LƯỚI
# ==========================================================
def make_grids(grid: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    S, T = (int(x) for x in grid)
    if S < 2 or T < 2:
        raise InvalidParameter("Mỗi chiều của lưới phải có ít nhất 2 điểm.")
    return np.linspace(0.0, 1.0, S), np.linspace(0.0, 1.0, T)


def example_310_homotopy(grid: Tuple[int, int] = (400, 400)) -> UnitaryHomotopy:
    s, t = make_grids(grid)
    return family_to_homotopy(build_example_u(), [], s, t)


def certify_example_310(
    grid: Tuple[int, int] = (400, 400),
    delta: float = DEFAULT_DELTA,
    window: float = DEFAULT_WINDOW,
    seed: Optional[int] = 0,
    threads: int = 1,
) -> CelCertificate:
    u = build_example_u()
    target = TargetBranch.isolated(
        -TWO_PI * 9 / 10, 0.0, window,
        upper_bound=upper_bound_single_exponential(u),
        description="ex310 fast branch",
    )
    return certify_lower_bound(example_310_homotopy(grid), target, delta=delta, seed=seed, threads=threads)


# ==========================================================
# CHUỖI TẦNG GOODEARL
# ==========================================================
def _goodearl_certificate(
    stage: GoodearlStage,
    eps: float,
    grid: Tuple[int, int] = (400, 400),
    window: float = DEFAULT_WINDOW,
    seed: Optional[int] = 0,
    threads: int = 1,
    middle_points: int = 200,
) -> CelCertificate:
    eps = validate_eps(eps)
    stage.require_admissible()

    u_eps = build_u_eps(eps)
    image = goodearl_image(u_eps, stage)
    report = check_middle_branch(image, stage, eps, np.linspace(0.0, 1.0, middle_points))
    if not report.passed:
        raise InadmissibleStage(
            "Đồng nhất thức nhánh giữa không thoả trên lưới.",
            {"witnesses": report.witnesses[:5]},
        )

    L = image.total_size
    alpha = report.alpha
    # hạng 0-based trong W̃: nhánh thấp nhất, nhánh đích α, nhánh cao nhất
    ranks = sorted({0, alpha - 1, L - 1})
    offsets = pinned_rank_offsets(L, alpha, eps, ranks)

    s_grid, t_grid = make_grids(grid)
    F = family_to_homotopy(image, offsets, s_grid, t_grid, ranks)

    fast_slope = -TWO_PI * (0.9 - eps)
    target = TargetBranch.isolated(fast_slope, 0.0, window, description="middle branch of W-tilde")
    measured = certify_lower_bound(F, target, delta=eps, seed=seed, threads=threads)

    proof_core = TWO_PI * (0.9 - eps)
    grid_slack = max(0.0, proof_core - 2 * eps - measured.lower_bound)
    perturbation_loss = measured.lower_bound - propagate_cel_bounds(measured.lower_bound, eps, "norm_perturbation")
    w_dist = w_tilde_distance(offsets)
    if w_dist >= eps:
        raise InvalidParameter(f"‖W̃ − W‖ = {w_dist:.3e} không nhỏ hơn ε.")

    slack = [
        SlackItem("w_tilde_vs_w", eps),
        SlackItem("tracking", eps),
        SlackItem("branch_start", eps),
        SlackItem("norm_perturbation", 2 * eps),
        SlackItem("grid", grid_slack),
    ]
    lower = max(0.0, proof_core - sum(item.value for item in slack))
    upper = upper_bound_single_exponential(image)

    provenance = list(measured.provenance) + [
        "direct-summand block of W-tilde on ranks {1, alpha, L}",
        "conjugation by a permutation leaves cel unchanged",
        f"norm perturbation: |cel(a) - cel(b)| < eps*pi/2 = {perturbation_loss:.3e} (constant pi/2 cited without proof)",
    ]

    cert = CelCertificate(
        target={"stage": stage.to_json_dict(), "eps": eps, "slope": fast_slope, "ranks": [r + 1 for r in ranks]},
        lower_bound=lower,
        upper_bound=upper,
        slack=slack,
        provenance=provenance,
        seed=seed,
        grids=dict(measured.grids, middle_points=int(middle_points)),
        length=measured.length,
        extras={
            "counts": {"alpha": report.alpha, "beta": report.beta, "gamma": report.gamma, "L": L},
            "admissibility_ratio": stage.admissibility_ratio,
            "middle_branch": report.to_dict(),
            "block_lower_bound": measured.lower_bound,
            "w_tilde_distance": w_dist,
            "perturbation_loss": perturbation_loss,
        },
        branches=measured.branches,
    )
    logger.info("Chứng chỉ tầng %s, ε=%.4g: cận dưới %.6f", list(stage.levels), eps, lower)
    return cert


goodearl_certificate = guard_pipeline(_goodearl_certificate, "chứng nhận tầng Goodearl")


def corollary_bound(
    stage: GoodearlStage, eps: float, grid: Tuple[int, int] = (400, 400), **kwargs
) -> CelCertificate:
    """cel(φ(u)) ≥ cel(φ(u_ε)) − 2πε, với ‖u − u_ε‖ ≤ 2πε đo trên lưới t."""
    cert = goodearl_certificate(stage, eps, grid, **kwargs)
    _, t_grid = make_grids(grid)
    distance = family_distance(build_example_u(), build_u_eps(eps), t_grid)
    if distance > TWO_PI * eps + 1e-12:
        raise InvalidParameter(f"‖u − u_ε‖ = {distance:.3e} vượt 2πε.")

    loss = TWO_PI * eps
    cert.slack.append(SlackItem("u_vs_u_eps", loss))
    cert.lower_bound = max(0.0, cert.lower_bound - loss)
    cert.upper_bound = TWO_PI * 9 / 10
    cert.target = dict(cert.target, family="u")
    cert.provenance.append("norm distance between u and u_eps is at most 2*pi*eps")
    cert.extras["u_distance"] = distance
    return cert


def eps_sweep(
    stage: GoodearlStage, eps_values: Sequence[float], grid: Tuple[int, int] = (400, 400), **kwargs
) -> Tuple[List[CelCertificate], bool]:
    """Chứng chỉ cho từng ε (sắp giảm dần) và cờ cận dưới tăng dần về 2π·9/10."""
    ordered = sorted({validate_eps(e) for e in eps_values}, reverse=True)
    certs = [goodearl_certificate(stage, e, grid, **kwargs) for e in ordered]
    bounds = [c.lower_bound for c in certs]
    monotone = all(b1 < b2 for b1, b2 in zip(bounds[:-1], bounds[1:])) and all(
        b <= TWO_PI * 9 / 10 for b in bounds
    )
    logger.info("ε-sweep %s → %s (đơn điệu: %s)", ordered, [round(b, 6) for b in bounds], monotone)
    return certs, monotone


# ==========================================================
# VÍ DỤ GẦN 2π
# ==========================================================
def near_2pi_example(
    k: int,
    grid: Tuple[int, int] = (400, 400),
    delta: float = DEFAULT_DELTA,
    window: float = DEFAULT_WINDOW,
    seed: Optional[int] = 0,
    threads: int = 1,
) -> Tuple[AffineAngleFamily, CelCertificate]:
    family = build_near_2pi_family(k)
    N = 10 ** int(k)
    s_grid, t_grid = make_grids(grid)
    # khối hạng: nhánh đích và một nhánh của cụm
    F = family_to_homotopy(family, [], s_grid, t_grid, [0, 1])
    target = TargetBranch.isolated(
        -TWO_PI * (N - 1) / N, 0.0, window,
        upper_bound=upper_bound_single_exponential(family),
        description=f"near-2pi fast branch, N = {N}",
    )
    cert = certify_lower_bound(F, target, delta=delta, seed=seed, threads=threads)
    cert.provenance.append("direct-summand block of the 10^k family on the target and one cluster slot")
    cert.target = dict(cert.target, k=int(k), N=N)
    return family, cert

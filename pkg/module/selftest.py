# =========================================================
# selftest.py: Bộ kiểm tra chấp nhận cho lệnh `selftest`
# =========================================================

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from log.log import get_logger
from module.branch_tracking import (
    branch_length,
    common_node_agreement,
    multiset_consistency,
    track_branches,
)
from module.certifier import (
    DEFAULT_WINDOW,
    TargetBranch,
    certify_example_310,
    certify_lower_bound,
    eps_sweep,
    goodearl_certificate,
    near_2pi_example,
    upper_bound_single_exponential,
)
from module.circle_lifting import TWO_PI, cel_scalar_exponential, optimal_scalar_homotopy
from module.corpus import adversarial_corpus, collision_corpus
from module.error_utils import CelexError, InvalidParameter
from module.examples_goodearl import (
    GoodearlStage,
    build_example_u,
    build_u_eps,
    check_middle_branch,
    goodearl_image,
)
from module.multiset_metric import bottleneck_brute_force, theta_distance, weyl_gap
from module.unitary_core import (
    homotopy_length,
    perturb_to_simple_spectrum,
    random_unitary,
    sup_distance,
)

logger = get_logger(__name__)

NINE_PI_FIFTHS = 9 * math.pi / 5


@dataclass
class CriterionResult:
    name: str
    passed: bool
    seconds: float
    summary: dict = field(default_factory=dict)
    budget: Optional[float] = None

    @property
    def over_budget(self) -> bool:
        return self.budget is not None and self.seconds > self.budget


@dataclass
class SelfTestReport:
    seed: int
    results: List[CriterionResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"criterion": r.name, "passed": r.passed, "seconds": r.seconds, "budget": r.budget}
             for r in self.results],
            columns=["criterion", "passed", "seconds", "budget"],
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "passed": self.passed,
            "criteria": [
                {
                    "name": r.name,
                    "passed": r.passed,
                    "seconds": r.seconds,
                    "budget": r.budget,
                    "over_budget": r.over_budget,
                    "summary": r.summary,
                }
                for r in self.results
            ],
        }


# ------------------------------
# Từng tiêu chí
# ------------------------------
def check_scalar(rng: np.random.Generator, threads: int = 1) -> dict:
    small = rng.uniform(-TWO_PI, TWO_PI, 200)
    exact = sum(cel_scalar_exponential(a) == abs(a) for a in small)

    large = rng.uniform(-20 * math.pi, 20 * math.pi, 200)
    ks = np.arange(-12, 13)
    brute = [float(np.min(np.maximum(np.abs(TWO_PI * ks), np.abs(a - TWO_PI * ks)))) for a in large]
    agree = sum(cel_scalar_exponential(a) == b for a, b in zip(large, brute))

    s_grid = np.linspace(0.0, 1.0, 1000)
    t_grid = np.linspace(0.0, 1.0, 101)
    worst = 0.0
    for alpha in (math.pi, 3 * math.pi, -2.5, 7.0):
        H = optimal_scalar_homotopy(alpha, s_grid, t_grid)
        worst = max(worst, abs(homotopy_length(H) - cel_scalar_exponential(alpha)))

    return {
        "passed": exact == 200 and agree == 200 and worst <= 5e-3,
        "exact_small": int(exact),
        "brute_force_agree": int(agree),
        "max_length_error": worst,
    }


def check_theta(rng: np.random.Generator, threads: int = 1) -> dict:
    equal = 0
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 8))
        a = rng.uniform(-5.0, 5.0, k)
        b = rng.uniform(-5.0, 5.0, k)
        diff = abs(theta_distance(a, b) - bottleneck_brute_force(a, b, "absolute"))
        worst = max(worst, diff)
        equal += diff <= 1e-12
    return {"passed": equal == 1000, "exact_equal": int(equal), "trials": 1000, "max_diff": worst}


def check_weyl(rng: np.random.Generator, threads: int = 1) -> dict:
    holds = 0
    worst = -math.inf
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        U = random_unitary(n, rng)
        V = random_unitary(n, rng)
        spectral, operator = weyl_gap(U, V)
        worst = max(worst, spectral - operator)
        holds += spectral <= operator + 1e-9
    return {"passed": holds == 1000, "holds": int(holds), "trials": 1000, "max_excess": worst}


def check_ex310(rng: np.random.Generator, threads: int = 1) -> dict:
    upper = upper_bound_single_exponential(build_example_u())
    cert = certify_example_310((400, 400), seed=int(rng.integers(0, 2**31)), threads=threads)
    lower = cert.lower_bound
    return {
        "passed": math.isclose(upper, NINE_PI_FIFTHS, rel_tol=1e-15)
        and NINE_PI_FIFTHS - 0.03 <= lower <= NINE_PI_FIFTHS
        and upper - lower <= 0.03,
        "upper_bound": upper,
        "lower_bound": lower,
        "bracket_width": upper - lower,
    }


def _corpus_target() -> TargetBranch:
    return TargetBranch.isolated(-TWO_PI * 9 / 10, 0.0, DEFAULT_WINDOW, description="ex310 fast branch")


def check_corpus(rng: np.random.Generator, threads: int = 1) -> dict:
    base_seed = int(rng.integers(0, 2**31))
    rows = []
    for i, F in enumerate(adversarial_corpus(20, seed=base_seed)):
        cert = certify_lower_bound(F, _corpus_target(), delta=0.005, seed=base_seed + i, threads=threads)
        rows.append((F.meta.get("kind"), cert.lower_bound, cert.length))
    sound = all(lb <= length + 1e-6 for _, lb, length in rows)
    strong = all(lb >= NINE_PI_FIFTHS - 0.05 for _, lb, _ in rows)
    return {
        "passed": sound and strong,
        "count": len(rows),
        "min_lower_bound": min(lb for _, lb, _ in rows),
        "max_length": max(length for _, _, length in rows),
        "sound": sound,
    }


def check_goodearl(rng: np.random.Generator, threads: int = 1) -> dict:
    eps = 0.005
    expected = {(2,): (99, 891, 10), (2, 2): (9801, 88209, 1990)}
    t_grid = np.linspace(0.0, 1.0, 200)
    summary = {"passed": True, "stages": []}
    for levels, counts in expected.items():
        stage = GoodearlStage(levels)
        image = goodearl_image(build_u_eps(eps), stage)
        report = check_middle_branch(image, stage, eps, t_grid)
        cert = goodearl_certificate(stage, eps, (400, 400), seed=int(rng.integers(0, 2**31)), threads=threads)
        ok = (
            (stage.alpha, stage.beta, stage.gamma) == counts
            and (report.alpha, report.beta, report.gamma) == counts
            and stage.is_admissible
            and report.passed
            and cert.lower_bound >= TWO_PI * 0.895 - 0.025 - 0.03
        )
        summary["passed"] = summary["passed"] and ok
        summary["stages"].append({
            "levels": list(levels),
            "counts": [report.alpha, report.beta, report.gamma],
            "ratio": stage.admissibility_ratio,
            "lower_bound": cert.lower_bound,
        })
    return summary


def check_trend(rng: np.random.Generator, threads: int = 1) -> dict:
    seed = int(rng.integers(0, 2**31))
    certs, monotone = eps_sweep(GoodearlStage((2,)), [0.01, 0.005, 0.002], (400, 400), seed=seed, threads=threads)
    _, near = near_2pi_example(2, (400, 400), seed=seed, threads=threads)
    return {
        "passed": monotone and near.lower_bound >= TWO_PI * 0.99 - 0.05,
        "sweep": [c.lower_bound for c in certs],
        "near_2pi_lower_bound": near.lower_bound,
        "near_2pi_upper_bound": near.upper_bound,
    }


def check_perturbation(rng: np.random.Generator, threads: int = 1) -> dict:
    base_seed = int(rng.integers(0, 2**31))
    delta = 0.01
    failures = []
    for i, F in enumerate(collision_corpus(20, seed=base_seed)):
        G = perturb_to_simple_spectrum(F, delta, seed=base_seed + i)
        S = F.s_grid.size
        pinned_expected = float(F.node_gaps()[S - 1].min()) > 1e-12
        ok = (
            sup_distance(F, G) <= delta
            and abs(homotopy_length(G) - homotopy_length(F)) <= delta
            and float(G.node_gaps().min()) > 0.0
        )
        if pinned_expected:
            ok = ok and sup_distance(F.subgrid([S - 1], range(F.t_grid.size)), G.subgrid([S - 1], range(F.t_grid.size))) == 0.0
        if not ok:
            failures.append(i)
    return {"passed": not failures, "count": 20, "failures": failures}


def check_tracking(rng: np.random.Generator, threads: int = 1) -> dict:
    base_seed = int(rng.integers(0, 2**31))
    window = (DEFAULT_WINDOW, 1.0 - DEFAULT_WINDOW)
    worst_consistency = 0.0
    worst_excess = -math.inf
    worst_agreement = 0.0
    for i, F in enumerate(adversarial_corpus(20, seed=base_seed, grid=(121, 121))):
        G = perturb_to_simple_spectrum(F, 0.005, seed=base_seed + i)
        B = track_branches(G, window, threads=threads)
        worst_consistency = max(worst_consistency, multiset_consistency(B, G))
        longest = max(branch_length(B, j) for j in range(B.k))
        worst_excess = max(worst_excess, longest - homotopy_length(G))

        coarse = G.subgrid(range(0, G.s_grid.size, 2), range(0, G.t_grid.size, 2))
        B_coarse = track_branches(coarse, window, threads=threads)
        worst_agreement = max(worst_agreement, common_node_agreement(B_coarse, B))

    return {
        "passed": worst_consistency < 1e-9 and worst_excess <= 1e-6 and worst_agreement <= 1e-8,
        "max_consistency": worst_consistency,
        "max_length_excess": worst_excess,
        "max_refinement_gap": worst_agreement,
    }


CRITERIA: Dict[str, Callable[[np.random.Generator, int], dict]] = {
    "scalar": check_scalar,
    "theta": check_theta,
    "weyl": check_weyl,
    "ex310": check_ex310,
    "corpus": check_corpus,
    "goodearl": check_goodearl,
    "trend": check_trend,
    "perturbation": check_perturbation,
    "tracking": check_tracking,
}


# giây; tracking không có ngân sách riêng
BUDGETS: Dict[str, Optional[float]] = {
    "scalar": 5.0,
    "theta": 5.0,
    "weyl": 30.0,
    "ex310": 60.0,
    "corpus": 300.0,
    "goodearl": 120.0,
    "trend": 120.0,
    "perturbation": 120.0,
    "tracking": None,
}


def run_selftest(
    subset: Optional[Sequence[str]] = None,
    seed: int = 0,
    threads: int = 1,
    enforce_budget: bool = True,
) -> SelfTestReport:
    """Chạy các tiêu chí; tiêu chí vượt ngân sách thời gian bị tính là không đạt khi enforce_budget."""
    names = list(CRITERIA) if not subset else list(subset)
    unknown = [n for n in names if n not in CRITERIA]
    if unknown:
        raise InvalidParameter(f"Tiêu chí không tồn tại: {', '.join(unknown)}. Chọn trong {list(CRITERIA)}.")

    results = []
    for name in names:
        rng = np.random.default_rng([seed, list(CRITERIA).index(name)])
        start = time.perf_counter()
        try:
            summary = CRITERIA[name](rng, threads)
            passed = bool(summary.pop("passed"))
        except CelexError as exc:
            summary = {"error": f"{type(exc).__name__}: {exc}"}
            passed = False
        seconds = time.perf_counter() - start
        result = CriterionResult(name, passed, seconds, summary, BUDGETS.get(name))
        if result.over_budget:
            logger.warning("Tiêu chí %s chạy %.1fs, vượt ngân sách %.0fs", name, seconds, result.budget)
            result.passed = result.passed and not enforce_budget
        logger.info("Tiêu chí %s: %s (%.2fs)", name, "đạt" if result.passed else "KHÔNG ĐẠT", seconds)
        results.append(result)
    return SelfTestReport(seed=seed, results=results)

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

# Bảo đảm thư mục gốc dự án nằm trong sys.path để tránh lỗi ImportError khi chạy
# từ thư mục khác.
ROOT_DIR = Path(__file__).resolve().parent
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from db.audit_log import log_action
from log.log import get_logger, setup_logging
from module.branch_tracking import branches_to_frame
from module.certifier import (
    TargetBranch,
    certify_example_310,
    certify_lower_bound,
    corollary_bound,
    eps_sweep,
    goodearl_certificate,
    make_grids,
    near_2pi_example,
)
from module.circle_lifting import TWO_PI, wrap_array
from module.config import DEFAULT_LEDGER, RunConfig, resolve_config, with_overrides
from module.corpus import build_corpus_homotopy
from module.error_utils import EXIT_OK, InvalidParameter, run_with_user_error
from module.examples_goodearl import (
    AffineAngleFamily,
    GoodearlStage,
    build_example_u,
    build_near_2pi_family,
    build_u_eps,
    determinant_angle,
    goodearl_image,
    is_in_cu,
    sorted_branch_functions,
)
from module.export_utils import dumps_json, payload_to_frame, read_json, write_csv, write_json, write_xlsx
from module.selftest import CRITERIA, run_selftest
from module.unitary_core import UnitaryHomotopy

logger = get_logger("app")

CONSTRUCT_EXAMPLES = ("ex310", "u_eps", "goodearl", "near2pi", "detour")
CERTIFY_EXAMPLES = ("ex310", "identity", "near2pi")
CONFIG_FLAGS = (
    "grid", "eps", "levels", "points", "seed", "threads", "out", "format",
    "delta", "window", "ledger", "verbose", "log_file",
)


# ============================================================
# THAM SỐ DÒNG LỆNH
# ============================================================
def _common_flags() -> argparse.ArgumentParser:
    # default=None: cờ không đặt thì nhường cho tệp cấu hình / mặc định
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", default=None, help="Lưới SxT, ví dụ 400x400")
    common.add_argument("--eps", type=float, default=None)
    common.add_argument("--levels", default=None, help="Số mũ k_i, ngăn bởi dấu phẩy (ví dụ 2,2)")
    common.add_argument("--points", default=None, help="Điểm đánh giá x_i ∈ [0, 1], ngăn bởi dấu phẩy")
    common.add_argument("--seed", default=None)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--out", default=None, help="Tệp đầu ra (mặc định: stdout)")
    common.add_argument("--format", default=None, choices=("json", "csv", "xlsx"))
    common.add_argument("--config", default=None, help="Tệp cấu hình JSON")
    common.add_argument("--delta", type=float, default=None, help="Cận nhiễu tới phổ đơn")
    common.add_argument("--window", type=float, default=None, help="Độ rộng cửa sổ cô lập theo t")
    common.add_argument("--ledger", default=None, help="Sổ chạy sqlite ('' để tắt)")
    common.add_argument("--verbose", action="store_true", default=None)
    common.add_argument("--log-file", dest="log_file", default=None)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="celex",
        description="Tính, chứng nhận và kẹp độ dài mũ C* (cel) của đường unitary.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("construct", parents=[common], help="Dựng các ví dụ (họ góc / đồng luân)")
    p.add_argument("example", choices=CONSTRUCT_EXAMPLES)

    p = sub.add_parser("certify", parents=[common], help="Chứng nhận cận dưới cel cho một đồng luân")
    p.add_argument("example", nargs="?", choices=CERTIFY_EXAMPLES)
    p.add_argument("--input", default=None, help="JSON đồng luân (có thể kèm trường target)")

    p = sub.add_parser("goodearl", parents=[common], help="Chứng chỉ cho một tầng của chuỗi Goodearl")
    p.add_argument("--sweep", default=None, help="Danh sách ε, ví dụ 0.01,0.005,0.002")
    p.add_argument("--corollary", action="store_true", help="Chuyển cận từ u_ε sang u (trừ 2πε)")
    p.add_argument("--stage", default=None, help="JSON tầng {levels, points, eps}; thay cho --levels/--points/--eps")

    p = sub.add_parser("selftest", parents=[common], help="Chạy bộ kiểm tra chấp nhận")
    p.add_argument("--subset", default=None, help=f"Tập con ngăn bởi dấu phẩy trong {list(CRITERIA)}")
    p.add_argument("--no-budget", dest="no_budget", action="store_true", help="Chỉ báo, không đánh trượt, tiêu chí vượt thời gian")
    return parser


def _split(raw: Optional[str]) -> List[str]:
    if not raw:
        return []
    return [p for p in raw.replace(" ", "").split(",") if p]


# ============================================================
# XUẤT KẾT QUẢ
# ============================================================
def _emit(cfg: RunConfig, payload: Dict[str, Any], tables: Optional[Dict[str, pd.DataFrame]] = None) -> None:
    """
    json → payload (kèm "config"); csv → bảng dữ liệu đầu tiên, hoặc bảng key/value;
    xlsx → sheet summary + các bảng dữ liệu.
    """
    payload = dict(payload, config=cfg.to_dict())
    tables = tables or {}

    if cfg.format == "json":
        if cfg.out:
            write_json(payload, cfg.out)
        else:
            sys.stdout.write(dumps_json(payload))
        return

    if cfg.format == "csv":
        df = next(iter(tables.values())) if tables else payload_to_frame(payload)
        if cfg.out:
            write_csv(df, cfg.out)
        else:
            df.to_csv(sys.stdout, index=False, float_format="%.17g")
        return

    if not cfg.out:
        raise InvalidParameter("--format xlsx cần --out.")
    write_xlsx(dict({"summary": payload_to_frame(payload)}, **tables), cfg.out)


def _sibling(path: str, suffix: str) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}{suffix}"))


def _print_summary(cfg: RunConfig, lines: List[str]) -> None:
    # stdout đã dành cho dữ liệu khi không có --out
    stream = sys.stdout if cfg.out else sys.stderr
    for line in lines:
        print(line, file=stream)


# ============================================================
# construct
# ============================================================
def _family_summary(f: AffineAngleFamily, t_grid) -> Dict[str, Any]:
    det = determinant_angle(f, t_grid)
    return {
        "L": f.total_size,
        "terms": len(f.terms),
        "det_angle_max": float(np.max(np.abs(wrap_array(det)))),
        "in_cu": is_in_cu(f),
    }


def cmd_construct(args, cfg: RunConfig, ledger: Dict[str, str]) -> int:
    _, t_grid = make_grids(cfg.grid)
    example = args.example

    if example == "detour":
        F = build_corpus_homotopy("detour", cfg.seed, cfg.grid)
        target = TargetBranch.isolated(-TWO_PI * 9 / 10, 0.0, cfg.window, description="ex310 fast branch")
        payload = {"example": example, "homotopy": F.to_json_dict(), "target": target.to_dict()}
        _emit(cfg, payload)
        _print_summary(cfg, [f"detour: n={F.dim}, lưới {F.shape[0]}x{F.shape[1]}, seed={cfg.seed}"])
        ledger["detail"] = f"detour n={F.dim}"
        return EXIT_OK

    counts = None
    if example == "ex310":
        f = build_example_u()
    elif example == "u_eps":
        f = build_u_eps(cfg.eps)
    elif example == "near2pi":
        f = build_near_2pi_family(cfg.levels[0])
    else:
        stage = GoodearlStage(cfg.levels, cfg.points, cfg.eps)
        stage.require_admissible()
        f = goodearl_image(build_u_eps(cfg.eps), stage).merged()
        counts = dict(stage.counts(), admissibility_ratio=stage.admissibility_ratio)

    summary = _family_summary(f, t_grid)
    payload = {"example": example, "family": f.to_json_dict(), "summary": summary}
    if counts is not None:
        payload["counts"] = counts
    _emit(cfg, payload, {"terms": pd.DataFrame(f.to_json_dict()["terms"])})

    line = f"{example}: L={summary['L']}, {summary['terms']} số hạng, |det-angle| ≤ {summary['det_angle_max']:.3g}"
    if counts is not None:
        line += f", α={counts['alpha']} β={counts['beta']} γ={counts['gamma']}"
    _print_summary(cfg, [line])
    ledger["detail"] = line
    return EXIT_OK


# ============================================================
# certify
# ============================================================
def _identity_homotopy(cfg: RunConfig) -> UnitaryHomotopy:
    s_grid, t_grid = make_grids(cfg.grid)
    return UnitaryHomotopy.diagonal(s_grid, t_grid, np.zeros((s_grid.size, t_grid.size, 1)), meta={"kind": "identity"})


def _load_input(path: str, cfg: RunConfig):
    payload = read_json(path)
    raw = payload.get("homotopy", payload)
    F = UnitaryHomotopy.from_json_dict(raw)
    target_raw = payload.get("target")
    if target_raw is None:
        target = TargetBranch.isolated(-TWO_PI * 9 / 10, 0.0, cfg.window, description="ex310 fast branch")
    else:
        try:
            target = TargetBranch(
                float(target_raw["slope"]),
                float(target_raw.get("intercept", 0.0)),
                tuple(target_raw.get("window", (cfg.window, 1.0 - cfg.window))),
                description=str(target_raw.get("description", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidParameter("Trường target phải có dạng {slope, intercept, window}.") from exc
    return F, target


def _write_branches(cfg: RunConfig, cert) -> Optional[str]:
    if not cfg.out or cert.branches is None:
        return None
    return write_csv(branches_to_frame(cert.branches), _sibling(cfg.out, ".branches.csv"))


def cmd_certify(args, cfg: RunConfig, ledger: Dict[str, str]) -> int:
    if bool(args.example) == bool(args.input):
        raise InvalidParameter("Chọn đúng một trong: tên ví dụ hoặc --input.")

    if args.input:
        F, target = _load_input(args.input, cfg)
        cert = certify_lower_bound(F, target, delta=cfg.delta, seed=cfg.seed, threads=cfg.threads)
    elif args.example == "ex310":
        cert = certify_example_310(cfg.grid, cfg.delta, cfg.window, cfg.seed, cfg.threads)
    elif args.example == "near2pi":
        _, cert = near_2pi_example(cfg.levels[0], cfg.grid, cfg.delta, cfg.window, cfg.seed, cfg.threads)
    else:
        target = TargetBranch.isolated(0.0, 0.0, cfg.window, upper_bound=0.0, description="identity")
        cert = certify_lower_bound(_identity_homotopy(cfg), target, delta=cfg.delta, seed=cfg.seed, threads=cfg.threads)

    tables = {}
    if cert.branches is not None and cfg.format != "json":
        tables["branches"] = branches_to_frame(cert.branches)
    _emit(cfg, cert.to_json_dict(), tables)
    written = _write_branches(cfg, cert) if cfg.format == "json" else None

    line = f"cận dưới {cert.lower_bound:.6f}, cận trên {cert.upper_bound}, độ dài đo {cert.length:.6f}"
    _print_summary(cfg, [line] + ([f"nhánh: {written}"] if written else []))
    ledger["detail"] = line
    return EXIT_OK


# ============================================================
# goodearl
# ============================================================
def _stage_from_args(args, cfg: RunConfig):
    """Tầng lấy từ --stage (nếu có), đè lên levels/points/eps của cấu hình."""
    if not args.stage:
        return GoodearlStage(cfg.levels, cfg.points, cfg.eps), cfg
    payload = read_json(args.stage)
    stage = GoodearlStage.from_json_dict(payload)
    eps = cfg.eps if stage.eps is None else stage.eps
    cfg = with_overrides(cfg, levels=stage.levels, points=stage.points, eps=eps)
    return GoodearlStage(cfg.levels, cfg.points, cfg.eps), cfg


def cmd_goodearl(args, cfg: RunConfig, ledger: Dict[str, str]) -> int:
    stage, cfg = _stage_from_args(args, cfg)
    kwargs = {"window": cfg.window, "seed": cfg.seed, "threads": cfg.threads}

    if args.sweep:
        certs, monotone = eps_sweep(stage, [float(e) for e in _split(args.sweep)], cfg.grid, **kwargs)
        payload = {
            "stage": stage.to_json_dict(),
            "monotone": monotone,
            "certificates": [c.to_json_dict() for c in certs],
        }
        table = pd.DataFrame(
            {"eps": [c.target["eps"] for c in certs], "lower_bound": [c.lower_bound for c in certs]}
        )
        _emit(cfg, payload, {"sweep": table})
        line = "ε-sweep " + ", ".join(f"{e:g}→{b:.6f}" for e, b in zip(table["eps"], table["lower_bound"]))
        _print_summary(cfg, [line, f"đơn điệu: {monotone}"])
        ledger["detail"] = line
        return EXIT_OK

    if args.corollary:
        cert = corollary_bound(stage, cfg.eps, cfg.grid, **kwargs)
    else:
        cert = goodearl_certificate(stage, cfg.eps, cfg.grid, **kwargs)

    _, t_grid = make_grids(cfg.grid)
    curves = sorted_branch_functions(goodearl_image(build_u_eps(cfg.eps), stage), t_grid).to_frame()
    _emit(cfg, cert.to_json_dict(), {"curves": curves})

    counts = cert.extras["counts"]
    line = (
        f"tầng {list(stage.levels)}, ε={cfg.eps:g}: α={counts['alpha']} β={counts['beta']} "
        f"γ={counts['gamma']}, cận dưới {cert.lower_bound:.6f}"
    )
    _print_summary(cfg, [line])
    ledger["detail"] = line
    return EXIT_OK


# ============================================================
# selftest
# ============================================================
def cmd_selftest(args, cfg: RunConfig, ledger: Dict[str, str]) -> int:
    report = run_selftest(
        _split(args.subset) or None, seed=cfg.seed, threads=cfg.threads, enforce_budget=not args.no_budget
    )
    _emit(cfg, report.to_dict(), {"report": report.to_frame()})
    _print_summary(cfg, [
        f"{r.name:<13} {'PASS' if r.passed else 'FAIL'} {r.seconds:8.2f}s"
        + (f" (vượt {r.budget:.0f}s)" if r.over_budget else "")
        for r in report.results
    ])
    ledger["detail"] = f"{sum(r.passed for r in report.results)}/{len(report.results)} đạt"
    return EXIT_OK if report.passed else 1


COMMANDS: Dict[str, Callable] = {
    "construct": cmd_construct,
    "certify": cmd_certify,
    "goodearl": cmd_goodearl,
    "selftest": cmd_selftest,
}


# ============================================================
# MAIN
# ============================================================
def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    flags = {name: getattr(args, name, None) for name in CONFIG_FLAGS}
    ledger = {"path": flags["ledger"] if flags["ledger"] is not None else DEFAULT_LEDGER, "detail": ""}

    def run() -> int:
        cfg = resolve_config(flags, args.config)
        ledger["path"] = cfg.ledger
        setup_logging(logging.DEBUG if cfg.verbose else logging.WARNING, cfg.log_file or None)
        logger.debug("Cấu hình: %s", cfg.to_dict())
        return COMMANDS[args.command](args, cfg, ledger)

    code = run_with_user_error(run, f"chạy lệnh {args.command}")
    log_action(ledger["path"], args.command, f"exit={code} {ledger['detail']}".strip())
    return code


if __name__ == "__main__":
    sys.exit(main())

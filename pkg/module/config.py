# =========================================================
# config.py: Cấu hình một lần chạy CLI
# =========================================================
# Thứ tự ưu tiên: cờ dòng lệnh > tệp JSON (--config) > mặc định.
# Riêng seed: --seed > tệp > biến môi trường CELEX_SEED > 0.

import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Mapping, Optional, Tuple

from module.error_utils import (
    InvalidParameter,
    ensure_finite,
    validate_grid,
    validate_levels,
    validate_unit_points,
)
from module.export_utils import FORMATS, read_json

SEED_ENV = "CELEX_SEED"
DEFAULT_LEDGER = os.path.join("data", "celex_runs.db")


@dataclass(frozen=True)
class RunConfig:
    grid: Tuple[int, int] = (400, 400)
    eps: float = 0.005
    levels: Tuple[int, ...] = (2,)
    points: Tuple[float, ...] = ()
    seed: int = 0
    threads: int = 1
    out: str = ""
    format: str = "json"
    delta: float = 0.001
    window: float = 0.0025
    ledger: str = DEFAULT_LEDGER
    verbose: bool = False
    log_file: str = ""

    def __post_init__(self):
        grid = self.grid
        if isinstance(grid, str):
            grid = validate_grid(grid)
        grid = tuple(int(x) for x in grid)
        if len(grid) != 2 or min(grid) < 2:
            raise InvalidParameter("Lưới phải có hai chiều, mỗi chiều ≥ 2.")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "levels", tuple(validate_levels(self.levels)))
        if not self.levels:
            raise InvalidParameter("levels phải có ít nhất một số mũ (ví dụ 2 hoặc 2,2).")
        object.__setattr__(self, "points", tuple(validate_unit_points(self.points)))
        object.__setattr__(self, "eps", ensure_finite(self.eps, "eps"))
        object.__setattr__(self, "delta", ensure_finite(self.delta, "delta"))
        object.__setattr__(self, "window", ensure_finite(self.window, "window"))

        if self.delta <= 0:
            raise InvalidParameter(f"delta phải dương, nhận được {self.delta}.")
        if not 0.0 <= self.window < 0.5:
            raise InvalidParameter(f"window phải nằm trong [0, 0.5), nhận được {self.window}.")
        if int(self.threads) < 1:
            raise InvalidParameter(f"threads phải ≥ 1, nhận được {self.threads}.")
        object.__setattr__(self, "threads", int(self.threads))
        object.__setattr__(self, "seed", _parse_seed(self.seed))
        if self.format not in FORMATS:
            raise InvalidParameter(f"format phải là một trong {FORMATS}, nhận được {self.format!r}.")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["grid"] = f"{self.grid[0]}x{self.grid[1]}"
        data["levels"] = list(self.levels)
        data["points"] = list(self.points)
        return data


def _parse_seed(raw) -> int:
    try:
        seed = int(str(raw).strip())
    except (TypeError, ValueError) as exc:
        raise InvalidParameter(f"seed phải là số nguyên, nhận được {raw!r}.") from exc
    if seed < 0:
        raise InvalidParameter(f"seed phải không âm, nhận được {seed}.")
    return seed


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    data = read_json(path)
    if not isinstance(data, dict):
        raise InvalidParameter(f"Tệp cấu hình {path} phải chứa một object JSON.")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidParameter(f"Khoá cấu hình không hỗ trợ: {', '.join(unknown)}.")
    return data


def resolve_config(
    flags: Mapping[str, Any],
    config_path: Optional[str] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Ghép cờ (giá trị None = không đặt), tệp cấu hình, biến môi trường và mặc định."""
    environ = os.environ if environ is None else environ
    merged: Dict[str, Any] = {}

    if flags.get("seed") is None and SEED_ENV in environ:
        merged["seed"] = environ[SEED_ENV]
    merged.update(load_config_file(config_path))

    known = {f.name for f in fields(RunConfig)}
    for key, value in flags.items():
        if key in known and value is not None:
            merged[key] = value

    return RunConfig(**merged)


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, **changes)

import sys
import traceback
from typing import Any, Callable, Dict, Optional

import numpy as np

from log.log import get_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INVALID_PARAMS = 2
EXIT_PIPELINE = 3


class UserFacingError(Exception):
    """Lỗi dùng để hiển thị thông điệp thân thiện cho người dùng cuối."""


class CelexError(UserFacingError):
    """Lỗi nghiệp vụ có mã thoát và chi tiết kỹ thuật đi kèm."""

    exit_code = EXIT_PIPELINE

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.details = dict(details or {})


# ==========================================================
# LỖI THAM SỐ (exit 2)
# ==========================================================

class InvalidParameter(CelexError):
    exit_code = EXIT_INVALID_PARAMS


class EpsOutOfRange(InvalidParameter):
    pass


class InadmissibleStage(InvalidParameter):
    pass


class SizeMismatch(InvalidParameter):
    pass


class DimensionMismatch(InvalidParameter):
    pass


# ==========================================================
# LỖI PIPELINE (exit 3)
# ==========================================================

class GapTooLarge(CelexError):
    pass


class NotUnitary(CelexError):
    pass


class EigensolverFailure(CelexError):
    pass


class BranchCut(CelexError):
    pass


class TooFarApart(CelexError):
    pass


class PerturbationFailed(CelexError):
    pass


class AmbiguousMatching(CelexError):
    pass


class BranchNotFound(CelexError):
    pass


class OffsetCollision(CelexError):
    pass


def _should_reraise(exc: BaseException) -> bool:
    """True với các ngoại lệ điều khiển tiến trình (Ctrl+C, sys.exit) cần propagate."""
    return isinstance(exc, (KeyboardInterrupt, SystemExit, GeneratorExit))


def render_error(message: str, exc: Optional[BaseException] = None) -> None:
    """In lỗi thân thiện ra stderr; chi tiết kỹ thuật chỉ ghi vào log DEBUG."""
    print(message, file=sys.stderr)
    if exc is not None:
        logger.debug(
            "Chi tiết kỹ thuật:\n%s",
            "".join(traceback.format_exception(type(exc), exc, exc.__traceback__)),
        )


def run_with_user_error(fn: Callable[[], Optional[int]], context: str) -> int:
    """Wrapper cho toàn bộ lệnh CLI: trả về mã thoát thay vì để exception lọt ra ngoài."""
    try:
        code = fn()
        return EXIT_OK if code is None else int(code)
    except CelexError as exc:
        render_error(f"{type(exc).__name__}: {exc}", exc)
        return exc.exit_code
    except UserFacingError as exc:
        render_error(f"{type(exc).__name__}: {exc}", exc)
        return EXIT_PIPELINE
    except Exception as exc:
        if _should_reraise(exc):
            raise

        render_error(
            f"{type(exc).__name__}: Đã xảy ra lỗi khi {context}. "
            "Vui lòng kiểm tra tham số đầu vào và thử lại.",
            exc,
        )
        return EXIT_PIPELINE


def guard_pipeline(fn: Callable[..., Any], context: str) -> Callable[..., Any]:
    """Bọc hàm pipeline: CelexError giữ nguyên, lỗi lạ đổi thành CelexError (from exc)."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except UserFacingError:
            raise
        except Exception as exc:
            if _should_reraise(exc):
                raise

            raise CelexError(f"Đã xảy ra lỗi khi {context}.") from exc

    wrapper.__name__ = getattr(fn, "__name__", "wrapper")
    wrapper.__doc__ = fn.__doc__
    wrapper.__wrapped__ = fn
    return wrapper


# ==========================================================
# VALIDATE INPUT
# ==========================================================

def ensure_finite(value: float, name: str) -> float:
    """Raise InvalidParameter nếu giá trị không hữu hạn."""
    try:
        x = float(value)
    except (TypeError, ValueError) as exc:
        raise InvalidParameter(f"{name} phải là số thực, nhận được {value!r}.") from exc
    if not np.isfinite(x):
        raise InvalidParameter(f"{name} phải hữu hạn, nhận được {value!r}.")
    return x


def validate_grid(raw: str) -> tuple:
    """
    Validate chuỗi lưới dạng SxT.
    - Chỉ chấp nhận hai số nguyên >= 2 ngăn bởi 'x' (VD: 400x400, 50x80)
    """
    if raw is None:
        raise InvalidParameter("Vui lòng nhập kích thước lưới (ví dụ: 400x400).")

    s = str(raw).strip().lower()
    parts = s.split("x")
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise InvalidParameter(f"Lưới phải có dạng SxT (ví dụ: 400x400), nhận được '{raw}'.")

    S, T = (int(p) for p in parts)
    if S < 2 or T < 2:
        raise InvalidParameter("Mỗi chiều của lưới phải có ít nhất 2 điểm.")
    return S, T


def validate_levels(raw) -> list:
    """Chuẩn hoá danh sách số mũ k_i (số nguyên dương)."""
    if raw is None:
        return []
    if isinstance(raw, str):
        items = [p for p in raw.replace(" ", "").split(",") if p != ""]
    else:
        items = list(raw)

    levels = []
    for item in items:
        if isinstance(item, bool) or not (
            isinstance(item, (int, np.integer)) or str(item).strip().isdigit()
        ):
            raise InvalidParameter(f"Số mũ level phải là số nguyên dương, nhận được {item!r}.")
        k = int(item)
        if k < 1:
            raise InvalidParameter(f"Số mũ level phải là số nguyên dương, nhận được {item!r}.")
        levels.append(k)
    return levels


def validate_unit_points(raw) -> list:
    """Chuẩn hoá danh sách điểm đánh giá trong [0, 1]."""
    if raw is None:
        return []
    if isinstance(raw, str):
        items = [p for p in raw.replace(" ", "").split(",") if p != ""]
    else:
        items = list(raw)

    points = [ensure_finite(p, "point") for p in items]
    if any(p < 0.0 or p > 1.0 for p in points):
        raise InvalidParameter("Các điểm đánh giá phải nằm trong [0, 1].")
    return points

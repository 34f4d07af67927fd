# =========================================================
# export_utils.py: Ghi JSON / CSV / XLSX tất định
# =========================================================

import io
import json
import math
import os
from typing import Any, Dict

import numpy as np
import pandas as pd

from module.error_utils import InvalidParameter

FLOAT_FORMAT = "%.17g"
FORMATS = ("json", "csv", "xlsx")


def _plain(obj: Any) -> Any:
    """Đưa kiểu numpy / tuple về kiểu JSON thuần."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _render(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return "null"
        return FLOAT_FORMAT % obj
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_render(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _render(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            pad + json.dumps(k, ensure_ascii=False) + ": " + _render(v, indent, level + 1)
            for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise InvalidParameter(f"Không tuần tự hoá được kiểu {type(obj).__name__}.")


def dumps_json(payload: Any, indent: int = 2) -> str:
    """JSON tất định: số thực luôn ghi đủ 17 chữ số có nghĩa."""
    return _render(_plain(payload), indent, 0) + "\n"


def write_json(payload: Any, path: str) -> str:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_json(payload))
    return path


def read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InvalidParameter(f"Không tìm thấy tệp: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidParameter(f"Tệp {path} không phải JSON hợp lệ: {exc.msg} (dòng {exc.lineno}).") from exc


def write_csv(df: pd.DataFrame, path: str) -> str:
    _ensure_parent(path)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def df_to_excel_bytes(dfs: Dict[str, pd.DataFrame]) -> bytes:
    output = io.BytesIO()
    with pd.ExcelWriter(output, engine="xlsxwriter") as writer:
        for name, df in dfs.items():
            df.to_excel(writer, sheet_name=name[:31], index=False)
    output.seek(0)
    return output.getvalue()


def write_xlsx(dfs: Dict[str, pd.DataFrame], path: str) -> str:
    _ensure_parent(path)
    with open(path, "wb") as fh:
        fh.write(df_to_excel_bytes(dfs))
    return path


def payload_to_frame(payload: Dict[str, Any]) -> pd.DataFrame:
    """Trải phẳng một dict lồng nhau thành bảng (key, value) cho CSV/XLSX."""
    flat = pd.json_normalize(_plain(payload), sep=".")
    if flat.empty:
        return pd.DataFrame(columns=["key", "value"])
    row = flat.iloc[0]
    return pd.DataFrame({"key": list(row.index), "value": [_cell(v) for v in row.values]})


def _cell(value: Any) -> Any:
    if isinstance(value, (list, dict)):
        return dumps_json(value, indent=0).replace("\n", "")
    return value


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)

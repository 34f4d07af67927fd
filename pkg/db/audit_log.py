import getpass
import os
import sqlite3
from datetime import datetime
from typing import List, Tuple

from log.log import get_logger

logger = get_logger(__name__)


def _connect(db_path: str) -> sqlite3.Connection:
    parent = os.path.dirname(os.path.abspath(db_path))
    os.makedirs(parent, exist_ok=True)
    return sqlite3.connect(db_path)


def _ensure_table(db_path: str):
    conn = _connect(db_path)
    c = conn.cursor()
    c.execute(
        """
        CREATE TABLE IF NOT EXISTS audit_log (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            timestamp TEXT,
            username TEXT,
            action TEXT,
            detail TEXT
        )
        """
    )
    conn.commit()
    conn.close()


def _current_user() -> str:
    try:
        return getpass.getuser()
    except Exception:
        return "unknown"


def log_action(db_path: str, action: str, detail: str = "", username: str = None):
    """Ghi một dòng vào sổ chạy; đường dẫn rỗng thì bỏ qua."""
    if not db_path:
        return
    try:
        _ensure_table(db_path)
        conn = _connect(db_path)
        c = conn.cursor()
        c.execute(
            "INSERT INTO audit_log (timestamp, username, action, detail) VALUES (?, ?, ?, ?)",
            (
                datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
                username or _current_user(),
                action,
                detail,
            ),
        )
        conn.commit()
        conn.close()
    except sqlite3.Error as exc:
        # sổ chạy không được làm hỏng lệnh chính
        logger.warning("Không ghi được sổ chạy %s: %s", db_path, exc)


def get_logs(db_path: str, limit: int = 50) -> List[Tuple[str, str, str, str]]:
    _ensure_table(db_path)
    conn = _connect(db_path)
    c = conn.cursor()
    c.execute(
        "SELECT timestamp, username, action, detail FROM audit_log ORDER BY id DESC LIMIT ?",
        (int(limit),),
    )
    logs = c.fetchall()
    conn.close()
    return logs

import logging
import sys
from typing import Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

_configured = False


def setup_logging(level: int = logging.WARNING, log_file: Optional[str] = None) -> None:
    """Cấu hình root logger một lần cho toàn bộ tiến trình CLI."""
    global _configured

    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=_configured)
    logging.getLogger("celex").setLevel(level)
    _configured = True


def get_logger(name: str) -> logging.Logger:
    """Logger theo module, đặt dưới namespace 'celex'."""
    if not name.startswith("celex"):
        name = f"celex.{name}"
    return logging.getLogger(name)

from __future__ import annotations

from collections.abc import Iterator
from contextlib import contextmanager
import contextvars
import logging
import os
import sys
from uuid import uuid4


_run_id_ctx: contextvars.ContextVar[str] = contextvars.ContextVar("run_id", default="-")


class _RunIdFilter(logging.Filter):
    def filter(self, record: logging.LogRecord) -> bool:
        record.run_id = _run_id_ctx.get("-")
        return True


def new_run_id() -> str:
    return uuid4().hex[:12]


def set_run_id(value: str) -> contextvars.Token[str]:
    return _run_id_ctx.set(value)


def reset_run_id(token: contextvars.Token[str]) -> None:
    _run_id_ctx.reset(token)


@contextmanager
def run_scope(run_id: str | None = None) -> Iterator[str]:
    """Tag every record logged inside the block with one run id."""
    value = run_id or new_run_id()
    token = set_run_id(value)
    try:
        yield value
    finally:
        reset_run_id(token)


def configure_logging(level: str | None = None) -> None:
    # Results go to stdout or files; logs always go to stderr.
    level = (level or os.getenv("LOG_LEVEL", "INFO")).upper()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(
        logging.Formatter(
            fmt="%(asctime)s %(levelname)s [%(name)s] [run=%(run_id)s] %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )
    )
    handler.addFilter(_RunIdFilter())
    logging.basicConfig(level=level, handlers=[handler], force=True)
    logging.captureWarnings(True)

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path

from delaydensity.services.run_service import ComparisonReport, TableResult

logger = logging.getLogger(__name__)


INTEGER_COLUMNS = frozenset({"path"})


def _format_number(value: object) -> str:
    # repr gives the shortest string that round-trips a double.
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def render_table(result: TableResult) -> str:
    buffer = io.StringIO()
    for key, value in result.diagnostics.items():
        buffer.write(f"# {key}={_format_number(value)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(result.header)
    integer_columns = [name in INTEGER_COLUMNS for name in result.header]
    for row in result.rows:
        writer.writerow(
            str(int(cell)) if as_int else repr(float(cell))
            for cell, as_int in zip(row, integer_columns)
        )
    return buffer.getvalue()


def write_table(path: str | Path, result: TableResult) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(render_table(result).encode("utf-8"))
    logger.info("Wrote table path=%s rows=%s", target, len(result.rows))
    return target


def report_path_for(csv_path: str | Path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_report(path: str | Path, report: ComparisonReport) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    target.write_bytes((payload + "\n").encode("utf-8"))
    logger.info("Wrote comparison report path=%s", target)
    return target

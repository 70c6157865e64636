"""
Versioned CSV reports and JSON summaries.

Every CSV starts with a ``# road-adapters <kind> v<version>`` comment line
followed by a column header.
"""

import csv
import io
import json
import logging
import re
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence, TextIO, Tuple, Union

from .analysis import LayerStats
from .exceptions import ReportFormatError
from .serving import BenchReport
from .trainer import GradCheckReport, TrainingTrace

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
HEADER_PATTERN = re.compile(
    r"^# road-adapters (?P<kind>[a-z0-9_-]+) v(?P<version>\d+)$"
)

LAYER_STATS_COLUMNS = [
    "layer",
    "count",
    "mean_delta_m",
    "mean_delta_d",
    "delta_m_q25",
    "delta_m_q50",
    "delta_m_q75",
    "delta_d_q25",
    "delta_d_q50",
    "delta_d_q75",
]

PathLike = Union[str, Path]


def write_csv(
    out: TextIO, kind: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]
) -> None:
    out.write(f"# road-adapters {kind} v{REPORT_VERSION}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)


def render_csv(kind: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    write_csv(buf, kind, columns, rows)
    return buf.getvalue()


def save_csv(
    path: PathLike, kind: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_csv(kind, columns, rows))
    logger.info(f"Wrote {len(rows)} {kind} rows to {path}")
    return path


def parse_report(
    text: str, expected_kind: str = ""
) -> Tuple[str, List[Dict[str, str]]]:
    """
    Parse a versioned CSV report.

    Args:
        text: Full report text
        expected_kind: If set, the report kind must match

    Returns:
        ``(kind, rows)`` with each row a column-name to text mapping

    Raises:
        ReportFormatError: If the header line is missing, the version is
            unknown, or the kind differs from ``expected_kind``
    """
    lines = text.splitlines()
    if not lines:
        raise ReportFormatError("Empty report")
    match = HEADER_PATTERN.match(lines[0].strip())
    if match is None:
        raise ReportFormatError(f"Missing report header, found {lines[0]!r}")
    kind, version = match.group("kind"), int(match.group("version"))
    if version != REPORT_VERSION:
        raise ReportFormatError(f"Unsupported {kind} report version v{version}")
    if expected_kind and kind != expected_kind:
        raise ReportFormatError(f"Expected a {expected_kind} report, found {kind}")
    rows = list(csv.DictReader(lines[1:]))
    return kind, rows


def read_report(
    path: PathLike, expected_kind: str = ""
) -> Tuple[str, List[Dict[str, str]]]:
    return parse_report(Path(path).read_text(), expected_kind)


def bench_csv(reports: Sequence[BenchReport]) -> str:
    return render_csv("bench", BenchReport.columns(), [r.as_row() for r in reports])


def read_bench_reports(path: PathLike) -> List[BenchReport]:
    _, rows = read_report(path, "bench")
    reports = []
    for row in rows:
        try:
            reports.append(
                BenchReport(
                    kernel=row["kernel"],
                    b=int(row["b"]),
                    l=int(row["l"]),
                    d1=int(row["d1"]),
                    d2=int(row["d2"]),
                    r=int(row["r"]),
                    wall_ns=int(row["wall_ns"]),
                    flops=int(row["flops"]),
                    tokens_per_second=float(row["tokens_per_second"]),
                    mode=row.get("mode") or "prefill",
                    adapter_ns=int(row.get("adapter_ns") or 0),
                    base_flops=int(row.get("base_flops") or 0),
                    threads=int(row.get("threads") or 1),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ReportFormatError(f"Malformed bench row {row}: {e}") from e
    return reports


def trace_rows(trace: TrainingTrace) -> List[List[Any]]:
    return [[record.epoch, repr(record.loss)] for record in trace.records]


def layer_stats_rows(stats: Sequence[LayerStats]) -> List[List[Any]]:
    return [
        [
            s.layer,
            s.count,
            s.mean_delta_m,
            s.mean_delta_d,
            *s.delta_m_quartiles,
            *s.delta_d_quartiles,
        ]
        for s in stats
    ]


def gradcheck_summary(report: GradCheckReport) -> Dict[str, Any]:
    return {
        "passed": report.passed,
        "threshold": report.threshold,
        "entries": [asdict(e) for e in report.entries],
        "failures": [asdict(e) for e in report.failures()],
    }


def _jsonable(value: Any) -> Any:
    if is_dataclass(value) and not isinstance(value, type):
        return asdict(value)
    if hasattr(value, "tolist"):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def to_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_jsonable)


def save_json(path: PathLike, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(payload) + "\n")
    logger.info(f"Wrote JSON report to {path}")
    return path

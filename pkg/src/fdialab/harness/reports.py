"""Report serialization: fixed-header CSV and schema-validated JSON.

Floats are written with 17 significant digits so every numeric field
round-trips exactly; absent metrics (no successful attacks) serialize as an
empty CSV cell or JSON null. Output is deterministic: fixed row order,
fixed separators, no timestamps.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from importlib import resources

from .experiments import MetricsReport, MetricsRow, VanillaRow

REPORT_HEADER = "case,k,size,recall,bias_l2,valid_l2,n_success,n_total"
VANILLA_HEADER = "case,k,alpha,recall,bias_l2,valid_l2,n_success,n_total"

_REPORT_FORMAT = "fdialab-report"
_REPORT_VERSION = 1


class ReportFormatError(ValueError):
    """A report file failed to parse or validate."""


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        raise TypeError("boolean cells are not part of any report schema")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _sorted_rows(rows: list[MetricsRow]) -> list[MetricsRow]:
    return sorted(rows, key=lambda r: (r.case, r.k, r.size))


def export_report(report: MetricsReport, fmt: str, path: str) -> None:
    """Write a MetricsReport as ``csv`` or ``json``."""
    if fmt == "csv":
        lines = [f"# config: {json.dumps(report.config, sort_keys=True, separators=(',', ':'))}"]
        lines.append(REPORT_HEADER)
        for row in _sorted_rows(report.rows):
            lines.append(
                ",".join(
                    _cell(v)
                    for v in (row.case, row.k, row.size, row.recall, row.bias_l2,
                              row.valid_l2, row.n_success, row.n_total)
                )
            )
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    elif fmt == "json":
        doc = report_document(report)
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def report_document(report: MetricsReport) -> dict:
    return {
        "format": _REPORT_FORMAT,
        "version": _REPORT_VERSION,
        "config": report.config,
        "rows": [asdict(row) for row in _sorted_rows(report.rows)],
    }


def parse_report_csv(path: str) -> tuple[dict, list[MetricsRow]]:
    """Read back an exported CSV report; numeric fields round-trip exactly."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    config: dict = {}
    body = []
    for line in lines:
        if line.startswith("# config: "):
            config = json.loads(line[len("# config: "):])
        elif line.strip():
            body.append(line)
    if not body or body[0] != REPORT_HEADER:
        raise ReportFormatError(f"missing or unexpected header in {path!r}")
    rows = []
    for line in body[1:]:
        cells = line.split(",")
        if len(cells) != 8:
            raise ReportFormatError(f"bad row {line!r}")
        try:
            rows.append(
                MetricsRow(
                    case=cells[0],
                    k=int(cells[1]),
                    size=float(cells[2]),
                    recall=float(cells[3]),
                    bias_l2=float(cells[4]) if cells[4] else None,
                    valid_l2=float(cells[5]) if cells[5] else None,
                    n_success=int(cells[6]),
                    n_total=int(cells[7]),
                )
            )
        except ValueError as exc:
            raise ReportFormatError(f"bad row {line!r}: {exc}") from exc
    return config, rows


def load_report_json(path: str) -> tuple[dict, list[MetricsRow]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ReportFormatError(f"corrupt report: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != _REPORT_FORMAT:
        raise ReportFormatError("not a report document")
    if doc.get("version") != _REPORT_VERSION:
        raise ReportFormatError(f"unsupported report version {doc.get('version')!r}")
    rows = [
        MetricsRow(
            case=str(rec["case"]),
            k=int(rec["k"]),
            size=float(rec["size"]),
            recall=float(rec["recall"]),
            bias_l2=None if rec["bias_l2"] is None else float(rec["bias_l2"]),
            valid_l2=None if rec["valid_l2"] is None else float(rec["valid_l2"]),
            n_success=int(rec["n_success"]),
            n_total=int(rec["n_total"]),
        )
        for rec in doc["rows"]
    ]
    return dict(doc.get("config", {})), rows


def report_schema() -> dict:
    """The shipped JSON schema for report documents."""
    text = (resources.files("fdialab") / "schemas" / "report.schema.json").read_text("utf-8")
    return json.loads(text)


def export_vanilla(rows: list[VanillaRow], fmt: str, path: str) -> None:
    """Write a vanilla sweep table as ``csv`` or ``json``."""
    ordered = sorted(rows, key=lambda r: (r.case, r.k, r.alpha))
    if fmt == "csv":
        lines = [VANILLA_HEADER]
        for row in ordered:
            lines.append(
                ",".join(
                    _cell(v)
                    for v in (row.case, row.k, row.alpha, row.recall, row.bias_l2,
                              row.valid_l2, row.n_success, row.n_total)
                )
            )
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    elif fmt == "json":
        doc = {
            "format": "fdialab-vanilla-report",
            "version": _REPORT_VERSION,
            "rows": [asdict(row) for row in ordered],
        }
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def export_vectors(path: str, blocks: dict[str, "np.ndarray"]) -> None:
    """Raw vector export for external embedding tools.

    One CSV row per vector: a ``group`` tag column followed by the vector
    components with full precision.
    """
    import numpy as np

    widths = {block.shape[1] for block in blocks.values()}
    if len(widths) > 1:
        raise ValueError("all vector blocks must share one width")
    width = widths.pop() if widths else 0
    lines = ["group," + ",".join(f"z_{j}" for j in range(width))]
    for name in sorted(blocks):
        for row in np.asarray(blocks[name], dtype=float):
            lines.append(name + "," + ",".join(format(x, ".17g") for x in row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

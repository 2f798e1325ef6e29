"""Serialize analytics tables and whole reports to CSV, JSON and Markdown."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Mapping, Optional

from .metrics import (
    ComparisonRow,
    CountryRow,
    CountryTable,
    DeviceStats,
    PortCount,
    PrevalenceRow,
    build_country_table,
    percent,
    round2,
)
from .model import DeviceFamily
from .rules.ruleset import STRIDE, format_stride, stride_letters

FORMATS = ("csv", "json", "md")
REPORT_VERSION = 1


def fmt2(value) -> str:
    return f"{round2(Decimal(value)):.2f}"


def fmt1(value) -> str:
    return f"{Decimal(value).quantize(Decimal('0.1'), rounding=ROUND_HALF_UP):.1f}"


def country_label(code: str, name: str) -> str:
    return f"{name} ({code})" if code else name


@dataclass(frozen=True)
class PrevalenceTable:
    rows: tuple[PrevalenceRow, ...]
    devices: int


@dataclass(frozen=True)
class PortTable:
    rows: tuple[PortCount, ...]
    hosts: int


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]


@dataclass(frozen=True)
class _Grid:
    headers: list[str]
    rows: list[list[str]]
    footer: list[list[str]]


# ---------------------------------------------------------------- JSON shapes


def _country_row_json(row: CountryRow) -> dict:
    return {
        "country_code": row.country_code,
        "country_name": row.country_name,
        "dev_abs": row.dev_abs,
        "dev_rel": fmt2(row.dev_rel),
        "cve_abs": row.cve_abs,
        "cve_rel": fmt2(row.cve_rel),
        "weighted_abs": str(row.weighted_abs),
        "weighted_rel": fmt2(row.weighted_rel),
    }


def _country_json(table: CountryTable) -> dict:
    return {
        "kind": "country",
        "top_k": table.top_k,
        "rows": [_country_row_json(r) for r in table.rows],
        "top_k_sums": _country_row_json(table.top_k_sums),
        "total_sums": _country_row_json(table.total_sums),
    }


def _prevalence_json(table: PrevalenceTable) -> dict:
    return {
        "kind": "prevalence",
        "devices": table.devices,
        "rows": [
            {
                "key": r.key,
                "occ_abs": r.occ_abs,
                "occ_rel": fmt2(r.occ_rel),
                "stride": format_stride(r.stride),
                "cves": list(r.cves),
            }
            for r in table.rows
        ],
    }


def _comparison_json(table: ComparisonTable) -> dict:
    rows = []
    for r in table.rows:
        rows.append(
            {
                "family": r.family.value,
                "name": r.family.display_name,
                "dev_abs": r.dev_abs,
                "dev_rel": fmt2(r.dev_rel),
                "class_prevalence": {ch: fmt2(r.class_prevalence[ch]) for ch in STRIDE},
                "class_devices": {ch: r.class_devices[ch] for ch in STRIDE},
                "cve_abs": r.cve_abs,
                "cve_rel": fmt2(r.cve_rel),
                "weighted_abs": str(r.weighted_abs),
                "weighted_rel": fmt2(r.weighted_rel),
                "mean_cvss": fmt2(r.mean_cvss),
            }
        )
    return {"kind": "comparison", "rows": rows}


def _stats_json(stats: DeviceStats) -> dict:
    return {
        "kind": "device_stats",
        "devices": stats.devices,
        "mean": fmt2(stats.mean_findings_per_device),
        "median": fmt2(stats.median_findings_per_device),
        "min": stats.min,
        "max": stats.max,
        "variance": fmt2(stats.variance),
    }


def _ports_json(table: PortTable) -> dict:
    return {
        "kind": "ports",
        "hosts": table.hosts,
        "rows": [
            {"transport": r.transport, "port": r.port, "count": r.count, "percent": fmt2(r.percent)}
            for r in table.rows
        ],
    }


def table_to_json(table) -> dict:
    if isinstance(table, CountryTable):
        return _country_json(table)
    if isinstance(table, PrevalenceTable):
        return _prevalence_json(table)
    if isinstance(table, ComparisonTable):
        return _comparison_json(table)
    if isinstance(table, DeviceStats):
        return _stats_json(table)
    if isinstance(table, PortTable):
        return _ports_json(table)
    raise TypeError(f"not a table: {type(table).__name__}")


def table_from_json(doc: Mapping[str, Any]):
    """Rebuild a table from its JSON form; percentages are recomputed from the counts."""
    kind = doc.get("kind")
    if kind == "country":
        counts = [
            (r["country_code"], r["country_name"], r["dev_abs"], r["cve_abs"], Decimal(r["weighted_abs"]))
            for r in doc["rows"]
        ]
        return build_country_table(counts, doc["top_k"])
    if kind == "prevalence":
        n = doc["devices"]
        return PrevalenceTable(
            tuple(
                PrevalenceRow(
                    r["key"], r["occ_abs"], percent(r["occ_abs"], n), stride_letters(r["stride"]), tuple(r["cves"]), n
                )
                for r in doc["rows"]
            ),
            n,
        )
    if kind == "ports":
        n = doc["hosts"]
        return PortTable(
            tuple(PortCount(r["transport"], r["port"], r["count"], percent(r["count"], n), n) for r in doc["rows"]), n
        )
    if kind == "comparison":
        total_dev = sum(r["dev_abs"] for r in doc["rows"])
        total_cve = sum(r["cve_abs"] for r in doc["rows"])
        total_w = sum((Decimal(r["weighted_abs"]) for r in doc["rows"]), Decimal(0))
        rows = []
        for r in doc["rows"]:
            w = Decimal(r["weighted_abs"])
            rows.append(
                ComparisonRow(
                    family=DeviceFamily(r["family"]),
                    dev_abs=r["dev_abs"],
                    dev_rel=percent(r["dev_abs"], total_dev),
                    class_prevalence={ch: percent(r["class_devices"][ch], r["dev_abs"]) for ch in STRIDE},
                    class_devices={ch: r["class_devices"][ch] for ch in STRIDE},
                    cve_abs=r["cve_abs"],
                    cve_rel=percent(r["cve_abs"], total_cve),
                    weighted_abs=w,
                    weighted_rel=percent(w, total_w),
                    mean_cvss=w / r["cve_abs"] if r["cve_abs"] else Decimal(0),
                )
            )
        return ComparisonTable(tuple(rows))
    if kind == "device_stats":
        return DeviceStats(
            doc["devices"], Decimal(doc["mean"]), Decimal(doc["median"]), doc["min"], doc["max"], Decimal(doc["variance"])
        )
    raise ValueError(f"unknown table kind {kind!r}")


# ---------------------------------------------------------------- grids


def _country_cells(row: CountryRow, label: str) -> list[str]:
    return [
        label,
        str(row.dev_abs),
        fmt2(row.dev_rel),
        str(row.cve_abs),
        fmt2(row.cve_rel),
        fmt1(row.weighted_abs),
        fmt2(row.weighted_rel),
    ]


def _grid(table) -> _Grid:
    if isinstance(table, CountryTable):
        rows = [_country_cells(r, country_label(r.country_code, r.country_name)) for r in table.rows]
        footer = []
        if table.rows:
            footer = [
                _country_cells(table.top_k_sums, f"Σ Top{table.top_k}"),
                _country_cells(table.total_sums, "Σ Total"),
            ]
        headers = [
            "Country",
            "No. of Devices Abs.",
            "No. of Devices Rel. in %",
            "No. of CVEs Abs.",
            "No. of CVEs Rel. in %",
            "Weighted by CVSS Abs.",
            "Weighted by CVSS Rel. in %",
        ]
        return _Grid(headers, rows, footer)
    if isinstance(table, PrevalenceTable):
        return _Grid(
            ["CVE", "No. of occurrences Abs.", "No. of occurrences Rel. in %", "Class"],
            [[r.key, str(r.occ_abs), fmt2(r.occ_rel), format_stride(r.stride)] for r in table.rows],
            [],
        )
    if isinstance(table, ComparisonTable):
        headers = ["Device", "No. of Devices Abs.", "No. of Devices Rel. in %"] + list(STRIDE) + [
            "No. of CVEs Abs.",
            "No. of CVEs Rel. in %",
            "Weighted by CVSS Abs.",
            "Weighted by CVSS Rel. in %",
            "Mean CVSS",
        ]
        rows = [
            [r.family.display_name, str(r.dev_abs), fmt2(r.dev_rel)]
            + [fmt2(r.class_prevalence[ch]) for ch in STRIDE]
            + [str(r.cve_abs), fmt2(r.cve_rel), fmt1(r.weighted_abs), fmt2(r.weighted_rel), fmt2(r.mean_cvss)]
            for r in table.rows
        ]
        return _Grid(headers, rows, [])
    if isinstance(table, DeviceStats):
        s = table
        return _Grid(
            ["Devices", "Mean per device", "Median per device", "Min", "Max", "Variance"],
            [[str(s.devices), fmt2(s.mean_findings_per_device), fmt2(s.median_findings_per_device),
              str(s.min), str(s.max), fmt2(s.variance)]],
            [],
        )
    if isinstance(table, PortTable):
        return _Grid(
            ["Port", "Transport", "Count", "Rel. in %"],
            [[str(r.port), r.transport, str(r.count), fmt2(r.percent)] for r in table.rows],
            [],
        )
    raise TypeError(f"not a table: {type(table).__name__}")


def _csv(grid: _Grid) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(grid.headers)
    writer.writerows(grid.rows + grid.footer)
    return buf.getvalue()


def _md_cell(text: str) -> str:
    return text.replace("|", "\\|")


def _markdown(grid: _Grid) -> str:
    lines = ["| " + " | ".join(_md_cell(h) for h in grid.headers) + " |"]
    lines.append("|" + "|".join(["---"] + ["---:"] * (len(grid.headers) - 1)) + "|")
    for row in grid.rows:
        lines.append("| " + " | ".join(_md_cell(c) for c in row) + " |")
    for row in grid.footer:
        lines.append("| " + " | ".join(f"**{_md_cell(c)}**" for c in row) + " |")
    return "\n".join(lines) + "\n"


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def _coerce(table, kind: Optional[str]):
    """Accept the plain row lists returned by the metrics functions."""
    if not isinstance(table, (list, tuple)):
        return table
    first = table[0] if table else None
    if kind == "prevalence" or isinstance(first, PrevalenceRow):
        return PrevalenceTable(tuple(table), first.devices if first else 0)
    if kind == "ports" or isinstance(first, PortCount):
        return PortTable(tuple(table), first.hosts if first else 0)
    if kind == "comparison" or isinstance(first, ComparisonRow):
        return ComparisonTable(tuple(table))
    raise TypeError("empty row list: pass kind= to say which table it is")


def emit_table(table, fmt: str, kind: Optional[str] = None) -> bytes:
    table = _coerce(table, kind)
    if fmt == "json":
        return _dumps(table_to_json(table)).encode("utf-8")
    if fmt == "csv":
        return _csv(_grid(table)).encode("utf-8")
    if fmt == "md":
        return _markdown(_grid(table)).encode("utf-8")
    raise ValueError(f"format must be one of {', '.join(FORMATS)}")


def parse_table(data: bytes):
    return table_from_json(json.loads(data))


# ---------------------------------------------------------------- whole reports


@dataclass(frozen=True)
class FamilyReport:
    family: DeviceFamily
    countries: CountryTable
    prevalence: PrevalenceTable
    stats: DeviceStats
    stats_vulnerable: DeviceStats
    ports: PortTable


@dataclass(frozen=True)
class Report:
    source: str
    hosts: int
    unidentified: int
    families: tuple[FamilyReport, ...]
    comparison: ComparisonTable


def report_to_json(report: Report) -> dict:
    return {
        "report_version": REPORT_VERSION,
        "input": {"source": report.source, "hosts": report.hosts, "unidentified": report.unidentified},
        "families": [
            {
                "family": f.family.value,
                "name": f.family.display_name,
                "devices": f.stats.devices,
                "country_table": _country_json(f.countries),
                "prevalence": _prevalence_json(f.prevalence),
                "device_stats": _stats_json(f.stats),
                "device_stats_vulnerable": _stats_json(f.stats_vulnerable),
                "port_frequency": _ports_json(f.ports),
            }
            for f in report.families
        ],
        "comparison": _comparison_json(report.comparison),
    }


def _sections(report: Report):
    for f in report.families:
        name = f.family.display_name
        yield f"{name}: devices and CVEs per country", f.countries
        yield f"{name}: occurrences per CVE", f.prevalence
        yield f"{name}: CVEs per device", f.stats
        yield f"{name}: CVEs per vulnerable device", f.stats_vulnerable
        yield f"{name}: exposed ports", f.ports
    yield "Inter-device comparison", report.comparison


def emit_report(report: Report, fmt: str) -> bytes:
    if fmt == "json":
        return _dumps(report_to_json(report)).encode("utf-8")
    if fmt == "csv":
        parts = [f"# {title}\n" + _csv(_grid(table)) for title, table in _sections(report)]
        return "\n".join(parts).encode("utf-8")
    if fmt == "md":
        head = (
            f"# Exposure report\n\nHosts read: {report.hosts}; "
            f"identified: {report.hosts - report.unidentified}; unidentified: {report.unidentified}\n"
        )
        parts = [head] + [f"## {title}\n\n" + _markdown(_grid(table)) for title, table in _sections(report)]
        return "\n".join(parts).encode("utf-8")
    raise ValueError(f"format must be one of {', '.join(FORMATS)}")

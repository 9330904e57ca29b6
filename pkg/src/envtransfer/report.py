"""Transferability tiers and table rendering (markdown, CSV, JSON)."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError, UsageError
from .metrics import COUNTS, METRIC_NAMES, MetricSuite

TIERS = (
    "LinearTransfer",
    "NonLinearCandidate",
    "PartialReuse",
    "InvalidRegionReuse",
    "NoDetectedTransfer",
)
FORMATS = ("md", "csv", "json")
CSV_HEADER = ["label", "es", *METRIC_NAMES, "noise_ratio", "tier"]
PREFERENCE_NOTE = "Lower performance values are better: top configurations are the fastest."


@dataclass(frozen=True)
class Thresholds:
    corr: float = 0.9
    kl: float = 3.0
    importance: float = 0.8
    interaction: float = 0.8
    invalid: float = 0.8


@dataclass(frozen=True)
class TransferClass:
    tier: str
    rationale: tuple[tuple[str, float, float], ...] = ()

    def __post_init__(self) -> None:
        if self.tier not in TIERS:
            raise ValueError(f"unknown tier {self.tier!r}")
        object.__setattr__(self, "rationale", tuple(tuple(r) for r in self.rationale))
        if self.tier != "NoDetectedTransfer" and not self.rationale:
            raise ValueError(f"tier {self.tier} needs a rationale")


@dataclass(frozen=True)
class ReportRow:
    label: str
    severity: str | None
    suite: MetricSuite
    tclass: TransferClass


def classify(suite: MetricSuite, thresholds: Thresholds | None = None) -> TransferClass:
    """First matching rule wins; an NA metric never satisfies a rule."""
    th = thresholds or Thresholds()
    if suite.m1 is not None and suite.m1 >= th.corr:
        return TransferClass("LinearTransfer", (("m1", suite.m1, th.corr),))
    if suite.m2 is not None and suite.m2 < th.kl:
        return TransferClass("NonLinearCandidate", (("m2", suite.m2, th.kl),))
    partial = [(name, value, limit)
               for name, value, limit in (("m10", suite.m10, th.importance),
                                          ("m14", suite.m14, th.interaction))
               if value is not None and value >= limit]
    if partial:
        return TransferClass("PartialReuse", tuple(partial))
    if suite.m17 is not None and suite.m17 >= th.invalid:
        return TransferClass("InvalidRegionReuse", (("m17", suite.m17, th.invalid),))
    return TransferClass("NoDetectedTransfer")


def format_cell(name: str, value, decimals: int | None = None) -> str:
    if value is None:
        return "N/A"
    if name in COUNTS:
        return str(int(value))
    places = 2 if decimals is None else int(decimals)
    text = f"{float(value):.{places}f}"
    if text.lstrip("-").strip("0.") == "":
        text = text.lstrip("-")  # no "-0.00"
    return text


def row_cells(row: ReportRow) -> list[str]:
    """ES, M1..M18 as rendered strings."""
    suite = row.suite
    cells = [row.severity or ""]
    for name in METRIC_NAMES:
        cells.append(format_cell(name, getattr(suite, name), suite.display.get(name)))
    return cells


def _params_line(rows: Sequence[ReportRow]) -> str | None:
    seen = []
    for row in rows:
        if row.suite.params and row.suite.params not in seen:
            seen.append(row.suite.params)
    if not seen:
        return None
    parts = [", ".join(f"{k}={v}" for k, v in p.items()) for p in seen]
    return "Parameters: " + " | ".join(parts)


def _md_escape(text: str) -> str:
    return text.replace("|", "\\|")


def render(rows: Sequence[ReportRow], fmt: str = "md") -> str:
    if fmt not in FORMATS:
        raise UsageError(f"unknown format {fmt!r}; choose one of {', '.join(FORMATS)}")
    if not rows:
        raise UsageError("nothing to render")
    if fmt == "json":
        return json.dumps([row_to_dict(r) for r in rows], indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([row.label, *row_cells(row),
                             format_cell("noise_ratio", row.suite.noise_ratio),
                             row.tclass.tier])
        return buf.getvalue()
    lines = ["# Transferability report", "", PREFERENCE_NOTE]
    params = _params_line(rows)
    if params:
        lines.append(params)
    lines.append("")
    header = ["Environment", "ES", *(n.upper() for n in METRIC_NAMES), "Tier"]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join("---" for _ in header) + "|")
    for row in rows:
        cells = [_md_escape(row.label), *row_cells(row), row.tclass.tier]
        lines.append("| " + " | ".join(cells) + " |")
    notes = [(row.label, n) for row in rows for n in row.suite.notes]
    if notes:
        lines += ["", "Notes:", ""]
        lines += [f"- {_md_escape(label)}: {note}" for label, note in notes]
    return "\n".join(lines) + "\n"


def row_to_dict(row: ReportRow) -> dict:
    return {
        "label": row.label,
        "es": row.severity,
        "tier": row.tclass.tier,
        "rationale": [list(r) for r in row.tclass.rationale],
        "suite": row.suite.to_dict(),
    }


def row_from_dict(raw: dict) -> ReportRow:
    try:
        suite = MetricSuite.from_dict(raw["suite"])
        tclass = TransferClass(raw["tier"], tuple(tuple(r) for r in raw.get("rationale", ())))
        return ReportRow(raw["label"], raw.get("es"), suite, tclass)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed report entry: {exc}") from None


def load_report_json(text: str) -> list[ReportRow]:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"report is not valid JSON: {exc}") from None
    if isinstance(raw, dict):
        raw = [raw]
    return [row_from_dict(r) for r in raw]


# -- published table rows ----------------------------------------------------


def _parse_cell(name: str, text: str) -> tuple[float | int | None, int | None]:
    text = text.strip()
    if text.upper() == "N/A":
        return None, None
    try:
        if name in COUNTS:
            return int(text), None
        decimals = len(text.split(".", 1)[1]) if "." in text else 0
        return float(text), decimals
    except ValueError:
        raise DataError(f"{name}: cannot parse cell {text!r}") from None


def parse_table_row(label: str, severity: str, cells: Sequence[str]) -> ReportRow:
    """Build a row from 18 published cell strings, keeping their precision."""
    if len(cells) != len(METRIC_NAMES):
        raise DataError(f"{label}: expected 18 metric cells, got {len(cells)}")
    values, display = {}, {}
    for name, text in zip(METRIC_NAMES, cells):
        value, decimals = _parse_cell(name, text)
        values[name] = value
        if decimals is not None:
            display[name] = decimals
    suite = MetricSuite(**values, display=display)
    return ReportRow(label, severity or None, suite, classify(suite))


def load_table_fixture(path: str | Path | None = None) -> list[ReportRow]:
    """Load published rows (columns: system,label,change,es,m1..m18).

    Without a path, the bundled rows are used.
    """
    if path is None:
        text = resources.files("envtransfer").joinpath("data/published_rows.csv").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for rec in reader:
        label = f"{rec['system']} {rec['label']}: {rec['change']}"
        rows.append(parse_table_row(label, rec["es"], [rec[n] for n in METRIC_NAMES]))
    return rows


def reclassify(rows: Iterable[ReportRow], thresholds: Thresholds) -> list[ReportRow]:
    return [ReportRow(r.label, r.severity, r.suite, classify(r.suite, thresholds)) for r in rows]


def thresholds_dict(th: Thresholds) -> dict:
    return asdict(th)

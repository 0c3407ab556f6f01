"""Keyed metric tables serialised side by side as JSON (canonical) and CSV."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .errors import InvalidInput

SHORT_COLUMN = "short"
VALID_SUFFIX = "_valid"
# numeric bookkeeping columns that are never correlated unless asked for
NON_METRIC_COLUMNS = frozenset({SHORT_COLUMN, "n", "D", "n_tokens", "tokens", "alpha",
                                "zero_norm_rows", "phd_restart_std"})


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _clean(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, "item"):  # numpy scalar
        return _clean(value.item())
    return value


@dataclass
class Report:
    """Rows keyed by document / cloud id; every row carries every column.

    ``metadata`` holds provenance such as the config hash, seed and tool
    version, and optionally ``metrics``: the columns meant for correlation.
    """

    columns: list[str] = field(default_factory=list)
    rows: dict[str, dict[str, Any]] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def add_row(self, row_id: str, values: dict[str, Any]) -> None:
        row_id = str(row_id)
        if row_id in self.rows:
            raise InvalidInput(f"duplicate row id {row_id!r}")
        for key in values:
            if key not in self.columns:
                self.columns.append(key)
                for row in self.rows.values():
                    row[key] = None
        self.rows[row_id] = {c: _clean(values.get(c)) for c in self.columns}

    def column(self, name: str) -> list[Any]:
        return [row[name] for row in self.rows.values()]

    @property
    def metrics(self) -> list[str]:
        declared = self.metadata.get("metrics")
        if declared:
            return [c for c in declared if c in self.columns]
        return [c for c in self.columns
                if c not in NON_METRIC_COLUMNS and not c.endswith(VALID_SUFFIX)
                and any(isinstance(v, (int, float)) and not isinstance(v, bool)
                        for v in self.column(c))]

    def gated(self, include_invalid: bool = False, include_short: bool = False) -> "Report":
        """Copy with short rows dropped and invalid estimates nulled."""
        out = Report(list(self.columns), {}, dict(self.metadata))
        for row_id, row in self.rows.items():
            if not include_short and row.get(SHORT_COLUMN) is True:
                continue
            row = dict(row)
            if not include_invalid:
                for c in self.columns:
                    if row.get(c + VALID_SUFFIX) is False:
                        row[c] = None
            out.rows[row_id] = row
        return out

    # -- serialisation -----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "metadata": self.metadata,
            "columns": self.columns,
            "rows": [{"id": rid, **row} for rid, row in self.rows.items()],
        }
        return json.dumps(doc, indent=2, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", *self.columns])
        for rid, row in self.rows.items():
            writer.writerow([rid, *(_csv_cell(row[c]) for c in self.columns)])
        return buf.getvalue()

    def write(self, path: str | Path) -> tuple[Path, Path]:
        """Write ``<stem>.json`` and ``<stem>.csv`` next to each other."""
        path = Path(path)
        json_path = path.with_suffix(".json")
        csv_path = path.with_suffix(".csv")
        json_path.write_text(self.to_json(), encoding="utf-8")
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        return json_path, csv_path

    @classmethod
    def from_json(cls, text: str) -> "Report":
        try:
            doc = json.loads(text)
            columns = list(doc["columns"])
            rows = {}
            for rec in doc["rows"]:
                rec = dict(rec)
                rid = str(rec.pop("id"))
                rows[rid] = {c: rec.get(c) for c in columns}
            return cls(columns, rows, dict(doc.get("metadata", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInput(f"malformed report JSON: {exc}") from exc

    @classmethod
    def from_csv(cls, text: str) -> "Report":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInput("empty report CSV")
        if not header or header[0] != "id":
            raise InvalidInput("report CSV must start with an 'id' column")
        report = cls()
        for rec in reader:
            if not rec:
                continue
            if len(rec) != len(header):
                raise InvalidInput(f"report CSV row {rec[0]!r} has {len(rec)} fields, expected {len(header)}")
            report.add_row(rec[0], {c: _parse_cell(v) for c, v in zip(header[1:], rec[1:])})
        return report

    @classmethod
    def read(cls, path: str | Path) -> "Report":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix.lower() == ".csv":
            return cls.from_csv(text)
        return cls.from_json(text)


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, dict)):
        return json.dumps(value)
    return str(value)


def _parse_cell(text: str) -> Any:
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def merge(reports: Iterable[Report]) -> Report:
    """Join reports on row id; a column name already taken is prefixed ``r<k>.``."""
    reports = list(reports)
    name_maps: list[dict[str, str]] = []
    taken: set[str] = set()
    for k, r in enumerate(reports):
        names = {c: (f"r{k}.{c}" if c in taken else c) for c in r.columns}
        taken.update(names.values())
        name_maps.append(names)
    ids: list[str] = []
    for r in reports:
        ids.extend(i for i in r.rows if i not in ids)
    out = Report(metadata={"merged": [r.metadata for r in reports]})
    for rid in ids:
        values: dict[str, Any] = {}
        for r, names in zip(reports, name_maps):
            row = r.rows.get(rid, {})
            values.update({names[c]: row.get(c) for c in r.columns})
        out.add_row(rid, values)
    out.metadata["metrics"] = [names[c] for r, names in zip(reports, name_maps) for c in r.metrics]
    return out

"""Result tables and their on-disk form (CSV plus a JSON sidecar)."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    if hasattr(value, "item"):  # numpy scalar
        return _fmt(value.item())
    return str(value)


@dataclass
class ResultTable:
    """Replicate-level rows plus the resolved config, version and summaries."""

    kind: str
    columns: list
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    version: str = ""
    summary: dict = field(default_factory=dict)

    def column(self, name, **where):
        return [r[name] for r in self.rows if all(r.get(k) == v for k, v in where.items())]

    def to_csv(self):
        from io import StringIO

        buf = StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(row.get(c, "")) for c in self.columns])
        return buf.getvalue()

    def metadata(self, wall_time=None):
        meta = {
            "kind": self.kind,
            "version": self.version,
            "seed": self.config.get("seed"),
            "config": self.config,
            "summary": self.summary,
        }
        if wall_time is not None:
            meta["wall_time_seconds"] = wall_time
        return meta

    def write(self, out_dir, wall_time=None, stem=None):
        """Write ``<stem>.csv`` and ``<stem>.meta.json``; returns both paths."""
        os.makedirs(out_dir, exist_ok=True)
        stem = stem or self.kind
        csv_path = os.path.join(out_dir, f"{stem}.csv")
        meta_path = os.path.join(out_dir, f"{stem}.meta.json")
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())
        with open(meta_path, "w", encoding="utf-8") as fh:
            json.dump(self.metadata(wall_time), fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        return csv_path, meta_path


def _json_default(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")

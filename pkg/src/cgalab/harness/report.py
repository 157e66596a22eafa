"""Report emission as CSV / JSON plus the per-slot CTR curve CSV."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict

from .experiment import MechanismRow, Report

COLUMNS = ("mechanism", "rpm", "ctr", "psi", "psi_skipped", "runtime_ms", "seed", "config_hash")


class ReportWriteError(OSError):
    pass


def _fmt(v):
    # repr round-trips floats exactly, so CSV and JSON carry identical values
    return repr(float(v)) if isinstance(v, float) else str(v)


def _open(path):
    try:
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        return open(path, "w", newline="")
    except OSError as exc:
        raise ReportWriteError(f"cannot write report to {path}: {exc}") from None


def report_to_dict(report: Report) -> dict:
    return {"seed": report.seed, "config_hash": report.config_hash,
            "rows": [asdict(r) for r in report.rows]}


def emit_report(report: Report, path, format: str = "csv") -> str:
    """Write ``report``; ``format`` is ``csv`` or ``json``. Returns the path."""
    if format == "csv":
        with _open(path) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in report.rows:
                w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    elif format == "json":
        with _open(path) as fh:
            fh.write(json.dumps(report_to_dict(report), indent=2, sort_keys=True))
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {format!r}; use csv or json")
    return str(path)


def emit_slot_ctr(report: Report, path) -> str:
    """k rows per mechanism: slot index (1-based) and mean true CTR at that slot."""
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("mechanism", "slot", "mean_ctr"))
        for r in report.rows:
            for s, c in enumerate(r.slot_ctr, 1):
                w.writerow((r.mechanism, s, _fmt(c)))
    return str(path)


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_report_json(path) -> Report:
    with open(path) as fh:
        body = json.load(fh)
    return Report([MechanismRow(**r) for r in body["rows"]], body["seed"], body["config_hash"])

"""Hit-log parsing, sessionization and temporal train/test splitting."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass

from .models import Dataset, HitRecord, ReportKind, Session

log = logging.getLogger(__name__)

DEFAULT_SESSION_TIMEOUT = 1800  # seconds; standard 30-minute web sessionization

_REQUIRED = ("user_id", "ts", "report_id", "kind", "metric", "dim_element", "values")


class FormatError(ValueError):
    pass


@dataclass
class ParseResult:
    records: list[HitRecord]
    skipped: int


def _record_from_mapping(row: dict) -> HitRecord:
    missing = [k for k in _REQUIRED if row.get(k) in (None, "")]
    if missing:
        raise ValueError(f"missing fields: {missing}")
    kind = ReportKind(str(row["kind"]).lower())
    values = row["values"]
    if isinstance(values, str):
        values = [float(v) for v in values.split(";") if v != ""]
    return HitRecord(
        user_id=str(row["user_id"]),
        timestamp=int(row["ts"]),
        report_id=str(row["report_id"]),
        report_kind=kind,
        metric=str(row["metric"]),
        dimension_element=str(row["dim_element"]),
        values=tuple(float(v) for v in values),
        session_hint=row.get("session") or None,
    )


def parse_hits(source, format: str = "jsonl") -> ParseResult:
    """Parse a byte or text stream of hit records.

    Malformed rows are skipped and counted; more than 50% malformed rows
    raises FormatError.
    """
    if isinstance(source, bytes):
        source = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        source = io.StringIO(source)
    elif hasattr(source, "read") and isinstance(source.read(0), bytes):
        source = io.TextIOWrapper(source, encoding="utf-8")

    records: list[HitRecord] = []
    skipped = 0
    total = 0
    if format == "jsonl":
        for line in source:
            line = line.strip()
            if not line:
                continue
            total += 1
            try:
                records.append(_record_from_mapping(json.loads(line)))
            except (ValueError, TypeError, KeyError) as exc:
                skipped += 1
                log.debug("skipping malformed row: %s", exc)
    elif format == "csv":
        reader = csv.DictReader(source)
        for row in reader:
            total += 1
            try:
                records.append(_record_from_mapping(row))
            except (ValueError, TypeError, KeyError) as exc:
                skipped += 1
                log.debug("skipping malformed row: %s", exc)
    else:
        raise ValueError(f"unknown format: {format!r}")

    if total > 0 and skipped * 2 > total:
        raise FormatError(f"{skipped}/{total} rows malformed")
    if skipped:
        log.warning("skipped %d malformed rows of %d", skipped, total)
    return ParseResult(records=records, skipped=skipped)


def sessionize(hits: list[HitRecord], timeout: float = DEFAULT_SESSION_TIMEOUT) -> list[Session]:
    """Group hits per user and cut sessions on hint change or idle gap.

    When session hints are present for a user, a new session starts whenever
    the hint changes; otherwise an inter-hit gap > timeout starts one.
    """
    if timeout <= 0:
        raise ValueError("timeout must be > 0")
    per_user: dict[str, list[HitRecord]] = {}
    for h in hits:
        per_user.setdefault(h.user_id, []).append(h)

    sessions: list[Session] = []
    for user_id in per_user:
        ordered = sorted(per_user[user_id], key=lambda h: h.timestamp)  # stable on ties
        current: list[HitRecord] = []
        for h in ordered:
            if current:
                prev = current[-1]
                if prev.session_hint is not None and h.session_hint is not None:
                    cut = h.session_hint != prev.session_hint
                else:
                    cut = h.timestamp - prev.timestamp > timeout
                if cut:
                    sessions.append(Session(user_id=user_id, hits=current))
                    current = []
            current.append(h)
        if current:
            sessions.append(Session(user_id=user_id, hits=current))
    return sessions


def temporal_split(sessions: list[Session], train_fraction: float = 0.7) -> Dataset:
    """Split sessions in time so ~train_fraction of hits land in train.

    The cut is made at a session boundary; at least one session is always
    kept on each side. Sessions overlapping the cut instant stay in train.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    if not sessions:
        raise ValueError("need at least one session")
    if len(sessions) < 2:
        raise ValueError("cannot produce a non-empty test split from one session")

    ordered = sorted(sessions, key=lambda s: (s.hits[-1].timestamp, s.hits[0].timestamp))
    total = sum(len(s) for s in ordered)
    target = train_fraction * total

    cum = 0
    n_train = 0
    for s in ordered:
        cum += len(s)
        n_train += 1
        if cum >= target:
            break
    n_train = min(n_train, len(ordered) - 1)
    n_train = max(n_train, 1)

    train = ordered[:n_train]
    test = ordered[n_train:]
    split_instant = min(s.hits[0].timestamp for s in test)
    return Dataset(train=train, test=test, split_instant=split_instant)

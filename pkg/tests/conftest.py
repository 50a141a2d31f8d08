"""Shared helpers for building hit records and sessions in tests."""
from __future__ import annotations

import numpy as np

from intentrec.models import HitRecord, ReportKind, Session


def make_hit(
    user="u1",
    ts=0,
    report="r1",
    kind=ReportKind.TIME_SERIES,
    metric="m",
    dim="d",
    values=(1.0, 2.0),
    hint=None,
):
    return HitRecord(
        user_id=user,
        timestamp=ts,
        report_id=report,
        report_kind=kind,
        metric=metric,
        dimension_element=dim,
        values=tuple(values),
        session_hint=hint,
    )


def make_session(user, reports, start=0, gap=60, hint=None, **hit_kwargs):
    """Session visiting the given report ids at fixed time gaps."""
    hits = [
        make_hit(user=user, ts=start + i * gap, report=r, hint=hint, **hit_kwargs)
        for i, r in enumerate(reports)
    ]
    return Session(user_id=user, hits=hits)


def random_sessions(rng: np.random.Generator, user="u1", n_sessions=4, n_reports=6):
    """Random sessions over a small report universe; always ≥2 hits each."""
    reports = [f"r{i}" for i in range(n_reports)]
    out = []
    t = 0
    for s in range(n_sessions):
        length = int(rng.integers(2, 6))
        path = [reports[int(rng.integers(n_reports))]]
        while len(path) < length:
            nxt = reports[int(rng.integers(n_reports))]
            if nxt != path[-1]:
                path.append(nxt)
        out.append(make_session(user, path, start=t, gap=int(rng.integers(10, 120))))
        t += 10_000
    return out

"""Summary table and per-run plot-data files."""

from __future__ import annotations

import os

import numpy as np

from .experiments import RunRecord, summary_table
from .persistence import PersistenceError, csv_text, write_bytes
from .profiles import Profile, u_star_prime

__all__ = ["emit_report", "run_label", "profile_times"]


def run_label(i: int, rec: RunRecord) -> str:
    return f"run{i:03d}_p{rec.p:g}_lam{rec.lam:g}"


def profile_times(rec: RunRecord, count: int = 5) -> list:
    """Checkpoint times for the ``u_x - U_*'`` profiles.

    Between T* and T_r when both exist, otherwise spread over the run.
    """
    tr = rec.trajectory
    ev = rec.events
    lo, hi = float(tr.times[0]), float(tr.times[-1])
    if ev is not None and ev.t_star is not None and ev.t_r is not None:
        lo, hi = ev.t_star, ev.t_r
    idx = sorted({tr.index_of(t) for t in np.linspace(lo, hi, count)})
    return [float(tr.times[i]) for i in idx]


def emit_report(records, directory) -> list:
    """Write ``summary.csv`` and, per run with a trajectory, four plot-data tables.

    Per run: ``m.csv`` (t, m), ``boundary.csv`` (t, u0), ``zero_number.csv``
    (t, N, z) from the monitor series, and ``profile_gap.csv`` with columns
    ``x`` in ``(0, 1/2]`` and one ``u_x - U_*'`` column per selected
    checkpoint. Returns the list of written paths.
    """
    records = list(records)
    if not records:
        raise ValueError("emit_report needs at least one record")
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise PersistenceError(f"{directory}: {exc.strerror}") from None
    written = []
    path = os.path.join(directory, "summary.csv")
    write_bytes(path, summary_table(records).encode())
    written.append(path)
    order = sorted(range(len(records)), key=lambda i: (records[i].p, records[i].lam))
    for j, i in enumerate(order):
        rec = records[i]
        tr = rec.trajectory
        if tr is None:
            continue
        sub = os.path.join(directory, run_label(j, rec))
        try:
            os.makedirs(sub, exist_ok=True)
        except OSError as exc:
            raise PersistenceError(f"{sub}: {exc.strerror}") from None
        t = tr.series("t")
        tables = {
            "m.csv": (("t", "m"), np.column_stack([t, tr.series("m")])),
            "boundary.csv": (("t", "u0"), np.column_stack([t, tr.series("bval")])),
            "zero_number.csv": (("t", "N", "z"), np.column_stack([t, tr.series("N"), tr.series("z")])),
        }
        times = profile_times(rec)
        half = slice(1, (tr.n - 1) // 2 + 1)
        x = tr.x[half]
        prof = Profile(rec.p)
        cols = [x]
        for tc in times:
            cols.append(tr.ux(tr.index_of(tc))[half] - u_star_prime(prof, x))
        tables["profile_gap.csv"] = (("x",) + tuple(f"t={tc!r}" for tc in times), np.column_stack(cols))
        for name, (head, data) in tables.items():
            path = os.path.join(sub, name)
            write_bytes(path, csv_text(head, data).encode())
            written.append(path)
    return written

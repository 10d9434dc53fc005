"""On-disk run records: YAML manifest, CSV tables and binary checkpoint frames.

Frame file layout: consecutive records of little-endian 64-bit floats, one per
checkpoint, each ``[t, n, h, k, u_0, ..., u_{n-1}]`` (``k = inf`` for the
untruncated scheme).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import os

import numpy as np
import yaml

from . import __version__
from .config import config_dict
from .diagnostics import EventSet, LBCInterval, RateFit, TStar
from .experiments import RunRecord, summary_table
from .solver import MONITOR_COLUMNS, SolverConfig, Trajectory

__all__ = [
    "PersistenceError",
    "HashMismatchError",
    "persist_run",
    "load_run",
    "write_frames",
    "read_frames",
    "csv_text",
    "file_sha256",
]

MANIFEST = "manifest.yaml"
FRAMES = "frames.bin"
MONITORS = "monitors.csv"
FITS = "fits.csv"
SUMMARY = "summary.csv"
FORMAT = 1


class PersistenceError(OSError):
    """I/O failure or malformed archive, with the offending path."""


class HashMismatchError(PersistenceError):
    pass


def _num(v) -> str:
    """Locale-independent full-precision decimal (round-trips through ``float``)."""
    return repr(float(v))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([x if isinstance(x, str) else _num(x) for x in r])
    return buf.getvalue()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_frames(path, times, frames, k: float) -> None:
    frames = np.asarray(frames, dtype=float)
    n = frames.shape[1]
    head = np.column_stack([np.asarray(times, float), np.full(len(times), n), np.full(len(times), 1.0 / (n - 1)),
                            np.full(len(times), k)])
    np.hstack([head, frames]).astype("<f8").tofile(path)


def read_frames(path):
    """Return ``(times, frames, k)`` from a frame file."""
    raw = np.fromfile(path, dtype="<f8")
    if raw.size < 4:
        raise PersistenceError(f"{path}: empty or truncated frame file")
    n = int(raw[1])
    rec = n + 4
    if n < 2 or raw.size % rec:
        raise PersistenceError(f"{path}: frame records do not match header n={n}")
    a = raw.reshape(-1, rec)
    if not np.allclose(a[:, 2], 1.0 / (n - 1)):
        raise PersistenceError(f"{path}: inconsistent grid spacing in frame headers")
    return a[:, 0].copy(), a[:, 4:].copy(), float(a[0, 3])


def _opt(v):
    return None if v is None else float(v)


def _events_dict(ev: EventSet | None):
    if ev is None:
        return None
    ts = ev.tstar
    return {
        "tstar": {
            "detected": bool(ts.detected), "t_star": float(ts.t_star), "uncertainty": float(ts.uncertainty),
            "window": [float(w) for w in ts.window], "n_points": int(ts.n_points),
            "crossings": [float(c) for c in ts.crossings], "nonlinear": bool(ts.nonlinear),
            "t_trigger": float(ts.t_trigger), "message": ts.message, "residual": float(ts.residual),
        },
        "lbc_intervals": [[float(iv.t_begin), float(iv.t_end), float(iv.peak), float(iv.t_peak), bool(iv.closed)]
                          for iv in ev.lbc_intervals],
        "t_detach": _opt(ev.t_detach), "t_m": _opt(ev.t_m), "t_r": _opt(ev.t_r),
        "L_estimate": _opt(ev.L_estimate), "decay_rate": _opt(ev.decay_rate),
        "tol_lbc": float(ev.tol_lbc), "trigger": float(ev.trigger),
    }


def _events_from(d) -> EventSet | None:
    if d is None:
        return None
    t = dict(d["tstar"])
    t["window"] = tuple(t["window"])
    t["crossings"] = tuple(t["crossings"])
    ev = EventSet(TStar(**t), [LBCInterval(*iv) for iv in d["lbc_intervals"]], d["t_detach"], d["t_m"], d["t_r"],
                  d["L_estimate"], d["decay_rate"], d["tol_lbc"], d["trigger"])
    return ev


def _fit_dict(f: RateFit) -> dict:
    d = dataclasses.asdict(f)
    d["fit_window"] = [float(w) for w in f.fit_window]
    return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in d.items()}


def _plain(obj):
    """Recursively convert numpy scalars and tuples for YAML."""
    if isinstance(obj, dict):
        return {str(k) if not isinstance(k, str) else k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_bytes(path, data: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise PersistenceError(f"{path}: {exc.strerror}") from None


def persist_run(record: RunRecord, directory) -> dict:
    """Write ``record`` into ``directory``; return the manifest (also written as YAML).

    File contents depend only on the record, so equal records give equal
    content hashes.
    """
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise PersistenceError(f"{directory}: {exc.strerror}") from None
    files = {}
    tr = record.trajectory
    if tr is not None:
        path = os.path.join(directory, FRAMES)
        try:
            write_frames(path, tr.times, tr.frames, tr.k)
        except OSError as exc:
            raise PersistenceError(f"{path}: {exc.strerror}") from None
        write_bytes(os.path.join(directory, MONITORS), csv_text(MONITOR_COLUMNS, tr.monitors).encode())
        files[FRAMES] = None
        files[MONITORS] = None
    fit_rows = [[name, f.exponent, f.prefactor, f.anchor_time, f.fit_window[0], f.fit_window[1], f.residual,
                 f.n_points, f.side] for name, f in sorted(record.fits.items()) if f is not None]
    write_bytes(os.path.join(directory, FITS), csv_text(
        ("name", "exponent", "prefactor", "anchor", "window_lo", "window_hi", "residual", "n_points", "side"),
        fit_rows).encode())
    write_bytes(os.path.join(directory, SUMMARY), summary_table([record]).encode())
    files[FITS] = None
    files[SUMMARY] = None
    for name in files:
        files[name] = file_sha256(os.path.join(directory, name))
    traj_meta = None
    if tr is not None:
        traj_meta = {"p": float(tr.p), "k": float(tr.k), "status": tr.status, "t_end": float(tr.t_end),
                     "steps": int(tr.steps), "newton_iterations": int(tr.newton_iterations)}
    manifest = _plain({
        "format": FORMAT,
        "version": __version__,
        "p": float(record.p),
        "lam": float(record.lam),
        "classification": record.classification,
        "solver": config_dict(record.solver),
        "events": _events_dict(record.events),
        "fits": {k: _fit_dict(v) for k, v in sorted(record.fits.items()) if v is not None},
        "ladder": record.ladder_summary,
        "k_grad": record.k_grad,
        "zero_number": {repr(float(k)): v for k, v in record.zero_number.items()},
        "series": record.series,
        "provenance": record.provenance,
        "notes": list(record.notes),
        "trajectory": traj_meta,
        "files": dict(sorted(files.items())),
    })
    write_bytes(os.path.join(directory, MANIFEST), yaml.safe_dump(manifest, sort_keys=True).encode())
    return manifest


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def load_run(directory, verify: bool = True) -> RunRecord:
    """Rebuild a :class:`RunRecord` (with its trajectory) from ``directory``.

    Every file listed in the manifest is checked against its SHA-256 hash
    when ``verify`` is set.
    """
    mpath = os.path.join(directory, MANIFEST)
    try:
        with open(mpath, encoding="utf-8") as fh:
            man = yaml.safe_load(fh)
    except OSError as exc:
        raise PersistenceError(f"{mpath}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise PersistenceError(f"{mpath}: malformed manifest ({exc})") from None
    if not isinstance(man, dict) or man.get("format") != FORMAT:
        raise PersistenceError(f"{mpath}: unsupported manifest format")
    for name, digest in man["files"].items():
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            raise PersistenceError(f"{path}: listed in manifest but missing")
        if verify and file_sha256(path) != digest:
            raise HashMismatchError(f"{path}: content hash does not match the manifest")
    solver = SolverConfig(**{k: _tuplify(v) for k, v in man["solver"].items()})
    tr = None
    if FRAMES in man["files"]:
        times, frames, k = read_frames(os.path.join(directory, FRAMES))
        mon = np.loadtxt(os.path.join(directory, MONITORS), delimiter=",", skiprows=1, ndmin=2)
        tm = man["trajectory"]
        tr = Trajectory(tm["p"], k, times, frames, mon, tm["status"], tm["t_end"], frames[-1].copy(),
                        tm["steps"], tm["newton_iterations"], solver)
    fits = {}
    for name, d in man["fits"].items():
        d = dict(d)
        d["fit_window"] = tuple(d["fit_window"])
        fits[name] = RateFit(**d)
    zn = {float(k): v for k, v in (man.get("zero_number") or {}).items()}
    return RunRecord(
        p=man["p"], lam=man["lam"], classification=man["classification"], solver=solver,
        events=_events_from(man["events"]), fits=fits, ladder_summary=man["ladder"] or {},
        k_grad=man["k_grad"] or {}, zero_number=zn, series=man["series"] or {},
        provenance=man["provenance"] or {}, notes=man["notes"] or [], trajectory=tr,
    )

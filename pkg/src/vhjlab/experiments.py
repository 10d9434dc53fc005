"""Scientific runs: classification, threshold search, rate study and sweeps."""

from __future__ import annotations

import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .diagnostics import (
    DiagnosticsConfig,
    EventSet,
    RateFit,
    boundary_value_estimate,
    decay_rate,
    detect_events,
    detect_t_star,
    effective_trigger,
    fit_rate,
    profile_gap,
    zero_number_ut,
)
from .initial_data import InitialDatum, PsiSpec, build_phi_from_psi, canonical_psi
from .profiles import Profile
from .solver import LadderResult, SolverConfig, Trajectory, run_ladder, run_single_k

log = logging.getLogger(__name__)

__all__ = [
    "GLOBAL",
    "GBU_LBC",
    "GBU_NOLBC",
    "UNRESOLVED",
    "RunRecord",
    "BisectionError",
    "classify_run",
    "gbu_indicator",
    "find_lambda_star",
    "compute_fits",
    "rate_study",
    "record_from_trajectory",
    "sweep",
    "check_invariants",
    "summary_table",
    "SUMMARY_COLUMNS",
]

GLOBAL = "GlobalClassical"
GBU_LBC = "GBU_LBC"
GBU_NOLBC = "GBU_NoLBC"
UNRESOLVED = "Unresolved"


class BisectionError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


@dataclass
class RunRecord:
    p: float
    lam: float
    classification: str
    solver: SolverConfig
    events: EventSet | None = None
    fits: dict = field(default_factory=dict)
    ladder_summary: dict = field(default_factory=dict)
    k_grad: dict = field(default_factory=dict)
    zero_number: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    ladder: LadderResult | None = field(default=None, repr=False)
    trajectory: Trajectory | None = field(default=None, repr=False)

    def __post_init__(self):
        ev = self.events
        if self.classification == GBU_LBC and (ev is None or not ev.has_lbc):
            raise ValueError("GBU_LBC requires a nonempty LBC interval list")
        if self.classification == GBU_NOLBC and (ev is None or not ev.tstar.detected or ev.has_lbc):
            raise ValueError("GBU_NoLBC requires T* and no LBC interval")

    def fit(self, name) -> RateFit | None:
        return self.fits.get(name)


def _fit_ok(ts, max_fit_residual):
    return ts.detected and np.isfinite(ts.t_star) and ts.residual <= max_fit_residual


def classify_run(traj: Trajectory, cfg: DiagnosticsConfig | None = None, events: EventSet | None = None) -> tuple:
    """Return ``(classification, events)`` for a trajectory run to ``t_max``.

    GlobalClassical needs ``m`` below the trigger throughout and a negative
    decay rate of ``max u`` over the second half of the run (the zero
    solution, which has no decay rate, also counts). A triggered run
    is GBU_LBC when an LBC interval opened and GBU_NoLBC (minimal candidate)
    otherwise. A trigger whose blow-up fit fails or has relative residual
    above ``cfg.max_fit_residual`` is Unresolved.
    """
    cfg = cfg or DiagnosticsConfig()
    max_fit_residual = cfg.max_fit_residual
    ev = events if events is not None else detect_events(traj, cfg=cfg)
    ts = ev.tstar
    if np.isfinite(ts.t_trigger):
        if not _fit_ok(ts, max_fit_residual):
            return UNRESOLVED, ev
        return (GBU_LBC if ev.has_lbc else GBU_NOLBC), ev
    if traj.status == "completed":
        if ev.decay_rate is not None and ev.decay_rate < 0:
            return GLOBAL, ev
        if not np.any(traj.series("umax")):
            return GLOBAL, ev
    return UNRESOLVED, ev


def gbu_indicator(datum: InitialDatum, cfg: SolverConfig, max_fit_residual: float = 0.25) -> bool | None:
    """Blow-up indicator of the untruncated scheme, stopping at the trigger.

    The data up to the trigger coincide with those of the full run, so the
    answer agrees with :func:`classify_run`: True for GBU, False for
    GlobalClassical, None for Unresolved.
    """
    tr = run_single_k(datum, np.inf, replace(cfg, stop_at_trigger=True))
    t, m = tr.series("t"), tr.series("m")
    if tr.status == "triggered":
        ts = detect_t_star(t, m, cfg.p, trigger=effective_trigger(cfg.trigger, m[0]))
        return True if _fit_ok(ts, max_fit_residual) else None
    rate = decay_rate(t, tr.series("umax"))
    return False if rate is not None and rate < 0 else None


def find_lambda_star(target, bracket, tol: float = 1e-3, cfg: SolverConfig | None = None,
                     retry_scale: float = 1.5, max_iter: int = 100, diag: DiagnosticsConfig | None = None):
    """Bisection for the blow-up threshold in the amplitude ``lam``.

    ``target`` is either a :class:`PsiSpec` (the indicator is then
    :func:`gbu_indicator` on ``lam * phi`` with ``cfg``) or a callable
    ``lam -> bool | None``. Stops when the bracket width is at most
    ``tol * lo``, hence at most ``tol`` times the returned midpoint. A
    ``None`` answer (Unresolved) is retried once on a grid ``retry_scale``
    times finer; a second ``None`` aborts with the partial bracket in the
    error. Returns ``(midpoint, history)`` with one entry
    ``(lo, hi, lam, answer)`` per evaluation.
    """
    if isinstance(target, PsiSpec):
        if cfg is None:
            raise ValueError("a solver configuration is needed with a PsiSpec target")
        psi_spec = target
        base = build_phi_from_psi(psi_spec, grid=cfg.n)
        cap = (diag or DiagnosticsConfig()).max_fit_residual

        def indicator(lam):
            return gbu_indicator(base.scaled(lam), cfg, cap)

        def retry(lam):
            n2 = int(round((cfg.n - 1) * retry_scale)) + 1
            return gbu_indicator(build_phi_from_psi(psi_spec, grid=n2, lam=lam), replace(cfg, n=n2), cap)
    else:
        indicator, retry = target, None

    lo, hi = map(float, bracket)
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")
    history = []

    def ask(lam):
        ans = indicator(lam)
        if ans is None and retry is not None:
            log.info("unresolved at lambda=%g; retrying on a finer grid", lam)
            ans = retry(lam)
        history.append((lo, hi, lam, ans))
        return ans

    f_lo, f_hi = ask(lo), ask(hi)
    if f_lo is None or f_hi is None:
        raise BisectionError(f"unresolved bracket endpoint; bracket ({lo:.8g}, {hi:.8g})", history)
    if f_lo == f_hi:
        raise BisectionError("invalid bracket: both endpoints in the same class", history)
    if f_lo:
        raise BisectionError("invalid bracket: blow-up below, global above", history)
    it = 0
    while hi - lo > tol * max(lo, np.finfo(float).tiny):
        if it >= max_iter:
            raise BisectionError("bisection did not converge", history)
        mid = 0.5 * (lo + hi)
        ans = ask(mid)
        if ans is None:
            raise BisectionError(f"unresolved classification at lambda={mid:.8g}; bracket ({lo:.8g}, {hi:.8g})",
                                 history)
        if ans:
            hi = mid
        else:
            lo = mid
        it += 1
    return 0.5 * (lo + hi), history


# ---------------------------------------------------------------------------
# rate study


def _decade_by_value(t, y, peak, side_mask):
    """Samples where ``peak/100 <= y <= peak/10`` inside ``side_mask``."""
    sel = side_mask & (y >= peak / 100) & (y <= peak / 10)
    if np.count_nonzero(sel) == 0:
        return None
    return float(t[sel].min()), float(t[sel].max())


def _try_fit(name, notes, *args, **kw):
    try:
        return fit_rate(*args, **kw)
    except ValueError as exc:
        notes.append(f"{name}: {exc}")
        return None


def compute_fits(traj: Trajectory, ev: EventSet, notes: list) -> dict:
    """The four rate fits of a nonminimal run plus the decay rate.

    GBU: ``m`` before T* over the detection window, anchored at T*.
    Onset and reconnection: boundary value over the decade
    ``[peak/100, peak/10]`` after ``t_detach`` and before ``t_r``.
    Regularization: ``m`` after ``t_r`` from the time ``m`` returns below the
    trigger over one decade in ``t - t_r``.
    """
    t = traj.series("t")
    m = traj.series("m")
    b = traj.series("bval")
    fits = {}
    ts = ev.tstar
    if ts.detected:
        fits["gbu"] = _try_fit("gbu", notes, t, m, ts.t_star, "before", window=ts.window)
    if ev.has_lbc and ev.t_detach is not None and ev.t_m is not None:
        peak = max(iv.peak for iv in ev.lbc_intervals)
        w = _decade_by_value(t, b, peak, (t > ev.t_detach) & (t <= ev.t_m))
        if w is not None:
            fits["lbc"] = _try_fit("lbc", notes, t, b, ev.t_detach, "after", window=w)
        if ev.t_r is not None:
            w = _decade_by_value(t, b, peak, (t >= ev.t_m) & (t < ev.t_r))
            if w is not None:
                fits["rec"] = _try_fit("rec", notes, t, b, ev.t_r, "before", window=w)
            after = np.flatnonzero((t > ev.t_r) & (m <= ev.trigger))
            if after.size:
                d0 = t[after[0]] - ev.t_r
                fits["reg"] = _try_fit("reg", notes, t, m, ev.t_r, "after", window=(ev.t_r + d0, ev.t_r + 10 * d0))
    return fits


def _ladder_summary(L: LadderResult) -> dict:
    return {
        "ks": [float(k) for k in L.ks],
        "levels": len(L.ks),
        "final_gap": float(np.max(L.gaps[-1])) if len(L.gaps) else 0.0,
        "monotonicity_violation": float(L.monotonicity_violation),
        "converged_fraction": float(np.mean(L.converged)) if len(L.converged) else 0.0,
    }


def _zero_number_summary(L: LadderResult) -> dict:
    out = {}
    for tr in L.levels:
        N = tr.series("N")
        t = tr.series("t")
        drops = np.flatnonzero(np.diff(N) != 0)
        out[float(tr.k)] = {
            "values": sorted({int(v) for v in N[1:]}),
            "nonincreasing": bool(np.all(np.diff(N[1:]) <= 0)),
            "changes": [(float(t[i + 1]), int(N[i]), int(N[i + 1])) for i in drops],
        }
    return out


def _k_grad_series(traj: Trajectory, ev: EventSet, prof: Profile, window=(0.05, 0.5)) -> dict:
    if ev.t_star is None or ev.t_r is None:
        return {}
    sel = np.flatnonzero((traj.times >= ev.t_star) & (traj.times <= ev.t_r))
    ts, kg = [], []
    for i in sel:
        gap = profile_gap(traj.frames[i], prof, window=window)
        ts.append(float(traj.times[i]))
        kg.append(gap.K_grad)
    return {"t": ts, "K_grad": kg, "max": max(kg) if kg else float("nan")}


def rate_study(datum: InitialDatum, cfg: SolverConfig, diag: DiagnosticsConfig | None = None,
               seed: int = 0, keep_ladder: bool = True) -> RunRecord:
    """Full ladder run, event detection on the top level and all rate fits."""
    diag = diag or DiagnosticsConfig(tol_ladder=cfg.tol_ladder, bv_window=cfg.bv_window)
    prof = Profile(cfg.p)
    L = run_ladder(datum, cfg)
    top = L.top
    cls, ev = classify_run(top, diag)
    notes: list = []
    fits = compute_fits(top, ev, notes) if cls in (GBU_LBC, GBU_NOLBC) else {}
    bval_ck = [boundary_value_estimate(f, prof, diag.bv_window)[0] for f in top.frames]
    rec = RunRecord(
        p=cfg.p, lam=float(datum.lam), classification=cls, solver=cfg, events=ev, fits=fits,
        ladder_summary=_ladder_summary(L), k_grad=_k_grad_series(top, ev, prof, diag.gap_window),
        zero_number=_zero_number_summary(L),
        series={"checkpoint_t": top.times.tolist(), "checkpoint_bval": bval_ck},
        provenance={"seed": seed, "n": cfg.n, "version": __version__, "datum": datum.kind, **datum.meta},
        notes=notes, ladder=L if keep_ladder else None, trajectory=top,
    )
    return rec


def record_from_trajectory(traj: Trajectory, datum: InitialDatum, diag: DiagnosticsConfig | None = None,
                           seed: int = 0) -> RunRecord:
    """Classification and fits of one trajectory (no ladder)."""
    cfg = traj.config
    diag = diag or DiagnosticsConfig(tol_ladder=cfg.tol_ladder, bv_window=cfg.bv_window)
    prof = Profile(cfg.p)
    cls, ev = classify_run(traj, diag)
    notes: list = []
    fits = compute_fits(traj, ev, notes) if cls in (GBU_LBC, GBU_NOLBC) else {}
    N = traj.series("N")
    zn = {float(traj.k): {"values": sorted({int(v) for v in N[1:]}),
                          "nonincreasing": bool(np.all(np.diff(N[1:]) <= 0))}}
    return RunRecord(
        p=cfg.p, lam=float(datum.lam), classification=cls, solver=cfg, events=ev, fits=fits,
        ladder_summary={"ks": [float(traj.k)], "levels": 1},
        k_grad=_k_grad_series(traj, ev, prof, diag.gap_window), zero_number=zn,
        provenance={"seed": seed, "n": cfg.n, "version": __version__, "datum": datum.kind, **datum.meta},
        notes=notes, trajectory=traj,
    )


def sweep(cells, base: SolverConfig, psi_spec: PsiSpec | None = None, workers: int = 1, seed: int = 0,
          diag: DiagnosticsConfig | None = None) -> list:
    """Rate study for every ``(p, lam)`` cell; records ordered by ``(p, lam)``.

    A failing cell is recorded as Unresolved with the error message and the
    sweep continues.
    """
    psi_spec = psi_spec or canonical_psi()
    cells = sorted((float(p), float(lam)) for p, lam in cells)

    def one(cell):
        p, lam = cell
        cfg = replace(base, p=p)
        datum = build_phi_from_psi(psi_spec, grid=cfg.n, lam=lam)
        try:
            return rate_study(datum, cfg, diag, seed=seed, keep_ladder=False)
        except Exception as exc:  # recorded per cell, the sweep goes on
            log.warning("cell p=%g lam=%g failed: %s", p, lam, exc)
            return RunRecord(p=p, lam=lam, classification=UNRESOLVED, solver=cfg,
                             provenance={"seed": seed, "n": cfg.n, "version": __version__},
                             notes=[f"error: {exc}"])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, cells))
    return [one(c) for c in cells]


def check_invariants(rec: RunRecord) -> list:
    """Run-level invariants of an (archived) record; returns violation messages."""
    out = []
    for k, z in rec.zero_number.items():
        if not z.get("nonincreasing", True):
            out.append(f"zero number increases in time at level k={k:g}")
    tr = rec.trajectory
    if tr is not None:
        t = tr.series("t")
        if np.any(np.diff(t) <= 0):
            out.append("monitor times are not increasing")
        if np.any(np.diff(tr.times) <= 0):
            out.append("checkpoint times are not increasing")
        if np.any(np.diff(tr.series("N")[1:]) > 0):
            out.append("zero number of u_t increases along the run")
    ev = rec.events
    if ev is not None and ev.has_lbc:
        if ev.t_star is None:
            out.append("LBC without a blow-up time")
        elif ev.t_m is not None and not ev.t_star < ev.t_m:
            out.append("T* does not precede T_m")
        if ev.t_m is not None and ev.t_r is not None and not ev.t_m < ev.t_r:
            out.append("T_m does not precede T_r")
    if rec.classification == GBU_LBC and (ev is None or not ev.has_lbc):
        out.append("GBU_LBC without an LBC interval")
    if rec.classification == GBU_NOLBC and ev is not None and ev.has_lbc:
        out.append("GBU_NoLBC with an LBC interval")
    return out


SUMMARY_COLUMNS = ("p", "lambda", "class", "T_star", "T_m", "T_r", "exp_gbu", "exp_lbc", "exp_rec",
                   "exp_reg", "K_grad", "res_gbu", "res_lbc", "res_rec", "res_reg")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    v = float(v)
    return "" if not np.isfinite(v) else repr(v)


def summary_row(rec: RunRecord) -> list:
    ev = rec.events
    f = rec.fits

    def fe(name, attr):
        r = f.get(name)
        return None if r is None else getattr(r, attr)

    return [
        _fmt(rec.p), _fmt(rec.lam), rec.classification,
        _fmt(ev.t_star if ev else None), _fmt(ev.t_m if ev else None), _fmt(ev.t_r if ev else None),
        _fmt(fe("gbu", "exponent")), _fmt(fe("lbc", "exponent")), _fmt(fe("rec", "exponent")),
        _fmt(fe("reg", "exponent")), _fmt(rec.k_grad.get("max") if rec.k_grad else None),
        _fmt(fe("gbu", "residual")), _fmt(fe("lbc", "residual")), _fmt(fe("rec", "residual")),
        _fmt(fe("reg", "residual")),
    ]


def summary_table(records) -> str:
    """CSV text, one row per record, full-precision ``repr`` floats, ``\\n`` line ends."""
    import csv

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for rec in sorted(records, key=lambda r: (r.p, r.lam)):
        w.writerow(summary_row(rec))
    return buf.getvalue()

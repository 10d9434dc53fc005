"""Observables extracted from frames and trajectories.

Gradient norm, blow-up time, boundary value of the generalized solution,
zero number of ``u_t``, distance to the singular profile, power-law fits and
the event set (blow-up, loss and recovery of the boundary condition).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import GridFunction, diff1, diff2, nodes
from .initial_data import sign_changes
from .nonlinearity import TruncationSpec
from .profiles import Profile, u_star, u_star_prime, u_star_second

__all__ = [
    "LadderUnconverged",
    "InconsistentEvents",
    "TStar",
    "RateFit",
    "ProfileGap",
    "BernsteinReport",
    "LBCInterval",
    "EventSet",
    "DiagnosticsConfig",
    "grad_sup_norm",
    "detect_t_star",
    "fit_rate",
    "boundary_value_estimate",
    "zero_number_ut",
    "profile_gap",
    "bernstein_interior_check",
    "detect_events",
    "tol_lbc",
]


class LadderUnconverged(ValueError):
    """The truncation ladder has not converged on the requested window."""


class InconsistentEvents(RuntimeError):
    """Detected events violate the expected ordering."""


def _values(frame) -> np.ndarray:
    if isinstance(frame, GridFunction):
        return frame.values
    return np.asarray(frame, dtype=float)


def grad_sup_norm(frame) -> float:
    """Max over nodes of ``|u_x|`` (centered inside, 4-point one-sided at the ends)."""
    v = _values(frame)
    return float(np.max(np.abs(diff1(v, 1.0 / (v.size - 1)))))


def effective_trigger(trigger: float, m0: float) -> float:
    """Blow-up trigger for a run whose initial gradient is ``m0``.

    Data already steeper than the nominal trigger would otherwise fire it at
    ``t = 0``; the level is then raised to ``2 m0``.
    """
    return float(trigger) if m0 < trigger else 2.0 * float(m0)


def tol_lbc(h: float, tol_ladder: float = 1e-4) -> float:
    return max(5 * tol_ladder, 20 * h * h)


# ---------------------------------------------------------------------------
# blow-up time and power laws


@dataclass
class TStar:
    detected: bool
    t_star: float = float("nan")
    uncertainty: float = float("nan")
    window: tuple = (float("nan"), float("nan"))
    n_points: int = 0
    crossings: tuple = ()
    nonlinear: bool = False
    t_trigger: float = float("nan")
    message: str = ""
    residual: float = float("nan")

    @property
    def drift(self) -> float:
        return float(np.ptp(self.crossings)) if len(self.crossings) > 1 else 0.0


def _linear_crossing(t, y):
    """Least-squares line ``y = a + b t``; zero crossing and its standard error."""
    A = np.vstack([np.ones_like(t), t]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    a, b = coef
    ts = -a / b
    dof = max(t.size - 2, 1)
    s2 = float(np.sum((A @ coef - y) ** 2)) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    g = np.array([-1.0 / b, a / b**2])
    return float(ts), float(np.sqrt(max(g @ cov @ g, 0.0)))


def detect_t_star(t, m, p: float, trigger: float | None = None, min_points: int = 8) -> TStar:
    """Blow-up time from the linearized transform ``m^{-(p-2)}`` over the last decade of growth.

    Under the rate ``m ~ C (T - t)^{-1/(p-2)}`` the transform is linear in ``t``
    and vanishes at ``T``. The window ends at the first sample reaching
    ``trigger`` (or at the last sample when no trigger is given) and extends
    back over the monotone rise, at most one decade in ``m``. Crossing
    estimates on nested sub-windows (one decade, half, quarter in ``log m``)
    are recorded; a spread beyond three standard errors marks the transform as
    nonlinear. ``residual`` is the rms misfit of the line relative to the
    range of the transform over the window.
    """
    t = np.asarray(t, dtype=float)
    m = np.asarray(m, dtype=float)
    if t.shape != m.shape or t.size < 2:
        raise ValueError("t and m must be equal-length series")
    if trigger is not None:
        hit = np.flatnonzero(m >= trigger)
        if hit.size == 0:
            return TStar(False, message="no blow-up detected")
        hi = int(hit[0])
    else:
        hi = t.size - 1
    m_hi = m[hi]
    lo = hi
    while lo > 0 and m[lo - 1] < m[lo] and m[lo - 1] >= m_hi / 10:
        lo -= 1
    if hi - lo + 1 < max(min_points, 3):
        return TStar(False, t_trigger=float(t[hi]), message="blow-up triggered but too few points to fit")
    y = m[lo: hi + 1] ** (-(p - 2.0))
    tt = t[lo: hi + 1]
    ts, se = _linear_crossing(tt, y)
    fit = np.polyval(np.polyfit(tt, y, 1), tt)
    residual = float(np.sqrt(np.mean((fit - y) ** 2)) / max(np.ptp(y), 1e-300))
    crossings = [ts]
    span = np.log10(m_hi / m[lo])
    for frac in (0.5, 0.25):
        sel = np.log10(m_hi / m[lo: hi + 1]) <= frac * span
        if np.count_nonzero(sel) >= 4:
            crossings.append(_linear_crossing(tt[sel], y[sel])[0])
    spread = float(np.ptp(crossings))
    nonlinear = spread > max(3 * se, 1e-9 * abs(ts))
    return TStar(True, ts, se, (float(tt[0]), float(tt[-1])), int(tt.size), tuple(crossings), bool(nonlinear),
                 float(t[hi]), residual=residual)


@dataclass
class RateFit:
    exponent: float
    prefactor: float
    anchor_time: float
    fit_window: tuple
    residual: float
    n_points: int = 0
    side: str = "before"

    def __post_init__(self):
        if not self.fit_window[0] <= self.fit_window[1]:
            raise ValueError("empty fit window")


def fit_rate(t, y, anchor: float, side: str = "before", window=None, min_points: int = 8) -> RateFit:
    """Least-squares fit of ``log y`` against ``log |t - anchor|``.

    ``window`` restricts ``t`` to ``[t_lo, t_hi]``. Only samples strictly on
    the requested side of the anchor are used.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if side not in ("before", "after"):
        raise ValueError("side must be 'before' or 'after'")
    sel = t < anchor if side == "before" else t > anchor
    if window is not None:
        sel &= (t >= window[0]) & (t <= window[1])
    ts, ys = t[sel], y[sel]
    if ts.size < min_points:
        raise ValueError(f"need at least {min_points} points on the {side} side, got {ts.size}")
    if np.any(ys <= 0):
        raise ValueError("fit_rate needs positive values")
    X = np.log(np.abs(ts - anchor))
    Y = np.log(ys)
    slope, icpt = np.polyfit(X, Y, 1)
    res = float(np.sqrt(np.mean((slope * X + icpt - Y) ** 2)))
    return RateFit(float(slope), float(np.exp(icpt)), float(anchor), (float(ts.min()), float(ts.max())),
                   res, int(ts.size), side)


# ---------------------------------------------------------------------------
# frame diagnostics


def _window_mask(x, window):
    lo, hi = window
    if not 0 < lo < hi <= 0.5:
        raise ValueError("window must lie inside (0, 1/2]")
    return (x >= lo) & (x <= hi)


def boundary_value_estimate(frame, prof, window=(0.02, 0.1), gap=None, tol_ladder: float = 1e-4):
    """Fit ``u - U_* ~ v0 + c x^2`` on ``window``; return ``(v0, rms residual)``.

    ``gap`` is the ladder-gap field; when given it must stay below
    ``tol_ladder`` on the window.
    """
    prof = prof if isinstance(prof, Profile) else Profile(float(prof))
    u = _values(frame)
    x = nodes(u.size)
    sel = _window_mask(x, window)
    if np.count_nonzero(sel) < 3:
        raise ValueError("window holds fewer than 3 nodes")
    if gap is not None and np.max(np.asarray(gap)[sel]) >= tol_ladder:
        raise LadderUnconverged("ladder unconverged on the boundary window")
    A = np.vstack([np.ones(np.count_nonzero(sel)), x[sel] ** 2]).T
    rhs = u[sel] - u_star(prof, x[sel])
    coef, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - rhs) ** 2)))
    return float(coef[0]), res


def zero_number_ut(ut, x=None):
    """Sign changes of ``u_t`` over interior nodes and their interpolated locations."""
    v = _values(ut)
    if x is None:
        x = nodes(v.size)
    return sign_changes(v[1:-1], np.asarray(x)[1:-1])


@dataclass
class ProfileGap:
    K_grad: float
    K_val: float
    K_second: float
    v0: float


def profile_gap(frame, prof, window=(0.05, 0.5), v0: float | None = None) -> ProfileGap:
    """Distance to the shifted singular profile on ``window``.

    ``K_grad = sup |u_x - U_*'| / x``, ``K_val = sup |u - v0 - U_*| / (x^2/2)``,
    ``K_second = sup |u_xx - U_*''|``. The lower end of the window keeps the
    suprema away from the unresolved first cells; ``v0`` defaults to the
    boundary value estimate.
    """
    prof = prof if isinstance(prof, Profile) else Profile(float(prof))
    u = _values(frame)
    h = 1.0 / (u.size - 1)
    x = nodes(u.size)
    sel = _window_mask(x, window) & (x > 0)
    if v0 is None:
        v0 = boundary_value_estimate(u, prof)[0]
    xs = x[sel]
    kg = np.abs(diff1(u, h)[sel] - u_star_prime(prof, xs)) / xs
    kv = np.abs(u[sel] - v0 - u_star(prof, xs)) / (xs**2 / 2)
    k2 = np.abs(diff2(u, h)[sel] - u_star_second(prof, xs))
    return ProfileGap(float(kg.max()), float(kv.max()), float(k2.max()), float(v0))


@dataclass
class BernsteinReport:
    c3: float
    x_at: float


def bernstein_interior_check(frame, spec: TruncationSpec | None = None, M0=None, M1=None) -> BernsteinReport:
    """Smallest ``C3`` with ``|u_x| <= C3 (1 + 2/delta)`` at interior nodes, ``delta = min(x, 1-x)``.

    With ``m = 2`` and ``theta = 1/2`` both singular terms of the interior
    gradient bound are ``delta^{-1}``. ``M0`` and ``M1`` are recorded by the
    caller; the bound's constant depends on them but is not known in closed form.
    """
    u = _values(frame)
    x = nodes(u.size)
    ux = np.abs(diff1(u, 1.0 / (u.size - 1)))[1:-1]
    d = np.minimum(x, 1 - x)[1:-1]
    ratio = ux / (1.0 + 2.0 / d)
    i = int(np.argmax(ratio))
    return BernsteinReport(float(ratio[i]), float(x[1:-1][i]))


# ---------------------------------------------------------------------------
# events


@dataclass
class LBCInterval:
    t_begin: float
    t_end: float
    peak: float
    t_peak: float
    closed: bool = True


@dataclass
class DiagnosticsConfig:
    tol_ladder: float = 1e-4
    tol_lbc: float | None = None
    bv_window: tuple = (0.02, 0.1)
    gap_window: tuple = (0.05, 0.5)
    min_fit_points: int = 8
    l_fraction: float = 0.1
    max_fit_residual: float = 0.25

    def __post_init__(self):
        if not self.tol_ladder > 0:
            raise ValueError("tol_ladder must be positive")
        if self.tol_lbc is not None and not self.tol_lbc > 0:
            raise ValueError("tol_lbc must be positive")
        if not self.max_fit_residual > 0:
            raise ValueError("max_fit_residual must be positive")
        if not 0 < self.l_fraction < 1:
            raise ValueError("l_fraction must lie in (0, 1)")
        if self.min_fit_points < 3:
            raise ValueError("min_fit_points must be >= 3")
        for name in ("bv_window", "gap_window"):
            lo, hi = getattr(self, name)
            if not 0 < lo < hi <= 0.5:
                raise ValueError(f"{name} must satisfy 0 < lo < hi <= 1/2")

    def lbc_tolerance(self, h: float) -> float:
        return self.tol_lbc if self.tol_lbc is not None else tol_lbc(h, self.tol_ladder)


@dataclass
class EventSet:
    tstar: TStar
    lbc_intervals: list = field(default_factory=list)
    t_detach: float | None = None
    t_m: float | None = None
    t_r: float | None = None
    L_estimate: float | None = None
    decay_rate: float | None = None
    tol_lbc: float = float("nan")
    trigger: float = float("nan")

    @property
    def t_star(self) -> float | None:
        return self.tstar.t_star if self.tstar.detected else None

    @property
    def has_lbc(self) -> bool:
        return len(self.lbc_intervals) > 0


def _crossing(t0, y0, t1, y1, level=0.0):
    if y1 == y0:
        return float(t1)
    return float(t0 + (t1 - t0) * (level - y0) / (y1 - y0))


def _runs(mask):
    idx = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(int), [0]])))
    return list(zip(idx[::2], idx[1::2] - 1))


def boundary_unimodal(t, b, t_m: float, t_lo: float, t_hi: float, tol: float) -> bool:
    """``b`` increases on ``[t_lo, t_m]`` and decreases on ``[t_m, t_hi]`` up to ``tol``.

    Consecutive samples may move against the expected direction by at most
    ``tol``.
    """
    t = np.asarray(t, dtype=float)
    b = np.asarray(b, dtype=float)
    up = (t >= t_lo) & (t <= t_m)
    down = (t >= t_m) & (t <= t_hi)
    ok_up = np.all(np.diff(b[up]) > -tol) if np.count_nonzero(up) > 1 else True
    ok_down = np.all(np.diff(b[down]) < tol) if np.count_nonzero(down) > 1 else True
    return bool(ok_up and ok_down)


def decay_rate(t, umax) -> float | None:
    """Slope of ``log max u`` over the second half of the run (negative means decay)."""
    t = np.asarray(t)
    u = np.asarray(umax)
    sel = (t >= t[-1] / 2) & (u > 0)
    if np.count_nonzero(sel) < 3:
        return None
    return float(np.polyfit(t[sel], np.log(u[sel]), 1)[0])


def detect_events(traj, prof=None, cfg: DiagnosticsConfig | None = None, trigger: float | None = None) -> EventSet:
    """Assemble blow-up, boundary-loss and reconnection events from the monitor series.

    The boundary series is the per-step fit of ``u - U_* ~ v0 + c x^2``; an
    LBC interval is a maximal run with ``v0 > tol_lbc``. ``t_detach`` and
    ``t_r`` are the interpolated zero crossings of ``v0`` at the ends of the
    first and last intervals; ``t_m`` is the location of the largest value.
    """
    cfg = cfg or DiagnosticsConfig()
    p = traj.p
    h = traj.h
    t = traj.series("t")
    m = traj.series("m")
    trig = trigger if trigger is not None else 0.5 * float(u_star_prime(p, 2 * h))
    trig = effective_trigger(trig, m[0])
    b = traj.series("bval")
    z = traj.series("z")
    tol = cfg.lbc_tolerance(h)
    tstar = detect_t_star(t, m, p, trigger=trig, min_points=cfg.min_fit_points)
    ev = EventSet(tstar, tol_lbc=tol, trigger=trig, decay_rate=decay_rate(t, traj.series("umax")))

    for i0, i1 in _runs(b > tol):
        tb = _crossing(t[i0 - 1], b[i0 - 1], t[i0], b[i0], tol) if i0 > 0 else float(t[i0])
        closed = i1 + 1 < t.size
        te = _crossing(t[i1], b[i1], t[i1 + 1], b[i1 + 1], tol) if closed else float(t[i1])
        k = i0 + int(np.argmax(b[i0: i1 + 1]))
        ev.lbc_intervals.append(LBCInterval(tb, te, float(b[k]), float(t[k]), closed))

    if ev.lbc_intervals:
        first, last = ev.lbc_intervals[0], ev.lbc_intervals[-1]
        i0 = int(np.searchsorted(t, first.t_begin))
        j = i0
        while j > 0 and b[j - 1] > 0:
            j -= 1
        ev.t_detach = _crossing(t[j - 1], b[j - 1], t[j], b[j]) if j > 0 else float(t[0])
        best = max(ev.lbc_intervals, key=lambda iv: iv.peak)
        ev.t_m = best.t_peak
        if last.closed:
            j = int(np.searchsorted(t, last.t_end))
            while j < t.size and b[j] > 0:
                j += 1
            ev.t_r = _crossing(t[j - 1], b[j - 1], t[j], b[j]) if j < t.size else None

    if tstar.detected:
        win = (tstar.t_star * (1 - cfg.l_fraction), tstar.t_star)
        sel = (t >= win[0]) & (t <= win[1]) & np.isfinite(z)
        ev.L_estimate = float(np.min(z[sel])) if np.any(sel) else None

    _check_order(ev)
    return ev


def _check_order(ev: EventSet) -> None:
    if not ev.lbc_intervals:
        return
    if not ev.tstar.detected:
        raise InconsistentEvents("boundary loss detected without a blow-up trigger")
    # On a coarse grid the fitted T* extrapolates past the time the gradient
    # first reaches the resolvable level; either marks the blow-up.
    slack = max(3 * ev.tstar.uncertainty, ev.tstar.drift)
    if ev.lbc_intervals[0].t_begin < min(ev.tstar.t_star - slack, ev.tstar.t_trigger):
        raise InconsistentEvents(
            f"boundary loss at t={ev.lbc_intervals[0].t_begin:.6g} precedes T*={ev.tstar.t_star:.6g}")
    if ev.t_m is not None and ev.t_r is not None and not ev.t_m < ev.t_r:
        raise InconsistentEvents("T_m does not precede T_r")

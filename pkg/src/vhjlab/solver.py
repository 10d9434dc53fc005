"""Time stepping of the truncated problems and the truncation ladder.

Each level solves ``u_t - u_xx = F_k(u_x)`` with ``u(t, 0) = u(t, 1) = 0`` by a
theta-scheme in the diffusion (Crank-Nicolson by default) and an implicit
upwind treatment of the source; see :mod:`vhjlab._kernels`. The scheme is
monotone when the explicit part has nonnegative coefficients, i.e.
``2 (1 - theta) dt / h^2 <= 1``; with the default ``theta = 1/2`` that is
``cfl_diffusion <= 1``. Monotonicity gives the discrete maximum principle and
comparison in both the data and the truncation level.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .diagnostics import effective_trigger
from .grid import GridFunction, diff1, diff2, nodes
from .nonlinearity import ConfigurationError, TruncationSpec
from .profiles import Profile, u_star, u_star_prime

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "Trajectory",
    "LadderResult",
    "SteppingError",
    "LadderMonotonicityError",
    "step_regularized",
    "step_classical",
    "discrete_ut",
    "run_single_k",
    "run_ladder",
    "boundary_weights",
]

MONITOR_COLUMNS = ("t", "dt", "m", "umax", "N", "z", "bval", "newton")


class SteppingError(RuntimeError):
    """The discrete stepper produced non-finite values or could not converge."""


class LadderMonotonicityError(RuntimeError):
    """Levels of the truncation ladder are out of order beyond tolerance."""


@dataclass(frozen=True)
class SolverConfig:
    p: float = 3.0
    n: int = 2001
    t_max: float = 0.2
    checkpoint_every: float = 1e-3
    cfl_diffusion: float = 1.0
    cfl_source: float = 50.0
    dt_max: float = 1e-4
    theta: float = 0.5
    k0: float | None = None
    k_ratio: float = 2.0
    max_levels: int = 12
    tol_ladder: float = 1e-4
    ladder_window: tuple = (0.05, 0.95)
    bv_window: tuple = (0.02, 0.1)
    newton_tol: float = 1e-12
    newton_maxit: int = 30
    monitor_dt: float = 1e-4
    monitor_rel: float = 0.01
    stop_at_trigger: bool = False
    classical_cap: float | None = None
    workers: int = 1

    def __post_init__(self):
        if not np.isfinite(self.p) or self.p <= 2:
            raise ConfigurationError(f"p must exceed 2, got {self.p!r}")
        if int(self.n) != self.n or self.n < 8:
            raise ConfigurationError("n must be an integer >= 8")
        for name in ("t_max", "checkpoint_every", "cfl_diffusion", "cfl_source", "dt_max",
                     "tol_ladder", "newton_tol", "monitor_dt", "monitor_rel"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.5 <= self.theta <= 1.0:
            raise ConfigurationError("theta must lie in [1/2, 1]")
        if self.k0 is not None and not self.k0 > 0:
            raise ConfigurationError("k0 must be positive")
        if not self.k_ratio > 1:
            raise ConfigurationError("k_ratio must exceed 1 (ladder strictly increasing)")
        if self.max_levels < 1 or self.workers < 1:
            raise ConfigurationError("max_levels and workers must be >= 1")
        for name in ("ladder_window", "bv_window"):
            lo, hi = getattr(self, name)
            if not 0 < lo < hi < 1:
                raise ConfigurationError(f"{name} must satisfy 0 < lo < hi < 1")
        if not self.bv_window[1] <= 0.5:
            raise ConfigurationError("bv_window must lie inside (0, 1/2]")

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def trigger(self) -> float:
        """Gradient level ``0.5 U_*'(2h)`` at which blow-up fitting starts."""
        return 0.5 * float(u_star_prime(self.p, 2 * self.h))

    def dt_bound(self, gmax: float, k: float = np.inf) -> float:
        spec = TruncationSpec(self.p, k) if np.isfinite(k) else None
        fp = float(_fprime(spec, self.p, gmax))
        return min(self.dt_max, self.cfl_diffusion * self.h**2, self.cfl_source / (1.0 + fp / self.h))

    def ladder_levels(self, datum) -> list:
        k0 = self.k0 if self.k0 is not None else 2.0 * float(np.max(np.abs(datum_ux(datum, self.n))))
        k0 = max(k0, 1e-3)
        return [k0 * self.k_ratio**i for i in range(self.max_levels)]


def _fprime(spec, p, g):
    if spec is None:
        return p * g ** (p - 1.0)
    pint, kp, kp1, kp2 = K.constants(p, spec.k)
    return K.f_and_fprime(float(g), p, spec.k, pint, kp, kp1, kp2)[1]


def datum_ux(datum, n: int) -> np.ndarray:
    """Derivative of a datum on an ``n``-node grid (closed form when available)."""
    if getattr(datum, "analytic", False):
        return datum.lam * np.asarray(datum.dphi(nodes(n)))
    g = datum.on_grid(n) if hasattr(datum, "on_grid") else GridFunction(datum)
    return g.ux()


def _frame_values(frame) -> np.ndarray:
    v = np.array(frame.values if isinstance(frame, GridFunction) else frame, dtype=float)
    if v.ndim != 1 or v.size < 4:
        raise ValueError("frame must be a 1-d array of at least 4 node values")
    return v


def discrete_ut(values, p: float, k: float = np.inf) -> np.ndarray:
    """``L u + H_k(u)`` at interior nodes (zero at the ends): the scheme's own ``u_t``."""
    u = np.ascontiguousarray(values, dtype=float)
    h = 1.0 / (u.size - 1)
    H = K.upwind_hamiltonian(u, h, float(p), float(k), np.empty_like(u))
    out = np.zeros_like(u)
    out[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / (h * h) + H[1:-1]
    return out


def _step(values, p, k, dt, theta, tol, maxit):
    u = _frame_values(values)
    if abs(u[0]) > 0 or abs(u[-1]) > 0:
        raise ValueError("frame violates the zero Dirichlet condition")
    if not np.all(np.isfinite(u)):
        raise SteppingError("non-finite values in the input frame")
    if not dt > 0:
        raise ValueError("dt must be positive")
    h = 1.0 / (u.size - 1)
    v = u.copy()
    ws = [np.zeros_like(u) for _ in range(6)]
    it = K.implicit_step(u, v, float(p), float(k), h, float(dt), float(theta), float(tol), int(maxit), *ws)
    if it < 0 or not np.all(np.isfinite(v)):
        raise SteppingError(f"Newton iteration failed at dt={dt:g}; reduce the step")
    v[0] = v[-1] = 0.0
    return GridFunction(v)


def _step_tol(u, p, k, dt, theta):
    """Newton tolerance near the attainable precision of one step.

    Rounding in the residual is amplified by the size of the Jacobian's
    diagonal, ``1 + 2 theta dt/h^2 + dt F'(max slope)/h``.
    """
    h = 1.0 / (u.size - 1)
    g = float(K.max_upwind_slope(u, h))
    spec = TruncationSpec(p, k) if np.isfinite(k) else None
    diag = 1.0 + 2.0 * theta * dt / h**2 + dt * float(_fprime(spec, p, max(g, 0.0))) / h
    return 1e-14 * max(1.0, float(np.max(np.abs(u)))) * diag


def step_regularized(frame, spec: TruncationSpec, dt: float, cfg: SolverConfig | None = None) -> GridFunction:
    """Advance one step of size ``dt`` for the level ``spec.k``.

    When ``cfg`` is given, ``dt`` is checked against its step policy.
    """
    u = _frame_values(frame)
    theta = 0.5 if cfg is None else cfg.theta
    if cfg is not None:
        gmax = float(K.max_upwind_slope(u, 1.0 / (u.size - 1)))
        bound = replace(cfg, n=u.size).dt_bound(gmax, spec.k)
        if dt > bound * (1 + 1e-12):
            raise ValueError(f"dt={dt:g} exceeds the step policy bound {bound:g}")
    return _step(u, spec.p, spec.k, dt, theta, _step_tol(u, spec.p, spec.k, dt, theta), 50)


def step_classical(frame, p: float, dt: float, cap: float | None = None, theta: float = 0.5) -> GridFunction:
    """Same scheme with the untruncated source ``|u_x|^p``.

    ``cap`` bounds the admissible gradient; above it the caller must use the ladder.
    """
    u = _frame_values(frame)
    h = 1.0 / (u.size - 1)
    if cap is not None and float(K.max_upwind_slope(u, h)) > cap:
        raise ValueError("gradient exceeds the classical cap; switch to the ladder")
    return _step(u, p, np.inf, dt, theta, _step_tol(u, p, np.inf, dt, theta), 50)


def boundary_weights(n: int, p: float, window) -> tuple:
    """Weights ``w`` and constant ``c`` with ``w . u - c`` = fitted ``v0`` of ``u - U_* ~ v0 + c x^2``."""
    x = nodes(n)
    sel = (x >= window[0]) & (x <= window[1])
    if np.count_nonzero(sel) < 3:
        raise ValueError("boundary window holds fewer than 3 nodes")
    A = np.vstack([np.ones(np.count_nonzero(sel)), x[sel] ** 2]).T
    row = np.linalg.pinv(A)[0]
    w = np.zeros(n)
    w[sel] = row
    return w, float(row @ u_star(p, x[sel]))


@dataclass(eq=False)
class Trajectory:
    """Checkpoint frames and per-step monitor series of one truncation level."""

    p: float
    k: float
    times: np.ndarray
    frames: np.ndarray
    monitors: np.ndarray
    status: str
    t_end: float
    final: np.ndarray
    steps: int = 0
    newton_iterations: int = 0
    config: SolverConfig | None = None
    events: object = None
    cache: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.frames.shape[1]

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return nodes(self.n)

    def series(self, name: str) -> np.ndarray:
        return self.monitors[:, MONITOR_COLUMNS.index(name)]

    def frame(self, i: int) -> GridFunction:
        return GridFunction(self.frames[i])

    def ux(self, i: int) -> np.ndarray:
        return diff1(self.frames[i], self.h)

    def uxx(self, i: int) -> np.ndarray:
        return diff2(self.frames[i], self.h)

    def ut(self, i: int) -> np.ndarray:
        key = ("ut", i)
        if key not in self.cache:
            self.cache[key] = discrete_ut(self.frames[i], self.p, self.k)
        return self.cache[key]

    def index_of(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))


_STATUS = {0: "completed", 1: "triggered", 2: "stepper-failure"}


def run_single_k(datum, spec: TruncationSpec | float, cfg: SolverConfig) -> Trajectory:
    """Evolve one truncation level (``k = inf`` gives the untruncated scheme)."""
    k = spec.k if isinstance(spec, TruncationSpec) else float(spec)
    if isinstance(spec, TruncationSpec) and spec.p != cfg.p:
        raise ConfigurationError("truncation exponent differs from the solver exponent")
    u0 = np.array(datum.on_grid(cfg.n).values if hasattr(datum, "on_grid") else datum, dtype=float)
    if u0.size != cfg.n:
        raise ConfigurationError("datum size does not match the grid")
    if not np.all(np.isfinite(u0)):
        raise ValueError("datum has non-finite values")
    u0[0] = u0[-1] = 0.0
    w, wc = boundary_weights(cfg.n, cfg.p, cfg.bv_window)
    stop = effective_trigger(cfg.trigger, K.grad_norm(u0, cfg.h)) if cfg.stop_at_trigger else np.inf
    ck_t, ck_u, mon, final, t_end, nsteps, nnewton, status = K.integrate(
        u0, float(cfg.p), float(k), cfg.h, float(cfg.t_max), float(cfg.checkpoint_every),
        float(cfg.cfl_diffusion), float(cfg.cfl_source), float(cfg.dt_max), float(cfg.theta),
        float(cfg.newton_tol), int(cfg.newton_maxit), float(stop), w, wc,
        float(cfg.monitor_dt), float(cfg.monitor_rel),
    )
    if status == 2 or not np.all(np.isfinite(final)):
        raise SteppingError(f"stepper failure at t={t_end:.6g} (k={k:g}); non-finite or Newton divergence")
    log.debug("level k=%g: %d steps, %d Newton iterations, status %s", k, nsteps, nnewton, _STATUS[status])
    return Trajectory(cfg.p, k, ck_t, ck_u, mon, _STATUS[status], float(t_end), final,
                      int(nsteps), int(nnewton), cfg)


@dataclass(eq=False)
class LadderResult:
    levels: list
    ks: list
    gaps: np.ndarray
    converged: np.ndarray
    monotonicity_violation: float
    tol: float

    @property
    def top(self) -> Trajectory:
        return self.levels[-1]

    @property
    def times(self) -> np.ndarray:
        return self.top.times

    def gap_field(self, i: int) -> np.ndarray:
        """``|u_top - u_below|`` at checkpoint ``i``."""
        if len(self.levels) < 2:
            return np.zeros(self.top.n)
        return np.abs(self.levels[-1].frames[i] - self.levels[-2].frames[i])

    def window_converged(self, i: int, window) -> bool:
        x = self.top.x
        sel = (x >= window[0]) & (x <= window[1])
        return bool(np.max(self.gap_field(i)[sel]) < self.tol)


def _ladder_gap(a: Trajectory, b: Trajectory, window) -> np.ndarray:
    x = a.x
    sel = (x >= window[0]) & (x <= window[1])
    m = min(len(a.times), len(b.times))
    return np.max(np.abs(b.frames[:m, sel] - a.frames[:m, sel]), axis=1)


def run_ladder(datum, cfg: SolverConfig, ks=None) -> LadderResult:
    """Run increasing truncation levels until the top two agree on the window.

    Levels run in batches of ``cfg.workers`` threads (the kernels release the
    GIL); results are merged in order of ``k``. Pointwise monotonicity in
    ``k`` is checked at every shared checkpoint with tolerance ``10 h^2``.
    """
    if cfg.stop_at_trigger:
        raise ConfigurationError("the ladder needs full trajectories; unset stop_at_trigger")
    levels_k = list(ks) if ks is not None else cfg.ladder_levels(datum)
    if any(b <= a for a, b in zip(levels_k[:-1], levels_k[1:])):
        raise ConfigurationError("ladder levels must be strictly increasing")
    tol_mono = 10 * cfg.h**2
    done: list = []
    gaps = []
    batch = max(1, cfg.workers)
    i = 0
    stop = False
    while i < len(levels_k) and not stop:
        chunk = levels_k[i: i + batch]
        if batch == 1:
            trajs = [run_single_k(datum, k, cfg) for k in chunk]
        else:
            with ThreadPoolExecutor(max_workers=batch) as ex:
                trajs = list(ex.map(lambda k: run_single_k(datum, k, cfg), chunk))
        for tr in trajs:
            if done:
                g = _ladder_gap(done[-1], tr, cfg.ladder_window)
                gaps.append(g)
                if len(done) >= 1 and np.max(g) < cfg.tol_ladder:
                    done.append(tr)
                    stop = True
                    break
            done.append(tr)
        i += batch
    violation = 0.0
    for lo, hi in zip(done[:-1], done[1:]):
        m = min(len(lo.times), len(hi.times))
        violation = max(violation, float(np.max(lo.frames[:m] - hi.frames[:m])))
    if violation > tol_mono:
        raise LadderMonotonicityError(
            f"u_k decreases in k by {violation:.3e} > {tol_mono:.3e}; discretization defect")
    gap_arr = np.array(gaps) if gaps else np.zeros((0, len(done[0].times)))
    conv = gap_arr[-1] < cfg.tol_ladder if len(gaps) else np.zeros(len(done[0].times), dtype=bool)
    return LadderResult(done, [t.k for t in done], gap_arr, conv, violation, cfg.tol_ladder)

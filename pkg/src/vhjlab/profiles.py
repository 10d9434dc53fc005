"""Singular stationary profile, regularizing barriers and the separation ODE.

The profile ``U_*(x) = c_p x^{(p-2)/(p-1)}`` solves ``U'' + (U')^p = 0`` on
``x > 0`` with ``U(0) = 0`` and ``U'(0+) = +inf``. Everything here is closed
form except :func:`separation_oracle`, which integrates a first order ODE.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .nonlinearity import ConfigurationError

__all__ = [
    "Profile",
    "BarrierSpec",
    "ResidualReport",
    "SeparationBounds",
    "u_star",
    "u_star_prime",
    "u_star_second",
    "stationarity_defect",
    "barrier_shift",
    "barrier_value",
    "barrier_derivatives",
    "barrier_residual",
    "barrier_residual_check",
    "separation_oracle",
]


@dataclass(frozen=True)
class Profile:
    p: float

    def __post_init__(self):
        if not np.isfinite(self.p) or self.p <= 2:
            raise ConfigurationError(f"p must exceed 2, got {self.p!r}")

    @property
    def alpha(self) -> float:
        return 1.0 / (self.p - 1.0)

    @property
    def c_p(self) -> float:
        p = self.p
        return (p - 1.0) ** ((p - 2.0) / (p - 1.0)) / (p - 2.0)


def _as_prof(prof) -> Profile:
    return prof if isinstance(prof, Profile) else Profile(float(prof))


def _out(a):
    return a[()] if a.ndim == 0 else a


def u_star(prof, x):
    prof = _as_prof(prof)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("U_* is defined for x >= 0 only")
    return _out(prof.c_p * x ** ((prof.p - 2.0) / (prof.p - 1.0)))


def u_star_prime(prof, x):
    prof = _as_prof(prof)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("U_*' is singular at 0; need x > 0")
    return _out(((prof.p - 1.0) * x) ** (-prof.alpha))


def u_star_second(prof, x):
    prof = _as_prof(prof)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("U_*'' is singular at 0; need x > 0")
    return _out(-(((prof.p - 1.0) * x) ** (-prof.alpha - 1.0)))


def stationarity_defect(prof, x):
    """Relative defect ``|U'' + U'^p| / U'^p`` from the independent closed forms."""
    prof = _as_prof(prof)
    d1 = np.asarray(u_star_prime(prof, x))
    d2 = np.asarray(u_star_second(prof, x))
    return _out(np.abs(d2 + d1**prof.p) / d1**prof.p)


@dataclass(frozen=True)
class BarrierSpec:
    """Supersolution ``z(t,x) = U(x + a(t)) - U(a(t)) - b x^m``.

    The shift is ``a(t) = eta * t^{1/(3 - m - alpha)}``; for ``m = 2`` this is
    ``eta * t^{1/(1 - alpha)}``. A positive ``frozen_shift`` replaces ``a(t)``
    by that constant (then ``z_t = 0``).
    """

    p: float
    b: float
    m: float = 2.0
    eta: float = 0.05
    frozen_shift: float | None = None

    def __post_init__(self):
        prof = Profile(self.p)
        if not (2.0 <= self.m < 3.0 - prof.alpha):
            raise ConfigurationError(f"barrier exponent m must lie in [2, 3 - alpha) = [2, {3 - prof.alpha:g}), got {self.m!r}")
        if self.b < 0:
            raise ConfigurationError("b must be >= 0")
        if self.frozen_shift is None and not self.eta > 0:
            raise ConfigurationError("eta must be positive")
        if self.frozen_shift is not None and not self.frozen_shift > 0:
            raise ConfigurationError("frozen_shift must be positive")

    @property
    def profile(self) -> Profile:
        return Profile(self.p)

    @property
    def shift_exponent(self) -> float:
        return 1.0 / (3.0 - self.m - self.profile.alpha)


def barrier_shift(spec: BarrierSpec, t):
    """Return ``(a(t), a'(t))``."""
    t = np.asarray(t, dtype=float)
    if spec.frozen_shift is not None:
        return _out(np.full_like(t, spec.frozen_shift)), _out(np.zeros_like(t))
    e = spec.shift_exponent
    a = spec.eta * t**e
    with np.errstate(divide="ignore", invalid="ignore"):
        da = np.where(t > 0, spec.eta * e * t ** (e - 1.0), 0.0)
    return _out(a), _out(da)


def barrier_value(spec: BarrierSpec, t, x):
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(t < 0) or np.any(x < 0) or np.any(x > 1):
        raise ValueError("barrier is defined for t >= 0 and 0 <= x <= 1")
    a, _ = barrier_shift(spec, t)
    prof = spec.profile
    return _out(np.asarray(u_star(prof, x + a) - u_star(prof, a) - spec.b * x**spec.m))


def barrier_derivatives(spec: BarrierSpec, t, x):
    """Closed-form ``(z_t, z_x, z_xx)`` for ``t > 0`` (or frozen shift), ``0 <= x <= 1``."""
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    a, da = barrier_shift(spec, t)
    prof = spec.profile
    m, b = spec.m, spec.b
    z_t = (u_star_prime(prof, x + a) - u_star_prime(prof, a)) * da
    z_x = u_star_prime(prof, x + a) - m * b * x ** (m - 1.0)
    z_xx = u_star_second(prof, x + a) - m * (m - 1.0) * b * x ** (m - 2.0)
    return _out(np.asarray(z_t)), _out(np.asarray(z_x)), _out(np.asarray(z_xx))


def barrier_residual(spec: BarrierSpec, t, x):
    """``Pz = z_t - z_xx - |z_x|^p`` evaluated without catastrophic cancellation.

    Uses ``-U'' = U'^p`` so that ``-z_xx - |z_x|^p`` becomes
    ``m(m-1) b x^{m-2} + U'^p - |U' - m b x^{m-1}|^p``; the last difference is
    formed as ``U'^p (1 - (1 - d)^p)`` with ``expm1/log1p``.
    """
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("samples must satisfy 0 <= x <= 1")
    if spec.frozen_shift is None and np.any(t <= 0):
        raise ValueError("residual needs t > 0")
    a, da = barrier_shift(spec, t)
    prof, p, m, b = spec.profile, spec.p, spec.m, spec.b
    up = u_star_prime(prof, x + a)
    z_t = (up - u_star_prime(prof, a)) * da
    delta = m * b * x ** (m - 1.0)
    ratio = delta / up
    with np.errstate(invalid="ignore"):
        gap_small = -np.expm1(p * np.log1p(-np.minimum(ratio, 0.5)))
    gap = np.where(ratio <= 0.5, up**p * gap_small, up**p - np.abs(up - delta) ** p)
    curvature = m * (m - 1.0) * b * x ** (m - 2.0) if m != 2.0 else np.full_like(x, 2.0 * b)
    return _out(np.asarray(z_t + curvature + gap))


@dataclass
class ResidualReport:
    min_residual: float
    argmin: tuple
    tol: float
    samples: int
    z_t_max: float

    @property
    def passed(self) -> bool:
        return self.min_residual >= -self.tol


def barrier_residual_check(spec: BarrierSpec, t_samples, x_samples, tol: float = 1e-8) -> ResidualReport:
    """Evaluate the barrier residual on the tensor grid of samples."""
    ts = np.atleast_1d(np.asarray(t_samples, dtype=float))
    xs = np.atleast_1d(np.asarray(x_samples, dtype=float))
    if ts.size == 0 or xs.size == 0:
        raise ValueError("sample sets must be nonempty")
    if np.any(xs < 0) or np.any(xs > 1) or (spec.frozen_shift is None and np.any(ts <= 0)):
        raise ValueError("samples outside the domain t > 0, 0 <= x <= 1")
    T, X = np.meshgrid(ts, xs, indexing="ij")
    res = barrier_residual(spec, T, X)
    i = np.unravel_index(np.argmin(res), res.shape)
    z_t, _, _ = barrier_derivatives(spec, T, X)
    return ResidualReport(
        min_residual=float(res[i]), argmin=(float(T[i]), float(X[i])), tol=tol,
        samples=int(res.size), z_t_max=float(np.max(z_t)),
    )


@dataclass
class SeparationBounds:
    """Computed separation of ``u(T, .)`` from the shifted profile.

    ``case`` is ``"lower"`` (``u_t >= -b x^l``) or ``"upper"`` (``u_t <= -b x^l``).
    For "lower": ``u >= u(T,0) + U_* - c1 x^{l+2}`` and ``u_x >= U_*' - c2 x^{l+1}``.
    For "upper": ``u <= u(T,0) + U_* - c1 x^{l+2}`` and ``u_x <= U_*' - c2 x^{l+1}``.
    """

    case: str
    c1: float
    c2: float
    x: np.ndarray
    ux: np.ndarray
    u_minus_u0: np.ndarray
    max_gap: float


def _classify_case(ut, x, ell, b) -> str:
    bound = -b * x**ell
    if np.all(ut >= bound - 1e-14):
        return "lower"
    if np.all(ut <= bound + 1e-14):
        return "upper"
    raise ValueError("u_t profile satisfies neither one-sided bound -b x^l")


def separation_oracle(
    p: float,
    ell: float,
    b: float,
    ut_profile: Callable[[np.ndarray], np.ndarray],
    ux_anchor: float = np.inf,
    case: str = "auto",
    n_out: int = 401,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> SeparationBounds:
    """Integrate ``V' = -|V|^p + u_t(T, x)`` on ``(0, 1/2]`` and measure the separation.

    With ``ux_anchor = inf`` the solution is anchored at ``V ~ U_*'`` as
    ``x -> 0`` by integrating ``w = V^{1-p}``, which obeys
    ``w' = (p-1)(1 - u_t w^{p/(p-1)})`` with ``w(0) = 0``. Once ``V`` drops
    below 1 (or for a finite anchor) ``V`` itself is integrated.
    """
    prof = Profile(p)
    if ell < 0 or b < 0:
        raise ValueError("need ell >= 0 and b >= 0")
    x_out = np.linspace(0.0, 0.5, n_out)[1:]
    ut_vals = np.asarray(ut_profile(x_out), dtype=float) * np.ones_like(x_out)
    if not np.all(np.isfinite(ut_vals)):
        raise ValueError("u_t profile is not finite on (0, 1/2]")
    if case == "auto":
        case = _classify_case(ut_vals, x_out, ell, b)
    if case not in ("lower", "upper"):
        raise ValueError("case must be 'lower', 'upper' or 'auto'")

    def g(x):
        return float(np.asarray(ut_profile(np.asarray(x))).reshape(-1)[0])

    q = p / (p - 1.0)
    alpha = prof.alpha
    V = np.empty_like(x_out)
    x_switch = 0.0
    v_switch = float(ux_anchor)
    if np.isinf(ux_anchor):
        # the w-form is regular at 0; stop when V falls to 1 (w reaches 1)
        def rhs_w(x, w):
            wp = max(w[0], 0.0)
            return [(p - 1.0) * (1.0 - g(x) * wp**q)]

        def hit(x, w):
            return w[0] - 1.0

        hit.terminal = True
        hit.direction = 1
        sol = solve_ivp(rhs_w, (0.0, 0.5), [0.0], method="RK45", dense_output=True,
                        events=hit, rtol=rtol, atol=atol)
        x_switch = float(sol.t[-1])
        mask = x_out <= x_switch
        V[mask] = sol.sol(x_out[mask])[0] ** (-alpha)
        v_switch = 1.0
    else:
        mask = np.zeros_like(x_out, dtype=bool)
    if not np.all(mask):
        def rhs_v(x, v):
            return [-abs(v[0]) ** p + g(x)]

        sol2 = solve_ivp(rhs_v, (x_switch, 0.5), [v_switch], method="RK45", dense_output=True,
                         rtol=rtol, atol=atol)
        V[~mask] = sol2.sol(x_out[~mask])[0]

    # integrate V - U_*' (bounded) with the trapezoid rule on a fine grid, then add U_*
    Us_prime = u_star_prime(prof, x_out)
    D = V - Us_prime
    h = x_out[1] - x_out[0]
    # D is O(x) near 0, so the first panel from 0 contributes D[0]*h/2
    integral = np.concatenate([[0.5 * h * D[0]], 0.5 * h * (D[1:] + D[:-1])]).cumsum()
    u_rel = u_star(prof, x_out) + integral

    if case == "upper" and b == 0:
        c1 = c2 = 0.0
    else:
        gap_v = (Us_prime - V) / x_out ** (ell + 1.0)
        gap_u = (u_star(prof, x_out) - u_rel) / x_out ** (ell + 2.0)
        if case == "lower":
            c2 = max(0.0, float(np.max(gap_v)))
            c1 = max(0.0, float(np.max(gap_u)))
        else:
            c2 = max(0.0, float(np.min(gap_v)))
            c1 = max(0.0, float(np.min(gap_u)))
    return SeparationBounds(case=case, c1=c1, c2=c2, x=x_out, ux=V, u_minus_u0=u_rel,
                            max_gap=float(np.max(np.abs(D))))

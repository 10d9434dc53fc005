"""Compiled inner loops of the time stepper.

The scheme for ``u_t = u_xx + F(u_x)`` on the uniform grid is

    v - dt * (theta * L v + (1 - theta) * L u) - dt * H(v) = u

with ``L`` the three-point Laplacian and ``H`` the Godunov upwind Hamiltonian
``H_i = F(max(0, -a_i, b_i))``, ``a_i, b_i`` the backward and forward
differences. ``F`` is even and increasing on ``s >= 0`` so this is the monotone
numerical Hamiltonian. The nonlinear system is solved by Newton's method; the
Jacobian is a tridiagonal M-matrix and is factored with the Thomas algorithm.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_JIT = dict(cache=True, nogil=True)


@nb.njit(**_JIT)
def f_and_fprime(s, p, k, pint, kp, kp1, kp2):
    """``(F(s), F'(s))`` for ``s >= 0`` with one power evaluation."""
    if s <= k:
        if pint > 0:
            w = 1.0
            for _ in range(pint - 1):
                w *= s
        else:
            w = s ** (p - 1.0)
        return s * w, p * w
    d = s - k
    return kp + kp1 * d + 0.5 * kp2 * d * d, kp1 + kp2 * d


@nb.njit(**_JIT)
def constants(p, k):
    pint = int(p) if p == np.floor(p) and p < 16 else 0
    if np.isinf(k):
        return pint, np.inf, np.inf, np.inf
    return pint, k**p, p * k ** (p - 1.0), p * (p - 1.0) * k ** (p - 2.0)


@nb.njit(**_JIT)
def upwind_hamiltonian(u, h, p, k, out):
    pint, kp, kp1, kp2 = constants(p, k)
    n = u.size
    out[0] = 0.0
    out[n - 1] = 0.0
    for i in range(1, n - 1):
        a = (u[i] - u[i - 1]) / h
        b = (u[i + 1] - u[i]) / h
        g = max(0.0, max(-a, b))
        out[i] = f_and_fprime(g, p, k, pint, kp, kp1, kp2)[0]
    return out


@nb.njit(**_JIT)
def max_upwind_slope(u, h):
    n = u.size
    gmax = 0.0
    for i in range(1, n - 1):
        g = max((u[i - 1] - u[i]) / h, (u[i + 1] - u[i]) / h)
        if g > gmax:
            gmax = g
    return gmax


@nb.njit(**_JIT)
def implicit_step(u, v, p, k, h, dt, theta, tol, maxit, rhs0, lo, di, up, res, cp):
    """One step from ``u`` into ``v`` (``v`` holds the initial guess).

    Returns the number of Newton iterations, or -1 when Newton fails.
    """
    n = u.size
    r = dt / (h * h)
    pint, kp, kp1, kp2 = constants(p, k)
    for i in range(1, n - 1):
        rhs0[i] = u[i] + (1.0 - theta) * r * (u[i - 1] - 2.0 * u[i] + u[i + 1])
    tr = theta * r
    for it in range(maxit):
        for i in range(1, n - 1):
            a = (v[i] - v[i - 1]) / h
            b = (v[i + 1] - v[i]) / h
            lo[i] = -tr
            up[i] = -tr
            di[i] = 1.0 + 2.0 * tr
            if b >= -a:
                if b > 0.0:
                    H, dH = f_and_fprime(b, p, k, pint, kp, kp1, kp2)
                    c = dt * dH / h
                    up[i] -= c
                    di[i] += c
                else:
                    H = 0.0
            else:
                H, dH = f_and_fprime(-a, p, k, pint, kp, kp1, kp2)
                c = dt * dH / h
                lo[i] -= c
                di[i] += c
            res[i] = rhs0[i] - (v[i] - tr * (v[i - 1] - 2.0 * v[i] + v[i + 1]) - dt * H)
        # Thomas sweep on the interior unknowns 1..n-2 (res becomes the update)
        cp[1] = up[1] / di[1]
        res[1] = res[1] / di[1]
        for i in range(2, n - 1):
            den = di[i] - lo[i] * cp[i - 1]
            cp[i] = up[i] / den
            res[i] = (res[i] - lo[i] * res[i - 1]) / den
        dmax = abs(res[n - 2])
        v[n - 2] += res[n - 2]
        for i in range(n - 3, 0, -1):
            res[i] -= cp[i] * res[i + 1]
            v[i] += res[i]
            if abs(res[i]) > dmax:
                dmax = abs(res[i])
        if not np.isfinite(dmax):
            return -1
        if dmax <= tol:
            return it + 1
    return -1


@nb.njit(**_JIT)
def grad_norm(u, h):
    """Max of |u_x| with centered interior and 4-point one-sided end stencils."""
    n = u.size
    m = abs(-11.0 * u[0] + 18.0 * u[1] - 9.0 * u[2] + 2.0 * u[3]) / (6.0 * h)
    e = abs(11.0 * u[n - 1] - 18.0 * u[n - 2] + 9.0 * u[n - 3] - 2.0 * u[n - 4]) / (6.0 * h)
    if e > m:
        m = e
    for i in range(1, n - 1):
        g = abs(u[i + 1] - u[i - 1]) / (2.0 * h)
        if g > m:
            m = g
    return m


@nb.njit(**_JIT)
def ut_sign_stats(u, h, p, k, work):
    """Zero count of the discrete ``u_t = L u + H(u)`` on interior nodes and the first zero."""
    upwind_hamiltonian(u, h, p, k, work)
    n = u.size
    last = 0.0
    count = 0
    z = np.nan
    prev_x = 0.0
    for i in range(1, n - 1):
        q = (u[i - 1] - 2.0 * u[i] + u[i + 1]) / (h * h) + work[i]
        if q != 0.0:
            if last != 0.0 and (q > 0.0) != (last > 0.0):
                count += 1
                if count == 1:
                    z = prev_x + (i * h - prev_x) * last / (last - q)
            last = q
            prev_x = i * h
    return count, z


@nb.njit(**_JIT)
def _grow(a, size):
    b = np.empty((size, a.shape[1]))
    b[: a.shape[0]] = a
    return b


@nb.njit(**_JIT)
def integrate(u0, p, k, h, t_max, every, cfl_d, cfl_s, dt_max, theta, newton_tol, maxit,
              stop_m, w, wconst, rec_dt, rec_rel):
    """Evolve to ``t_max``; frames every ``every`` time units, monitors by change.

    Monitor columns: t, dt, m (gradient norm), max u, N (u_t zero count),
    z (first u_t zero), boundary estimate (w . u - wconst), newton iterations.
    A row is written when ``rec_dt`` time has passed, ``m`` or the boundary
    estimate moved by the relative amount ``rec_rel``, or ``N`` changed.
    Status: 0 reached t_max, 1 stopped at ``m >= stop_m``, 2 Newton failure.
    """
    n = u0.size
    lo = np.zeros(n)
    di = np.ones(n)
    up = np.zeros(n)
    res = np.zeros(n)
    cp = np.zeros(n)
    rhs0 = np.zeros(n)
    work = np.zeros(n)
    u = u0.copy()
    v = u0.copy()
    u_prev = u0.copy()
    nout = int(np.floor(t_max / every + 1e-9)) + 1
    ck_t = np.zeros(nout)
    ck_u = np.zeros((nout, n))
    ck_t[0] = 0.0
    ck_u[0] = u
    mon = np.zeros((4096, 8))
    nm = 0

    m = grad_norm(u, h)
    N, z = ut_sign_stats(u, h, p, k, work)
    bv = 0.0
    for i in range(w.size):
        bv += w[i] * u[i]
    bv -= wconst
    mon[0, 0] = 0.0
    mon[0, 1] = 0.0
    mon[0, 2] = m
    mon[0, 3] = np.max(u)
    mon[0, 4] = N
    mon[0, 5] = z
    mon[0, 6] = bv
    mon[0, 7] = 0
    nm = 1
    last_t, last_m, last_b, last_N = 0.0, m, bv, N

    pint, kp, kp1, kp2 = constants(p, k)
    t = 0.0
    j = 1
    nsteps = 0
    nnewton = 0
    status = 0
    dt_prev = np.inf
    while j < nout:
        gmax = max_upwind_slope(u, h)
        fp = f_and_fprime(gmax, p, k, pint, kp, kp1, kp2)[1]
        dt = min(dt_max, cfl_d * h * h, cfl_s / (1.0 + fp / h), 2.0 * dt_prev)
        t_next = j * every
        if t + dt > t_next - 1e-12 * every:
            dt = t_next - t
        it = -1
        for attempt in range(40):
            # linear extrapolation of the last step as Newton's starting point
            if attempt == 0 and nsteps > 0:
                c = dt / dt_prev
                for i in range(n):
                    v[i] = u[i] + c * (u[i] - u_prev[i])
            else:
                v[:] = u
            it = implicit_step(u, v, p, k, h, dt, theta, newton_tol, maxit, rhs0, lo, di, up, res, cp)
            if it > 0:
                break
            dt *= 0.5
        if it < 0:
            status = 2
            break
        u_prev[:] = u
        u[:] = v
        dt_prev = dt
        t = t_next if dt == t_next - t else t + dt
        nsteps += 1
        nnewton += it
        m = grad_norm(u, h)
        N, z = ut_sign_stats(u, h, p, k, work)
        bv = 0.0
        for i in range(w.size):
            bv += w[i] * u[i]
        bv -= wconst
        at_ck = abs(t - t_next) <= 1e-12 * every
        if (at_ck or t - last_t >= rec_dt or abs(m - last_m) > rec_rel * last_m
                or abs(bv - last_b) > rec_rel * max(abs(last_b), 1e-3) or N != last_N or m >= stop_m):
            if nm == mon.shape[0]:
                mon = _grow(mon, 2 * nm)
            mon[nm, 0] = t
            mon[nm, 1] = dt
            mon[nm, 2] = m
            mon[nm, 3] = np.max(u)
            mon[nm, 4] = N
            mon[nm, 5] = z
            mon[nm, 6] = bv
            mon[nm, 7] = it
            nm += 1
            last_t, last_m, last_b, last_N = t, m, bv, N
        if at_ck:
            t = t_next
            ck_t[j] = t
            ck_u[j] = u
            j += 1
        if m >= stop_m:
            status = 1
            break
    return ck_t[:j].copy(), ck_u[:j].copy(), mon[:nm].copy(), u, t, nsteps, nnewton, status

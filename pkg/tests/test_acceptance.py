"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Expensive runs are shared through session fixtures. The full module takes
roughly half an hour on one core.
"""

import time

import numpy as np
import pytest

from vhjlab.cli import main
from vhjlab.diagnostics import boundary_unimodal
from vhjlab.experiments import (
    GBU_LBC,
    GLOBAL,
    classify_run,
    find_lambda_star,
    rate_study,
)
from vhjlab.grid import nodes
from vhjlab.initial_data import build_phi_from_psi, canonical_datum, canonical_psi
from vhjlab.nonlinearity import TruncationSpec, check_structure
from vhjlab.profiles import BarrierSpec, barrier_residual_check, stationarity_defect
from vhjlab.solver import SolverConfig, run_single_k, step_classical, step_regularized

pytestmark = pytest.mark.acceptance

LAM_NONMIN = 2000.0  # canonical nonminimal amplitude at p = 3
LAM_NONMIN_P4 = 1000.0
GRIDS = (1001, 2001)
BRACKET = (1000.0, 2000.0)
THRESH_T_MAX = 0.1


@pytest.fixture(scope="session")
def canon():
    """Rate studies of the canonical nonminimal run at p = 3, keyed by n."""
    return {n: rate_study(canonical_datum(LAM_NONMIN, n=n), SolverConfig(n=n, t_max=0.2)) for n in GRIDS}


@pytest.fixture(scope="session")
def canon_p4():
    n = 2001
    return rate_study(canonical_datum(LAM_NONMIN_P4, n=n), SolverConfig(p=4.0, n=n, t_max=0.1))


@pytest.fixture(scope="session")
def thresholds():
    """``n -> (lambda*, history)`` from the bisection at p = 3."""
    out = {}
    for n in GRIDS:
        out[n] = find_lambda_star(canonical_psi(), BRACKET, tol=1e-3, cfg=SolverConfig(n=n, t_max=THRESH_T_MAX))
    return out


# ---------------------------------------------------------------------------


def test_criterion_01_nonlinearity(criterion):
    t0 = time.perf_counter()
    bad = []
    for p in (3, 4, 5):
        for k in (1, 2, 8, 64):
            rep = check_structure(TruncationSpec(p, k), sample_count=10_000)
            bad += [(p, k, name, c.violations) for name, c in rep.checks.items() if c.violations]
    dt = time.perf_counter() - t0
    ok = not bad and dt < 1.0
    criterion(1, ok, f"violations={bad or 0} runtime={dt:.2f}s (< 1 s)")
    assert ok


def test_criterion_02_profiles(criterion):
    t0 = time.perf_counter()
    x = np.logspace(-8, 0, 1000)
    stat = max(float(np.max(stationarity_defect(p, x))) for p in (3.0, 4.0, 5.0))
    bar = barrier_residual_check(BarrierSpec(3.0, 0.1, 2.0, 0.05), np.linspace(1e-3, 1.0, 40), np.linspace(0, 1, 25))
    frozen = barrier_residual_check(BarrierSpec(3.0, 0.0, frozen_shift=0.01), np.linspace(0, 1, 10),
                                    np.linspace(0, 1, 101))
    dt = time.perf_counter() - t0
    ok = stat <= 1e-10 and bar.min_residual >= -1e-8 and abs(frozen.min_residual) <= 1e-10 and dt < 1.0
    criterion(2, ok, f"stationarity={stat:.1e} barrier min={bar.min_residual:.3e} "
                     f"frozen={frozen.min_residual:.1e} runtime={dt:.2f}s")
    assert ok


def test_criterion_03_solver_oracles(canon, criterion):
    eps, dt, n = 1e-6, 1e-5, 2001
    x = nodes(n)
    u0 = eps * np.sin(np.pi * x)
    u0[0] = u0[-1] = 0.0
    exact = eps * np.exp(-np.pi**2 * dt) * np.sin(np.pi * x)
    bound = eps * (10 * dt**2 + eps**2)
    heat = max(float(np.max(np.abs(step_regularized(u0, TruncationSpec(3, 1), dt).values - exact))),
               float(np.max(np.abs(step_classical(u0, 3, dt).values - exact))))
    parts = [heat <= bound]
    detail = [f"heat err={heat:.2e} (bound {bound:.2e})"]
    for n, rec in canon.items():
        tol = 10.0 / (n - 1) ** 2
        L = rec.ladder
        mono = 0.0
        for lo, hi in zip(L.levels[:-1], L.levels[1:]):
            m = min(len(lo.times), len(hi.times))
            mono = max(mono, float(np.max(lo.frames[:m] - hi.frames[:m])))
        # comparison in the data: a smaller multiple of the datum stays below
        cfg = rec.solver
        below = run_single_k(canonical_datum(0.9 * LAM_NONMIN, n=n), L.top.k, cfg)
        m = min(len(below.times), len(L.top.times))
        comp = float(np.max(below.frames[:m] - L.top.frames[:m]))
        parts += [mono <= tol, comp <= tol]
        detail.append(f"n={n}: ladder {mono:.1e} data {comp:.1e} (tol {tol:.1e})")
    ok = all(parts)
    criterion(3, ok, "; ".join(detail))
    assert ok


def test_criterion_04_gbu_rate(canon, canon_p4, criterion):
    g3 = canon[2001].fits["gbu"]
    g4 = canon_p4.fits["gbu"]
    ok = (-1.2 <= g3.exponent <= -0.8 and g3.residual < 0.05
          and -0.65 <= g4.exponent <= -0.38 and g4.residual < 0.05)
    criterion(4, ok, f"p=3 exponent={g3.exponent:.4f} (res {g3.residual:.4f}); "
                     f"p=4 exponent={g4.exponent:.4f} (res {g4.residual:.4f})")
    assert ok


def test_criterion_05_onset_and_reconnection(canon, criterion):
    f = canon[2001].fits
    lbc, rec = f["lbc"], f["rec"]
    ok = 0.85 <= lbc.exponent <= 1.15 and 0.85 <= rec.exponent <= 1.15
    criterion(5, ok, f"onset exponent={lbc.exponent:.4f} l1={lbc.prefactor:.4g}; "
                     f"reconnection exponent={rec.exponent:.4f} l2={rec.prefactor:.4g}")
    assert ok


def test_criterion_06_regularization(canon, criterion):
    reg = canon[2001].fits["reg"]
    ok = -1.3 <= reg.exponent <= -0.75
    criterion(6, ok, f"exponent={reg.exponent:.4f} (res {reg.residual:.4f})")
    assert ok


def test_criterion_07_profile_proximity(canon, criterion):
    k1, k2 = canon[1001].k_grad, canon[2001].k_grad
    finite = all(np.all(np.isfinite(k["K_grad"])) and len(k["K_grad"]) > 0 for k in (k1, k2))
    rel = abs(k2["max"] - k1["max"]) / k2["max"]
    ok = finite and rel <= 0.25
    criterion(7, ok, f"sup K_grad n=1001: {k1['max']:.4g} over {len(k1['K_grad'])} checkpoints, "
                     f"n=2001: {k2['max']:.4g}; relative change {rel:.3f} (<= 0.25)")
    assert ok


def test_criterion_08_event_structure(canon, criterion):
    rec = canon[2001]
    ev = rec.events
    t = np.asarray(rec.series["checkpoint_t"])
    b = np.asarray(rec.series["checkpoint_bval"])
    iv = ev.lbc_intervals
    one = len(iv) == 1
    order = ev.t_star is not None and ev.t_m is not None and ev.t_r is not None and ev.t_star < ev.t_m < ev.t_r
    uni = one and boundary_unimodal(t, b, ev.t_m, iv[0].t_begin, iv[0].t_end, ev.tol_lbc)
    ok = rec.classification == GBU_LBC and one and order and uni
    criterion(8, ok, f"intervals={len(iv)} T*={ev.t_star:.6g} T_m={ev.t_m:.6g} T_r={ev.t_r:.6g} "
                     f"unimodal={uni}")
    assert ok


def test_criterion_09_zero_number(canon, criterion):
    bad = []
    for n, rec in canon.items():
        for tr in rec.ladder.levels:
            N = tr.series("N")[1:]
            drops = np.flatnonzero(np.diff(N) != 0)
            good = (np.all(np.diff(N) <= 0) and len(drops) == 1
                    and np.all(N[: drops[0] + 1] == 2) and np.all(N[drops[0] + 1:] == 0))
            if not good:
                bad.append((n, tr.k))
    levels = sum(len(r.ladder.levels) for r in canon.values())
    ok = not bad
    criterion(9, ok, f"{levels} ladder levels checked, failing={bad or 'none'}")
    assert ok


def test_criterion_10_threshold(thresholds, criterion):
    parts, detail = [], []
    for n, (lam, hist) in thresholds.items():
        last = hist[-1]
        lo, hi = (last[0], last[2]) if last[3] else (last[2], last[1])
        parts.append(hi - lo <= 1e-3 * lam)
        cfg = SolverConfig(n=n, t_max=THRESH_T_MAX)
        cls = {}
        for f in (0.95, 1.05):
            d = build_phi_from_psi(canonical_psi(), grid=n, lam=f * lam)
            cls[f] = classify_run(run_single_k(d, np.inf, cfg))[0]
        parts += [cls[0.95] == GLOBAL, cls[1.05] == GBU_LBC]
        detail.append(f"n={n}: lambda*={lam:.6g} width={(hi - lo) / lam:.1e} "
                      f"0.95: {cls[0.95]} 1.05: {cls[1.05]}")
    l1, l2 = thresholds[1001][0], thresholds[2001][0]
    agree = abs(l1 - l2) / l2
    parts.append(agree <= 0.05)
    detail.append(f"agreement {agree:.3f} (<= 0.05)")
    ok = all(parts)
    criterion(10, ok, "; ".join(detail))
    assert ok


def test_criterion_11_minimal_candidate(thresholds, criterion):
    parts, detail = [], []
    for n, (lam, hist) in thresholds.items():
        last = hist[-1]
        hi = last[2] if last[3] else last[1]
        assert lam < hi <= lam * (1 + 1e-3)
        cfg = SolverConfig(n=n, t_max=THRESH_T_MAX)
        tr = run_single_k(build_phi_from_psi(canonical_psi(), grid=n, lam=hi), np.inf, cfg)
        cls, ev = classify_run(tr)
        t, m, b = tr.series("t"), tr.series("m"), tr.series("bval")
        no_lbc = not ev.has_lbc and float(np.max(b)) <= ev.tol_lbc
        mono = False
        frac = float("nan")
        if ev.tstar.detected:
            w = ev.tstar.window
            sel = (t >= w[0]) & (t <= w[1]) & (t < ev.t_star)
            q = (ev.t_star - t[sel]) ** (1.0 / (cfg.p - 2)) * m[sel]
            steps = np.diff(q)
            mono = bool(np.all(steps > 0))
            frac = float(np.mean(steps > 0))
        parts += [no_lbc, mono]
        detail.append(f"n={n} lambda={hi:.6g}: {cls}, max u(t,0)={np.max(b):.2e} (tol {ev.tol_lbc:.1e}), "
                      f"(T*-t)m increasing={mono} (fraction of increasing steps {frac:.2f})")
    ok = all(parts)
    criterion(11, ok, "; ".join(detail))
    assert ok


def test_criterion_12_determinism(tmp_path, criterion):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("kind: rate_study\nseed: 7\ndatum:\n  lam: 2000.0\nsolver:\n  n: 401\n  t_max: 0.2\n")
    outs = []
    for name in ("a", "b"):
        assert main(["run", str(cfg), "--output", str(tmp_path / name)]) == 0
        outs.append(tmp_path / name)
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
               for f in ("summary.csv", "fits.csv", "monitors.csv", "frames.bin", "manifest.yaml"))
    criterion(12, same, "two runs of one config and seed: summary, fits, monitors, frames and manifest "
                        f"byte-identical={same}")
    assert same

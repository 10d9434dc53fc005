import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vhjlab.diagnostics import EventSet, LBCInterval, TStar
from vhjlab.experiments import (
    GBU_LBC,
    GBU_NOLBC,
    GLOBAL,
    UNRESOLVED,
    BisectionError,
    RunRecord,
    check_invariants,
    classify_run,
    find_lambda_star,
    rate_study,
    summary_table,
    sweep,
)
from vhjlab.initial_data import canonical_datum, canonical_psi, table_datum
from vhjlab.solver import SolverConfig, run_single_k

CFG = SolverConfig(n=201, t_max=0.2)


@pytest.fixture(scope="module")
def blowup_study():
    return rate_study(canonical_datum(2000, n=201), CFG)


def test_bisection_synthetic_indicator():
    lam, hist = find_lambda_star(lambda lam: lam > 2.5, (1.0, 4.0), tol=1e-3)
    assert abs(lam - 2.5) <= 2.5e-3
    for lo, hi, _, _ in hist:
        assert lo < 2.5 + 1e-12 and hi >= 2.5


@settings(max_examples=30, deadline=None)
@given(st.floats(1.1, 3.9), st.floats(1e-4, 1e-2))
def test_bisection_brackets_threshold(thr, tol):
    calls = []

    def ind(lam):
        calls.append(lam)
        return lam > thr

    lam, hist = find_lambda_star(ind, (1.0, 4.0), tol=tol)
    assert abs(lam - thr) <= tol * 4.0
    assert len(hist) == len(calls)
    final_lo, final_hi = hist[-1][0], hist[-1][1]
    assert final_lo <= thr <= final_hi


def test_bisection_invalid_bracket():
    with pytest.raises(BisectionError, match="invalid bracket"):
        find_lambda_star(lambda lam: False, (1.0, 4.0))
    with pytest.raises(BisectionError, match="invalid bracket"):
        find_lambda_star(lambda lam: lam < 2.0, (1.0, 4.0))
    with pytest.raises(ValueError):
        find_lambda_star(lambda lam: True, (4.0, 1.0))


def test_bisection_unresolved_reports_bracket():
    def ind(lam):
        return None if 2.0 < lam < 3.0 else lam > 2.5

    with pytest.raises(BisectionError, match="unresolved") as exc:
        find_lambda_star(ind, (1.0, 4.0))
    assert exc.value.history[-1][2] == 2.5


def test_bisection_on_solver_coarse():
    lam, hist = find_lambda_star(canonical_psi(), (500.0, 3000.0), tol=0.01, cfg=CFG)
    assert 500.0 < lam < 3000.0
    assert hist[0][3] is False and hist[1][3] is True
    assert all(a is not None for *_, a in hist)


def test_classify_zero_datum_global():
    d = table_datum(np.zeros(101))
    tr = run_single_k(d, np.inf, SolverConfig(n=101, t_max=0.05))
    cls, ev = classify_run(tr)
    assert cls == GLOBAL
    assert not ev.has_lbc and not ev.tstar.detected


def test_classify_small_datum_global():
    tr = run_single_k(canonical_datum(100, n=201), np.inf, SolverConfig(n=201, t_max=0.1))
    assert classify_run(tr)[0] == GLOBAL


def test_classify_large_datum_lbc():
    tr = run_single_k(canonical_datum(2000, n=201), np.inf, CFG)
    cls, ev = classify_run(tr)
    assert cls == GBU_LBC
    assert ev.t_star < ev.t_m < ev.t_r


@settings(max_examples=6, deadline=None)
@given(st.lists(st.floats(50.0, 3000.0), min_size=2, max_size=2, unique=True))
def test_classification_monotone_in_lambda(lams):
    # along increasing amplitude the class never goes from blow-up back to global
    cfg = SolverConfig(n=201, t_max=0.1)
    cls = [classify_run(run_single_k(canonical_datum(lam, n=201), np.inf, cfg))[0] for lam in sorted(lams)]
    assert not (cls[0] != GLOBAL and cls[1] == GLOBAL)


def test_record_invariants_enforced():
    ts = TStar(True, 0.1, 1e-4)
    with pytest.raises(ValueError):
        RunRecord(3.0, 1.0, GBU_LBC, CFG, events=EventSet(ts))
    with pytest.raises(ValueError):
        RunRecord(3.0, 1.0, GBU_NOLBC, CFG, events=EventSet(TStar(False)))
    with pytest.raises(ValueError):
        RunRecord(3.0, 1.0, GBU_NOLBC, CFG, events=EventSet(ts, [LBCInterval(0.1, 0.2, 1.0, 0.15)]))
    RunRecord(3.0, 1.0, GBU_NOLBC, CFG, events=EventSet(ts))


def test_check_invariants_flags_violations():
    ev = EventSet(TStar(True, 0.1, 1e-4), [LBCInterval(0.1, 0.2, 1.0, 0.15)], t_m=0.3, t_r=0.2)
    rec = RunRecord(3.0, 1.0, GBU_LBC, CFG, events=ev, zero_number={8.0: {"nonincreasing": False}})
    msgs = check_invariants(rec)
    assert any("T_m does not precede T_r" in m for m in msgs)
    assert any("zero number" in m for m in msgs)


def test_rate_study_blowup(blowup_study):
    rec = blowup_study
    assert rec.classification == GBU_LBC
    assert check_invariants(rec) == []
    assert {"gbu", "lbc", "rec"} <= set(rec.fits)
    assert rec.fits["gbu"].exponent < 0
    assert rec.fits["lbc"].exponent == pytest.approx(1.0, abs=0.3)
    assert rec.ladder_summary["levels"] >= 2


def test_summary_deterministic(blowup_study):
    a = summary_table([blowup_study])
    b = summary_table([rate_study(canonical_datum(2000, n=201), CFG)])
    assert a == b
    head, row = a.strip().split("\n")
    assert row.split(",")[2] == GBU_LBC


def test_summary_global_row_blank_events():
    rec = rate_study(canonical_datum(100, n=201), SolverConfig(n=201, t_max=0.1))
    row = summary_table([rec]).strip().split("\n")[1].split(",")
    assert row[2] == GLOBAL
    assert row[3:10] == [""] * 7


def test_one_cell_sweep_matches_rate_study(blowup_study):
    recs = sweep([(3.0, 2000.0)], CFG)
    assert len(recs) == 1
    assert summary_table(recs) == summary_table([blowup_study])


def test_sweep_failing_cell_is_unresolved(monkeypatch):
    import vhjlab.experiments as ex

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(ex, "rate_study", boom)
    recs = sweep([(4.0, 10.0), (3.0, 10.0)], SolverConfig(n=101, t_max=0.01))
    assert [r.classification for r in recs] == [UNRESOLVED, UNRESOLVED]
    assert [r.p for r in recs] == [3.0, 4.0]
    assert "solver exploded" in recs[0].notes[0]

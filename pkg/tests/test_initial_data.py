from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import Polynomial
from scipy.integrate import simpson

from vhjlab.initial_data import (
    ConstructionError,
    PiecewisePoly,
    PsiSpec,
    analytic_datum,
    build_phi_from_psi,
    canonical_datum,
    canonical_psi,
    check_compat2,
    check_hyp_class,
    sign_changes,
    table_datum,
    zero_count,
)


def psi_family(x0, amp=1.0):
    """Admissible psi: amp * x (x0 - x) then a linear piece with zero total mean."""
    c = amp * (x0**3 / 6.0) / ((0.5 - x0) ** 2 / 2.0)
    return PsiSpec(PiecewisePoly((0.0, x0, 0.5), (amp * Polynomial([0.0, x0, -1.0]), Polynomial([c * x0, -c]))), x0)


def test_canonical_constant():
    spec = canonical_psi(0.25)
    # zero mean: int_0^x0 x(x0-x) = x0^3/6 equals c (1/2 - x0)^2 / 2
    c = Fraction(1, 384) / (Fraction(1, 16) / 2)
    assert c == Fraction(1, 12)
    assert spec.psi(0.3) == pytest.approx(-(1 / 12) * 0.05, rel=1e-14)


def test_phi_prime_at_turning_point():
    d = canonical_datum(1.0, 0.25, n=2001)
    # exact rational value x0^3 / 6, cross-checked by composite Simpson on psi
    exact = float(Fraction(1, 4) ** 3 / 6)
    xs = np.linspace(0, 0.25, 2001)
    assert simpson(canonical_psi().psi(xs), x=xs) == pytest.approx(exact, rel=1e-12)
    assert d.dphi(0.25) == pytest.approx(exact, rel=1e-14)
    assert abs(d.dphi(0.5)) <= 1e-15


def test_phi_boundary_and_symmetry():
    d = canonical_datum(3.0, n=501)
    v = d.values
    assert v[0] == 0 and v[-1] == 0
    assert np.max(np.abs(v - v[::-1])) <= 1e-15 * np.max(v)
    assert np.all(np.diff(v[:251]) >= 0)


def test_zero_psi_rejected():
    zero = PsiSpec(PiecewisePoly((0.0, 0.25, 0.5), (Polynomial([0.0]), Polynomial([0.0]))), 0.25)
    with pytest.raises(ConstructionError, match="psi > 0"):
        build_phi_from_psi(zero)


def test_nonzero_mean_rejected():
    bad = PsiSpec(PiecewisePoly((0.0, 0.25, 0.5), (Polynomial([0.0, 0.25, -1.0]), Polynomial([0.01, -0.04]))), 0.25)
    with pytest.raises(ConstructionError):
        build_phi_from_psi(bad)


def test_compat_examples():
    assert check_compat2(canonical_datum(1.0), 3).passed
    sine = analytic_datum(lambda x: np.sin(np.pi * x), lambda x: np.pi * np.cos(np.pi * x),
                          lambda x: -np.pi**2 * np.sin(np.pi * x), n=101)
    rep = check_compat2(sine, 3)
    assert not rep.passed
    assert rep.equation_residual == pytest.approx(np.pi**3, rel=1e-12)
    assert check_compat2(table_datum(np.zeros(101)), 3).passed


def test_compat_grid_tolerance():
    d = table_datum(canonical_datum(1.0, n=1001).values)
    rep = check_compat2(d, 3)
    assert rep.tol == pytest.approx(10 * 1e-6)
    assert rep.passed


def test_zero_count_examples():
    assert zero_count(np.ones(10)) == 0
    x = np.linspace(0, 1, 101)
    assert zero_count(x - 0.5) == 1
    xs = np.linspace(0, 1, 1001)[1:-1]
    n, locs = sign_changes(np.sin(3 * np.pi * xs), xs)
    assert n == 2
    assert locs == pytest.approx([1 / 3, 2 / 3], abs=1e-6)


def test_zeros_are_skipped():
    assert zero_count([1.0, 0.0, 0.0, -1.0, 0.0, 1.0]) == 2


def test_hyp_class_examples():
    rep = check_hyp_class(canonical_datum(1.0), 3)
    assert rep.passed and rep.n0 == 2
    quad = analytic_datum(lambda x: x * (1 - x), lambda x: 1 - 2 * x, lambda x: -2 + 0 * x, n=201, lam=0.1)
    rep = check_hyp_class(quad, 3)
    assert rep.symmetric and not rep.compat.passed and not rep.passed
    zero = check_hyp_class(table_datum(np.zeros(201)), 3)
    assert zero.passed and zero.n0 == 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.45), st.floats(0.1, 10.0), st.floats(1e-3, 5e3))
def test_constructed_data_in_class(x0, amp, lam):
    d = build_phi_from_psi(psi_family(x0, amp), grid=401, lam=lam)
    rep = check_hyp_class(d, 3)
    assert rep.passed
    assert rep.n0 == check_hyp_class(d.scaled(1.0), 3).n0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60), st.floats(1e-3, 1e3))
def test_zero_count_positive_rescaling(vals, scale):
    v = np.array(vals)
    w = v * scale * (1 + np.linspace(0, 1, v.size))
    assert zero_count(v) == zero_count(w)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vhjlab.nonlinearity import ConfigurationError
from vhjlab.profiles import (
    BarrierSpec,
    Profile,
    barrier_derivatives,
    barrier_residual,
    barrier_residual_check,
    barrier_shift,
    barrier_value,
    separation_oracle,
    stationarity_defect,
    u_star,
    u_star_prime,
    u_star_second,
)

# z(t=0.04, x=0.25) for p=3, b=0.01, m=2, eta=0.05, evaluated independently
# at 30 digits: a = 0.05 * 0.04**2, z = sqrt(2)(sqrt(0.25 + a) - sqrt(a)) - 0.01 * 0.25**2
BARRIER_EXAMPLE = 0.693945798581344920610738849386


def test_constants():
    prof = Profile(3)
    assert prof.alpha == 0.5
    assert prof.c_p == pytest.approx(np.sqrt(2), rel=1e-15)
    for p in (2.1, 3, 4.5, 10):
        assert 0 < Profile(p).alpha < 1


@pytest.mark.parametrize(
    "p, x, expected",
    [(3, 0.0, 0.0), (3, 0.25, 0.7071067811865476), (4, 1.0, 0.5 * 3 ** (2 / 3))],
)
def test_u_star_values(p, x, expected):
    assert u_star(p, x) == pytest.approx(expected, rel=1e-14, abs=0)


@pytest.mark.parametrize("x, expected", [(0.5, 1.0), (0.125, 2.0)])
def test_u_star_prime_values(x, expected):
    assert u_star_prime(3, x) == pytest.approx(expected, rel=1e-15)


def test_domain_errors():
    with pytest.raises(ValueError):
        u_star(3, -0.1)
    with pytest.raises(ValueError):
        u_star_prime(3, 0.0)
    with pytest.raises(ConfigurationError):
        Profile(2.0)


def test_stationarity_log_spaced():
    x = np.logspace(-6, 0, 1000)
    for p in (2.5, 3, 4, 7):
        assert np.max(stationarity_defect(p, x)) <= 1e-10


def test_derivatives_against_finite_differences():
    x = np.linspace(0.05, 1.0, 20)
    d = 1e-6
    for p in (3, 4.5):
        fd1 = (u_star(p, x + d) - u_star(p, x - d)) / (2 * d)
        fd2 = (u_star_prime(p, x + d) - u_star_prime(p, x - d)) / (2 * d)
        assert np.allclose(fd1, u_star_prime(p, x), rtol=1e-7)
        assert np.allclose(fd2, u_star_second(p, x), rtol=1e-6)


def test_barrier_examples():
    spec = BarrierSpec(3, 0.01, 2, 0.05)
    assert barrier_value(spec, 0.04, 0.0) == 0.0
    assert barrier_value(BarrierSpec(3, 0.0), 0.0, 0.25) == pytest.approx(u_star(3, 0.25), rel=1e-15)
    assert barrier_value(spec, 0.04, 0.25) == pytest.approx(BARRIER_EXAMPLE, rel=1e-14)


def test_barrier_shift_schedule():
    spec = BarrierSpec(3, 0.1, 2, 0.05)
    t = np.linspace(0, 1, 11)
    a, da = barrier_shift(spec, t)
    assert a[0] == 0 and np.all(a[1:] > 0) and np.all(np.diff(a) >= 0)
    assert np.allclose(a, 0.05 * t**2)
    assert np.all(da >= 0)


def test_barrier_derivatives_match_finite_differences():
    spec = BarrierSpec(3, 0.05, 2, 0.05)
    t, x, d = 0.3, np.linspace(0.05, 0.95, 7), 1e-6
    zt, zx, zxx = barrier_derivatives(spec, t, x)
    assert np.allclose(zt, (barrier_value(spec, t + d, x) - barrier_value(spec, t - d, x)) / (2 * d), rtol=1e-6,
                       atol=1e-9)
    assert np.allclose(zx, (barrier_value(spec, t, x + d) - barrier_value(spec, t, x - d)) / (2 * d), rtol=1e-6)
    assert np.allclose(zxx, (zx_fd(spec, t, x + d) - zx_fd(spec, t, x - d)) / (2 * d), rtol=1e-4)


def zx_fd(spec, t, x):
    return barrier_derivatives(spec, t, x)[1]


def test_barrier_residual_check_admissible_and_not():
    t = np.linspace(1e-3, 1.0, 40)
    x = np.linspace(0.0, 1.0, 25)
    ok = barrier_residual_check(BarrierSpec(3, 0.1, 2, 0.05), t, x)
    assert ok.passed and ok.samples == 1000
    bad = barrier_residual_check(BarrierSpec(3, 0.1, 2, 5.0), t, x)
    assert not bad.passed


def test_frozen_shift_residual_vanishes():
    spec = BarrierSpec(3, 0.0, frozen_shift=0.01)
    t = np.linspace(0, 1, 10)
    x = np.linspace(0, 1, 101)
    rep = barrier_residual_check(spec, t, x)
    assert abs(rep.min_residual) <= 1e-10
    T, X = np.meshgrid(t, x)
    assert np.max(np.abs(barrier_residual(spec, T, X))) <= 1e-10


def test_barrier_time_derivative_nonpositive():
    spec = BarrierSpec(3, 0.1, 2, 0.05)
    rep = barrier_residual_check(spec, np.linspace(1e-3, 1, 30), np.linspace(0, 1, 30))
    assert rep.z_t_max <= 0


def test_barrier_m_range():
    with pytest.raises(ConfigurationError):
        BarrierSpec(3, 0.1, m=2.5)  # 3 - alpha = 2.5 is excluded
    with pytest.raises(ConfigurationError):
        BarrierSpec(3, 0.1, m=1.9)


def test_separation_stationary_profile():
    res = separation_oracle(3, 0.0, 0.0, lambda x: np.zeros_like(x))
    assert res.max_gap <= 1e-8
    assert np.allclose(res.ux, u_star_prime(3, res.x), rtol=1e-8)


def test_separation_negative_ut_lies_below_profile():
    res = separation_oracle(3, 0.0, 1.0, lambda x: -np.ones_like(x), case="upper")
    assert res.c2 > 0
    assert np.all(res.ux <= u_star_prime(3, res.x) - res.c2 * res.x * (1 - 1e-9))


def test_separation_auto_case():
    assert separation_oracle(3, 0.0, 1.0, lambda x: -2 * np.ones_like(x)).case == "upper"
    assert separation_oracle(3, 0.0, 1.0, lambda x: np.zeros_like(x)).case == "lower"
    with pytest.raises(ValueError):
        separation_oracle(3, 0.0, 1.0, lambda x: np.where(x < 0.25, -2.0, 0.0))


def test_separation_case_ii_bound():
    res = separation_oracle(3, 0.0, 0.0, lambda x: -0.5 * np.ones_like(x), case="upper")
    assert res.c1 == 0.0 and res.c2 == 0.0
    assert np.all(res.u_minus_u0 <= u_star(3, res.x) + 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(2.05, 8.0), st.floats(1e-6, 1.0))
def test_stationarity_property(p, x):
    assert stationarity_defect(p, x) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(st.floats(2.2, 6.0), st.floats(1e-4, 0.2), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_frozen_shift_property(p, a0, t, x):
    spec = BarrierSpec(p, 0.0, frozen_shift=a0)
    assert abs(float(barrier_residual(spec, t, x))) <= 1e-10 * max(1.0, float(u_star_prime(p, a0)) ** p)

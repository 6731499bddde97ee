import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isoflopfit.errors import AllocationUndefinedError, DomainError, UnreachableLossError
from isoflopfit.model import (
    SURFACES, LossSurface, allocation_law, eval_loss, get_surface, invert_optimal_loss,
    optimal_loss, optimal_point,
)

# Extended-precision (50 digit) evaluations, frozen.
CHINCHILLA_AT_1E9_2_0528E10 = 2.5761507476770171
SYMMETRIC_LOPT_6E18 = 2.9874480778871440


def test_presets():
    assert get_surface("symmetric").as_tuple() == (1.69, 400.0, 400.0, 0.31, 0.31)
    assert get_surface("chinchilla").as_tuple() == (1.69, 406.4, 410.7, 0.34, 0.28)
    assert get_surface("asymmetric").as_tuple() == (1.69, 406.4, 410.7, 0.465, 0.155)
    assert set(SURFACES) == {"symmetric", "chinchilla", "asymmetric"}


def test_unknown_surface():
    with pytest.raises(DomainError):
        get_surface("kaplan")


@pytest.mark.parametrize("bad", [
    dict(E=-1.0, A=1.0, B=1.0, alpha=0.3, beta=0.3),
    dict(E=1.0, A=1.0, B=1.0, alpha=0.0, beta=0.3),
    dict(E=1.0, A=-1.0, B=1.0, alpha=0.3, beta=0.3),
    dict(E=math.nan, A=1.0, B=1.0, alpha=0.3, beta=0.3),
])
def test_invalid_surface(bad):
    with pytest.raises(DomainError):
        LossSurface(**bad)


def test_eval_loss_examples():
    s = get_surface("symmetric")
    assert eval_loss(s, 1.0, 1.0) == pytest.approx(801.69, rel=1e-15)
    assert abs(eval_loss(s, 1e30, 1e30) - 1.69) < 1e-6
    c = get_surface("chinchilla")
    assert eval_loss(c, 1e9, 2.0528e10) == pytest.approx(CHINCHILLA_AT_1E9_2_0528E10, rel=1e-14)


def test_eval_loss_rejects_nonpositive():
    with pytest.raises(DomainError):
        eval_loss(get_surface("symmetric"), 0.0, 1.0)


def test_eval_loss_vectorized():
    s = get_surface("chinchilla")
    N = np.array([1e8, 1e9])
    D = np.array([1e10, 1e11])
    np.testing.assert_allclose(eval_loss(s, N, D), [eval_loss(s, n, d) for n, d in zip(N, D)])


@pytest.mark.parametrize("name,b,b0", [
    ("symmetric", 0.5, -0.389076),
    ("chinchilla", 0.548387, -0.555357),
    ("asymmetric", 0.750000, -1.345791),
])
def test_allocation_law_tables(name, b, b0):
    law = allocation_law(get_surface(name))
    assert law.b == pytest.approx(b, abs=1e-6)
    assert law.b0 == pytest.approx(b0, abs=1e-6)
    assert law.a + law.b == pytest.approx(1.0, abs=1e-15)


def test_symmetric_intercept_is_half_log6():
    assert allocation_law(get_surface("symmetric")).b0 == pytest.approx(-math.log10(6) / 2, abs=1e-14)


def test_allocation_undefined():
    with pytest.raises(AllocationUndefinedError):
        allocation_law(LossSurface(1.0, 0.0, 1.0, 0.3, 0.3))


def test_optimal_point_symmetric():
    opt, loss = optimal_point(get_surface("symmetric"), 6e18)
    assert opt.N == pytest.approx(1e9, rel=1e-12)
    assert opt.D == pytest.approx(1e9, rel=1e-12)
    assert loss == pytest.approx(SYMMETRIC_LOPT_6E18, rel=1e-14)


def test_optimal_loss_matches_dense_scan():
    s = get_surface("symmetric")
    C = 6e18
    logN = np.linspace(8.0, 10.0, 200001)
    N = 10.0 ** logN
    scan = eval_loss(s, N, C / (6.0 * N)).min()
    assert optimal_loss(s, C) == pytest.approx(scan, rel=1e-12)


@given(st.floats(17.0, 25.0))
@settings(max_examples=50, deadline=None)
def test_constraint_holds(log_c):
    C = 10.0 ** log_c
    opt, _ = optimal_point(get_surface("chinchilla"), C)
    assert 6.0 * opt.N * opt.D == pytest.approx(C, rel=1e-12)


@given(st.sampled_from(("symmetric", "chinchilla", "asymmetric")), st.floats(16.0, 26.0))
@settings(max_examples=50, deadline=None)
def test_optimum_beats_neighbours(name, log_c):
    s = get_surface(name)
    C = 10.0 ** log_c
    opt, best = optimal_point(s, C)
    for f in (0.9, 1.1):
        N = opt.N * f
        assert eval_loss(s, N, C / (6.0 * N)) >= best


@given(st.sampled_from(("symmetric", "chinchilla", "asymmetric")), st.floats(15.0, 28.0))
@settings(max_examples=50, deadline=None)
def test_invert_round_trip(name, log_c):
    s = get_surface(name)
    C = 10.0 ** log_c
    assert invert_optimal_loss(s, optimal_loss(s, C)) == pytest.approx(C, rel=1e-8)


def test_invert_symmetric_example():
    s = get_surface("symmetric")
    assert invert_optimal_loss(s, SYMMETRIC_LOPT_6E18) == pytest.approx(6e18, rel=1e-8)


def test_invert_unreachable():
    s = get_surface("symmetric")
    with pytest.raises(UnreachableLossError):
        invert_optimal_loss(s, s.E)

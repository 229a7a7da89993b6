import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gwlab import ParameterOutOfRange, StirlingRangeError
from gwlab.bell_combinatorics import (
    bell_bound_diagnostic,
    bell_by_enumeration,
    bell_sum_prediction,
    bell_table,
    bell_weighted_sum,
    bell_weighted_sum_mu,
    faa_di_bruno_check,
    faa_di_bruno_coefficients,
    generating_identity_coefficients,
    j0_chain,
    stirling2,
    stirling2_explicit,
    stirling2_triangle,
)
from gwlab.offspring_laws import pmf
from gwlab.series_engine import generation_table, generation_tables, mu_from_table


# --- Stirling numbers ------------------------------------------------------

def test_stirling_examples():
    for J in range(1, 30):
        assert stirling2(J, 1) == 1
        assert stirling2(J, J) == 1
    assert stirling2(4, 2) == 7
    assert stirling2(5, 3) == 25
    assert stirling2(6, 3) == 90


def test_stirling_dual_formula():
    for J in range(1, 61):
        for k in range(1, J + 1):
            assert stirling2_explicit(J, k) == stirling2_triangle(J, k)


def test_stirling_range():
    with pytest.raises(ParameterOutOfRange):
        stirling2(5, 6)
    with pytest.raises(StirlingRangeError):
        stirling2(400, 3)


# --- Bell tables -----------------------------------------------------------

def test_bell_examples():
    x1, x2 = Fraction(3, 7), Fraction(5, 11)
    t = bell_table([x1, x2, Fraction(1)], 3)
    assert t.value(3, 2) == 3 * x1 * x2
    ones = bell_table([1] * 6, 6)
    assert ones.value(6, 3) == 90
    xs = [Fraction(2, 3), Fraction(1, 5), Fraction(7, 2), Fraction(1, 9), Fraction(4), Fraction(3, 8)]
    tab = bell_table(xs, 6)
    for J in range(1, 7):
        assert tab.value(J, J) == xs[0] ** J
        assert tab.value(J, 1) == xs[J - 1]


def test_bell_ones_are_stirling():
    tab = bell_table([1] * 40, 40, verify=False)
    for J in range(1, 41):
        for k in range(1, J + 1):
            assert tab.value(J, k) == stirling2(J, k)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.fractions(min_value=-3, max_value=3, max_denominator=9), min_size=10, max_size=10))
def test_bell_recurrence_matches_enumeration_exact(xs):
    tab = bell_table(xs, 10, verify=False)
    for J in range(1, 11):
        for k in range(1, J + 1):
            assert tab.value(J, k) == bell_by_enumeration(J, k, xs)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 5.0), min_size=12, max_size=12))
def test_bell_nonnegative_float(xs):
    tab = bell_table(xs, 12)  # verify=True checks the partition sum as well
    assert np.all(tab.normalized >= 0)


def test_bell_float_vs_exact():
    xs = [Fraction(1, r + 1) for r in range(30)]
    exact = bell_table(xs, 30, verify=False)
    flt = bell_table([float(x) for x in xs], 30, verify=False)
    for J in range(1, 31):
        for k in range(1, J + 1):
            assert flt.value(J, k) == pytest.approx(float(exact.value(J, k)), rel=1e-12)


def test_generating_identity():
    rng = np.random.default_rng(5)
    xs = rng.random(40)
    tab = bell_table(xs, 40, verify=False)
    for k in (1, 2, 3, 7, 20):
        coef = generating_identity_coefficients(xs, k, 40)
        for J in range(k, 41):
            assert coef[J] == pytest.approx(tab.normalized[J, k], rel=1e-10, abs=1e-300)


def test_bell_csv():
    text = bell_table([1, 1, 1], 3).to_csv()
    lines = text.splitlines()
    assert lines[0] == "J,k,value"
    assert "3,2,3" in lines


# --- weighted sums ---------------------------------------------------------

def test_weighted_sum_single_term():
    rng = np.random.default_rng(8)
    mu = rng.random(12) + 0.5
    T = 12
    assert bell_weighted_sum_mu(mu, T, T) == pytest.approx(mu[0] ** T / math.factorial(T), rel=1e-12)
    xs = mu * np.array([math.factorial(r) for r in range(1, T + 1)], dtype=float)
    assert bell_weighted_sum(xs, T, T) == pytest.approx(mu[0] ** T / math.factorial(T), rel=1e-12)


def test_weighted_sum_matches_table():
    xs = [Fraction(1, r) for r in range(1, 16)]
    tab = bell_table(xs, 15, verify=False)
    for k in (1, 2, 3, 5):
        direct = sum(tab.value(J, k) / math.factorial(J) for J in range(k, 16))
        assert bell_weighted_sum([float(x) for x in xs], k, 15) == pytest.approx(float(direct), rel=1e-12)


def test_weighted_sum_tracks_prediction(heavy_law):
    tab = generation_table(heavy_law, 2**14, 512)
    mu = mu_from_table(tab)[1:]
    r = bell_weighted_sum_mu(mu, 2, 512) / bell_sum_prediction(heavy_law.alpha, heavy_law.c, 2, 512)
    assert 0.85 < r < 1.05


def test_bound_diagnostic_shape(heavy_law):
    mu = mu_from_table(generation_table(heavy_law, 2**12, 128))[1:]
    d = bell_bound_diagnostic(mu, heavy_law.alpha, heavy_law.c, range(2, 11), [32, 64, 128])
    assert d.log_ratio.shape == (3, 9)
    assert np.isfinite(d.sup_ratio) and d.sup_ratio > 0
    assert d.per_k_exponent.shape == (9,)


# --- Faà di Bruno ----------------------------------------------------------

@pytest.mark.parametrize("name", ["half_law", "heavy_law", "geo_law"])
def test_faa_di_bruno_one_generation(name, request):
    law = request.getfixturevalue(name)
    d = faa_di_bruno_check(law, 1, 20)
    for k in range(1, 21):
        assert d[k] == pytest.approx(math.factorial(k) * pmf(law, k), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("name", ["half_law", "geo_law"])
def test_faa_di_bruno_matches_series(name, request):
    law = request.getfixturevalue(name)
    tabs = generation_tables(law, range(1, 51), 64)
    for t in tabs:
        fb = faa_di_bruno_coefficients(law, t.n, 64)
        mask = t.coefficients > 0
        assert np.all(fb[~mask][1:] == 0) if law.j0 > 1 else True
        rel = np.abs(fb[mask] - t.coefficients[mask]) / t.coefficients[mask]
        assert rel.max() < 1e-10


def test_faa_di_bruno_below_j0(half_law):
    for n in (1, 4, 30):
        assert faa_di_bruno_coefficients(half_law, n, 8)[1] == 0.0


@pytest.mark.parametrize("name", ["half_law", "heavy_law", "geo_law"])
def test_j0_chain(name, request):
    law = request.getfixturevalue(name)
    chain = j0_chain(law, 300)
    tabs = generation_tables(law, range(1, 301), law.j0)
    for t in tabs:
        assert chain[t.n] == pytest.approx(t.coefficients[law.j0], rel=1e-12)

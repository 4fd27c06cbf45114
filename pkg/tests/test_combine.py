import itertools
import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parfilter.combine import (MAX_GROUP_SIZE, combine_bonferroni, combine_fisher, combine_simes,
                               combine_stouffer, gbhpc, gbhpc_enumerate, gbhpc_rows)
from parfilter.errors import EnumerationLimitError, InvalidInputError

COMBINERS = ["bonferroni", "fisher", "stouffer", "simes"]
STD = NormalDist()


def chi2_sf_even(x, dof):
    # closed form survival function for even degrees of freedom
    k = dof // 2
    return math.exp(-x / 2) * sum((x / 2) ** i / math.factorial(i) for i in range(k))


def test_bonferroni_examples():
    assert combine_bonferroni([0.01, 0.5]) == pytest.approx(0.02)
    assert combine_bonferroni([1, 1, 1]) == 1.0
    assert combine_bonferroni([0.3, 0.4, 0.5, 0.6]) == 1.0


def test_fisher_examples():
    assert combine_fisher([1, 1]) == pytest.approx(1.0)
    assert combine_fisher([0.5]) == pytest.approx(0.5)
    stat = -2 * (math.log(0.1) + math.log(0.2))
    assert combine_fisher([0.1, 0.2]) == pytest.approx(chi2_sf_even(stat, 4), rel=1e-12)


def test_stouffer_examples():
    assert combine_stouffer([0.5, 0.5, 0.5]) == pytest.approx(0.5)
    assert combine_stouffer([0.5]) == pytest.approx(0.5)
    expected = 1 - STD.cdf(2 * STD.inv_cdf(0.95) / math.sqrt(2))
    assert combine_stouffer([0.05, 0.05]) == pytest.approx(expected, rel=1e-9)


def test_simes_examples():
    for c in (0.0, 0.2, 0.7, 1.0):
        assert combine_simes([c] * 5) == pytest.approx(c)
    assert combine_simes([0.01, 0.5]) == pytest.approx(0.02)
    assert combine_simes([0.04, 0.04, 0.9]) == pytest.approx(0.06)


@pytest.mark.parametrize("func", [combine_bonferroni, combine_fisher, combine_stouffer, combine_simes])
def test_rejects_bad_input(func):
    with pytest.raises(InvalidInputError):
        func([])
    with pytest.raises(InvalidInputError):
        func([0.5, float("nan")])
    with pytest.raises(InvalidInputError):
        func([1.2])


def test_combiners_rowwise():
    P = np.array([[0.01, 0.5], [0.2, 0.3]])
    out = combine_simes(P)
    assert out.shape == (2,)
    assert out[0] == pytest.approx(0.02)


def test_gbhpc_examples():
    assert gbhpc([0.1, 0.7, 0.3], 3, "stouffer") == 0.7
    p = [0.02, 0.3, 0.15]
    for name, func in zip(COMBINERS, [combine_bonferroni, combine_fisher, combine_stouffer,
                                      combine_simes]):
        assert gbhpc(p, 1, name) == pytest.approx(func(p))
        assert gbhpc(p, 3, name) == 0.3


def test_gbhpc_stouffer_order_statistic_form():
    p = np.array([0.3, 0.01, 0.2, 0.04])
    srt = np.sort(p)
    z = (STD.inv_cdf(1 - srt[2]) + STD.inv_cdf(1 - srt[3])) / math.sqrt(2)
    assert gbhpc_enumerate(p, 3, "stouffer") == pytest.approx(1 - STD.cdf(z), rel=1e-9)
    assert gbhpc(p, 3, "stouffer") == pytest.approx(1 - STD.cdf(z), rel=1e-9)


def test_gbhpc_errors():
    with pytest.raises(InvalidInputError):
        gbhpc([0.1, 0.2], 0)
    with pytest.raises(InvalidInputError):
        gbhpc([0.1, 0.2], 3)
    with pytest.raises(EnumerationLimitError):
        gbhpc(np.full(MAX_GROUP_SIZE + 1, 0.5), 2)


def test_gbhpc_custom_combiner_enumerates():
    # not symmetric: weights the first entry more
    def lopsided(p):
        p = np.asarray(p)
        return np.minimum(1.0, 0.5 * p[..., 0] + 0.5 * p.mean(axis=-1))

    p = np.array([0.9, 0.1, 0.2])
    brute = max(lopsided(p[list(s)]) for s in itertools.combinations(range(3), 2))
    assert gbhpc(p, 2, lopsided) == pytest.approx(brute)


def test_gbhpc_rows_per_row_levels():
    rng = np.random.default_rng(1)
    P = rng.random((20, 4))
    u = rng.integers(1, 5, size=20)
    out = gbhpc_rows(P, u, "fisher")
    for i in range(20):
        assert out[i] == pytest.approx(gbhpc_enumerate(P[i], int(u[i]), "fisher"), rel=1e-12)


pvec = st.lists(st.floats(0, 1), min_size=1, max_size=6)


@settings(max_examples=200, deadline=None)
@given(pvec, st.data())
def test_shortcut_matches_enumeration(p, data):
    u = data.draw(st.integers(1, len(p)))
    for name in COMBINERS:
        assert gbhpc(p, u, name) == pytest.approx(gbhpc_enumerate(p, u, name), rel=1e-12, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(pvec, st.data())
def test_monotone_and_in_unit_interval(p, data):
    bumps = data.draw(st.lists(st.floats(0, 1), min_size=len(p), max_size=len(p)))
    hi = [a + (1 - a) * b for a, b in zip(p, bumps)]
    u = data.draw(st.integers(1, len(p)))
    for name in COMBINERS:
        lo_val, hi_val = gbhpc(p, u, name), gbhpc(hi, u, name)
        assert 0.0 <= lo_val <= 1.0
        assert lo_val <= hi_val + 1e-12


@pytest.mark.parametrize("name", COMBINERS)
def test_null_validity_monte_carlo(name):
    rng = np.random.default_rng(7)
    reps, ell = 4000, 3
    vals = gbhpc_rows(rng.random((reps, ell)), 1, name)
    grid = np.linspace(0.01, 0.99, 15)
    ecdf = (vals[:, None] <= grid).mean(axis=0)
    mcse = np.sqrt(grid * (1 - grid) / reps)
    assert (ecdf <= grid + 2 * mcse + 1e-3).all()

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parfilter.baselines import (adaptive_bh_storey, adaptive_cofilter_bh, bh,
                                 bogomolov_heller_adaptive, by, cofilter_bh, oracle_rejections,
                                 storey_pi0)
from parfilter.errors import InvalidInputError


def brute_bh(p, q):
    m = len(p)
    srt = sorted(p)
    k = max([i for i in range(1, m + 1) if srt[i - 1] <= i * q / m], default=0)
    if k == 0:
        return set()
    cut = srt[k - 1]
    return {i for i, v in enumerate(p) if v <= cut}


def test_bh_examples():
    assert list(bh([0.01, 0.02, 0.2], 0.05)) == [0, 1]
    assert bh(np.ones(5), 0.1).size == 0
    assert list(bh([0.04], 0.05)) == [0]
    assert bh([0.06], 0.05).size == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.01, 0.5))
def test_bh_brute_force(p, q):
    assert set(bh(p, q)) == brute_bh(p, q)


def test_by_examples():
    assert list(by([0.03], 0.05)) == list(bh([0.03], 0.05))
    p = np.array([0.01, 0.02, 0.2])
    assert list(by(p, 0.05)) == list(bh(p, 0.05 * 6 / 11))
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = rng.random(40) ** 3
        assert set(by(p, 0.1)) <= set(bh(p, 0.1))


def test_storey_examples():
    p = np.array([0.1, 0.6, 0.7, 0.2])
    assert storey_pi0(p, 0.5) == pytest.approx(1.5)
    high = np.array([0.6, 0.7, 0.9])
    assert storey_pi0(high, 0.5) == pytest.approx(4 / 1.5)
    assert adaptive_bh_storey(high, 0.3).size <= bh(high, 0.3).size


def test_adaptive_superset_when_estimate_small():
    rng = np.random.default_rng(1)
    hits = 0
    for _ in range(100):
        p = np.where(rng.random(60) < 0.7, rng.beta(0.1, 5, 60), rng.random(60))
        if storey_pi0(p) <= 1:
            hits += 1
            assert set(bh(p, 0.1)) <= set(adaptive_bh_storey(p, 0.1))
    assert hits > 50


def test_cofilter():
    rng = np.random.default_rng(2)
    p = rng.random(30) ** 2
    assert list(cofilter_bh(p, 0.1, tau=1.0)) == list(bh(p, 0.1))
    assert cofilter_bh(np.full(5, 0.9), 0.1, tau=0.5).size == 0
    # hand evaluation: kept = {0, 1, 3}, adjusted = (0.02, 0.4, 0.06) -> BH at 0.1 over 3
    p = np.array([0.001, 0.02, 0.5, 0.003])
    assert list(cofilter_bh(p, 0.1, tau=0.05)) == [0, 3]
    assert list(cofilter_bh(p, 0.1)) == [0, 3]  # default tau = q
    with pytest.raises(InvalidInputError):
        cofilter_bh(p, 0.1, tau=0.0)


def test_adaptive_cofilter():
    rng = np.random.default_rng(3)
    p = rng.random(30) ** 2
    assert list(adaptive_cofilter_bh(p, 0.1, tau=1.0)) == list(adaptive_bh_storey(p, 0.1))
    assert adaptive_cofilter_bh(np.full(5, 0.9), 0.1, tau=0.5).size == 0
    # kept {0, 1, 3}; adjusted (0.02, 0.4, 0.06); storey at 0.5 -> (1+0)/(0.5*3) = 2/3
    # thresholds i * 0.1 / (3 * 2/3) = 0.05 i -> 0.02 <= 0.05, 0.06 <= 0.10, 0.4 > 0.15
    p = np.array([0.001, 0.02, 0.5, 0.003])
    assert list(adaptive_cofilter_bh(p, 0.1, tau=0.05)) == [0, 3]


@pytest.mark.parametrize("func", [bh, by, adaptive_bh_storey, cofilter_bh, adaptive_cofilter_bh])
def test_permutation_and_q_monotone(func):
    rng = np.random.default_rng(4)
    for _ in range(30):
        p = rng.random(50) ** 3
        perm = rng.permutation(50)
        base = set(func(p, 0.1))
        assert {perm[j] for j in func(p[perm], 0.1)} == base
        if func not in (cofilter_bh, adaptive_cofilter_bh):  # tau moves with q by default
            assert base <= set(func(p, 0.2))


def test_bogomolov_heller_no_overlap():
    P = np.array([[0.001, 0.9], [0.9, 0.001]])
    assert bogomolov_heller_adaptive(P, 0.1).size == 0
    with pytest.raises(InvalidInputError):
        bogomolov_heller_adaptive(np.zeros((3, 3)), 0.1)


def test_bogomolov_heller_hand_instance():
    P = np.array([[0.001, 0.002], [0.01, 0.004], [0.02, 0.6], [0.003, 0.03], [0.8, 0.001]])
    q = 0.1
    s1 = P[:, 1] <= 0.05
    s2 = P[:, 0] <= 0.05
    pi1 = (1 + np.sum(P[s1, 0] > 0.5)) / (0.5 * s1.sum())
    pi2 = (1 + np.sum(P[s2, 1] > 0.5)) / (0.5 * s2.sum())
    expected = set()
    for r in range(5, 0, -1):
        t1 = min(r * 0.05 / (s1.sum() * pi1), 0.5)
        t2 = min(r * 0.05 / (s2.sum() * pi2), 0.5)
        hit = {i for i in range(5) if s1[i] and s2[i] and P[i, 0] <= t1 and P[i, 1] <= t2}
        if len(hit) == r:
            expected = hit
            break
    assert set(bogomolov_heller_adaptive(P, q)) == expected
    assert expected  # the instance is not trivially empty


def test_oracle_examples():
    assert list(oracle_rejections(np.zeros(4), 0.05)) == [0, 1, 2, 3]
    assert oracle_rejections([0.2, 0.3], 0.05).size == 0
    assert list(oracle_rejections([0.2, 0.01, 0.04], 0.05)) == [1, 2]


def test_errors():
    with pytest.raises(InvalidInputError):
        bh([0.5, 1.5], 0.1)
    with pytest.raises(InvalidInputError):
        bh([0.5], 1.0)
    with pytest.raises(InvalidInputError):
        storey_pi0([0.5], 1.0)

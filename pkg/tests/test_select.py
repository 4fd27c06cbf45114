import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parfilter.config import TestingConfig, default_max_rep_config, default_two_group_config
from parfilter.engine import local_pc_pvalues
from parfilter.errors import InvalidInputError
from parfilter.select import inflated_threshold_selection, threshold_selection


def brute_selection(local, cfg, q, scale=1.0):
    m, K = local.shape
    out = np.zeros((m, K), dtype=bool)
    for k in range(K):
        for i in range(m):
            out[i, k] = all(local[i, l] <= min(cfg.weights[l] * q / scale, cfg.lambdas[l])
                            for l in range(K) if l != k)
    return out


def test_single_group_selects_everything():
    cfg = TestingConfig(u=2, groups=[[0, 1]], weights=[1.0], levels=[[2]] * 4, lambdas=[0.5])
    sel = threshold_selection(np.random.default_rng(0).random((4, 1)), cfg, 0.05)
    assert sel.mask.all()


def test_two_study_example():
    cfg = default_max_rep_config(2, 5).with_lambdas([1.0, 1.0])
    local = np.array([[0.5, 0.01], [0.001, 0.025], [0.3, 0.026], [0.02, 0.9], [0.0, 0.0]])
    sel = threshold_selection(local, cfg, 0.05)
    assert sel.sets()[0] == {i for i in range(5) if local[i, 1] <= 0.025}
    assert sel.sets()[0] == {0, 1, 4}
    assert sel.sets()[1] == {1, 3, 4}


def test_matches_set_builder():
    rng = np.random.default_rng(2)
    cfg = default_max_rep_config(3, 5).with_lambdas([0.5, 0.02, 1.0])
    local = rng.random((5, 3)) * 0.05
    np.testing.assert_array_equal(threshold_selection(local, cfg, 0.1).mask,
                                  brute_selection(local, cfg, 0.1))


def test_inflated():
    cfg = default_max_rep_config(2, 1)
    local = np.array([[0.02, 0.02]])
    np.testing.assert_array_equal(inflated_threshold_selection(local, cfg, 0.05).mask,
                                  threshold_selection(local, cfg, 0.05).mask)
    cfg3 = default_max_rep_config(2, 3)
    local = np.array([[0.5, 0.0136], [0.5, 0.0137], [0.5, 0.02]])
    # w q H_3^{-1} = 0.025 * 6 / 11 = 0.013636...
    assert inflated_threshold_selection(local, cfg3, 0.05).sets()[0] == {0}
    assert threshold_selection(local, cfg3, 0.05).sets()[0] == {0, 1, 2}
    np.testing.assert_array_equal(inflated_threshold_selection(local, cfg3, 0.05).mask,
                                  brute_selection(local, cfg3, 0.05, scale=11 / 6))


def test_inflated_contained_in_plain():
    rng = np.random.default_rng(3)
    for _ in range(20):
        cfg = default_max_rep_config(3, 40)
        local = rng.random((40, 3)) ** 3
        a = inflated_threshold_selection(local, cfg, 0.2).mask
        b = threshold_selection(local, cfg, 0.2).mask
        assert not (a & ~b).any()


def test_bad_q():
    cfg = default_max_rep_config(2, 2)
    with pytest.raises(InvalidInputError):
        threshold_selection(np.zeros((2, 2)), cfg, 0.0)


def test_selection_ignores_own_group():
    rng = np.random.default_rng(5)
    cfg = default_two_group_config(5, 80, 4, seed=1)
    P = rng.random((80, 5)) ** 4
    base = threshold_selection(local_pc_pvalues(P, cfg), cfg, 0.3).mask
    for _ in range(100):
        k = rng.integers(2)
        Q = P.copy()
        cols = list(cfg.groups[k])
        Q[:, cols] = rng.random((80, len(cols)))
        again = threshold_selection(local_pc_pvalues(Q, cfg), cfg, 0.3).mask
        np.testing.assert_array_equal(again[:, k], base[:, k])


def test_stability_row_perturbation():
    rng = np.random.default_rng(6)
    cfg = default_max_rep_config(3, 50)
    P = rng.random((50, 3)) ** 4
    base = threshold_selection(P, cfg, 0.3).mask
    for _ in range(100):
        k = int(rng.integers(3))
        members = np.flatnonzero(base[:, k])
        if members.size == 0:
            continue
        i = rng.choice(members)
        Q = P.copy()
        Q[i] = rng.random(3) ** 4
        again = threshold_selection(Q, cfg, 0.3).mask
        if again[i, k]:
            np.testing.assert_array_equal(again[:, k], base[:, k])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.5), st.floats(0.0, 0.4))
def test_monotone_in_q(seed, q, dq):
    rng = np.random.default_rng(seed)
    cfg = default_max_rep_config(3, 30)
    local = rng.random((30, 3)) ** 3
    q2 = min(q + dq, 0.99)
    a = threshold_selection(local, cfg, q).mask
    b = threshold_selection(local, cfg, q2).mask
    assert not (a & ~b).any()

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsr import ctc
from nsr.errors import InvalidLabel, NoAlignment, TooLarge


def random_grid(rng, T, V1):
    logits = rng.normal(size=(T, V1))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def test_collapse_merges_repeats_then_drops_blanks():
    assert ctc.collapse([1, 1, 0, 1, 2, 2, 0]) == [1, 1, 2]
    assert ctc.collapse([0, 0]) == []


def test_min_frames_counts_blanks_between_repeats():
    assert ctc.min_frames([1, 2, 3]) == 3
    assert ctc.min_frames([1, 1, 2, 2]) == 6


def test_lattice_structure():
    lat = ctc.build_ctc_lattice([3, 3, 5])
    assert lat.num_states == 7
    assert list(lat.state_labels) == [0, 3, 0, 3, 0, 5, 0]
    # no skip between the two 3s, but a skip into the 5
    assert list(lat.skip_into) == [False] * 5 + [True, False]
    assert (1, 3) not in lat.arcs() and (3, 5) in lat.arcs()


def test_uniform_two_frame_example():
    # paths for [a] over 2 frames: aa, -a, a-  ->  3 of the 4 equally likely paths
    grid = np.full((2, 2), 0.5)
    res = ctc.ctc_loss_grad(grid, ctc.build_ctc_lattice([1]))
    assert res.loss == pytest.approx(-math.log(0.75), abs=1e-12)


def test_empty_labels_mean_all_blank():
    grid = np.array([[0.25, 0.75], [0.5, 0.5], [0.9, 0.1]])
    res = ctc.ctc_loss_grad(grid, ctc.build_ctc_lattice([]))
    assert res.loss == pytest.approx(-math.log(0.25 * 0.5 * 0.9), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.lists(st.integers(1, 3), max_size=3),
       st.integers(0, 2 ** 31))
def test_matches_path_enumeration(V, T, labels, seed):
    labels = [min(x, V) for x in labels]
    if ctc.min_frames(labels) > T:
        return
    grid = random_grid(np.random.default_rng(seed), T, V + 1)
    res = ctc.ctc_loss_grad(grid, ctc.build_ctc_lattice(labels))
    assert res.loss == pytest.approx(ctc.brute_force_loss(grid, labels), abs=1e-9)


def _enumerated_loss_from_logits(logits, labels):
    T, V1 = logits.shape
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    total = -np.inf
    for path in itertools.product(range(V1), repeat=T):
        if ctc.collapse(path) == labels:
            total = np.logaddexp(total, lp[np.arange(T), path].sum())
    return -total


def test_gradient_matches_finite_differences_of_enumeration():
    rng = np.random.default_rng(4)
    labels = [1, 2, 2]
    logits = rng.normal(size=(6, 3))
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    res = ctc.ctc_loss_grad(None, ctc.build_ctc_lattice(labels), log_probs=lp)
    h = 1e-6
    fd = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        up, dn = logits.copy(), logits.copy()
        up[idx] += h
        dn[idx] -= h
        fd[idx] = (_enumerated_loss_from_logits(up, labels)
                   - _enumerated_loss_from_logits(dn, labels)) / (2 * h)
    np.testing.assert_allclose(res.grad, fd, atol=1e-7)


def test_rows_sum_to_zero_and_marginal_is_constant():
    rng = np.random.default_rng(1)
    grid = random_grid(rng, 9, 4)
    res = ctc.ctc_loss_grad(grid, ctc.build_ctc_lattice([1, 3, 3]))
    assert np.abs(res.grad.sum(axis=1)).max() < 1e-12
    marg = np.logaddexp.reduce(res.log_alpha + res.log_beta, axis=1)
    np.testing.assert_allclose(marg, -res.loss, atol=1e-12)
    np.testing.assert_allclose(res.occupancy.sum(axis=1), 1.0, atol=1e-12)


def test_too_few_frames():
    with pytest.raises(NoAlignment):
        ctc.ctc_loss_grad(np.full((2, 2), 0.5), ctc.build_ctc_lattice([1, 1]))
    with pytest.raises(NoAlignment):
        ctc.brute_force_loss(np.full((2, 2), 0.5), [1, 1])


def test_zero_probability_labels_have_no_alignment():
    grid = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(NoAlignment):
        ctc.ctc_loss_grad(grid, ctc.build_ctc_lattice([1]))


def test_bad_labels():
    with pytest.raises(InvalidLabel):
        ctc.build_ctc_lattice([0, 1])
    with pytest.raises(InvalidLabel):
        ctc.ctc_loss_grad(np.full((3, 2), 0.5), ctc.build_ctc_lattice([2]))


def test_brute_force_refuses_huge_grids():
    with pytest.raises(TooLarge):
        ctc.brute_force_loss(np.full((30, 4), 0.25), [1])


def test_best_path_decode():
    grid = np.array([[0.1, 0.8, 0.1], [0.1, 0.8, 0.1], [0.9, 0.05, 0.05],
                     [0.1, 0.7, 0.2], [0.1, 0.1, 0.8]])
    assert ctc.best_path_decode(grid) == [1, 1, 2]
    assert ctc.best_path_decode(np.zeros((0, 3))) == []


def test_forced_align_prefers_earliest_emission_on_ties():
    grid = np.full((3, 2), 0.5)
    ali = ctc.forced_align(grid, ctc.build_ctc_lattice([1]))
    assert ali.states == [1, 2, 2]
    assert ali.frame_labels == [1, 0, 0]
    assert ali.log_prob == pytest.approx(3 * math.log(0.5))


def test_forced_align_matches_best_enumerated_path():
    rng = np.random.default_rng(7)
    labels = [2, 1, 2]
    for _ in range(10):
        grid = random_grid(rng, 6, 3)
        ali = ctc.forced_align(grid, ctc.build_ctc_lattice(labels))
        best = max((np.log(grid[np.arange(6), p]).sum(), p)
                   for p in itertools.product(range(3), repeat=6) if ctc.collapse(p) == labels)
        assert ali.log_prob == pytest.approx(best[0], abs=1e-12)
        assert ctc.collapse(ali.frame_labels) == labels
        assert tuple(ali.frame_labels) == best[1]

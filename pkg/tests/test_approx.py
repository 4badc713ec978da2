import itertools
import math

import numpy as np
import pytest
from scipy import stats

from fusionopt import approx, instance, relax
from fusionopt.errors import BadInit, InsufficientSupport

from conftest import enumerate_objectives, optimum, random_instance


def three_points():
    A = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    return instance.build(np.eye(2), A, 1)


# ---------------------------------------------------------- local search


def test_local_search_full_budget():
    inst = instance.gen_random(3, 5, 5, seed=2)
    sel, swaps = approx.local_search_swaps(inst)
    assert sel.indices == (0, 1, 2, 3, 4) and swaps == 0


def test_local_search_swaps_to_best_singleton():
    inst = three_points()
    sel, swaps = approx.local_search_swaps(inst, init=[0])
    assert sel.indices == (2,)
    assert swaps == 1
    assert sel.objective == pytest.approx(math.log(3.0))


def test_local_search_bad_init(small_inst):
    with pytest.raises(BadInit):
        approx.local_search(small_inst, init=[0, 1])
    with pytest.raises(BadInit):
        approx.local_search(small_inst, init=[0, 0, 1])
    with pytest.raises(BadInit):
        approx.local_search(small_inst, init=[0, 1, 99])


@pytest.mark.parametrize("seed", range(12))
def test_local_search_optimal_when_sbar_is_one(seed):
    base = random_instance(seed)
    for s in (1, base.n - 1):
        inst = base.with_budget(s)
        z, _ = optimum(inst)
        assert approx.local_search(inst).objective == pytest.approx(z, abs=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_local_search_has_no_improving_swap(seed):
    inst = random_instance(seed)
    sel = approx.local_search(inst, init=range(inst.s))
    vals = enumerate_objectives(inst)
    S = set(sel.indices)
    for i in S:
        for j in set(range(inst.n)) - S:
            T = tuple(sorted(S - {i} | {j}))
            assert vals[T] <= sel.objective + 1e-8


# ---------------------------------------------------------------- greedy


def test_greedy_diagonal_picks_largest():
    c = np.array([1.0, 3.0, 2.0, 3.0, 0.5])
    inst = instance.build(np.eye(5), np.diag(c), 2)
    assert approx.greedy(inst).indices == (1, 3)


def test_greedy_below_local_search():
    inst = instance.gen_random(5, 10, 3, seed=4)
    g = approx.greedy(inst)
    assert g.objective <= approx.local_search(inst, init=g).objective + 1e-12


def test_greedy_modular_case_is_optimal():
    rng = np.random.default_rng(0)
    Qm, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    inst = instance.build(np.eye(6), Qm * rng.uniform(0.5, 3.0, 6), 3)
    z, _ = optimum(inst)
    assert approx.greedy(inst).objective == pytest.approx(z, abs=1e-10)


# -------------------------------------------------------------- sampling


def _frequencies(x, k, draws, seed):
    masks = approx.draw_subsets(np.asarray(x, float), k, draws, np.random.default_rng(seed))
    assert np.all(masks.sum(axis=1) == k)
    keys = [tuple(np.flatnonzero(m)) for m in masks]
    subsets = list(itertools.combinations(range(len(x)), k))
    counts = np.array([sum(1 for kk in keys if kk == S) for S in subsets])
    return subsets, counts


def test_sampler_binary_point():
    x = np.array([0.0, 1.0, 1.0, 0.0])
    masks = approx.draw_subsets(x, 2, 200, np.random.default_rng(0))
    assert np.all(masks == (x > 0))


def test_sampler_three_point_probabilities():
    subsets, counts = _frequencies([1.0, 0.5, 0.5], 2, 100_000, seed=1)
    # products 0.5, 0.5, 0.25 normalized
    expected = np.array([0.4, 0.4, 0.2]) * counts.sum()
    assert subsets == [(0, 1), (0, 2), (1, 2)]
    assert stats.chisquare(counts, expected).pvalue > 0.001


def test_sampler_uniform_point():
    subsets, counts = _frequencies(np.full(6, 0.5), 3, 40_000, seed=2)
    expected = np.full(len(subsets), counts.sum() / len(subsets))
    assert stats.chisquare(counts, expected).pvalue > 0.001


def test_sampler_needs_support():
    with pytest.raises(InsufficientSupport):
        approx.draw_subsets(np.array([1.0, 0.0, 0.0]), 2, 1, np.random.default_rng(0))


def test_sample_subset_reproducible(small_inst):
    pt, _ = relax.frank_wolfe(small_inst, "M")
    a = approx.sample_subset(small_inst, pt, seed=5)
    b = approx.sample_subset(small_inst, pt, seed=5)
    assert a == b and len(a.indices) == small_inst.s


def test_sample_subset_from_exclusion_point(small_inst):
    pt, _ = relax.frank_wolfe(small_inst, "Mc")
    sel = approx.sample_subset(small_inst, pt, seed=0)
    assert len(sel.indices) == small_inst.s


# ---------------------------------------------------- exact expectation


def _direct_expectation(inst, x):
    vals = enumerate_objectives(inst)
    num = sum(np.prod(x[list(S)]) * math.exp(v) for S, v in vals.items())
    den = sum(np.prod(x[list(S)]) for S in vals)
    return math.log(num / den)


def test_expectation_at_binary_point(small_inst):
    x = np.zeros(small_inst.n)
    x[[1, 4, 6]] = 1.0
    assert approx.sampling_expectation_exact(small_inst, x) == pytest.approx(
        instance.objective(small_inst, [1, 4, 6]), abs=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_expectation_matches_enumeration(seed):
    inst = instance.gen_random(3, 4, 2, seed) if seed == 0 else random_instance(seed)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.05, 1.0, inst.n)
    x *= inst.s / x.sum()
    x = np.clip(x, 0, 1)
    ref = _direct_expectation(inst, x)
    got = approx.sampling_expectation_exact(inst, x)
    assert math.exp(got - ref) == pytest.approx(1.0, rel=1e-7)


def test_expectation_for_exclusion_point(small_inst):
    pt, _ = relax.frank_wolfe(small_inst, "Mc")
    vals = enumerate_objectives(small_inst)
    y = pt.x
    num = den = 0.0
    for S, v in vals.items():
        w = np.prod(y[[i for i in range(small_inst.n) if i not in S]])
        num += w * math.exp(v)
        den += w
    assert approx.sampling_expectation_exact(small_inst, pt) == pytest.approx(
        math.log(num / den), abs=1e-7)


def test_expectation_matches_monte_carlo(small_inst):
    pt, _ = relax.frank_wolfe(small_inst, "R")
    rng = np.random.default_rng(3)
    masks = approx.draw_subsets(pt.x, small_inst.s, 20_000, rng)
    dets = np.array([math.exp(instance.objective(small_inst, np.flatnonzero(m))) for m in masks])
    exact = math.exp(approx.sampling_expectation_exact(small_inst, pt))
    assert dets.mean() == pytest.approx(exact, rel=0.03)


# ------------------------------------------------------- derandomization


def test_derandomize_binary_point(small_inst):
    x = np.zeros(small_inst.n)
    x[[0, 2, 7]] = 1.0
    assert approx.derandomize(small_inst, x).indices == (0, 2, 7)


@pytest.mark.parametrize("seed", range(8))
def test_derandomize_beats_expectation(seed):
    inst = instance.gen_random(4, 6, 2, seed)
    for form in relax.FORMULATIONS:
        pt, _ = relax.frank_wolfe(inst, form)
        E = approx.sampling_expectation_exact(inst, pt)
        assert approx.derandomize(inst, pt).objective >= E - 1e-7


@pytest.mark.parametrize("seed", range(6))
def test_derandomize_optimal_for_singletons(seed):
    inst = instance.gen_random(4, 7, 1, seed)
    pt, _ = relax.frank_wolfe(inst, "M")
    z, _ = optimum(inst)
    assert approx.derandomize(inst, pt).objective == pytest.approx(z, abs=1e-9)


# ------------------------------------------------------------ reporting


@pytest.mark.parametrize("method", approx.METHODS)
def test_approx_report_checks_bounds(small_inst, method):
    rep = approx.approximate(small_inst, method, seed=1)
    assert rep.seed == 1
    assert all(ok for _, _, ok in rep.bound_checks)
    doc = rep.to_dict()
    assert doc["method"] == method and len(doc["selection"]["indices"]) == small_inst.s


def test_guarantee_formulas():
    inst = instance.gen_random(3, 6, 2, seed=0)
    g = approx.local_search_guarantees(inst)
    assert g["sbar_log_sbar"] == pytest.approx(2 * math.log(2))
    assert approx.sampling_guarantee(inst, "M", None) == pytest.approx(
        2 * math.log(2 / 6) + math.log(15))
    c = approx.relaxation_gap_ceilings(inst.with_budget(1))
    assert c["M"] == 0.0

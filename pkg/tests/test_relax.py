import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fusionopt import instance, relax
from fusionopt.errors import DegenerateSpectrum, InfeasibleFixing

from conftest import enumerate_objectives, optimum, random_instance


def feasible_x(rng, n, s):
    # random point of the capped simplex: mix of a vertex and a uniform point
    x = np.zeros(n)
    x[rng.choice(n, s, replace=False)] = 1.0
    t = rng.uniform(0.05, 0.95)
    return t * x + (1 - t) * np.full(n, s / n)


# ----------------------------------------------------------- R objective


def test_rddf_value_grad_at_zero(small_inst):
    val, g = relax.rddf_value_grad(small_inst, np.zeros(small_inst.n))
    assert val == 0.0
    assert np.allclose(g, np.sum(small_inst.B ** 2, axis=0))


def test_rddf_scalar_case():
    inst = instance.build(np.eye(2), np.array([[1.0], [2.0]]), 1)
    val, g = relax.rddf_value_grad(inst, [1.0])
    assert val == pytest.approx(math.log(6.0))
    assert g[0] == pytest.approx(5.0 / 6.0)


@pytest.mark.parametrize("seed", range(5))
def test_rddf_gradient_finite_differences(seed):
    inst = random_instance(seed)
    rng = np.random.default_rng(seed)
    x = feasible_x(rng, inst.n, inst.s)
    _, g = relax.rddf_value_grad(inst, x)
    h = 1e-5
    for i in range(inst.n):
        e = np.zeros(inst.n)
        e[i] = h
        fd = (relax.rddf_value_grad(inst, x + e)[0] - relax.rddf_value_grad(inst, x - e)[0]) / (2 * h)
        assert abs(fd - g[i]) <= 1e-4


def test_hessian_bound_examples():
    inst = instance.build(np.eye(4), np.eye(4), 2)
    assert relax.hessian_bound(inst) == pytest.approx(1.0)
    inst = instance.build(np.eye(2), np.array([[2.0], [0.0]]), 1)
    assert relax.hessian_bound(inst) == pytest.approx(16.0)


@pytest.mark.parametrize("seed", range(4))
def test_hessian_lower_bound(seed):
    inst = random_instance(seed)
    rng = np.random.default_rng(100 + seed)
    pts = [np.full(inst.n, inst.s / inst.n)] + [feasible_x(rng, inst.n, inst.s) for _ in range(20)]
    for x in pts:
        H = relax.rddf_hessian(inst, x)
        assert np.linalg.eigvalsh(H).min() >= -relax.hessian_bound(inst) - 1e-6


def test_hessian_matches_gradient_differences(small_inst):
    x = np.full(small_inst.n, small_inst.s / small_inst.n)
    H = relax.rddf_hessian(small_inst, x)
    h = 1e-6
    for i in range(small_inst.n):
        e = np.zeros(small_inst.n)
        e[i] = h
        col = (relax.rddf_value_grad(small_inst, x + e)[1]
               - relax.rddf_value_grad(small_inst, x - e)[1]) / (2 * h)
        assert np.allclose(col, H[:, i], atol=1e-6)


# ----------------------------------------------------------- f and find_k


def test_find_k_examples():
    assert relax.find_k(np.ones(5), 3) == 0
    assert relax.find_k([3.0, 1.0, 1.0], 2) == 1
    assert relax.find_k([2.0, 2.0, 0.0, 0.0], 2) == 0
    with pytest.raises(DegenerateSpectrum):
        relax.find_k([1.0, 0.0, 0.0], 2)


@given(st.lists(st.floats(1e-3, 100.0), min_size=1, max_size=9), st.data())
def test_find_k_is_the_unique_split(vals, data):
    lam = np.sort(np.array(vals))[::-1]
    s = data.draw(st.integers(1, lam.size))
    ok = []
    for k in range(s):
        tail = lam[k:].sum() / (s - k)
        left = math.inf if k == 0 else lam[k - 1]
        if left > tail >= lam[k]:
            ok.append(k)
    assert ok == [relax.find_k(lam, s)]


def test_f_value_examples():
    assert relax.f_value(np.ones(6), 2) == pytest.approx(2 * math.log(3.0))
    assert relax.f_value([3.0, 1.0, 1.0], 2) == pytest.approx(math.log(6.0))


def test_f_value_equals_logdet_on_selections(small_inst):
    inst = small_inst
    for S in itertools.combinations(range(inst.n), inst.s):
        Vs = inst.V[:, list(S)]
        lam = np.sort(np.linalg.eigvalsh(Vs.T @ Vs))[::-1]
        padded = np.concatenate([lam, np.zeros(inst.n - inst.s)])
        ref = np.linalg.slogdet(inst.M[np.ix_(S, S)])[1]
        assert relax.f_value(padded, inst.s) == pytest.approx(ref, abs=1e-9)


def test_f_subgrad_examples():
    G = relax.f_subgrad(np.eye(4), 2)
    assert np.allclose(G, 0.5 * np.eye(4))
    assert np.trace(G @ np.eye(4)) == pytest.approx(2.0)
    G = relax.f_subgrad(np.diag([3.0, 1.0, 1.0]), 2)
    assert np.allclose(G, np.diag([1 / 3, 1 / 2, 1 / 2]))
    # rank-s with equal nonzero eigenvalues: pseudo-inverse plus 1/lambda off range
    P = np.diag([2.0, 2.0, 0.0, 0.0])
    G = relax.f_subgrad(P, 2)
    assert np.allclose(G, np.linalg.pinv(P) + 0.5 * np.diag([0, 0, 1.0, 1.0]))


def _log_f(X, s):
    return relax.f_value(np.sort(np.linalg.eigvalsh(X))[::-1], s)


def test_f_supergradient_inequality():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 6))
        s = int(rng.integers(1, n + 1))
        Gx, Gy = rng.standard_normal((2, n, n))
        X, Y = Gx @ Gx.T + 0.01 * np.eye(n), Gy @ Gy.T + 0.01 * np.eye(n)
        G = relax.f_subgrad(X, s)
        # log f is concave and s-homogeneous: <G, X> = s
        assert np.sum(G * X) == pytest.approx(s, abs=1e-8)
        assert _log_f(Y, s) <= _log_f(X, s) + np.sum(G * (Y - X)) + 1e-7


# ------------------------------------------------------- frank-wolfe runs


def test_fw_R_with_s_equal_n():
    inst = instance.gen_random(3, 5, 5, seed=1)
    pt, cert = relax.frank_wolfe(inst, "R")
    assert np.all(pt.x == 1.0)
    assert cert.bound == pytest.approx(instance.objective(inst, range(5)), abs=1e-10)


def test_fw_M_with_s_one_is_exact():
    inst = instance.gen_random(4, 6, 1, seed=3)
    _, cert = relax.frank_wolfe(inst, "M")
    best = max(instance.objective(inst, [i]) for i in range(6))
    assert cert.bound == pytest.approx(best, abs=1e-6)


def test_fw_R_bound_within_gap_ceiling():
    inst = instance.gen_random(4, 10, 3, seed=5)
    z, _ = optimum(inst)
    _, cert = relax.frank_wolfe(inst, "R")
    sb, sig = inst.s_bar, inst.sigma_max
    assert z <= cert.bound <= z + inst.n * math.log1p(sb * sig ** 2 / (inst.n * (1 + sig))) + 1e-6


def test_fw_rejects_infeasible_fixing(small_inst):
    with pytest.raises(InfeasibleFixing):
        relax.frank_wolfe(small_inst, "R", fixed_in=[0, 1, 2, 3])
    with pytest.raises(InfeasibleFixing):
        relax.frank_wolfe(small_inst, "M", fixed_out=range(6))
    with pytest.raises(InfeasibleFixing):
        relax.frank_wolfe(small_inst, "M", fixed_in=[0], fixed_out=[0])


@pytest.mark.parametrize("form", relax.FORMULATIONS)
def test_frac_point_invariants(small_inst, form):
    pt, cert = relax.frank_wolfe(small_inst, form, fixed_in=[2], fixed_out=[0])
    budget = small_inst.s if form != "Mc" else small_inst.n - small_inst.s
    assert np.all((pt.x >= -1e-9) & (pt.x <= 1 + 1e-9))
    assert pt.x.sum() == pytest.approx(budget, abs=1e-9)
    assert pt.selection_x[2] == 1.0 and pt.selection_x[0] == 0.0
    assert pt.bound >= pt.value - 1e-7
    assert cert.feasibility_violation() <= 1e-9
    assert np.all(cert.mu >= 0)


def test_certificate_with_equal_scores():
    inst = instance.build(np.eye(4), np.eye(4), 2)
    cert = relax.dual_from_gradient(inst, "R", np.full(4, 0.5))
    assert np.allclose(cert.w, 1 / 1.5)
    assert cert.nu == pytest.approx(1 / 1.5)
    assert np.all(cert.mu == 0)


@pytest.mark.parametrize("seed", range(6))
def test_restricted_shifts_are_valid(seed):
    inst = random_instance(seed, n_range=(6, 9))
    vals = enumerate_objectives(inst)
    for form in ("R", "M", "Mc"):
        if form == "Mc" and inst.s == inst.n:
            continue
        _, cert = relax.frank_wolfe(inst, form, max_iter=300)
        for j in range(inst.n):
            with_j = [v for S, v in vals.items() if j in S]
            without_j = [v for S, v in vals.items() if j not in S]
            shifted_in = cert.restricted_bound([j], [])
            assert shifted_in == pytest.approx(cert.bound + cert.shift_in(j))
            if with_j:
                assert max(with_j) <= shifted_in + 1e-7
                assert max(with_j) <= cert.bound_for([j], []) + 1e-7
            if without_j:
                assert max(without_j) <= cert.restricted_bound([], [j]) + 1e-7
                assert max(without_j) <= cert.bound_for([], [j]) + 1e-7


def test_weak_duality_on_seeded_corpus():
    for seed in range(200):
        inst = random_instance(seed, d_range=(2, 8), n_range=(4, 12))
        z, _ = optimum(inst)
        rep = relax.relaxation_bounds(inst, max_iter=300)
        for name, cert in rep["certificates"].items():
            assert cert.bound >= z - 1e-7, (seed, name)


@pytest.mark.parametrize("form", ["R", "M"])
def test_relaxations_are_concave(form):
    rng = np.random.default_rng(1)
    for k in range(200):
        inst = random_instance(k % 20)
        x, y = feasible_x(rng, inst.n, inst.s), feasible_x(rng, inst.n, inst.s)
        mid = relax.relaxation_value(inst, form, 0.5 * (x + y))
        ends = 0.5 * (relax.relaxation_value(inst, form, x) + relax.relaxation_value(inst, form, y))
        assert mid >= ends - 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_exclusion_form_of_R_agrees(seed):
    inst = random_instance(seed)
    if inst.s == inst.n:
        pytest.skip("no exclusion form")
    rep = relax.relaxation_bounds(inst)
    assert abs(rep["certificates"]["R"].bound - rep["certificates"]["Rc"].bound) <= 1e-5


def test_bound_report_json(small_inst):
    rep = relax.relaxation_bounds(small_inst)
    doc = relax.bound_report_json(rep)
    assert set(doc) >= {"zR", "zM", "zMc", "gaps", "iterations", "certificates"}
    assert doc["best"] == min(doc["zR"], doc["zM"], doc["zMc"])
    assert "nu" in doc["certificates"]["M"]

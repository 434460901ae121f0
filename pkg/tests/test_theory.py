import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jacsketch.problem import FiniteSumProblem, reference_solution, smoothness_profile, subset_smoothness
from jacsketch.sampling import CustomSampling, FullBatch, SingleElement, TauNice, TauPartition
from jacsketch.sketch import SketchRule, WeightMatrix
from jacsketch.theory import (
    TABLE_ROWS,
    TheoryError,
    TheoryReport,
    assumption_probes,
    expected_smoothness_l1,
    expected_smoothness_l2,
    group_smoothness_max,
    iteration_complexity,
    mean_group_smoothness,
    optimal_probabilities,
    rho_with_kind,
    row_hofmann,
    row_partition,
    sketch_residual_rho,
    stepsize,
    stochastic_condition_kappa,
    tau_tradeoff_curve,
)
from conftest import random_ridge
from oracles import brute_kappa, brute_rho

FANO = [[0, 1, 2], [0, 3, 4], [0, 5, 6], [1, 3, 5], [1, 4, 6], [2, 3, 6], [2, 4, 5]]


def diag_problem(L, lam=0.0):
    """Ridge problem whose sample smoothness constants are exactly L (+ lam)."""
    L = np.asarray(L, dtype=float)
    return FiniteSumProblem(np.diag(np.sqrt(L)), np.zeros(L.size), lam)


# -- L1 and L2 ----------------------------------------------------------------------------


def test_l1_tau_nice_worked_example():
    p = diag_problem([1.0, 2.0, 3.0])
    assert expected_smoothness_l1(p, TauNice(3, 2)) == pytest.approx(2.25, rel=1e-14)
    assert group_smoothness_max(p, TauNice(3, 2), "average_bound") == pytest.approx(2.25, rel=1e-14)


def test_l1_full_batch_is_global_smoothness(ridge_small):
    prof = smoothness_profile(ridge_small)
    l1 = expected_smoothness_l1(ridge_small, FullBatch(ridge_small.n), "exact_ridge")
    assert l1 == pytest.approx(prof.global_L, rel=1e-12)


def test_l1_uniform_single_is_max_smoothness(ridge_small):
    prof = smoothness_profile(ridge_small)
    assert expected_smoothness_l1(ridge_small, SingleElement.uniform_over(6)) == pytest.approx(prof.max_L, rel=1e-14)


def test_l1_general_formula_for_importance_sampling():
    L = np.array([1.0, 4.0, 2.0])
    p = diag_problem(L)
    probs = L / L.sum()
    # (1/n) max_i L_i / p_i = sum(L) / n for smoothness-proportional sampling
    assert expected_smoothness_l1(p, SingleElement(probs)) == pytest.approx(L.sum() / 3, rel=1e-14)


def test_l1_estimate_is_close_to_enumeration():
    p = random_ridge(10, 4, seed=1)
    exact = expected_smoothness_l1(p, TauNice(10, 3), "exact_ridge")
    approx = expected_smoothness_l1(p, TauNice(10, 3), "exact_ridge", mode="estimate", samples=4000)
    assert approx == pytest.approx(exact, rel=0.05)


def test_l2_examples():
    L = np.array([1.0, 5.0, 3.0])
    nice = TauNice(3, 2)
    assert expected_smoothness_l2(L, nice, WeightMatrix.from_smoothness(L)) == pytest.approx(2.0, rel=1e-14)
    assert expected_smoothness_l2(L, SingleElement.uniform_over(3)) == pytest.approx(5.0, rel=1e-14)
    assert expected_smoothness_l2(L, nice) == pytest.approx(10.0, rel=1e-14)


# -- kappa and rho -------------------------------------------------------------------------


def test_kappa_examples():
    assert stochastic_condition_kappa(TauNice(4, 2)) == pytest.approx(0.5, rel=1e-15)
    assert stochastic_condition_kappa(FullBatch(4)) == 1.0
    assert stochastic_condition_kappa(SingleElement([0.2, 0.3, 0.5])) == pytest.approx(0.2, rel=1e-15)


def test_rho_examples():
    assert sketch_residual_rho(FullBatch(5)) == 0.0
    assert sketch_residual_rho(SingleElement.uniform_over(7)) == pytest.approx(7.0, rel=1e-14)
    assert sketch_residual_rho(TauNice(4, 2)) == pytest.approx(4 / 3, rel=1e-14)
    assert sketch_residual_rho(TauNice(4, 2), mode="brute_force") == pytest.approx(4 / 3, rel=1e-12)


def test_rho_closed_form_outside_domain():
    with pytest.raises(TheoryError):
        sketch_residual_rho(SingleElement([0.2, 0.8]))
    with pytest.raises(TheoryError):
        sketch_residual_rho(TauNice(4, 2), WeightMatrix([1.0, 2.0, 3.0, 4.0]))


def test_rho_kind_reports_exact_or_bound():
    assert rho_with_kind(TauNice(4, 2)) == (pytest.approx(4 / 3), "exact")
    value, kind = rho_with_kind(TauPartition.contiguous(4, 2, [0.3, 0.7]))
    assert kind == "exact"
    assert value == pytest.approx(sketch_residual_rho(TauPartition.contiguous(4, 2, [0.3, 0.7]), mode="brute_force"))
    big = TauNice(40, 10)  # support far above the brute-force limit
    _, kind = rho_with_kind(big, WeightMatrix(np.arange(1.0, 41.0)))
    assert kind == "bound"


def test_pair_uniform_closed_form_fano_plane():
    s = CustomSampling(7, FANO, [1 / 7] * 7)
    sup = s.support()
    assert (sup.c1, sup.c2) == (3, 1)
    oracle = brute_rho(sup.sets, sup.probs, [s.theta(c) for c in sup.sets], np.ones(7))
    assert sketch_residual_rho(s) == pytest.approx(oracle, rel=1e-10)
    assert sketch_residual_rho(s, WeightMatrix(np.arange(1.0, 8.0)), "bound") >= oracle - 1e-12


def _all_small_configs(max_n=8):
    rng = np.random.default_rng(0)
    for n in range(1, max_n + 1):
        yield SingleElement.uniform_over(n)
        yield SingleElement(rng.dirichlet(np.ones(n)) * 0.9 + 0.1 / n)
        yield FullBatch(n)
        for tau in range(1, n + 1):
            yield TauNice(n, tau)
            if n % tau == 0:
                yield TauPartition.contiguous(n, tau)
                yield TauPartition.contiguous(n, tau, rng.dirichlet(np.ones(n // tau)))


def test_kappa_and_rho_closed_forms_match_brute_force():
    checked = 0
    for s in _all_small_configs():
        sup = s.support()
        w = np.ones(s.n)
        k_closed = stochastic_condition_kappa(s)
        assert k_closed == pytest.approx(brute_kappa(sup.sets, sup.probs, w), rel=1e-10, abs=1e-14)
        assert stochastic_condition_kappa(s, mode="brute_force") == pytest.approx(k_closed, rel=1e-10)
        try:
            r_closed = sketch_residual_rho(s)
        except TheoryError:
            continue
        oracle = brute_rho(sup.sets, sup.probs, [s.theta(c) for c in sup.sets], w)
        assert r_closed == pytest.approx(oracle, rel=1e-10, abs=1e-12)
        checked += 1
    assert checked > 40


def test_rho_bounds_dominate_brute_force():
    rng = np.random.default_rng(1)
    for trial in range(500):
        n = int(rng.integers(1, 9))
        w = rng.uniform(0.1, 10.0, n)
        kind = trial % 3
        if kind == 0:
            s = SingleElement(rng.dirichlet(np.ones(n)) * 0.9 + 0.1 / n)
        elif kind == 1:
            s = TauNice(n, int(rng.integers(1, n + 1)))
        else:
            divisors = [t for t in range(1, n + 1) if n % t == 0]
            tau = int(rng.choice(divisors))
            perm = rng.permutation(n)
            s = TauPartition([perm[k:k + tau] for k in range(0, n, tau)], rng.dirichlet(np.ones(n // tau)))
        W = WeightMatrix(w)
        exact = sketch_residual_rho(s, W, "brute_force")
        assert sketch_residual_rho(s, W, "bound") >= exact - 1e-10 * max(1.0, abs(exact))


# -- inequality chains ---------------------------------------------------------------------------


def test_group_smoothness_chain():
    rng = np.random.default_rng(2)
    for trial in range(1000):
        n = int(rng.integers(2, 7))
        d = int(rng.integers(1, 5))
        p = random_ridge(n, d, lam=float(rng.uniform(0, 0.5)), seed=trial)
        prof = smoothness_profile(p)
        if trial % 2:
            s = TauNice(n, int(rng.integers(1, n + 1)))
        else:
            tau = int(rng.choice([t for t in range(1, n + 1) if n % t == 0]))
            s = TauPartition.contiguous(n, tau)
        mean_lc = mean_group_smoothness(p, s, "exact_ridge")
        lg = group_smoothness_max(p, s, "exact_ridge")
        tol = 1e-12 * prof.max_L
        assert prof.global_L <= mean_lc + tol
        assert mean_lc <= lg + tol
        assert lg <= prof.max_L + tol


def test_partition_average_lemma():
    rng = np.random.default_rng(3)
    for trial in range(1000):
        tau = int(rng.integers(1, 4))
        m = int(rng.integers(1, 4))
        n = tau * m
        p = random_ridge(n, int(rng.integers(1, 4)), lam=float(rng.uniform(0, 0.3)), seed=trial)
        L = p.sample_smoothness()
        perm = rng.permutation(n)
        cells = [perm[k:k + tau] for k in range(0, n, tau)]
        lc = [subset_smoothness(p, c, "exact_ridge") for c in cells]
        tol = 1e-12 * L.max()
        assert np.mean(lc) <= L.mean() + tol
        assert L.mean() <= max(L[c].sum() / tau for c in cells) + tol


def test_assumption_probes_never_violated():
    rng = np.random.default_rng(4)
    p = random_ridge(6, 3, lam=0.1, seed=8)
    ref = reference_solution(p)
    L = p.sample_smoothness()
    cases = [
        (SingleElement.uniform_over(6), WeightMatrix.identity(6)),
        (SingleElement(L / L.sum()), WeightMatrix.identity(6)),
        (TauNice(6, 2), WeightMatrix.from_smoothness(L)),
        (TauPartition.contiguous(6, 3), WeightMatrix.identity(6)),
    ]
    for s, W in cases:
        rule = SketchRule("column", W)
        l1 = expected_smoothness_l1(p, s, "exact_ridge")
        l2 = expected_smoothness_l2(L, s, W)
        for _ in range(125):
            x = ref.x + rng.standard_normal(3) * rng.uniform(0.01, 10)
            lhs1, lhs2, gap = assumption_probes(p, s, rule, x, ref)
            assert lhs1 <= 2 * l1 * gap * (1 + 1e-9) + 1e-15
            assert lhs2 <= 2 * l2 * gap * (1 + 1e-9) + 1e-15


# -- probabilities and stepsizes -------------------------------------------------------------------


def test_optimal_probabilities_examples():
    np.testing.assert_allclose(optimal_probabilities([1.0, 3.0], 1.0, 2), [0.3, 0.7], rtol=1e-14)
    np.testing.assert_allclose(optimal_probabilities([2.0] * 5, 0.3, 5), 0.2, rtol=1e-14)
    n, L = 10, np.linspace(1, 3, 10)
    mu = 1e6
    dev = np.abs(optimal_probabilities(L, mu, n) - 1 / n).max()
    assert dev <= 4 * L.max() / (mu * n**2)


def test_optimal_probabilities_minimize_partition_complexity():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m = int(rng.integers(1, 7))
        tau = int(rng.integers(1, 3))
        n, mu = m * tau, float(rng.uniform(0.01, 1))
        Lc = rng.uniform(0.1, 10, m)
        best = row_partition(optimal_probabilities(Lc, mu, n, tau), Lc, mu, n, tau)
        for _ in range(200):
            q = rng.dirichlet(np.ones(m))
            assert best <= row_partition(q, Lc, mu, n, tau) * (1 + 1e-12)


def test_stepsize_examples():
    L, mu = 3.0, 0.5
    a = stepsize("general_thm36", L1=L, L2=L, kappa=1.0, rho=0.0, mu=mu, n=4)
    assert a == pytest.approx(1 / (4 * L), rel=1e-15)
    n, mu = 8, 0.05
    Li = np.linspace(0.5, 2.0, n)
    p = optimal_probabilities(Li, mu, n)
    a = stepsize("partition_thm52", p_cells=p, L_cells=Li, mu=mu, n=n, tau=1)
    assert a == pytest.approx(1 / (n * mu + 4 * Li.mean()), rel=1e-12)
    assert stepsize("practical", n=100, mu=0.01, mean_L=1.0) == pytest.approx(0.5, rel=1e-15)


def test_stepsize_errors_name_missing_constant():
    with pytest.raises(TheoryError, match="kappa"):
        stepsize("general_thm36", L1=1.0, L2=1.0, rho=0.0, mu=1.0, n=3)
    with pytest.raises(TheoryError):
        stepsize("practical", n=3, mu=0.0, mean_L=1.0)
    with pytest.raises(TheoryError):
        stepsize("newton", n=3)


# -- complexity rows ------------------------------------------------------------------------------------


def test_complexity_examples():
    eps = 1e-4
    log = math.log(1 / eps)
    gd = iteration_complexity(3, eps, L=2.0, mu=0.1)
    assert gd.iterations == pytest.approx(80 * log, rel=1e-14)
    saga = iteration_complexity(5, eps, n=50, L_max=3.0, mu=0.1)
    assert saga.factor == pytest.approx(170.0, rel=1e-14)
    imp = iteration_complexity(8, eps, n=50, mean_L=1.5, mu=0.1)
    assert imp.factor == pytest.approx(110.0, rel=1e-14)
    assert imp.log_factor == pytest.approx(log, rel=1e-15)


def test_every_row_is_addressable():
    assert sorted(TABLE_ROWS) == list(range(1, 15))
    with pytest.raises(TheoryError):
        iteration_complexity(15)
    with pytest.raises(TheoryError, match="L_max"):
        iteration_complexity(5, n=4, mu=1.0)


def test_general_row_reduces_to_uniform_saga():
    # identity weight, uniform single element: kappa=1/n, rho=n, L1=L2=L_max
    n, Lmax, mu = 30, 2.5, 0.01
    general = iteration_complexity(1, L1=Lmax, L2=Lmax, kappa=1 / n, rho=n, mu=mu, n=n).factor
    assert general == pytest.approx(iteration_complexity(5, n=n, L_max=Lmax, mu=mu).factor, rel=1e-12)


def test_nice_row_at_full_batch_is_gradient_descent():
    c = dict(n=10, tau=10, lg_max=1.7, L_max=3.0, mu=0.2)
    assert TABLE_ROWS[10][1](c) == pytest.approx(4 * 1.7 / 0.2, rel=1e-15)


# -- tau trade-off --------------------------------------------------------------------------------------


def test_tau_curve_endpoints_and_monotonicity():
    p = random_ridge(12, 12, lam=0.05, seed=6)
    prof = smoothness_profile(p)
    n, mu = 12, prof.mu
    curve = tau_tradeoff_curve(p)
    assert curve.c_tau[0] == pytest.approx(prof.max_L + mu * n / 4, rel=1e-14)
    assert curve.c_tau[-1] == pytest.approx(mu / 4, rel=1e-14)
    assert np.all(np.diff(curve.c_tau) < 0)
    assert curve.lg_max[-1] == pytest.approx(prof.global_L, rel=1e-12)
    assert curve.iteration[-1] == pytest.approx(max(4 * prof.global_L / mu, 1.0), rel=1e-12)
    K = 4 * prof.max_L / mu
    assert curve.hofmann[0] == pytest.approx(0.5 * (n + K + math.sqrt(n**2 + K**2)), rel=1e-14)
    assert np.all(np.diff(curve.iteration) <= 1e-9 * curve.iteration[:-1])
    np.testing.assert_allclose(curve.total, curve.tau * curve.iteration, rtol=1e-15)
    assert not curve.approximate.any()


def test_tau_curve_interior_minimum_on_small_instance():
    # lambda = L_max / n gives the small-instance regime with an interior optimum
    base = random_ridge(20, 20, lam=0.0, seed=0)
    lam = smoothness_profile(base).max_L / 20
    p = FiniteSumProblem(base.A, base.y, lam)
    assert tau_tradeoff_curve(p).best_tau in (2, 3)


def test_tau_curve_estimates_above_threshold():
    p = random_ridge(24, 5, lam=0.1, seed=7)
    curve = tau_tradeoff_curve(p, taus=[1, 2, 12, 24], samples=500)
    assert curve.approximate.tolist() == [False, True, True, False]
    with pytest.raises(TheoryError):
        tau_tradeoff_curve(p, taus=[0, 3])


def test_hofmann_formula():
    assert row_hofmann(10, 1, 1.0, 4.0) == pytest.approx(0.5 * (10 + 1 + math.sqrt(101)), rel=1e-15)


# -- report --------------------------------------------------------------------------------------------


def test_report_serializes_flat():
    r = TheoryReport(l1=1.0, l2=2.0, kappa=0.5, rho=3.0, stepsize=0.1, complexity=40.0, formula_tag="5",
                     extra={"companion_6": 40.0})
    d = json.loads(r.to_json())
    for key in ("l1", "l2", "kappa", "rho", "stepsize", "complexity", "formula_tag"):
        assert key in d
    assert d["companion_6"] == 40.0
    assert all(not isinstance(v, dict) for v in d.values())


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.data())
def test_kappa_in_unit_interval(n, data):
    tau = data.draw(st.integers(1, n))
    k = stochastic_condition_kappa(TauNice(n, tau))
    assert 0 < k <= 1
    assert sketch_residual_rho(TauNice(n, tau)) >= 0

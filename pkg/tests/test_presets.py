import math

import numpy as np
import pytest

from jacsketch.data_io import scale_columns, skewed_column_norms, synthesize_ridge
from jacsketch.presets import PRESETS, PresetError, baseline_grid, build_custom_method, build_method, scheme_from_config
from jacsketch.problem import FiniteSumProblem, smoothness_profile
from jacsketch.sampling import CustomSampling, FullBatch, SingleElement, TauNice, TauPartition
from jacsketch.theory import iteration_complexity
from conftest import random_ridge


@pytest.fixture
def problem():
    return random_ridge(12, 4, lam=0.05, seed=9)


def test_gd_row(problem):
    prof = smoothness_profile(problem)
    m = build_method(problem, "gd")
    assert isinstance(m.sampling, FullBatch)
    assert m.report.formula_tag == "3"
    assert m.report.complexity == pytest.approx(4 * prof.global_L / prof.mu, rel=1e-12)
    assert m.stepsize == pytest.approx(1 / (4 * prof.global_L), rel=1e-12)
    assert {r.formula_tag for r in m.companions} == {"4", "1"}


def test_saga_uni_row(problem):
    prof = smoothness_profile(problem)
    m = build_method(problem, "saga-uni")
    assert m.report.formula_tag == "5"
    assert m.report.complexity == pytest.approx(12 + 4 * prof.max_L / prof.mu, rel=1e-12)
    assert m.report.kappa == pytest.approx(1 / 12) and m.report.rho == pytest.approx(12.0)
    assert m.stepsize == pytest.approx(min(1 / (4 * prof.max_L), 1 / (4 * prof.max_L + 12 * prof.mu)), rel=1e-12)


def test_minibatch_nice_row(problem):
    prof = smoothness_profile(problem)
    n, tau = 12, 3
    m = build_method(problem, "minibatch-saga-nice", tau=tau)
    assert m.report.formula_tag == "10" and m.label == "minibatch-saga-nice-3"
    lg = m.report.l1
    expect = max(4 * lg / prof.mu, n / tau + (n - tau) / ((n - 1) * tau) * 4 * prof.max_L / prof.mu)
    assert m.report.complexity == pytest.approx(expect, rel=1e-12)
    assert build_method(problem, "minibatch-saga-nice", tau=tau, weight="ldiag").report.formula_tag == "11"


def test_partition_rows(problem):
    assert build_method(problem, "minibatch-saga-partition", tau=3).report.formula_tag == "12"
    assert build_method(problem, "minibatch-saga-partition", tau=3, weight="ldiag").report.formula_tag == "13"
    opt = build_method(problem, "minibatch-saga-partition", tau=3, probs="opt")
    assert opt.report.formula_tag == "14"
    red = build_method(problem, "saga-reduced", tau=3, probs="opt")
    assert red.rule.family == "averaged" and red.report.formula_tag == "14"
    assert build_method(problem, "saga-reduced", tau=3).report.formula_tag == "2"


def test_importance_sampling_presets(problem):
    prof = smoothness_profile(problem)
    li = build_method(problem, "saga-li")
    np.testing.assert_allclose(li.sampling.p, prof.per_function / prof.per_function.sum(), rtol=1e-14)
    assert li.report.formula_tag == "2"
    opt = build_method(problem, "saga-opt")
    mu_c = opt.report.extra["mu_cells"]
    assert opt.report.formula_tag == "8"
    assert opt.report.complexity == pytest.approx(12 + 4 * prof.mean_L / mu_c, rel=1e-12)
    assert opt.stepsize == pytest.approx(1 / (12 * mu_c + 4 * prof.mean_L), rel=1e-12)
    sag = build_method(problem, "sag-opt")
    assert sag.rule.theta_mode == "relaxed"
    np.testing.assert_allclose(sag.sampling.p, opt.sampling.p)


def test_sgd_preset(problem):
    m = build_method(problem, "sgd")
    assert m.rule.theta_mode == "none" and m.report.formula_tag == "none"


def test_practical_and_numeric_stepsizes(problem):
    prof = smoothness_profile(problem)
    m = build_method(problem, "saga-uni", stepsize="practical")
    assert m.stepsize == pytest.approx(1 / (12 * prof.mu + prof.mean_L), rel=1e-14)
    assert build_method(problem, "saga-uni", stepsize=0.25).stepsize == 0.25
    with pytest.raises(PresetError):
        build_method(problem, "saga-uni", stepsize=-1)


def test_preset_errors(problem):
    with pytest.raises(PresetError):
        build_method(problem, "svrg")
    with pytest.raises(PresetError):
        build_method(problem, "minibatch-saga-nice")
    with pytest.raises(PresetError):
        build_method(problem, "minibatch-saga-partition", tau=5)
    with pytest.raises(PresetError):
        build_method(problem, "saga-reduced", tau=3, weight="ldiag")
    with pytest.raises(PresetError):
        build_method(FiniteSumProblem(np.ones((3, 2)), [1.0, 2.0], 0.0), "gd")


def test_every_preset_builds(problem):
    for name in PRESETS:
        m = build_method(problem, name, tau=3)
        assert m.stepsize > 0


def test_baseline_grid():
    grid = baseline_grid(2.0)
    exps = [math.log2(g / 2.0) for g in grid]
    assert exps == [21, 19, 17, 15, 13, 11, 9, 7, 5, 3, 1, -1, -3, -5, -7, -9, -10, -11]


def test_scheme_from_config_uses_one_based_indices():
    s = scheme_from_config({"kind": "tau-partition", "cells": [[1, 2], [3, 4]], "probs": [0.3, 0.7]}, 4)
    assert isinstance(s, TauPartition)
    assert [c.tolist() for c in s.cells()] == [[0, 1], [2, 3]]
    assert isinstance(scheme_from_config({"kind": "single"}, 4), SingleElement)
    assert isinstance(scheme_from_config({"kind": "tau-nice", "tau": 2}, 4), TauNice)
    assert isinstance(scheme_from_config({"kind": "full"}, 4), FullBatch)
    c = scheme_from_config({"kind": "custom", "sets": [[1, 2], [2, 3], [1, 3]], "probs": [1 / 3] * 3}, 3)
    assert isinstance(c, CustomSampling)
    with pytest.raises(PresetError):
        scheme_from_config({"kind": "tau-nice"}, 4)
    with pytest.raises(PresetError):
        scheme_from_config({"kind": "bernoulli"}, 4)


def test_custom_method_reports_generic_rows(problem):
    spec = {"label": "pairs", "scheme": {"kind": "tau-partition", "cells": [[2 * k + 1, 2 * k + 2] for k in range(6)]}}
    m = build_custom_method(problem, spec)
    tags = {m.report.formula_tag} | {r.formula_tag for r in m.companions}
    assert tags == {"1", "2"}
    assert m.stepsize == max(r.stepsize for r in [m.report] + m.companions)
    cyc = {"label": "cyc", "scheme": {"kind": "custom", "sets": [[k + 1, (k + 1) % 12 + 1] for k in range(12)],
                                      "probs": [1 / 12] * 12}}
    assert build_custom_method(problem, cyc).report.formula_tag == "1"


def test_custom_method_without_theory_needs_number(problem):
    spec = {"scheme": {"kind": "tau-partition", "cells": [[2 * k + 1, 2 * k + 2] for k in range(6)]},
            "family": "averaged", "weight": "identity"}
    m = build_custom_method(problem, spec)
    assert m.report.formula_tag == "2"
    nice = {"scheme": {"kind": "tau-nice", "tau": 2}, "theta": "relaxed", "stepsize": 0.01}
    assert build_custom_method(problem, nice).stepsize == 0.01


def test_importance_ordering_on_skewed_problem():
    n = 100
    ds, _ = synthesize_ridge(n, 10, seed=0)
    ds = scale_columns(ds, skewed_column_norms(n))
    p = FiniteSumProblem(ds.features, ds.labels, 1 / n**2)
    cx = {name: build_method(p, name).report for name in ("saga-uni", "saga-li", "saga-opt")}
    pred = {k: r.complexity for k, r in cx.items()}
    assert pred["saga-opt"] < pred["saga-li"]
    assert pred["saga-opt"] < pred["saga-uni"]
    prof = smoothness_profile(p)
    mu_c = cx["saga-opt"].extra["mu_cells"]
    assert pred["saga-opt"] == pytest.approx(iteration_complexity(8, n=n, mean_L=prof.mean_L, mu=mu_c).factor)

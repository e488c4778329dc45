import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppdesign import scenarios as sc
from ppdesign.core import Coder, Design, InvalidInputError, ModelSpec, random_design
from ppdesign.criterion import information_matrix, set_information
from ppdesign.simulation import (
    SimulationPlan,
    choice_probabilities,
    compare_designs,
    emse,
    fit_mnl,
    log_likelihood,
    observed_information,
    score,
    simulate_choices,
)

from .oracles import coded_design, fd_gradient

ONE_SET = Design(np.array([[[1], [2]]]))
ONE_ATTR = ModelSpec((2,))


def _bench(n_int=0, seed=0):
    model = sc.bench_model(n_int)
    design = random_design(sc.bench_space(2, 1), seed)
    beta = sc.main_effects_mean(sc.BENCH_LEVELS, 1.0)
    beta = np.r_[beta, np.full(model.num_params - model.num_main, 0.2)]
    return design, model, beta


def test_uniform_choice_shares():
    design = Design(np.tile(np.array([[[1], [2]]]), (10, 1, 1)))
    plan = SimulationPlan(design, ONE_ATTR, [0.0], 1000, num_replications=100, seed=1)
    counts = simulate_choices(plan)
    assert counts.shape == (100, 10, 2)
    assert abs(counts[..., 0].sum() / 1e6 - 0.5) < 0.002


def test_counts_sum_to_respondents():
    design, model, beta = _bench()
    groups = [list(range(0, 8)), list(range(8, 16)), list(range(16, 24))]
    plan = SimulationPlan(design, model, beta, 37, groups, 5, 0)
    assert np.all(simulate_choices(plan).sum(axis=2) == 37)


def test_shares_converge_at_root_n_rate():
    design, model, beta = _bench()
    p = choice_probabilities(design, model, beta)
    errs = []
    for n in (100, 10_000, 1_000_000):
        counts = simulate_choices(SimulationPlan(design, model, beta, n, num_replications=1, seed=3))[0]
        err = np.abs(counts / n - p)
        assert np.all(err <= 5 * np.sqrt(p * (1 - p) / n) + 1e-12)
        errs.append(err.mean())
    assert errs[0] > errs[1] > errs[2]


def test_simulation_deterministic_given_seed():
    design, model, beta = _bench()
    a = simulate_choices(SimulationPlan(design, model, beta, 50, num_replications=4, seed=8))
    b = simulate_choices(SimulationPlan(design, model, beta, 50, num_replications=4, seed=8))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("q", [0.6, 0.75, 0.9])
def test_closed_form_single_set(q):
    res = fit_mnl(ONE_SET, ONE_ATTR, np.array([[q * 1000, (1 - q) * 1000]]))
    assert res.converged
    assert res.beta_hat[0] == pytest.approx(math.log(q / (1 - q)) / 2, abs=1e-6)


def test_proportional_counts_recover_truth():
    design, model, beta = _bench(8)
    p = choice_probabilities(design, model, beta)
    res = fit_mnl(design, model, 1000 * p)
    assert res.converged
    assert np.max(np.abs(res.beta_hat - beta)) < 1e-6


@given(st.integers(0, 2**31))
def test_fit_ascends_and_converges(seed):
    design, model, beta = _bench(2, seed % 50)
    counts = simulate_choices(SimulationPlan(design, model, beta, 200, num_replications=1, seed=seed))[0]
    res = fit_mnl(design, model, counts)
    X = Coder(model)(design.levels)
    assert res.log_likelihood >= log_likelihood(X, counts.astype(float), np.zeros(model.num_params))
    if res.converged:
        assert np.max(np.abs(score(X, counts.astype(float), res.beta_hat))) <= 1e-8


def test_score_matches_finite_differences(rng):
    design, model, _ = _bench(8)
    X = coded_design(design.levels, model.attribute_levels, model.interactions)
    counts = rng.integers(0, 30, size=(24, 2)).astype(float)
    for _ in range(20):
        beta = rng.normal(0, 0.5, model.num_params)
        g = score(X, counts, beta)
        fd = fd_gradient(lambda b: log_likelihood(X, counts, b), beta)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(g), 1.0)


def test_negative_hessian_is_weighted_information(rng):
    design, model, _ = _bench(6)
    X = Coder(model)(design.levels)
    counts = rng.integers(1, 20, size=(24, 2)).astype(float)
    beta = rng.normal(size=model.num_params)
    n = counts.sum(axis=1)
    per_set = set_information(X, beta[None])[:, 0]
    assert np.allclose(observed_information(X, counts, beta), np.einsum("s,smk->mk", n, per_set), atol=1e-10)
    equal = np.full((24, 2), 5.0)
    assert np.allclose(observed_information(X, equal, beta), 10 * information_matrix(design, model, beta), atol=1e-10)


def test_separation_reports_non_convergence():
    res = fit_mnl(ONE_SET, ONE_ATTR, np.array([[50, 0]]))
    assert not res.converged
    assert res.beta_hat[0] > 3


def test_singular_hessian_uses_ridge():
    # attribute 2 is the same in both profiles, so its parameter is not identified
    design = Design(np.array([[[1, 1], [2, 1]]]))
    res = fit_mnl(design, ModelSpec((2, 2)), np.array([[70, 30]]))
    assert res.ridge and res.converged
    assert res.beta_hat[0] == pytest.approx(math.log(70 / 30) / 2, abs=1e-6)


def test_fit_rejects_bad_counts():
    with pytest.raises(InvalidInputError):
        fit_mnl(ONE_SET, ONE_ATTR, np.array([[1, 2, 3]]))
    with pytest.raises(InvalidInputError):
        fit_mnl(ONE_SET, ONE_ATTR, np.array([[-1, 2]]))


def test_emse_examples():
    t = np.array([0.5, -1.0, 2.0])
    assert emse(np.tile(t, (4, 1)), t).value == 0.0
    assert emse([t + [1, 0, 0]], t).value == 1.0
    r = emse([t + 1, t, t + 2], t, converged=[True, True, False])
    assert (r.value, r.used, r.excluded) == (1.5, 2, 1)


@given(st.integers(1, 30), st.integers(0, 2**31))
def test_emse_permutation_invariant(N, seed):
    rng = np.random.default_rng(seed)
    B, t = rng.normal(size=(N, 4)), rng.normal(size=4)
    assert emse(B, t).value == pytest.approx(emse(B[rng.permutation(N)], t).value, rel=1e-12)


def test_plan_validation():
    design, model, beta = _bench()
    with pytest.raises(InvalidInputError):
        SimulationPlan(design, model, beta[:-1], 10)
    with pytest.raises(InvalidInputError):
        SimulationPlan(design, model, beta, 0)
    with pytest.raises(InvalidInputError):
        SimulationPlan(design, model, beta, 10, groups=[[0, 1], [1, 2]])


def test_identical_designs_identical_emse():
    design, model, beta = _bench()
    plan = SimulationPlan(None, model, beta, 50, num_replications=20, seed=2)
    comp = compare_designs({"a": design, "b": Design(design.copy_levels())}, plan)
    assert comp.emse["a"] == comp.emse["b"]
    assert [r[2] for r in comp.rows if r[0] == "a"] == [r[2] for r in comp.rows if r[0] == "b"]


def test_emse_falls_with_more_respondents():
    design, model, beta = _bench()
    small = compare_designs([design], SimulationPlan(None, model, beta, 100, num_replications=60, seed=1))
    large = compare_designs([design], SimulationPlan(None, model, beta, 1000, num_replications=60, seed=1))
    assert large.emse["design_1"].value < small.emse["design_1"].value


def test_fit_model_nesting_pads_truth_with_zeros():
    design = sc.case_study_original_design()
    models = sc.case_study_models()
    truth = sc.case_study_true_prior().mean
    plan = SimulationPlan(None, models["true"], truth, 100, sc.case_study_groups(), 3, 0, models["design_stage"])
    comp = compare_designs({"orig": design}, plan)
    assert comp.emse["orig"].used + comp.emse["orig"].excluded == 3
    with pytest.raises(InvalidInputError):
        compare_designs({"orig": design}, SimulationPlan(None, models["true"], truth, 10, None, 1, 0, models["main"]))


def test_threads_do_not_change_results():
    design, model, beta = _bench()
    plan = SimulationPlan(None, model, beta, 80, num_replications=12, seed=4)
    assert compare_designs([design], plan, threads=1).rows == compare_designs([design], plan, threads=3).rows

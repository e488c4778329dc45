import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppdesign import scenarios as sc
from ppdesign.core import DesignSpace
from ppdesign.io import read_master_csv, write_master_csv
from ppdesign.master import (
    MasterDesign,
    MasterObjective,
    SingularMasterError,
    _random_incidence,
    anova_information,
    anova_matrices,
    optimize_master,
    reduced_information,
    treatment_variances,
    variance_balance_weights,
)

from .oracles import brute_force_best, projection_oracle

OBJECTIVES = [MasterObjective("d_optimal"), MasterObjective("a_weighted", "I"), MasterObjective("a_weighted", "II")]




def test_two_set_replication_counts():
    M = anova_information(MasterDesign(np.array([[1, 1, 0], [0, 1, 1]])))
    assert np.diag(M[:3, :3]).tolist() == [1, 2, 1]
    assert M.shape == (3 + 1, 3 + 1)


def test_attribute_never_varying_has_zero_replication():
    M = anova_information(MasterDesign(np.array([[1, 1, 0], [1, 1, 0]])))
    assert M[2, 2] == 0


@given(st.integers(2, 7), st.integers(2, 6), st.integers(0, 2**31))
def test_rows_per_set_and_reduced_closed_form(S, K, seed):
    tv = int(np.random.default_rng(seed).integers(1, K + 1))
    inc = _random_incidence(S, K, tv, np.random.default_rng(seed))
    Q, Z = anova_matrices(MasterDesign(inc))
    assert Q.shape == (S * tv, K) and Z.shape == (S * tv, S - 1)
    assert np.all(Q.sum(axis=1) == 1)
    assert np.allclose(reduced_information(inc), projection_oracle(inc), atol=1e-10)


def test_bibd_variances_equal():
    fano = np.array([[1, 1, 0, 1, 0, 0, 0], [0, 1, 1, 0, 1, 0, 0], [0, 0, 1, 1, 0, 1, 0], [0, 0, 0, 1, 1, 0, 1],
                     [1, 0, 0, 0, 1, 1, 0], [0, 1, 0, 0, 0, 1, 1], [1, 0, 1, 0, 0, 0, 1]])
    for inc in (fano, np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1]])):
        v = treatment_variances(MasterDesign(inc))
        assert np.ptp(v) < 1e-12


def test_always_varying_attribute_has_smaller_variance():
    # attribute 1 varies in all six sets, attribute 3 in three of them
    inc = np.array([[1, 1, 0], [1, 0, 1], [1, 1, 0], [1, 0, 1], [1, 1, 0], [1, 0, 1]])
    v = treatment_variances(MasterDesign(inc))
    C = projection_oracle(inc)
    assert np.allclose(v, np.diag(np.linalg.inv(C)))
    assert v[0] < v[2]


def test_singular_master_raises():
    with pytest.raises(SingularMasterError):
        treatment_variances(MasterDesign(np.array([[1, 1, 0], [1, 1, 0], [1, 1, 0]])))


def test_variance_balance_weights():
    assert variance_balance_weights((2, 2, 2, 3, 3, 3), "I") == pytest.approx([1 / 9] * 3 + [2 / 9] * 3)
    assert variance_balance_weights((2, 3), "II") == pytest.approx([0.25, 2 / 3])
    assert variance_balance_weights((4, 4, 4, 4), "I") == pytest.approx([0.25] * 4)
    assert variance_balance_weights((2, 5, 7), "I").sum() == pytest.approx(1.0)


def test_d_optimal_three_sets_is_balanced():
    space = DesignSpace(3, 2, (2, 2, 2), 1)
    master = optimize_master(space, MasterObjective("d_optimal"), seed=0)
    assert (master.incidence == 0).sum(axis=0).tolist() == [1, 1, 1]


@pytest.mark.parametrize("objective", OBJECTIVES, ids=lambda o: o.label)
@pytest.mark.parametrize("levels", [(2, 3, 4), (3, 3, 3)])
def test_matches_exhaustive_search(objective, levels):
    space = DesignSpace(3, 2, levels, 1)
    best, n = brute_force_best(3, 3, 2, objective, levels)
    assert n == 27
    w = None if objective.kind == "d_optimal" else variance_balance_weights(levels, objective.scheme)
    master = optimize_master(space, objective, seed=1)
    assert objective.score(master.incidence, w) == pytest.approx(best, abs=1e-9)


def test_scheme_two_holds_three_level_attributes_constant_less_often():
    master = optimize_master(sc.bench_space(2, 1), MasterObjective("a_weighted", "II"), seed=0)
    counts = (master.incidence == 0).sum(axis=0)
    assert counts[3:].max() < counts[:3].min()
    assert np.all(master.incidence.sum(axis=1) == 5)


@pytest.mark.parametrize("objective", OBJECTIVES, ids=lambda o: o.label)
def test_optimum_beats_random_masters(objective):
    space = sc.bench_space(2, 2)
    levels = space.attribute_levels
    master = optimize_master(space, objective, seed=3, restarts=10)
    w = None if objective.kind == "d_optimal" else variance_balance_weights(levels, objective.scheme)
    best = objective.score(master.incidence, w)
    rng = np.random.default_rng(0)
    for _ in range(100):
        assert best >= objective.score(_random_incidence(24, 6, 4, rng), w)


def test_d_optimal_invariant_to_relabeling_equal_attributes():
    obj = MasterObjective("d_optimal")
    inc = _random_incidence(8, 4, 2, np.random.default_rng(5))
    assert obj.score(inc, None) == pytest.approx(obj.score(inc[:, [2, 0, 3, 1]], None), abs=1e-10)


@pytest.mark.parametrize("S,K,F", [(3, 3, 1), (4, 4, 2), (4, 3, 1)])
def test_scheme_one_matches_d_optimal_balance_for_equal_levels(S, K, F):
    space = DesignSpace(S, 2, (3,) * K, F)
    a = MasterObjective("a_weighted", "I")
    w = variance_balance_weights(space.attribute_levels, "I")
    a_opt = optimize_master(space, a, seed=0)
    d_opt = optimize_master(space, MasterObjective("d_optimal"), seed=0)
    best, _ = brute_force_best(S, K, K - F, a, space.attribute_levels)
    assert a.score(a_opt.incidence, w) == pytest.approx(best, abs=1e-9)
    assert a.score(d_opt.incidence, w) == pytest.approx(best, abs=1e-9)


def test_all_varying_when_no_constants():
    master = optimize_master(DesignSpace(5, 2, (2, 3), 0), MasterObjective(), seed=0)
    assert np.all(master.incidence == 1)


def test_deterministic_given_seed():
    space = sc.bench_space(2, 1)
    assert optimize_master(space, MasterObjective(), 4, 5) == optimize_master(space, MasterObjective(), 4, 5)


def test_master_csv_round_trip(tmp_path):
    master = optimize_master(sc.bench_space(2, 1), MasterObjective(), seed=0, restarts=2)
    path = write_master_csv(master, tmp_path / "m.csv")
    assert path.read_text().splitlines()[0] == "attr_1,attr_2,attr_3,attr_4,attr_5,attr_6"
    assert read_master_csv(path) == master

"""Prior families and the ready-made experiment setups.

Three setups are provided:

* the benchmark grid: 24 sets, attributes with levels 2,2,2,3,3,3, J in {2, 3},
  F in {1, 2}, four interaction structures and a 3 x 3 grid of prior scales;
* the model-robustness study on the same attributes with J=2, F=1;
* the healthcare case study: 42 sets in three survey groups, seven attributes,
  three constant attributes per set and four forbidden level pairs.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag

from .core import Design, DesignError, DesignSpace, InvalidInputError, ModelSpec, PriorSpec
from .criterion import RobustCriterionSpec


class ExplicitPriorRequiredError(DesignError, ValueError):
    """The requested prior cannot be produced by the generated family."""


BENCH_LEVELS = (2, 2, 2, 3, 3, 3)
BENCH_SETS = 24
FAMILY_SCALES = (1.0, 1 / 2, 1 / 3)

# interaction count -> attribute pairs (0-based); counts are parameters, not pairs
BENCH_INTERACTIONS = {
    0: (),
    2: ((0, 1), (0, 2)),
    6: ((0, 3), (0, 4), (0, 5)),
    8: ((0, 1), (0, 2), (0, 3), (0, 4), (0, 5)),
}


def main_effects_mean(levels: Sequence[int], lam: float) -> np.ndarray:
    """Part-worths rising linearly from -lam (first level) to +lam (last level), coded."""
    out = []
    for d in levels:
        worths = np.linspace(-lam, lam, d)
        out.extend(worths[:-1])
    return np.asarray(out, dtype=float)


def main_effects_covariance(levels: Sequence[int], kappa: float) -> np.ndarray:
    """Block-diagonal covariance; each block equicorrelated with correlation -1/(d-1).

    That correlation gives the implicit last-level part-worth the same
    variance kappa^2 as the coded ones.
    """
    blocks = []
    for d in levels:
        q = d - 1
        rho = -1.0 / q if q > 1 else 0.0
        blocks.append(kappa**2 * ((1 - rho) * np.eye(q) + rho * np.ones((q, q))))
    return block_diag(*blocks)


def build_prior_family(
    levels: Sequence[int],
    lam: float,
    kappa: float,
    interactions: Sequence[Sequence[int]] = (),
    interaction_prior: str | tuple = "naive",
) -> PriorSpec:
    """Prior over a main-effects-plus-interactions model.

    ``interaction_prior`` is ``"naive"`` (mean 0, variance 1), ``"zero"`` (mean
    0, variance 0), or an explicit ``(means, variances)`` pair covering all
    interaction parameters in model column order.
    """
    if lam <= 0 or kappa <= 0:
        raise InvalidInputError("lambda and kappa must be positive")
    model = ModelSpec(levels, interactions)
    mean = main_effects_mean(levels, lam)
    cov = main_effects_covariance(levels, kappa)
    n_int = model.num_params - model.num_main
    if n_int == 0:
        return PriorSpec(mean, cov)
    if isinstance(interaction_prior, str):
        if interaction_prior == "naive":
            im, iv = np.zeros(n_int), np.ones(n_int)
        elif interaction_prior == "zero":
            im, iv = np.zeros(n_int), np.zeros(n_int)
        else:
            raise ExplicitPriorRequiredError(
                f"interaction prior {interaction_prior!r} is not generated; pass explicit (means, variances)"
            )
    else:
        im, iv = (np.asarray(x, dtype=float).reshape(-1) for x in interaction_prior)
        if im.size != n_int or iv.size != n_int:
            raise ExplicitPriorRequiredError(f"explicit interaction prior needs {n_int} means and variances")
    return PriorSpec(np.r_[mean, im], block_diag(cov, np.diag(iv)))


def bench_space(profiles_per_set: int = 2, num_constant: int = 1) -> DesignSpace:
    return DesignSpace(BENCH_SETS, profiles_per_set, BENCH_LEVELS, num_constant)


def bench_model(num_interactions: int) -> ModelSpec:
    if num_interactions not in BENCH_INTERACTIONS:
        raise InvalidInputError(f"interaction count must be one of {sorted(BENCH_INTERACTIONS)}")
    return ModelSpec(BENCH_LEVELS, BENCH_INTERACTIONS[num_interactions])


@dataclass(frozen=True)
class BenchScenario:
    profiles_per_set: int
    num_constant: int
    num_interactions: int
    lam: float
    kappa: float

    @property
    def space(self) -> DesignSpace:
        return bench_space(self.profiles_per_set, self.num_constant)

    @property
    def model(self) -> ModelSpec:
        return bench_model(self.num_interactions)

    @property
    def prior(self) -> PriorSpec:
        return build_prior_family(BENCH_LEVELS, self.lam, self.kappa, self.model.interactions, "naive")

    @property
    def label(self) -> str:
        return f"J{self.profiles_per_set}_F{self.num_constant}_Int{self.num_interactions}_l{self.lam:.3g}_k{self.kappa:.3g}"


def full_bench_grid() -> list[BenchScenario]:
    """All 144 benchmark scenarios."""
    return [
        BenchScenario(J, F, n, lam, kappa)
        for J in (2, 3)
        for F in (1, 2)
        for n in (0, 2, 6, 8)
        for lam in FAMILY_SCALES
        for kappa in FAMILY_SCALES
    ]


# --- model-robustness study ------------------------------------------------

ROBUST_INTERACTIONS = ((0, 1), (0, 3))
ROBUST_TRUE_MODELS = {
    "I": (),
    "II": ((0, 1),),
    "III": ((0, 3),),
    "IV": ((0, 1), (0, 3)),
}


def robust_study_space() -> DesignSpace:
    return bench_space(2, 1)


def robust_study_spec() -> RobustCriterionSpec:
    main = ModelSpec(BENCH_LEVELS)
    inter = ModelSpec(BENCH_LEVELS, ROBUST_INTERACTIONS)
    return RobustCriterionSpec(
        main,
        build_prior_family(BENCH_LEVELS, 1.0, 1.0),
        inter,
        build_prior_family(BENCH_LEVELS, 1.0, 1.0, ROBUST_INTERACTIONS, "naive"),
    )


def robust_true_model(name: str, lam: float = 0.0) -> tuple[ModelSpec, PriorSpec]:
    """True model with interaction part-worths fixed at ``lam`` (zero variance)."""
    pairs = ROBUST_TRUE_MODELS[name]
    model = ModelSpec(BENCH_LEVELS, pairs)
    n_int = model.num_params - model.num_main
    prior = build_prior_family(BENCH_LEVELS, 1.0, 1.0, pairs, (np.full(n_int, lam), np.zeros(n_int)))
    return model, prior


# --- healthcare case study -------------------------------------------------

CASE_LEVELS = (2, 3, 3, 3, 3, 3, 5)
CASE_SETS = 42
CASE_CONSTANT = 3
CASE_GROUPS = 3
# level pairs that never occur in the original design (attribute indices 0-based)
CASE_FORBIDDEN = ({0: 2, 1: 1}, {0: 2, 1: 2}, {5: 1, 6: 5}, {5: 2, 6: 5})
# attribute 1 with every attribute except the one it cannot be crossed with
CASE_DESIGN_INTERACTIONS = ((0, 2), (0, 3), (0, 4), (0, 5), (0, 6))
CASE_TRUE_INTERACTIONS = ((0, 3), (0, 6))
CASE_MAIN_MEAN = (-0.4, -0.5, 0, -0.4, 0.1, -0.8, 0, -0.5, 0, -0.5, 0.2, -0.5, -0.25, 0, 0.25)
CASE_TRUE_INT_MEAN = (-0.0431, 0.0345, 0.012, -0.0676, -0.048, 0.1103)
CASE_TRUE_INT_SD = (0.0378, 0.0394, 0.0528, 0.0524, 0.0558, 0.0578)


def case_study_space() -> DesignSpace:
    return DesignSpace(CASE_SETS, 2, CASE_LEVELS, CASE_CONSTANT, CASE_FORBIDDEN)


def case_study_groups() -> list[list[int]]:
    per = CASE_SETS // CASE_GROUPS
    return [list(range(g * per, (g + 1) * per)) for g in range(CASE_GROUPS)]


def case_study_main_prior() -> PriorSpec:
    a1 = np.array([[0.09]])
    a2 = np.array([[0.09, -0.045], [-0.045, 0.09]])
    a3 = 0.1125 * np.eye(4) - 0.0225 * np.ones((4, 4))
    return PriorSpec(np.asarray(CASE_MAIN_MEAN, dtype=float), block_diag(a1, a2, a2, a2, a2, a2, a3))


def case_study_models() -> dict[str, ModelSpec]:
    return {
        "main": ModelSpec(CASE_LEVELS),
        "design_stage": ModelSpec(CASE_LEVELS, CASE_DESIGN_INTERACTIONS),
        "true": ModelSpec(CASE_LEVELS, CASE_TRUE_INTERACTIONS),
    }


def case_study_true_prior() -> PriorSpec:
    main = case_study_main_prior()
    return PriorSpec(
        np.r_[main.mean, CASE_TRUE_INT_MEAN],
        block_diag(main.covariance, np.diag(np.square(CASE_TRUE_INT_SD))),
    )


def case_study_robust_spec() -> RobustCriterionSpec:
    models = case_study_models()
    main = case_study_main_prior()
    n_int = models["design_stage"].num_params - models["design_stage"].num_main
    inter = PriorSpec(np.r_[main.mean, np.zeros(n_int)], block_diag(main.covariance, np.eye(n_int)))
    return RobustCriterionSpec(models["main"], main, models["design_stage"], inter)


def case_study_original_design() -> Design:
    from .io import read_design_csv

    with resources.as_file(resources.files("ppdesign") / "data" / "case_study_original.csv") as path:
        return read_design_csv(path)

"""Run configuration: pydantic models for the CLI's JSON documents and their resolution.

Attributes, levels, interaction pairs and choice-set indices are 1-based in
configuration files and 0-based everywhere inside the library.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import scenarios as sc
from .ce import CeConfig
from .core import DesignSpace, ModelSpec, PriorSpec
from .criterion import DEFAULT_DRAWS, Objective, RobustCriterionSpec, sample_prior
from .master import DEFAULT_RESTARTS, MasterObjective
from .sa import SaConfig

FAMILY_VALUES = (1.0, 1 / 2, 1 / 3)
FAMILY_SNAP = 5e-3  # lets "0.33" and "0.5" name the exact family members


class ConfigError(Exception):
    """Invalid configuration, with an optional 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line

    def __str__(self) -> str:
        msg = super().__str__()
        return f"line {self.line}: {msg}" if self.line else msg


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SpaceCfg(Strict):
    num_choice_sets: int = Field(ge=1)
    profiles_per_set: int = Field(ge=2)
    attribute_levels: list[int] = Field(min_length=1)
    num_constant_attributes: int = Field(default=0, ge=0)
    forbidden_combinations: list[dict[int, int]] = Field(default_factory=list)

    def build(self) -> DesignSpace:
        combos = [{a - 1: lv for a, lv in c.items()} for c in self.forbidden_combinations]
        return DesignSpace(self.num_choice_sets, self.profiles_per_set, self.attribute_levels,
                           self.num_constant_attributes, combos)


def _snap_family(x: float, name: str) -> float:
    for v in FAMILY_VALUES:
        if abs(x - v) <= FAMILY_SNAP:
            return v
    raise ValueError(f"{name} must be one of 1, 1/2, 1/3 for the generated prior family (got {x})")


class PriorCfg(Strict):
    """Either a generated family (``lambda``, ``kappa``) or explicit moments."""

    lam: float | None = Field(default=None, alias="lambda")
    kappa: float | None = None
    interaction_prior: Literal["naive", "zero"] = "naive"
    interaction_mean: list[float] | None = None
    interaction_sd: list[float] | None = None
    mean: list[float] | None = None
    covariance: list[list[float]] | None = None
    sd: list[float] | None = None

    @model_validator(mode="after")
    def _one_kind(self):
        family = self.lam is not None or self.kappa is not None
        explicit = self.mean is not None
        if family == explicit:
            raise ValueError("give either lambda and kappa (generated family) or an explicit mean")
        if family:
            if self.lam is None or self.kappa is None:
                raise ValueError("the generated family needs both lambda and kappa")
            self.lam = _snap_family(self.lam, "lambda")
            self.kappa = _snap_family(self.kappa, "kappa")
            if (self.interaction_mean is None) != (self.interaction_sd is None):
                raise ValueError("interaction_mean and interaction_sd go together")
        else:
            if (self.covariance is None) == (self.sd is None):
                raise ValueError("an explicit prior needs exactly one of covariance or sd")
        return self

    def build(self, model: ModelSpec) -> PriorSpec:
        if self.mean is not None:
            cov = np.asarray(self.covariance) if self.covariance is not None else np.diag(np.square(self.sd))
            prior = PriorSpec(np.asarray(self.mean, dtype=float), cov)
        else:
            ip = self.interaction_prior
            if self.interaction_mean is not None:
                ip = (self.interaction_mean, np.square(self.interaction_sd))
            prior = sc.build_prior_family(model.attribute_levels, self.lam, self.kappa, model.interactions, ip)
        if prior.dim != model.num_params:
            raise ValueError(f"prior has {prior.dim} parameters, model needs {model.num_params}")
        return prior


class ModelCfg(Strict):
    interactions: list[tuple[int, int]] = Field(default_factory=list)
    prior: PriorCfg

    def build_model(self, levels) -> ModelSpec:
        return ModelSpec(levels, [(a - 1, b - 1) for a, b in self.interactions])


class RobustCfg(Strict):
    main: ModelCfg
    interaction: ModelCfg
    weights: tuple[float, float] = (1.0, 1.0)


class BenchCfg(Strict):
    profiles_per_set: Literal[2, 3] = 2
    num_constant: Literal[1, 2] = 1
    num_interactions: Literal[0, 2, 6, 8] = 0
    lam: float = Field(default=1.0, alias="lambda")
    kappa: float = 1.0

    @field_validator("lam", "kappa")
    @classmethod
    def _family(cls, v, info):
        return _snap_family(v, "lambda" if info.field_name == "lam" else "kappa")

    def scenario(self) -> sc.BenchScenario:
        return sc.BenchScenario(self.profiles_per_set, self.num_constant, self.num_interactions, self.lam, self.kappa)


PRESET_CRITERIA = {
    "case_study": ("main", "robust", "true", "design_stage"),
    "robust_study": ("main", "interaction", "robust"),
    "bench": ("bayesian",),
}


class ProblemCfg(Strict):
    """The design problem: a named preset or an explicit space plus criterion."""

    preset: Literal["case_study", "robust_study", "bench"] | None = None
    criterion: str | None = None
    bench: BenchCfg | None = None
    space: SpaceCfg | None = None
    model: ModelCfg | None = None
    robust: RobustCfg | None = None

    @model_validator(mode="after")
    def _shape(self):
        if (self.preset is None) == (self.space is None):
            raise ValueError("give exactly one of preset or space")
        if self.preset is not None:
            if self.model is not None or self.robust is not None:
                raise ValueError("presets define their own models; drop model/robust")
            allowed = PRESET_CRITERIA[self.preset]
            if self.criterion is None:
                self.criterion = allowed[0] if self.preset == "bench" else "robust"
            if self.criterion not in allowed:
                raise ValueError(f"criterion for preset {self.preset} must be one of {allowed}")
            if self.preset == "bench" and self.bench is None:
                self.bench = BenchCfg()
            if self.preset != "bench" and self.bench is not None:
                raise ValueError("bench settings only apply to the bench preset")
        else:
            if (self.model is None) == (self.robust is None):
                raise ValueError("an explicit space needs exactly one of model or robust")
            self.criterion = "robust" if self.robust is not None else "bayesian"
        return self


class SaCfg(Strict):
    kind: Literal["sa"] = "sa"
    stopping: Literal["no_improvement", "max_runtime", "max_reheats", "max_iterations"] = "no_improvement"
    max_runtime: float | None = Field(default=None, gt=0)
    max_reheats: int | None = Field(default=None, ge=1)
    max_iterations: int | None = Field(default=None, ge=1)
    reheat_stall: int = Field(default=1000, ge=1)
    gamma: float | None = Field(default=None, ge=0, le=1)
    random_walk_steps: int = Field(default=100, ge=2)
    target_acceptance: float = Field(default=0.8, gt=0, lt=1)
    record_trace: bool = True

    def build(self, seed: int) -> SaConfig:
        return SaConfig(
            stopping=self.stopping, max_runtime=self.max_runtime, max_reheats=self.max_reheats,
            max_iterations=self.max_iterations, reheat_stall=self.reheat_stall, gamma=self.gamma,
            random_walk_steps=self.random_walk_steps, target_acceptance=self.target_acceptance,
            seed=seed, record_trace=self.record_trace,
        )

    @model_validator(mode="after")
    def _limits(self):
        needed = {"max_runtime": self.max_runtime, "max_reheats": self.max_reheats,
                  "max_iterations": self.max_iterations}
        if self.stopping in needed and needed[self.stopping] is None:
            raise ValueError(f"stopping rule {self.stopping} needs {self.stopping} to be set")
        return self


class CeCfg(Strict):
    kind: Literal["ce"] = "ce"
    num_starts: int = Field(default=30, ge=1)
    max_cycles: int | None = Field(default=None, ge=1)
    master_objective: Literal["d_optimal", "a_weighted"] = "a_weighted"
    scheme: Literal["I", "II"] = "II"
    master_restarts: int = Field(default=DEFAULT_RESTARTS, ge=1)

    def build(self, seed: int) -> CeConfig:
        return CeConfig(self.num_starts, self.max_cycles, seed, MasterObjective(self.master_objective, self.scheme),
                        self.master_restarts)


class Common(Strict):
    seed: int = Field(default=0, ge=0, lt=2**64)
    draws: int = Field(default=DEFAULT_DRAWS, ge=1)
    draw_method: Literal["sobol", "mc"] = "sobol"
    threads: int = Field(default=1, ge=1)


class GenerateCfg(Common):
    problem: ProblemCfg
    optimizer: SaCfg | CeCfg = Field(default_factory=SaCfg, discriminator="kind")


class EvalModelCfg(Strict):
    """A model to evaluate under: explicit, or a preset's named model."""

    name: str
    preset_model: str | None = None
    lam: float | None = Field(default=None, alias="lambda", ge=0)
    interactions: list[tuple[int, int]] | None = None
    prior: PriorCfg | None = None

    @model_validator(mode="after")
    def _kind(self):
        if (self.preset_model is None) == (self.prior is None):
            raise ValueError("give exactly one of preset_model or prior")
        return self


class EvaluateCfg(Common):
    problem: ProblemCfg
    designs: dict[str, str] = Field(min_length=1)
    reference: str
    models: list[EvalModelCfg] | None = None

    @model_validator(mode="after")
    def _ref(self):
        if self.reference not in self.designs:
            raise ValueError(f"reference {self.reference!r} is not one of the designs")
        return self


class TrueModelCfg(Strict):
    interactions: list[tuple[int, int]] = Field(default_factory=list)
    beta: list[float]


class SimulateCfg(Common):
    problem: ProblemCfg
    designs: dict[str, str] = Field(min_length=1)
    true_model: TrueModelCfg | None = None
    fit_interactions: list[tuple[int, int]] | None = None
    respondents_per_group: int = Field(default=100, ge=1)
    groups: list[list[int]] | None = None
    num_groups: int | None = Field(default=None, ge=1)
    replications: int = Field(default=500, ge=1)

    @model_validator(mode="after")
    def _groups(self):
        if self.groups is not None and self.num_groups is not None:
            raise ValueError("give groups or num_groups, not both")
        return self


class GridCfg(Strict):
    profiles_per_set: list[Literal[2, 3]] = [2]
    num_constant: list[Literal[1, 2]] = [1]
    num_interactions: list[Literal[0, 2, 6, 8]] = [0]
    lam: list[float] = Field(default=[1.0], alias="lambda")
    kappa: list[float] = [1.0]

    def scenarios(self) -> list[BenchCfg]:
        return [
            BenchCfg(profiles_per_set=J, num_constant=F, num_interactions=n, lam=lam, kappa=k)
            for J in self.profiles_per_set for F in self.num_constant for n in self.num_interactions
            for lam in self.lam for k in self.kappa
        ]


class BenchmarkCfg(Common):
    grid: GridCfg | None = None
    scenarios: list[BenchCfg] | None = None
    replicates: int = Field(default=1, ge=1)
    budget: Literal["runtime", "evaluations"] = "runtime"
    ce: CeCfg = Field(default_factory=lambda: CeCfg(num_starts=5))
    sa: SaCfg = Field(default_factory=lambda: SaCfg(stopping="max_runtime", max_runtime=1.0))

    @model_validator(mode="after")
    def _which(self):
        if (self.grid is None) == (self.scenarios is None):
            raise ValueError("give exactly one of grid or scenarios")
        return self

    def scenario_list(self) -> list[BenchCfg]:
        return self.grid.scenarios() if self.grid is not None else list(self.scenarios)


COMMANDS = {"generate": GenerateCfg, "evaluate": EvaluateCfg, "simulate": SimulateCfg, "benchmark": BenchmarkCfg}


# --- loading with line-anchored diagnostics --------------------------------

_TAGS = {"sa", "ce"}


def _locate(text: str, loc: tuple) -> int | None:
    """Best-effort line of the value at ``loc`` (a pydantic error location)."""
    pos, line = 0, None
    for part in loc:
        if isinstance(part, int):
            continue
        m = re.compile(r'"' + re.escape(str(part)) + r'"\s*:').search(text, pos)
        if m is None:
            break
        pos = m.start()
        line = text.count("\n", 0, pos) + 1
    return line


def _real_path(raw, loc) -> tuple:
    """Error location restricted to keys and indices present in the document (drops union tags)."""
    out, node = [], raw
    for part in loc:
        if isinstance(node, dict) and part in node:
            node = node[part]
        elif isinstance(node, list) and isinstance(part, int) and 0 <= part < len(node):
            node = node[part]
        elif isinstance(node, dict) and isinstance(part, str) and not part.startswith("function-") and \
                part not in _TAGS:
            out.append(part)  # a missing required field
            break
        else:
            continue
        out.append(part)
    return tuple(out)


def load_config(command: str, text: str, overrides: dict | None = None) -> Common:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("the configuration must be a JSON object", 1)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    try:
        return COMMANDS[command].model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = _real_path(raw, err["loc"])
        where = ".".join(str(p) for p in loc) or "<root>"
        msg = err["msg"].removeprefix("Value error, ")
        extra = f" (and {len(exc.errors()) - 1} more)" if len(exc.errors()) > 1 else ""
        raise ConfigError(f"{where}: {msg}{extra}", _locate(text, loc)) from None


def resolved(cfg: BaseModel) -> dict:
    """Every field, defaults included, as written back to artifacts."""
    return cfg.model_dump(mode="json", by_alias=True)


# --- resolution to library objects -----------------------------------------

@dataclass
class Problem:
    space: DesignSpace
    objective: Objective
    models: dict[str, tuple[ModelSpec, np.ndarray]]  # name -> (model, draws) for reporting
    groups: list[list[int]] | None = None


def _draws(prior: PriorSpec, common: Common) -> np.ndarray:
    return sample_prior(prior, common.draws, common.seed, common.draw_method)


def build_problem(p: ProblemCfg, common: Common) -> Problem:
    if p.preset == "bench":
        s = p.bench.scenario()
        dr = _draws(s.prior, common)
        return Problem(s.space, Objective.bayesian(s.model, dr), {"design": (s.model, dr)})
    if p.preset == "robust_study":
        spec = sc.robust_study_spec()
        return _robust_or_single(sc.robust_study_space(), spec, p.criterion, common)
    if p.preset == "case_study":
        space = sc.case_study_space()
        groups = sc.case_study_groups()
        models = sc.case_study_models()
        if p.criterion == "true":
            prior = sc.case_study_true_prior()
            dr = _draws(prior, common)
            return Problem(space, Objective.bayesian(models["true"], dr), {"true": (models["true"], dr)}, groups)
        if p.criterion == "design_stage":
            main = sc.case_study_main_prior()
            n_int = models["design_stage"].num_params - models["design_stage"].num_main
            prior = PriorSpec(np.r_[main.mean, np.zeros(n_int)],
                              np.block([[main.covariance, np.zeros((main.dim, n_int))],
                                        [np.zeros((n_int, main.dim)), np.zeros((n_int, n_int))]]))
            dr = _draws(prior, common)
            m = models["design_stage"]
            return Problem(space, Objective.bayesian(m, dr), {"design_stage": (m, dr)}, groups)
        return _robust_or_single(space, sc.case_study_robust_spec(), p.criterion, common, groups)
    space = p.space.build()
    if p.model is not None:
        model = p.model.build_model(space.attribute_levels)
        dr = _draws(p.model.prior.build(model), common)
        return Problem(space, Objective.bayesian(model, dr), {"design": (model, dr)})
    mm = p.robust.main.build_model(space.attribute_levels)
    im = p.robust.interaction.build_model(space.attribute_levels)
    spec = RobustCriterionSpec(mm, p.robust.main.prior.build(mm), im, p.robust.interaction.prior.build(im),
                               p.robust.weights)
    return _robust_or_single(space, spec, "robust", common)


def _robust_or_single(space, spec: RobustCriterionSpec, criterion: str, common: Common, groups=None) -> Problem:
    dm = _draws(spec.main_prior, common)
    di = _draws(spec.interaction_prior, common)
    models = {"main": (spec.main_model, dm), "interaction": (spec.interaction_model, di)}
    if criterion == "main":
        obj = Objective.bayesian(spec.main_model, dm)
    elif criterion == "interaction":
        obj = Objective.bayesian(spec.interaction_model, di)
    else:
        obj = Objective.robust(spec, dm, di)
    return Problem(space, obj, models, groups)


def build_eval_models(cfg: EvaluateCfg, problem: Problem) -> dict[str, tuple[ModelSpec, np.ndarray]]:
    if cfg.models is None:
        return problem.models
    out = {}
    preset = cfg.problem.preset
    for entry in cfg.models:
        if entry.preset_model is not None:
            model, prior = _preset_model(preset, entry)
        else:
            pairs = [(a - 1, b - 1) for a, b in entry.interactions or []]
            model = ModelSpec(problem.space.attribute_levels, pairs)
            prior = entry.prior.build(model)
        out[entry.name] = (model, _draws(prior, cfg))
    return out


def _preset_model(preset, entry: EvalModelCfg) -> tuple[ModelSpec, PriorSpec]:
    name = entry.preset_model
    if preset == "robust_study" and name in sc.ROBUST_TRUE_MODELS:
        return sc.robust_true_model(name, entry.lam or 0.0)
    if preset == "case_study" and name == "true":
        return sc.case_study_models()["true"], sc.case_study_true_prior()
    if preset == "case_study" and name == "main":
        return sc.case_study_models()["main"], sc.case_study_main_prior()
    raise ValueError(f"preset {preset!r} has no model named {name!r}")


def build_true_model(cfg: SimulateCfg, problem: Problem) -> tuple[ModelSpec, np.ndarray]:
    if cfg.true_model is not None:
        pairs = [(a - 1, b - 1) for a, b in cfg.true_model.interactions]
        model = ModelSpec(problem.space.attribute_levels, pairs)
        beta = np.asarray(cfg.true_model.beta, dtype=float)
        if beta.size != model.num_params:
            raise ValueError(f"true_model.beta has {beta.size} values, model needs {model.num_params}")
        return model, beta
    if cfg.problem.preset == "case_study":
        return sc.case_study_models()["true"], sc.case_study_true_prior().mean
    raise ValueError("simulate needs a true_model unless the case_study preset is used")


def build_groups(cfg: SimulateCfg, problem: Problem) -> list[list[int]] | None:
    S = problem.space.num_choice_sets
    if cfg.groups is not None:
        return [[s - 1 for s in g] for g in cfg.groups]
    if cfg.num_groups is not None:
        if S % cfg.num_groups:
            raise ValueError(f"{S} choice sets cannot be split evenly into {cfg.num_groups} groups")
        per = S // cfg.num_groups
        return [list(range(g * per, (g + 1) * per)) for g in range(cfg.num_groups)]
    return problem.groups

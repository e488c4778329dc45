"""Simulated respondents, MNL maximum likelihood and EMSE.

Choices are simulated as per-set multinomial counts, which are sufficient
statistics for the MNL likelihood. Each respondent answers every choice set of
their survey group, so a set is answered by as many respondents as its group
holds.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import Coder, Design, InvalidInputError, ModelSpec
from .criterion import _softmax_last, set_information

GRAD_TOL = 1e-8
MAX_NEWTON = 100
RIDGE = 1e-8
SEPARATION_RTOL = 1e-6
DEFAULT_REPLICATIONS = 500


@dataclass(frozen=True)
class SimulationPlan:
    """Everything needed to simulate and analyse one design.

    ``groups`` partitions the choice sets (0-based indices) into survey groups
    of ``num_respondents`` each; ``None`` means a single group holding every
    set. ``fit_model`` is the model estimated on the simulated data and
    defaults to the true ``model``.
    """

    design: Design | None
    model: ModelSpec
    true_beta: np.ndarray
    num_respondents: int
    groups: tuple[tuple[int, ...], ...] | None = None
    num_replications: int = DEFAULT_REPLICATIONS
    seed: int = 0
    fit_model: ModelSpec | None = None

    def __post_init__(self):
        beta = np.asarray(self.true_beta, dtype=float).reshape(-1)
        object.__setattr__(self, "true_beta", beta)
        if beta.size != self.model.num_params:
            raise InvalidInputError(f"true_beta has length {beta.size}, model needs {self.model.num_params}")
        if self.num_respondents < 1:
            raise InvalidInputError("num_respondents must be >= 1")
        if self.num_replications < 1:
            raise InvalidInputError("num_replications must be >= 1")
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(tuple(int(s) for s in g) for g in self.groups))
        if self.design is not None:
            self.respondents_per_set()

    @property
    def analysis_model(self) -> ModelSpec:
        return self.fit_model or self.model

    def respondents_per_set(self) -> np.ndarray:
        S = self.design.shape[0]
        if self.groups is not None and sorted(s for g in self.groups for s in g) != list(range(S)):
            raise InvalidInputError("survey groups must partition the choice sets")
        # every set is seen by each respondent of its (equal-sized) group
        return np.full(S, self.num_respondents, dtype=np.int64)

    def replication_seeds(self) -> list[np.random.SeedSequence]:
        return np.random.SeedSequence(self.seed).spawn(self.num_replications)


def _coded(design, model: ModelSpec) -> np.ndarray:
    levels = design.levels if isinstance(design, Design) else np.asarray(design)
    return Coder(model)(levels)


def choice_probabilities(design, model: ModelSpec, beta) -> np.ndarray:
    """(S, J) MNL probabilities."""
    X = _coded(design, model)
    return _softmax_last(X @ np.asarray(beta, dtype=float))


def _simulate_one(p: np.ndarray, n: np.ndarray, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.multinomial(n, p)


def simulate_choices(plan: SimulationPlan) -> np.ndarray:
    """(N, S, J) choice counts, one slice per replication."""
    if plan.design is None:
        raise InvalidInputError("plan has no design")
    p = choice_probabilities(plan.design, plan.model, plan.true_beta)
    n = plan.respondents_per_set()
    return np.stack([_simulate_one(p, n, sq) for sq in plan.replication_seeds()])


@dataclass
class EstimationResult:
    beta_hat: np.ndarray
    converged: bool
    log_likelihood: float
    iterations: int
    gradient_norm: float
    ridge: bool = False


def log_likelihood(X: np.ndarray, counts: np.ndarray, beta: np.ndarray) -> float:
    u = X @ beta
    u = u - u.max(axis=-1, keepdims=True)
    logp = u - np.log(np.exp(u).sum(axis=-1, keepdims=True))
    return float(np.sum(counts * logp))


def score(X: np.ndarray, counts: np.ndarray, beta: np.ndarray) -> np.ndarray:
    p = _softmax_last(X @ beta)
    n = counts.sum(axis=-1, keepdims=True)
    return np.einsum("sjm,sj->m", X, counts - n * p)


def observed_information(X: np.ndarray, counts: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Negative Hessian: count-weighted sum of per-set information matrices."""
    n = counts.sum(axis=-1).astype(float)
    per_set = set_information(X, np.asarray(beta, dtype=float).reshape(1, -1))[:, 0]
    return np.einsum("s,smk->mk", n, per_set)


def _rank(H: np.ndarray, scale: float) -> int:
    return int(np.sum(np.linalg.eigvalsh(H) > SEPARATION_RTOL * scale))


def fit_mnl(design, model: ModelSpec, counts, tol: float = GRAD_TOL, max_iter: int = MAX_NEWTON) -> EstimationResult:
    """Newton-Raphson MLE from beta = 0 with step halving.

    A fit whose information matrix loses rank on the way (the likelihood only
    approaches its supremum at infinity) is reported as not converged.
    """
    X = _coded(design, model)
    counts = np.asarray(counts)
    if counts.shape != X.shape[:2]:
        raise InvalidInputError(f"counts have shape {counts.shape}, design needs {X.shape[:2]}")
    if np.any(counts < 0):
        raise InvalidInputError("counts must be nonnegative")
    counts = counts.astype(float)
    m = X.shape[-1]
    beta = np.zeros(m)
    ll = log_likelihood(X, counts, beta)
    ridge_used = False
    it = 0
    grad = score(X, counts, beta)
    if m:
        H0 = observed_information(X, counts, beta)
        scale = max(float(np.max(np.diag(H0))), 1e-300)
        rank0 = _rank(H0, scale)
    while True:
        gnorm = float(np.max(np.abs(grad))) if m else 0.0
        if gnorm <= tol:
            separated = m and _rank(observed_information(X, counts, beta), scale) < rank0
            return EstimationResult(beta, not separated, ll, it, gnorm, ridge_used)
        if it >= max_iter:
            return EstimationResult(beta, False, ll, it, gnorm, ridge_used)
        H = observed_information(X, counts, beta)
        try:
            L = np.linalg.cholesky(H)
            if np.min(np.diag(L)) ** 2 <= 1e-12 * max(np.max(np.diag(H)), 1e-300):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            H = H + RIDGE * np.eye(m)
            ridge_used = True
        step = np.linalg.solve(H, grad)
        t = 1.0
        for _ in range(50):
            cand = beta + t * step
            ll_new = log_likelihood(X, counts, cand)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            return EstimationResult(beta, False, ll, it, gnorm, ridge_used)
        beta, ll = cand, ll_new
        grad = score(X, counts, beta)
        it += 1


@dataclass(frozen=True)
class EmseResult:
    value: float
    used: int
    excluded: int

    def __float__(self) -> float:
        return self.value


def squared_errors(beta_hats, true_beta) -> np.ndarray:
    B = np.atleast_2d(np.asarray(beta_hats, dtype=float))
    t = np.asarray(true_beta, dtype=float).reshape(-1)
    if B.shape[1] != t.size:
        raise InvalidInputError(f"estimates have {B.shape[1]} parameters, true_beta has {t.size}")
    return np.sum((B - t) ** 2, axis=1)


def emse(beta_hats, true_beta, converged=None) -> EmseResult:
    """Mean squared estimation error over replications that converged."""
    se = squared_errors(beta_hats, true_beta)
    if se.size == 0:
        raise InvalidInputError("need at least one replication")
    keep = np.ones(se.size, bool) if converged is None else np.asarray(converged, dtype=bool)
    used = int(keep.sum())
    value = float(np.mean(se[keep])) if used else math.nan
    return EmseResult(value, used, se.size - used)


@dataclass
class Comparison:
    emse: dict[str, EmseResult]
    rows: list  # (design_id, replication, sq_error, converged)

    ROW_COLUMNS = ("design_id", "replication", "sq_error", "converged")

    def summary(self) -> dict:
        return {k: {"emse": v.value, "used": v.used, "excluded": v.excluded} for k, v in self.emse.items()}


def _fit_true_beta(plan: SimulationPlan) -> np.ndarray:
    """Truth expressed in the analysis model's parameters (zero for terms absent from the truth)."""
    fit, true = plan.analysis_model, plan.model
    if fit == true:
        return plan.true_beta
    if fit.attribute_levels != true.attribute_levels or not set(true.interactions) <= set(fit.interactions):
        raise InvalidInputError("the analysis model must nest the true model")
    names = true.column_names()
    lookup = dict(zip(names, plan.true_beta))
    return np.array([lookup.get(c, 0.0) for c in fit.column_names()])


def run_plan(plan: SimulationPlan, threads: int = 1) -> tuple[list[EstimationResult], np.ndarray]:
    counts = simulate_choices(plan)
    fit = plan.analysis_model

    def one(c):
        return fit_mnl(plan.design, fit, c)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, counts))
    else:
        results = [one(c) for c in counts]
    return results, _fit_true_beta(plan)


def compare_designs(designs: Mapping[str, Design] | Sequence[Design], template: SimulationPlan,
                    threads: int = 1) -> Comparison:
    """EMSE of several designs under one plan; replication n uses the same seed for every design."""
    if not isinstance(designs, Mapping):
        designs = {f"design_{i + 1}": d for i, d in enumerate(designs)}
    out, rows = {}, []
    for name, design in designs.items():
        plan = dataclasses.replace(template, design=design)
        results, truth = run_plan(plan, threads)
        B = np.stack([r.beta_hat for r in results])
        conv = np.array([r.converged for r in results])
        se = squared_errors(B, truth)
        out[name] = emse(B, truth, conv)
        rows += [(name, n + 1, float(se[n]), bool(conv[n])) for n in range(len(results))]
    return Comparison(out, rows)

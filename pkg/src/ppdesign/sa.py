"""Simulated annealing over partial profile designs.

The neighbourhood move keeps the number of constant attributes per choice set
fixed: when a move would add or remove a constant attribute, a compensating
attribute in the same set is switched the other way.
"""
from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import MAX_SET_RESAMPLES, Design, DesignError, DesignSpace, random_design, set_is_valid
from .criterion import Objective

TARGET_ACCEPTANCE = 0.8
STOPPING_RULES = ("no_improvement", "max_runtime", "max_reheats", "max_iterations")


class StuckStateError(DesignError):
    """No valid neighbour was found within the retry bound."""


def hyperbolic_temperature(k: int, t0: float) -> float:
    return t0 / (k + 1)


def metropolis_accept(delta: float, temperature: float, u: float) -> bool:
    """Accept iff ``u < min(1, exp(delta / temperature))``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if math.isnan(delta) or delta >= 0:
        return True
    return u < math.exp(delta / temperature)


def _other_level(current: int, d: int, rng: np.random.Generator) -> int:
    lv = int(rng.integers(1, d))
    return lv + 1 if lv >= current else lv


def _is_independent(attr: int, const_row: np.ndarray, partners: Callable[[int], set]) -> bool:
    """True when the criterion cannot depend on the shared level of ``attr``."""
    return all(const_row[b] for b in partners(attr))


def _propose_once(levels, space, partners, gamma, rng):
    S, J, K = levels.shape
    d = space.attribute_levels
    s, j, i = int(rng.integers(S)), int(rng.integers(J)), int(rng.integers(K))
    new = levels[s].copy()
    const = np.all(new == new[0], axis=0)

    def convert_and_vary():
        varying = np.flatnonzero(~const)
        v = int(varying[rng.integers(len(varying))])
        new[:, v] = int(rng.integers(1, d[v] + 1))
        new[j, i] = _other_level(int(new[j, i]), d[i], rng)

    if const[i]:
        if _is_independent(i, const, partners):
            convert_and_vary()
            branch = "independent_swap"
        elif rng.random() <= gamma:
            new[:, i] = _other_level(int(new[0, i]), d[i], rng)
            branch = "constant_level"
        else:
            convert_and_vary()
            branch = "swap"
    else:
        new[j, i] = _other_level(int(new[j, i]), d[i], rng)
        branch = "vary"
        if np.all(new[:, i] == new[0, i]):
            others = np.flatnonzero(const)
            if others.size == 0:
                return None
            c = int(others[rng.integers(len(others))])
            jj = int(rng.integers(J))
            new[jj, c] = _other_level(int(new[jj, c]), d[c], rng)
            branch = "vary_swap"
    return s, new, branch


def propose_move(levels: np.ndarray, space: DesignSpace, partners, gamma: float, rng: np.random.Generator,
                 max_retries: int = MAX_SET_RESAMPLES):
    """One exploration move: ``(set index, new (J, K) set, branch label)``."""
    for _ in range(max_retries):
        out = _propose_once(levels, space, partners, gamma, rng)
        if out is not None and set_is_valid(out[1], space):
            return out
    raise StuckStateError(f"no valid neighbour after {max_retries} attempts")


def _partners_fn(model_or_objective) -> Callable[[int], set]:
    if model_or_objective is None:
        return lambda attr: set()
    return model_or_objective.partners


def default_gamma(space: DesignSpace) -> float:
    return space.num_constant_attributes / space.num_attributes


def explore(current: Design, space: DesignSpace, model, gamma: float | None = None, seed=None) -> Design:
    """Apply one exploration move to ``current`` and return the neighbour.

    ``model`` may be a ModelSpec or an Objective; only its interaction
    structure is used, to decide whether a constant attribute's level matters.
    """
    rng = np.random.default_rng(seed)
    gamma = default_gamma(space) if gamma is None else gamma
    levels = current.copy_levels()
    s, new, _ = propose_move(levels, space, _partners_fn(model), gamma, rng)
    levels[s] = new
    return Design(levels)


@dataclass(frozen=True)
class TemperatureCalibration:
    t0: float
    flat: bool
    mean_abs_delta: float


def initial_temperature(
    start: Design,
    evaluate,
    space: DesignSpace,
    steps: int = 100,
    seed=None,
    gamma: float | None = None,
    target_acceptance: float = TARGET_ACCEPTANCE,
) -> TemperatureCalibration:
    """Random-walk calibration of T0.

    Takes ``steps`` unconditionally accepted moves and sets
    ``T0 = mean|delta| / -ln(target_acceptance)``; a flat walk falls back to 1.
    ``evaluate`` is an Objective or any callable on a (S, J, K) level array.
    """
    if steps < 2:
        raise ValueError("steps must be at least 2")
    rng = np.random.default_rng(seed)
    gamma = default_gamma(space) if gamma is None else gamma
    levels = start.copy_levels()
    partners = evaluate.partners if isinstance(evaluate, Objective) else (lambda a: set())
    if isinstance(evaluate, Objective):
        state = evaluate.start(levels)
        current = state.value
    else:
        current = float(evaluate(levels))
    deltas = []
    for _ in range(steps):
        s, new, _ = propose_move(levels, space, partners, gamma, rng)
        if isinstance(evaluate, Objective):
            value = state.propose(s, new)
            state.commit()
        else:
            levels[s] = new
            value = float(evaluate(levels))
        levels[s] = new
        if math.isfinite(value) and math.isfinite(current):
            deltas.append(abs(value - current))
        current = value
    mean_abs = float(np.mean(deltas)) if deltas else 0.0
    if mean_abs <= 0:
        return TemperatureCalibration(1.0, True, 0.0)
    return TemperatureCalibration(mean_abs / -math.log(target_acceptance), False, mean_abs)


@dataclass
class SaConfig:
    stopping: str = "no_improvement"
    max_runtime: float | None = None  # seconds
    max_reheats: int | None = None
    max_iterations: int | None = None
    reheat_stall: int = 1000
    gamma: float | None = None  # default F / K
    random_walk_steps: int = 100
    target_acceptance: float = TARGET_ACCEPTANCE
    seed: int = 0
    record_trace: bool = True
    start_attempts: int = 100

    def __post_init__(self):
        if self.stopping not in STOPPING_RULES:
            raise ValueError(f"stopping must be one of {STOPPING_RULES}")
        if self.reheat_stall < 1:
            raise ValueError("reheat_stall must be >= 1")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.stopping == "max_runtime" and self.max_runtime is None:
            raise ValueError("max_runtime stopping needs max_runtime")
        if self.stopping == "max_reheats" and self.max_reheats is None:
            raise ValueError("max_reheats stopping needs max_reheats")
        if self.stopping == "max_iterations" and self.max_iterations is None:
            raise ValueError("max_iterations stopping needs max_iterations")


TRACE_COLUMNS = ("iteration", "temperature", "current_db", "best_db", "accepted", "reheated")


@dataclass
class AnnealResult:
    design: Design
    value: float
    t0: float
    t0_flat: bool
    iterations: int
    reheats: int
    elapsed: float
    evaluations: int
    branch_counts: Counter = field(default_factory=Counter)
    trace: list = field(default_factory=list)


def _finite_start(space, objective, rng, attempts):
    design = random_design(space, rng)
    for _ in range(attempts - 1):
        if math.isfinite(objective(design)):
            break
        design = random_design(space, rng)
    return design


def anneal(space: DesignSpace, objective: Objective, config: SaConfig | None = None, start: Design | None = None,
           on_move: Callable | None = None) -> AnnealResult:
    """Simulated annealing with hyperbolic cooling and reheating.

    After ``reheat_stall`` consecutive rejections the temperature returns to
    T0 and the cooling counter to zero; the best design found is kept.
    ``on_move(state, branch)`` is called after every accepted move.
    """
    cfg = config or SaConfig()
    t_start = time.perf_counter()
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rng = np.random.default_rng(seeds[0])
    gamma = default_gamma(space) if cfg.gamma is None else cfg.gamma
    if start is None:
        start = _finite_start(space, objective, np.random.default_rng(seeds[1]), cfg.start_attempts)
    calib = initial_temperature(start, objective, space, cfg.random_walk_steps, seeds[2], gamma, cfg.target_acceptance)
    t0 = calib.t0
    state = objective.start(start)
    evaluations = cfg.random_walk_steps + 1
    best_value, best_levels = state.value, state.levels.copy()
    trace = []
    branches: Counter = Counter()
    k = stall = reheats = it = 0
    improved_in_cycle = False
    deadline = None if cfg.max_runtime is None else t_start + cfg.max_runtime
    while True:
        if deadline is not None and time.perf_counter() >= deadline:
            break
        if cfg.max_iterations is not None and it >= cfg.max_iterations:
            break
        s, new, branch = propose_move(state.levels, space, objective.partners, gamma, rng)
        value = state.propose(s, new)
        evaluations += 1
        temperature = hyperbolic_temperature(k, t0)
        delta = value - state.value if not (value == state.value == -math.inf) else math.nan
        accepted = metropolis_accept(delta, temperature, rng.random())
        if accepted:
            state.commit()
            branches[branch] += 1
            stall = 0
            if state.value > best_value:
                best_value, best_levels = state.value, state.levels.copy()
                improved_in_cycle = True
            if on_move is not None:
                on_move(state, branch)
        else:
            stall += 1
        k += 1
        it += 1
        reheated = False
        stop = False
        if stall >= cfg.reheat_stall:
            reheated = True
            reheats += 1
            k = stall = 0
            if cfg.stopping == "no_improvement" and not improved_in_cycle:
                stop = True
            improved_in_cycle = False
        if cfg.record_trace:
            trace.append((it, temperature, state.value, best_value, accepted, reheated))
        if stop or (cfg.stopping == "max_reheats" and reheats >= cfg.max_reheats):
            break
    return AnnealResult(
        design=Design(best_levels),
        value=best_value,
        t0=t0,
        t0_flat=calib.flat,
        iterations=it,
        reheats=reheats,
        elapsed=time.perf_counter() - t_start,
        evaluations=evaluations,
        branch_counts=branches,
        trace=trace,
    )

"""Two-stage coordinate exchange: fixed master design, then level exchanges."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import MAX_SET_RESAMPLES, Design, DesignError, DesignSpace, InfeasibleSpaceError, set_is_valid, validate_design
from .criterion import Objective
from .master import MasterDesign, MasterObjective, optimize_master

DEFAULT_STARTS = 30


class InvalidStartError(DesignError, ValueError):
    pass


@dataclass
class CeConfig:
    num_starts: int = DEFAULT_STARTS
    max_cycles: int | None = None
    seed: int = 0
    master_objective: MasterObjective = field(default_factory=MasterObjective)
    master_restarts: int = 50

    def __post_init__(self):
        if self.num_starts < 1:
            raise ValueError("num_starts must be >= 1")


@dataclass
class CeResult:
    design: Design
    value: float
    trace: list  # (cycle, criterion, elapsed_ms)
    evaluations: int


def _improves(new: float, old: float) -> bool:
    if old == -math.inf:
        return new > old
    return new > old + 1e-12 * max(1.0, abs(old))


def restricted_coordinate_exchange(
    start: Design,
    master: MasterDesign,
    objective: Objective,
    space: DesignSpace,
    max_cycles: int | None = None,
) -> CeResult:
    """Coordinate exchange that never moves the master's constant-attribute pattern.

    Varying coordinates are exchanged one profile at a time; a constant
    attribute's shared level is exchanged for the whole set when its set is
    visited at profile 0. Exchanges that would produce an invalid set are
    skipped. Stops after a full cycle without an accepted exchange.
    """
    if not np.array_equal(start.constant_mask(), master.constant_mask()):
        raise InvalidStartError("start design's constant attributes differ from the master design")
    problems = validate_design(start, space)
    if problems:
        raise InvalidStartError(f"start design is invalid: {problems[0]}")
    t0 = time.perf_counter()
    state = objective.start(start)
    S, J, K = space.shape
    d = space.attribute_levels
    varying = master.incidence.astype(bool)
    trace = [(0, state.value, 0.0)]
    cycle = 0
    while max_cycles is None or cycle < max_cycles:
        cycle += 1
        changed = False
        for s in range(S):
            for j in range(J):
                for i in range(K):
                    if not varying[s, i] and j > 0:
                        continue
                    cur = state.levels[s]
                    current_level = int(cur[j, i])
                    cands = []
                    for lv in range(1, d[i] + 1):
                        if lv == current_level:
                            continue
                        new = cur.copy()
                        if varying[s, i]:
                            new[j, i] = lv
                        else:
                            new[:, i] = lv
                        if set_is_valid(new, space):
                            cands.append(new)
                    if not cands:
                        continue
                    vals = state.propose_many(s, np.stack(cands))
                    b = int(np.argmax(vals))
                    if _improves(vals[b], state.value):
                        state.commit(s, cands[b])
                        changed = True
        trace.append((cycle, state.value, 1000 * (time.perf_counter() - t0)))
        if not changed:
            break
    return CeResult(Design(state.levels), state.value, trace, state.evaluations)


def random_conforming_design(space: DesignSpace, master: MasterDesign, seed=None) -> Design:
    """Random valid design whose constant attributes follow the master."""
    rng = np.random.default_rng(seed)
    S, J, K = space.shape
    d = np.asarray(space.attribute_levels)
    out = np.empty((S, J, K), dtype=np.int64)
    for s in range(S):
        const = np.flatnonzero(master.incidence[s] == 0)
        for _ in range(MAX_SET_RESAMPLES):
            cand = rng.integers(1, d + 1, size=(J, K))
            cand[:, const] = rng.integers(1, d[const] + 1)
            if set_is_valid(cand, space):
                out[s] = cand
                break
        else:
            raise InfeasibleSpaceError(f"set {s + 1}: no valid levels for the master's constant pattern")
    return Design(out)


@dataclass
class TwoStageResult:
    design: Design
    value: float
    master: MasterDesign
    elapsed: float
    master_elapsed: float
    start_values: list
    evaluations: int
    traces: list  # (start, cycle, criterion, elapsed_ms)


def two_stage_ce(space: DesignSpace, objective: Objective, config: CeConfig | None = None) -> TwoStageResult:
    """Stage one picks the master design; stage two runs restricted CE from many starts."""
    cfg = config or CeConfig()
    t0 = time.perf_counter()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.num_starts + 1)
    master = optimize_master(space, cfg.master_objective, int(seeds[0].generate_state(1)[0]), cfg.master_restarts)
    master_elapsed = time.perf_counter() - t0
    best, values, traces, evaluations = None, [], [], 0
    for k in range(cfg.num_starts):
        start = random_conforming_design(space, master, np.random.default_rng(seeds[k + 1]))
        res = restricted_coordinate_exchange(start, master, objective, space, cfg.max_cycles)
        values.append(res.value)
        evaluations += res.evaluations
        traces += [(k, c, v, ms) for c, v, ms in res.trace]
        if best is None or res.value > best.value:
            best = res
    return TwoStageResult(best.design, best.value, master, time.perf_counter() - t0, master_elapsed, values,
                          evaluations, traces)

"""Stage-one master designs: which attributes vary in which choice set.

Each choice set is a block of a two-way ANOVA model whose treatments are the
varying attributes. A master is scored either by the determinant of the
ANOVA information matrix (attribute balance) or by a weighted sum of the
treatment-effect variances (variance balance I/II).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DesignError, DesignSpace, InvalidInputError

DEFAULT_RESTARTS = 50


class SingularMasterError(DesignError):
    """Some attribute effect is not estimable from the master design."""


class InfeasibleMasterError(DesignError):
    pass


@dataclass(frozen=True)
class MasterDesign:
    """S x K 0/1 incidence; entry 1 iff the attribute varies in that set."""

    incidence: np.ndarray

    def __post_init__(self):
        inc = np.array(self.incidence, dtype=np.int64, copy=True)
        if inc.ndim != 2 or not np.isin(inc, (0, 1)).all():
            raise InvalidInputError("incidence must be a 2-d 0/1 array")
        rows = inc.sum(axis=1)
        if not np.all(rows == rows[0]):
            raise InvalidInputError("every choice set must vary the same number of attributes")
        inc.setflags(write=False)
        object.__setattr__(self, "incidence", inc)

    @property
    def num_sets(self) -> int:
        return self.incidence.shape[0]

    @property
    def num_attributes(self) -> int:
        return self.incidence.shape[1]

    @property
    def profile_strength(self) -> int:
        return int(self.incidence[0].sum())

    def constant_mask(self) -> np.ndarray:
        return self.incidence == 0

    def __eq__(self, other):
        return isinstance(other, MasterDesign) and np.array_equal(self.incidence, other.incidence)

    def __hash__(self):
        return hash(self.incidence.tobytes())


def anova_matrices(master: MasterDesign) -> tuple[np.ndarray, np.ndarray]:
    """Treatment matrix Q (r x t) and block matrix Z (r x (S-1)).

    Rows run over (set, varying attribute) in ascending order. Blocks are
    sum-to-zero coded: the last set's rows carry -1 in every Z column.
    """
    inc = master.incidence
    S, K = inc.shape
    sets, attrs = np.nonzero(inc)
    r = len(sets)
    Q = np.zeros((r, K))
    Q[np.arange(r), attrs] = 1.0
    Z = np.zeros((r, S - 1))
    last = sets == S - 1
    Z[np.flatnonzero(~last), sets[~last]] = 1.0
    Z[last] = -1.0
    return Q, Z


def anova_information(master: MasterDesign) -> np.ndarray:
    Q, Z = anova_matrices(master)
    return np.block([[Q.T @ Q, Q.T @ Z], [Z.T @ Q, Z.T @ Z]])


def reduced_information(master_or_incidence) -> np.ndarray:
    """``Q'(I - Z(Z'Z)^-1 Z')Q`` in closed form for equal block sizes."""
    inc = np.asarray(getattr(master_or_incidence, "incidence", master_or_incidence), dtype=float)
    tv = inc[0].sum()
    n = inc.sum(axis=0)
    r = n.sum()
    return np.diag(n) - inc.T @ inc / tv + np.outer(n, n) / r


def treatment_variances(master: MasterDesign) -> np.ndarray:
    """Var(alpha_i) / sigma^2 for every attribute."""
    C = reduced_information(master)
    if np.linalg.matrix_rank(C, tol=1e-9 * max(1.0, np.abs(C).max())) < C.shape[0]:
        raise SingularMasterError("an attribute effect is not estimable from this master design")
    return np.diag(np.linalg.inv(C))


def variance_balance_weights(levels: Sequence[int], scheme: str) -> np.ndarray:
    d = np.asarray(levels, dtype=float)
    if d.size == 0 or d.min() < 2:
        raise InvalidInputError("every attribute needs at least 2 levels")
    scheme = str(scheme).upper()
    if scheme == "I":
        return (d - 1) / (d - 1).sum()
    if scheme == "II":
        return (d - 1) ** 2 / (2 * d)
    raise InvalidInputError(f"unknown variance balance scheme {scheme!r}")


@dataclass(frozen=True)
class MasterObjective:
    """``kind="d_optimal"`` or ``kind="a_weighted"`` with scheme "I"/"II"."""

    kind: str = "a_weighted"
    scheme: str = "II"

    def __post_init__(self):
        if self.kind not in ("d_optimal", "a_weighted"):
            raise InvalidInputError(f"unknown master objective {self.kind!r}")

    @property
    def label(self) -> str:
        return "d_optimal" if self.kind == "d_optimal" else f"a_weighted_{self.scheme}"

    def score(self, incidence: np.ndarray, weights: np.ndarray | None) -> float:
        """Higher is better: log|C| for d_optimal, -sum(w * Var) for a_weighted."""
        C = reduced_information(incidence)
        try:
            L = np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            return -np.inf
        if np.diag(L).min() ** 2 <= 1e-12 * np.diag(C).max():
            return -np.inf
        if self.kind == "d_optimal":
            return float(2 * np.log(np.diag(L)).sum())
        Linv = np.linalg.solve(L, np.eye(C.shape[0]))
        var = (Linv**2).sum(axis=0)
        return -float(weights @ var)

    def value(self, master: MasterDesign, levels: Sequence[int] | None = None) -> float:
        """Objective in its natural orientation (log-det, or weighted variance sum)."""
        w = None if self.kind == "d_optimal" else variance_balance_weights(levels, self.scheme)
        s = self.score(master.incidence, w)
        return s if self.kind == "d_optimal" else -s


def _random_incidence(S: int, K: int, tv: int, rng: np.random.Generator) -> np.ndarray:
    inc = np.zeros((S, K), dtype=np.int64)
    for s in range(S):
        inc[s, rng.choice(K, size=tv, replace=False)] = 1
    return inc


def _hill_climb(inc: np.ndarray, objective: MasterObjective, w) -> tuple[np.ndarray, float]:
    best = objective.score(inc, w)
    improved = True
    while improved:
        improved = False
        for s in range(inc.shape[0]):
            for v in np.flatnonzero(inc[s] == 1):
                for c in np.flatnonzero(inc[s] == 0):
                    inc[s, v], inc[s, c] = 0, 1
                    val = objective.score(inc, w)
                    if val > best + 1e-12 * max(1.0, abs(best)) or (best == -np.inf and val > best):
                        best = val
                        improved = True
                        break
                    inc[s, v], inc[s, c] = 1, 0
                if inc[s, v] == 0:
                    # v was swapped out; the remaining candidates for this set are stale
                    break
    return inc, best


def optimize_master(
    space: DesignSpace,
    objective: MasterObjective | str = "a_weighted",
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
) -> MasterDesign:
    """Multi-start first-improvement swap search for a master design."""
    if isinstance(objective, str):
        objective = MasterObjective(objective)
    S, K, tv = space.num_choice_sets, space.num_attributes, space.profile_strength
    if tv < 1:
        raise InfeasibleMasterError("profile strength must be at least 1")
    if tv == K:
        return MasterDesign(np.ones((S, K), dtype=np.int64))
    w = None if objective.kind == "d_optimal" else variance_balance_weights(space.attribute_levels, objective.scheme)
    best_inc, best_val = None, -np.inf
    for child in np.random.SeedSequence(seed).spawn(max(1, restarts)):
        rng = np.random.default_rng(child)
        inc, val = _hill_climb(_random_incidence(S, K, tv, rng), objective, w)
        if val > best_val:
            best_inc, best_val = inc.copy(), val
    if best_inc is None:
        raise InfeasibleMasterError("every restart produced a singular master design")
    return MasterDesign(best_inc)

"""MNL information matrices and Bayesian D-type design criteria.

All log-determinants go through :func:`logdet_psd`, which scores singular
information matrices as ``-inf``. Bayesian averages are plain means over a
frozen draw matrix, so every design compared on the same draws shares its
integration error (common random numbers).
"""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import linalg as sla
from scipy.stats import norm, qmc

from .core import Coder, Design, InvalidInputError, InvalidPriorError, ModelSpec, PriorSpec

DEFAULT_DRAWS = 128
PIVOT_TOL = 1e-12


def mnl_probabilities(coded_set: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Choice probabilities for one (J, m) coded choice set."""
    u = np.asarray(coded_set, dtype=float) @ np.asarray(beta, dtype=float)
    u = u - u.max()
    e = np.exp(u)
    return e / e.sum()


def _softmax_last(u: np.ndarray) -> np.ndarray:
    u = u - u.max(axis=-1, keepdims=True)
    e = np.exp(u)
    return e / e.sum(axis=-1, keepdims=True)


def set_factors(X: np.ndarray, betas: np.ndarray) -> np.ndarray:
    """Factors ``G`` with ``G'G = X'(P - pp')X`` for every draw.

    ``X`` is (..., J, m) and ``betas`` is (R, m); ``G`` is (..., R, J, m), the
    probability-centred rows scaled by ``sqrt(p)``.
    """
    X = np.asarray(X, dtype=float)
    u = np.einsum("...jm,rm->...rj", X, betas)
    p = _softmax_last(u)
    xbar = np.einsum("...rj,...jm->...rm", p, X)
    D = X[..., None, :, :] - xbar[..., :, None, :]
    return D * np.sqrt(p)[..., None]


def set_information(X: np.ndarray, betas: np.ndarray) -> np.ndarray:
    """Per-set information ``X'(P - pp')X`` for every draw, shape (..., R, m, m).

    Built as a cross-product of factors, so every summand stays positive
    semidefinite in floating point.
    """
    G = set_factors(X, betas)
    return np.matmul(np.swapaxes(G, -1, -2), G)


def information_matrix(design: Design, model: ModelSpec, beta: np.ndarray) -> np.ndarray:
    levels = design.levels if isinstance(design, Design) else np.asarray(design)
    X = Coder(model)(levels)
    beta = np.asarray(beta, dtype=float).reshape(1, -1)
    if beta.shape[1] != model.num_params:
        raise InvalidInputError(f"beta has length {beta.shape[1]}, model needs {model.num_params}")
    return set_information(X, beta)[:, 0].sum(axis=0)


def logdet_psd(M: np.ndarray, tol: float = PIVOT_TOL) -> np.ndarray:
    """Log-determinant of a stack of PSD matrices; ``-inf`` where singular.

    A matrix counts as singular when its smallest Cholesky pivot falls below
    ``tol`` times its largest diagonal entry.
    """
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 0:
        return np.zeros(M.shape[:-2])
    flat = M.reshape((-1,) + M.shape[-2:])
    out = np.empty(flat.shape[0])
    try:
        L = np.linalg.cholesky(flat)
        piv = np.diagonal(L, axis1=-2, axis2=-1) ** 2
        ok = np.ones(flat.shape[0], dtype=bool)
    except np.linalg.LinAlgError:
        piv = np.zeros(flat.shape[:2])
        ok = np.zeros(flat.shape[0], dtype=bool)
        for r in range(flat.shape[0]):
            try:
                piv[r] = np.diagonal(np.linalg.cholesky(flat[r])) ** 2
                ok[r] = True
            except np.linalg.LinAlgError:
                pass
    scale = np.diagonal(flat, axis1=-2, axis2=-1).max(axis=-1)
    ok &= (scale > 0) & (piv.min(axis=-1) > tol * np.maximum(scale, 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        out[ok] = np.log(piv[ok]).sum(axis=-1)
    out[~ok] = -np.inf
    return out.reshape(M.shape[:-2])


def d_criterion(design: Design, model: ModelSpec, beta: np.ndarray) -> float:
    return float(logdet_psd(information_matrix(design, model, beta)))


def _prior_factor(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Active coordinates and a factor ``L`` with ``L L' = cov[active, active]``."""
    active = np.flatnonzero(np.diag(cov) > 0)
    sub = cov[np.ix_(active, active)]
    if active.size == 0:
        return active, np.zeros((0, 0))
    try:
        return active, sla.cholesky(sub, lower=True)
    except sla.LinAlgError:
        w, V = np.linalg.eigh(sub)
        if w.min() < -1e-10 * max(1.0, w.max()):
            raise InvalidPriorError("covariance is not positive semidefinite")
        return active, V * np.sqrt(np.clip(w, 0.0, None))


def sample_prior(prior: PriorSpec, num_draws: int = DEFAULT_DRAWS, seed: int = 0, method: str = "sobol") -> np.ndarray:
    """Frozen (R, m) sample from ``N(mean, covariance)``.

    ``method="sobol"`` maps scrambled Sobol points through the normal inverse
    CDF; ``method="mc"`` uses plain Philox normals. Zero-variance coordinates
    are copied from the mean exactly.
    """
    if num_draws < 1:
        raise InvalidInputError("num_draws must be at least 1")
    m = prior.dim
    draws = np.tile(prior.mean, (num_draws, 1))
    active, L = _prior_factor(prior.covariance)
    k = active.size
    if k == 0:
        return draws
    if method == "sobol":
        engine = qmc.Sobol(d=k, scramble=True, seed=np.random.default_rng(seed))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            u = engine.random(num_draws)
        z = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    elif method == "mc":
        z = np.random.Generator(np.random.Philox(seed)).standard_normal((num_draws, k))
    else:
        raise InvalidInputError(f"unknown sampling method {method!r}")
    draws[:, active] += z @ L.T
    assert draws.shape == (num_draws, m)
    return draws


def with_draws(prior: PriorSpec, num_draws: int = DEFAULT_DRAWS, seed: int = 0, method: str = "sobol") -> PriorSpec:
    return PriorSpec(prior.mean, prior.covariance, sample_prior(prior, num_draws, seed, method), seed)


def _draws_of(prior_or_draws) -> np.ndarray:
    if isinstance(prior_or_draws, PriorSpec):
        if prior_or_draws.draws is None:
            raise InvalidInputError("prior has no frozen draws; use with_draws() first")
        return prior_or_draws.draws
    return np.atleast_2d(np.asarray(prior_or_draws, dtype=float))


@dataclass(frozen=True)
class CriterionValue:
    value: float
    num_draws: int
    model_tag: str  # "main" | "interaction" | "robust"

    @property
    def is_singular(self) -> bool:
        return self.value == -math.inf


def _model_tag(model: ModelSpec) -> str:
    return "interaction" if model.interactions else "main"


def db_values(design: Design, model: ModelSpec, draws) -> np.ndarray:
    """Per-draw D values, shape (R,)."""
    draws = _draws_of(draws)
    if draws.shape[1] != model.num_params:
        raise InvalidInputError(f"draws have dimension {draws.shape[1]}, model needs {model.num_params}")
    levels = design.levels if isinstance(design, Design) else np.asarray(design)
    M = set_information(Coder(model)(levels), draws).sum(axis=0)
    return logdet_psd(M)


def db_criterion(design: Design, model: ModelSpec, draws, model_tag: str | None = None) -> CriterionValue:
    vals = db_values(design, model, draws)
    return CriterionValue(float(np.mean(vals)), len(vals), model_tag or _model_tag(model))


def relative_db_efficiency(design_x: Design, design_ref: Design, model: ModelSpec, draws) -> float:
    """``exp((D_B(X) - D_B(X*)) / m)`` on shared draws; > 1 means X is better."""
    return efficiency_report(design_x, design_ref, model, draws).efficiency


@dataclass(frozen=True)
class EfficiencyReport:
    design_id: str
    reference_id: str
    model_tag: str
    m: int
    db_x: float
    db_ref: float
    efficiency: float
    num_draws: int
    seed: int | None = None
    flag: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def efficiency_from_values(db_x: float, db_ref: float, m: int) -> tuple[float, str | None]:
    if db_x == -math.inf and db_ref == -math.inf:
        return math.nan, "both_singular"
    if db_x == -math.inf:
        return 0.0, "x_singular"
    if db_ref == -math.inf:
        return math.inf, "reference_singular"
    return math.exp((db_x - db_ref) / m), None


def efficiency_report(
    design_x: Design,
    design_ref: Design,
    model: ModelSpec,
    draws,
    design_id: str = "x",
    reference_id: str = "ref",
    seed: int | None = None,
    model_tag: str | None = None,
) -> EfficiencyReport:
    dx = db_criterion(design_x, model, draws, model_tag)
    dr = db_criterion(design_ref, model, draws)
    m = model.num_params
    eff, flag = efficiency_from_values(dx.value, dr.value, m)
    if design_x == design_ref:
        eff, flag = 1.0, None
    return EfficiencyReport(design_id, reference_id, dx.model_tag, m, dx.value, dr.value, eff, dx.num_draws, seed, flag)


@dataclass(frozen=True)
class RobustCriterionSpec:
    """Main-effects and interaction models whose per-parameter D_B values are summed."""

    main_model: ModelSpec
    main_prior: PriorSpec
    interaction_model: ModelSpec
    interaction_prior: PriorSpec
    weights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        mm, im = self.main_model, self.interaction_model
        if mm.attribute_levels != im.attribute_levels:
            raise InvalidInputError("robust models must share attribute levels")
        if im.interactions[: len(mm.interactions)] != mm.interactions:
            raise InvalidInputError("main model parameters must be a prefix of the interaction model's")
        if self.main_prior.dim != mm.num_params or self.interaction_prior.dim != im.num_params:
            raise InvalidInputError("prior dimensions do not match the robust models")

    @property
    def m_main(self) -> int:
        return self.main_model.num_params

    @property
    def m_int(self) -> int:
        return self.interaction_model.num_params


def robust_criterion(design: Design, spec: RobustCriterionSpec, draws_main=None, draws_int=None) -> CriterionValue:
    draws_main = _draws_of(spec.main_prior if draws_main is None else draws_main)
    draws_int = _draws_of(spec.interaction_prior if draws_int is None else draws_int)
    wm, wi = spec.weights
    d_main = float(np.mean(db_values(design, spec.main_model, draws_main)))
    d_int = float(np.mean(db_values(design, spec.interaction_model, draws_int)))
    value = wm * d_main / spec.m_main + wi * d_int / spec.m_int
    return CriterionValue(value, len(draws_main), "robust")


@dataclass
class Term:
    model: ModelSpec
    draws: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        self.draws = _draws_of(self.draws)
        self.coder = Coder(self.model)
        if self.draws.shape[1] != self.model.num_params:
            raise InvalidInputError("draws do not match model dimension")


class Objective:
    """Weighted sum of Bayesian D criteria, the quantity both optimizers maximize.

    A single-model objective (weight 1) is exactly ``D_B``; the robust
    objective uses weights ``w / m`` per model.
    """

    def __init__(self, terms: Sequence[Term], tag: str):
        self.terms = list(terms)
        self.tag = tag

    @classmethod
    def bayesian(cls, model: ModelSpec, draws) -> "Objective":
        return cls([Term(model, draws, 1.0)], _model_tag(model))

    @classmethod
    def robust(cls, spec: RobustCriterionSpec, draws_main=None, draws_int=None) -> "Objective":
        dm = _draws_of(spec.main_prior if draws_main is None else draws_main)
        di = _draws_of(spec.interaction_prior if draws_int is None else draws_int)
        wm, wi = spec.weights
        return cls(
            [Term(spec.main_model, dm, wm / spec.m_main), Term(spec.interaction_model, di, wi / spec.m_int)],
            "robust",
        )

    @property
    def interaction_pairs(self) -> set[tuple[int, int]]:
        return {p for t in self.terms for p in t.model.interactions}

    def partners(self, attribute: int) -> set[int]:
        out: set[int] = set()
        for t in self.terms:
            out |= t.model.partners(attribute)
        return out

    def __call__(self, design) -> float:
        levels = design.levels if isinstance(design, Design) else np.asarray(design)
        total = 0.0
        for t in self.terms:
            M = set_information(t.coder(levels), t.draws).sum(axis=0)
            total += t.weight * float(np.mean(logdet_psd(M)))
        return total

    def start(self, design, resync_every: int = 256) -> "IncrementalObjective":
        return IncrementalObjective(self, design, resync_every)


@functools.lru_cache(maxsize=None)
def _signature(J: int) -> np.ndarray:
    return np.diag(np.r_[np.ones(J), -np.ones(J)])


class _TermState:
    """Cached information for one term: per-set factors, totals, inverses."""

    LEMMA_FLOOR = 1e-8

    def __init__(self, term: Term, levels: np.ndarray):
        self.term = term
        self.G = set_factors(term.coder(levels), term.draws)  # (S, R, J, m)
        self.contribs = np.matmul(np.swapaxes(self.G, -1, -2), self.G)
        self.refresh(self.contribs.sum(axis=0))

    def refresh(self, total: np.ndarray) -> None:
        self.total = total
        self.logdets = logdet_psd(total)
        self.inverse = None
        if np.all(np.isfinite(self.logdets)):
            self.inverse = np.linalg.inv(total)

    def mean_logdet(self, s: int, G_new: np.ndarray, c_new: np.ndarray) -> np.ndarray:
        """Mean log-det after replacing set ``s``; G_new is (..., R, J, m)."""
        if self.inverse is not None:
            G_old = np.broadcast_to(self.G[s], G_new.shape)
            U = np.concatenate([G_new, G_old], axis=-2)
            J = G_new.shape[-2]
            A = np.matmul(np.matmul(U, self.inverse), np.swapaxes(U, -1, -2))
            A += _signature(J)
            ratio = np.linalg.det(A) * (-1) ** J
            if np.all(ratio > self.LEMMA_FLOOR):
                return np.mean(self.logdets + np.log(ratio), axis=-1)
        return np.mean(logdet_psd(self.total - self.contribs[s] + c_new), axis=-1)


class IncrementalObjective:
    """Objective value under single-set changes, caching per-set information.

    Each term keeps its per-set contributions, their sum, and that sum's
    inverse for every draw. A proposal for set ``s`` is scored through the
    matrix determinant lemma (a rank-2J update per draw); near-singular
    updates fall back to a full Cholesky. Committing refactorises the new
    total, and the total is rebuilt from the per-set cache every
    ``resync_every`` commits.
    """

    def __init__(self, objective: Objective, design, resync_every: int = 256):
        self.objective = objective
        levels = design.levels if isinstance(design, Design) else np.asarray(design)
        self.levels = np.array(levels, dtype=np.int64, copy=True)
        self.resync_every = resync_every
        self.states = [_TermState(t, self.levels) for t in objective.terms]
        self.value = self._current_value()
        self._commits = 0
        self._pending = None
        self.evaluations = 0

    def _current_value(self) -> float:
        return float(sum(st.term.weight * np.mean(st.logdets) for st in self.states))

    def _score(self, s: int, sets: np.ndarray):
        parts, total = [], 0.0
        for st in self.states:
            G = set_factors(st.term.coder(sets), st.term.draws)
            c = np.matmul(np.swapaxes(G, -1, -2), G)
            parts.append((G, c))
            total = total + st.term.weight * st.mean_logdet(s, G, c)
        return parts, total

    def propose(self, s: int, new_set: np.ndarray) -> float:
        """Objective value if set ``s`` were replaced by ``new_set`` (J, K)."""
        new_set = np.array(new_set, copy=True)
        parts, total = self._score(s, new_set)
        self.evaluations += 1
        self._pending = (s, new_set, parts, float(total))
        return float(total)

    def propose_many(self, s: int, candidates: np.ndarray) -> np.ndarray:
        """Values for L candidate replacements of set ``s``; candidates is (L, J, K)."""
        candidates = np.asarray(candidates)
        _, totals = self._score(s, candidates)
        self.evaluations += len(candidates)
        self._pending = None
        return np.asarray(totals, dtype=float)

    def commit(self, s: int | None = None, new_set: np.ndarray | None = None) -> None:
        """Apply the last proposal, or an explicit (s, new_set) replacement."""
        if new_set is not None:
            pend = self._pending
            if pend is None or pend[0] != s or not np.array_equal(pend[1], new_set):
                self.propose(s, new_set)
                self.evaluations -= 1
        if self._pending is None:
            raise RuntimeError("nothing to commit")
        s, new_set, parts, _ = self._pending
        self.levels[s] = new_set
        for st, (G, c) in zip(self.states, parts):
            total = st.total - st.contribs[s] + c
            st.G[s] = G
            st.contribs[s] = c
            st.refresh(total)
        self._pending = None
        self._commits += 1
        if self.resync_every and self._commits % self.resync_every == 0:
            self.resync()
        else:
            self.value = self._current_value()

    def resync(self) -> None:
        for st in self.states:
            st.refresh(st.contribs.sum(axis=0))
        self.value = self._current_value()

    def full_value(self) -> float:
        return self.objective(self.levels)

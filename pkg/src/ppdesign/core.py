"""Domain types for partial profile choice designs.

Conventions used throughout the package:

* attribute and choice-set indices are 0-based in the Python API and 1-based in
  every file format and in the CLI config;
* attribute *levels* are 1-based everywhere, so ``levels[s, j, i]`` lies in
  ``1..d_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class DesignError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(DesignError, ValueError):
    pass


class InfeasibleSpaceError(DesignError):
    """No valid choice set could be produced under the space's constraints."""


class InvalidPriorError(DesignError, ValueError):
    pass


MAX_SET_RESAMPLES = 10_000


@dataclass(frozen=True)
class DesignSpace:
    """Shape of a partial profile experiment.

    ``forbidden_combinations`` holds mappings ``{attribute: level}``; a profile
    is forbidden when it matches every pair of any one mapping.
    """

    num_choice_sets: int
    profiles_per_set: int
    attribute_levels: tuple[int, ...]
    num_constant_attributes: int = 0
    forbidden_combinations: tuple[tuple[tuple[int, int], ...], ...] = ()

    def __init__(
        self,
        num_choice_sets: int,
        profiles_per_set: int,
        attribute_levels: Sequence[int],
        num_constant_attributes: int = 0,
        forbidden_combinations: Iterable[Mapping[int, int] | Iterable[tuple[int, int]]] = (),
    ):
        combos = []
        for combo in forbidden_combinations:
            items = combo.items() if isinstance(combo, Mapping) else combo
            combos.append(tuple(sorted((int(a), int(lv)) for a, lv in items)))
        object.__setattr__(self, "num_choice_sets", int(num_choice_sets))
        object.__setattr__(self, "profiles_per_set", int(profiles_per_set))
        object.__setattr__(self, "attribute_levels", tuple(int(d) for d in attribute_levels))
        object.__setattr__(self, "num_constant_attributes", int(num_constant_attributes))
        object.__setattr__(self, "forbidden_combinations", tuple(combos))
        self._check()

    def _check(self) -> None:
        if self.num_choice_sets < 1:
            raise InvalidInputError("num_choice_sets must be positive")
        if self.profiles_per_set < 2:
            raise InvalidInputError("profiles_per_set must be at least 2")
        if not self.attribute_levels or min(self.attribute_levels) < 2:
            raise InvalidInputError("every attribute needs at least 2 levels")
        if not 0 <= self.num_constant_attributes < self.num_attributes:
            raise InvalidInputError(
                "num_constant_attributes must satisfy 0 <= F < K "
                f"(got F={self.num_constant_attributes}, K={self.num_attributes})"
            )
        for combo in self.forbidden_combinations:
            if len(combo) < 2:
                raise InvalidInputError(f"forbidden combination {combo} needs at least 2 attributes")
            attrs = [a for a, _ in combo]
            if len(set(attrs)) != len(attrs):
                raise InvalidInputError(f"forbidden combination {combo} repeats an attribute")
            for a, lv in combo:
                if not 0 <= a < self.num_attributes:
                    raise InvalidInputError(f"forbidden combination references attribute {a}")
                if not 1 <= lv <= self.attribute_levels[a]:
                    raise InvalidInputError(
                        f"forbidden combination uses level {lv} of attribute {a}"
                    )

    @property
    def num_attributes(self) -> int:
        return len(self.attribute_levels)

    @property
    def profile_strength(self) -> int:
        return self.num_attributes - self.num_constant_attributes

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.num_choice_sets, self.profiles_per_set, self.num_attributes)

    def forbidden_mask(self, profiles: np.ndarray) -> np.ndarray:
        """Boolean mask over the leading axes of ``profiles`` (..., K)."""
        out = np.zeros(profiles.shape[:-1], dtype=bool)
        for combo in self.forbidden_combinations:
            hit = np.ones(profiles.shape[:-1], dtype=bool)
            for a, lv in combo:
                hit &= profiles[..., a] == lv
            out |= hit
        return out


def constant_mask(levels: np.ndarray) -> np.ndarray:
    """(S, K) mask of attributes taking one level across each set's profiles."""
    return np.all(levels == levels[:, :1, :], axis=1)


def set_is_valid(set_levels: np.ndarray, space: DesignSpace) -> bool:
    """Check one (J, K) choice set against every Design invariant."""
    const = np.all(set_levels == set_levels[:1], axis=0)
    if int(const.sum()) != space.num_constant_attributes:
        return False
    if space.forbidden_combinations and space.forbidden_mask(set_levels).any():
        return False
    J = set_levels.shape[0]
    for a in range(J - 1):
        for b in range(a + 1, J):
            if np.array_equal(set_levels[a], set_levels[b]):
                return False
    return True


@dataclass(frozen=True)
class Design:
    """An S x J x K array of 1-based attribute levels."""

    levels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.levels, dtype=np.int64, copy=True)
        if arr.ndim != 3:
            raise InvalidInputError("design levels must be a 3-d array (S, J, K)")
        arr.setflags(write=False)
        object.__setattr__(self, "levels", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.levels.shape)

    def constant_mask(self) -> np.ndarray:
        return constant_mask(self.levels)

    def copy_levels(self) -> np.ndarray:
        return self.levels.copy()

    def __eq__(self, other):
        return isinstance(other, Design) and np.array_equal(self.levels, other.levels)

    def __hash__(self):
        return hash(self.levels.tobytes())


@dataclass(frozen=True)
class ModelSpec:
    """Effects-coded main effects for all attributes plus listed two-way interactions.

    Columns: main effects by attribute then level, followed by one block per
    interaction pair in declared order, each block the row-major outer product
    of the two coded main-effect blocks.
    """

    attribute_levels: tuple[int, ...]
    interactions: tuple[tuple[int, int], ...] = ()

    def __init__(self, attribute_levels: Sequence[int], interactions: Iterable[Sequence[int]] = ()):
        levels = tuple(int(d) for d in attribute_levels)
        pairs = []
        for pair in interactions:
            a, b = (int(x) for x in pair)
            if a == b:
                raise InvalidInputError(f"self-interaction ({a}, {b})")
            if not (0 <= a < len(levels) and 0 <= b < len(levels)):
                raise InvalidInputError(f"interaction ({a}, {b}) references an unknown attribute")
            key = (min(a, b), max(a, b))
            if key in {(min(p), max(p)) for p in pairs}:
                raise InvalidInputError(f"duplicate interaction ({a}, {b})")
            pairs.append((a, b))
        if not levels or min(levels) < 2:
            raise InvalidInputError("every attribute needs at least 2 levels")
        object.__setattr__(self, "attribute_levels", levels)
        object.__setattr__(self, "interactions", tuple(pairs))

    @classmethod
    def for_space(cls, space: DesignSpace, interactions: Iterable[Sequence[int]] = ()) -> "ModelSpec":
        return cls(space.attribute_levels, interactions)

    @property
    def num_main(self) -> int:
        return sum(d - 1 for d in self.attribute_levels)

    @property
    def num_params(self) -> int:
        d = self.attribute_levels
        return self.num_main + sum((d[a] - 1) * (d[b] - 1) for a, b in self.interactions)

    def main_slices(self) -> list[slice]:
        out, start = [], 0
        for d in self.attribute_levels:
            out.append(slice(start, start + d - 1))
            start += d - 1
        return out

    def interacting_attributes(self) -> set[int]:
        return {a for pair in self.interactions for a in pair}

    def partners(self, attribute: int) -> set[int]:
        out = set()
        for a, b in self.interactions:
            if a == attribute:
                out.add(b)
            elif b == attribute:
                out.add(a)
        return out

    def column_names(self) -> list[str]:
        names = []
        for i, d in enumerate(self.attribute_levels):
            names += [f"x{i + 1}.{k + 1}" for k in range(d - 1)]
        for a, b in self.interactions:
            for ka in range(self.attribute_levels[a] - 1):
                for kb in range(self.attribute_levels[b] - 1):
                    names.append(f"x{a + 1}.{ka + 1}:x{b + 1}.{kb + 1}")
        return names


@dataclass(frozen=True)
class PriorSpec:
    """Multivariate normal prior with an optional frozen sample of draws."""

    mean: np.ndarray
    covariance: np.ndarray
    draws: np.ndarray | None = field(default=None, compare=False)
    seed: int | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        m = mean.size
        if cov.shape != (m, m):
            raise InvalidPriorError(f"covariance shape {cov.shape} does not match mean length {m}")
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise InvalidPriorError("covariance is not symmetric")
        if m and np.linalg.eigvalsh(cov).min() < -1e-10:
            raise InvalidPriorError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        if self.draws is not None:
            draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
            if draws.shape[1] != m:
                raise InvalidPriorError("draws have the wrong dimension")
            object.__setattr__(self, "draws", draws)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def block_diagonal(cls, *parts: "PriorSpec") -> "PriorSpec":
        from scipy.linalg import block_diag

        return cls(np.concatenate([p.mean for p in parts]), block_diag(*[p.covariance for p in parts]))


def effects_code(level: int, num_levels: int) -> np.ndarray:
    """Effects-type code of a 1-based ``level`` of a ``num_levels``-level attribute.

    >>> effects_code(3, 3)
    array([-1., -1.])
    """
    if num_levels < 2:
        raise InvalidInputError("an attribute needs at least 2 levels")
    if not 1 <= level <= num_levels:
        raise InvalidInputError(f"level {level} outside 1..{num_levels}")
    if level == num_levels:
        return -np.ones(num_levels - 1)
    out = np.zeros(num_levels - 1)
    out[level - 1] = 1.0
    return out


def coding_table(num_levels: int) -> np.ndarray:
    """Row ``l`` holds the code of level ``l``; row 0 is unused padding."""
    table = np.zeros((num_levels + 1, num_levels - 1))
    for lv in range(1, num_levels + 1):
        table[lv] = effects_code(lv, num_levels)
    return table


class Coder:
    """Vectorised model-matrix builder for one ModelSpec."""

    def __init__(self, model: ModelSpec):
        self.model = model
        self.tables = [coding_table(d) for d in model.attribute_levels]
        self.num_params = model.num_params

    def __call__(self, profiles: np.ndarray) -> np.ndarray:
        """Map (..., K) level arrays to (..., m) coded rows."""
        profiles = np.asarray(profiles)
        blocks = [table[profiles[..., i]] for i, table in enumerate(self.tables)]
        cols = list(blocks)
        for a, b in self.model.interactions:
            prod = blocks[a][..., :, None] * blocks[b][..., None, :]
            cols.append(prod.reshape(prod.shape[:-2] + (-1,)))
        return np.concatenate(cols, axis=-1)


def model_matrix(design: Design, model: ModelSpec, space: DesignSpace | None = None) -> np.ndarray:
    """(S*J, m) effects-coded model matrix, rows ordered set-major."""
    levels = design.levels if isinstance(design, Design) else np.asarray(design)
    if space is not None:
        if tuple(levels.shape) != space.shape:
            raise InvalidInputError(f"design shape {levels.shape} does not match space {space.shape}")
        if space.attribute_levels != model.attribute_levels:
            raise InvalidInputError("model and space disagree on attribute levels")
    if levels.shape[-1] != len(model.attribute_levels):
        raise InvalidInputError("design and model disagree on the number of attributes")
    X = Coder(model)(levels)
    return X.reshape(-1, model.num_params)


@dataclass(frozen=True)
class Violation:
    kind: str  # "profile_strength" | "duplicate_profile" | "forbidden" | "level_range"
    choice_set: int
    detail: str

    def __str__(self):
        return f"set {self.choice_set + 1}: {self.kind}: {self.detail}"


def validate_design(design: Design, space: DesignSpace) -> list[Violation]:
    """Every violated Design invariant; an empty list means the design is valid."""
    levels = design.levels if isinstance(design, Design) else np.asarray(design)
    if tuple(levels.shape) != space.shape:
        raise InvalidInputError(f"design shape {levels.shape} does not match space {space.shape}")
    report: list[Violation] = []
    d = np.asarray(space.attribute_levels)
    bad = (levels < 1) | (levels > d)
    for s in np.flatnonzero(bad.any(axis=(1, 2))):
        report.append(Violation("level_range", int(s), "level outside attribute range"))
    const = constant_mask(levels)
    F = space.num_constant_attributes
    for s in range(space.num_choice_sets):
        n_const = int(const[s].sum())
        if n_const != F:
            attrs = ", ".join(str(a + 1) for a in np.flatnonzero(const[s]))
            report.append(
                Violation("profile_strength", s, f"{n_const} constant attributes ({attrs}), expected {F}")
            )
        J = space.profiles_per_set
        for a in range(J - 1):
            for b in range(a + 1, J):
                if np.array_equal(levels[s, a], levels[s, b]):
                    report.append(Violation("duplicate_profile", s, f"profiles {a + 1} and {b + 1} are identical"))
        if space.forbidden_combinations:
            for j in np.flatnonzero(space.forbidden_mask(levels[s])):
                report.append(Violation("forbidden", s, f"profile {j + 1} contains a forbidden combination"))
    return report


def _random_set(space: DesignSpace, rng: np.random.Generator) -> np.ndarray:
    J, K, F = space.profiles_per_set, space.num_attributes, space.num_constant_attributes
    d = np.asarray(space.attribute_levels)
    for _ in range(MAX_SET_RESAMPLES):
        const = rng.choice(K, size=F, replace=False)
        out = rng.integers(1, d + 1, size=(J, K))
        out[:, const] = rng.integers(1, d[const] + 1)
        if set_is_valid(out, space):
            return out
    raise InfeasibleSpaceError(
        f"no valid choice set found after {MAX_SET_RESAMPLES} resamples; "
        "check forbidden_combinations and profile strength"
    )


def random_design(space: DesignSpace, seed: int | np.random.Generator | None = None) -> Design:
    """Uniform random partial profile design, resampled set by set until valid."""
    rng = np.random.default_rng(seed)
    return Design(np.stack([_random_set(space, rng) for _ in range(space.num_choice_sets)]))

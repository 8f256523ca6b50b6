"""
Resolution grids and coarsening operators.

A coarsening operator maps a design at a fine resolution to a coarser one by
aggregating groups of columns. It is stored in assignment form: for every fine
column we keep the index of the coarse column it belongs to and the weight it
carries (1 for sum mode, 1/blocksize for average mode). The dense matrix ``L``
has shape ``(fine, coarse)`` so that ``X_fine @ L == X_coarse``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import IncompleteChainError, InvalidDimensionError

__all__ = [
    "ResolutionGrid",
    "CoarseningOperator",
    "MultiscaleDesign",
    "ScaleContribution",
    "build_dyadic_operator",
    "downsample",
    "accumulate",
]

MODES = ("sum", "average")


@dataclass(frozen=True)
class ResolutionGrid:
    level: int
    size: int

    def __post_init__(self):
        if self.level < 1 or self.size < 1:
            raise InvalidDimensionError(
                f"grid level and size must be >= 1 (got {self.level}, {self.size})")


@dataclass(frozen=True, eq=False)
class CoarseningOperator:
    """Column-aggregation operator from ``n_fine`` to ``n_coarse`` columns.

    Parameters
    ----------
    assignment : array of int, shape (n_fine,)
        Coarse column index of every fine column.
    n_coarse : int
        Number of coarse columns. Every coarse column must receive at least
        one fine column.
    weights : array of float, shape (n_fine,), optional
        Nonzero entry of each row of the dense matrix. Derived from ``mode``
        when omitted.
    mode : {"sum", "average"}
    """

    assignment: np.ndarray
    n_coarse: int
    weights: np.ndarray | None = None
    mode: str = "sum"

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.intp)
        if a.ndim != 1 or a.size == 0:
            raise InvalidDimensionError("assignment must be a non-empty 1D array")
        if self.n_coarse < 1 or a.min() < 0 or a.max() >= self.n_coarse:
            raise InvalidDimensionError(
                f"assignment entries must lie in [0, {self.n_coarse})")
        counts = np.bincount(a, minlength=self.n_coarse)
        if np.any(counts == 0):
            raise InvalidDimensionError("every coarse column needs at least one fine column")
        if self.mode not in MODES:
            raise InvalidDimensionError(f"unknown coarsening mode {self.mode!r}")
        if self.weights is None:
            w = np.ones(a.size) if self.mode == "sum" else 1.0 / counts[a]
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != a.shape:
                raise InvalidDimensionError("weights must match assignment length")
        a.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "weights", w)

    @property
    def n_fine(self) -> int:
        return self.assignment.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_fine, self.n_coarse)

    def block_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_coarse)

    def groups(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == g) for g in range(self.n_coarse)]

    def to_dense(self) -> np.ndarray:
        L = np.zeros(self.shape)
        L[np.arange(self.n_fine), self.assignment] = self.weights
        return L

    def lift(self, theta) -> np.ndarray:
        """Map a coarse coefficient vector to the fine grid, ``L @ theta``."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.n_coarse:
            raise InvalidDimensionError(
                f"expected {self.n_coarse} coarse coefficients, got {theta.shape[-1]}")
        return theta[..., self.assignment] * self.weights

    def then(self, coarser: "CoarseningOperator") -> "CoarseningOperator":
        """Compose with an operator that coarsens this one's output further.

        The dense result equals ``self.to_dense() @ coarser.to_dense()``.
        """
        if coarser.n_fine != self.n_coarse:
            raise InvalidDimensionError(
                f"cannot chain {self.shape} with {coarser.shape}")
        a = coarser.assignment[self.assignment]
        w = self.weights * coarser.weights[self.assignment]
        # weights are explicit, so a mixed chain is labelled by its first step
        return CoarseningOperator(a, coarser.n_coarse, weights=w, mode=self.mode)

    @classmethod
    def identity(cls, size: int, mode: str = "sum") -> "CoarseningOperator":
        return cls(np.arange(size), size, mode=mode)


def build_dyadic_operator(fine_size: int, coarse_size: int, mode: str = "sum") -> CoarseningOperator:
    """Split ``fine_size`` columns into ``coarse_size`` contiguous blocks.

    Block sizes differ by at most one, larger blocks first.

    >>> build_dyadic_operator(5, 2).block_sizes().tolist()
    [3, 2]
    """
    if not 1 <= coarse_size <= fine_size:
        raise InvalidDimensionError(
            f"need 1 <= coarse_size <= fine_size (got {coarse_size}, {fine_size})")
    base, extra = divmod(fine_size, coarse_size)
    sizes = np.full(coarse_size, base)
    sizes[:extra] += 1
    return CoarseningOperator(np.repeat(np.arange(coarse_size), sizes), coarse_size, mode=mode)


def downsample(X, L: CoarseningOperator) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != L.n_fine:
        raise InvalidDimensionError(
            f"design has {X.shape[1]} columns, operator expects {L.n_fine}")
    return X @ L.to_dense()


@dataclass(frozen=True)
class ScaleContribution:
    level: int
    theta: np.ndarray


@dataclass(frozen=True, eq=False)
class MultiscaleDesign:
    """Finest-scale design plus the chain of coarsening operators.

    ``operators[j-1]`` is ``L_j``, mapping resolution ``j+1`` to ``j`` (levels
    are 1-based, level ``K`` is the finest). Coarse designs are built once at
    construction.
    """

    X_fine: np.ndarray
    operators: tuple[CoarseningOperator, ...] = ()
    _designs: tuple[np.ndarray, ...] = field(default=(), repr=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X_fine, dtype=float))
        ops = tuple(self.operators)
        width = X.shape[1]
        for L in reversed(ops):
            if L.n_fine != width:
                raise InvalidDimensionError("operator chain does not match design width")
            width = L.n_coarse
        designs = [X]
        for L in reversed(ops):
            designs.append(downsample(designs[-1], L))
        designs.reverse()
        for d in designs:
            d.setflags(write=False)
        object.__setattr__(self, "X_fine", designs[-1])
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "_designs", tuple(designs))

    @classmethod
    def from_sizes(cls, X, sizes: Sequence[int], mode: str = "sum") -> "MultiscaleDesign":
        """Build a design from increasing block counts, e.g. ``sizes=[1, 2, 4]``.

        The last entry must equal the column count of ``X``.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        sizes = [int(s) for s in sizes]
        if sizes[-1] != X.shape[1]:
            raise InvalidDimensionError("last resolution must equal the design width")
        if any(a > b for a, b in zip(sizes, sizes[1:])):
            raise InvalidDimensionError("resolution sizes must be non-decreasing")
        ops = [build_dyadic_operator(f, c, mode) for c, f in zip(sizes, sizes[1:])]
        return cls(X, tuple(ops))

    @property
    def n_levels(self) -> int:
        return len(self._designs)

    @property
    def n(self) -> int:
        return self.X_fine.shape[0]

    @property
    def grids(self) -> list[ResolutionGrid]:
        return [ResolutionGrid(j + 1, d.shape[1]) for j, d in enumerate(self._designs)]

    def X(self, level: int) -> np.ndarray:
        self._check_level(level)
        return self._designs[level - 1]

    def operator_between(self, coarse: int, fine: int) -> CoarseningOperator:
        """Composite operator taking resolution ``fine`` down to ``coarse``."""
        self._check_level(coarse)
        self._check_level(fine)
        if coarse > fine:
            raise InvalidDimensionError("coarse level must not exceed fine level")
        op = CoarseningOperator.identity(self._designs[fine - 1].shape[1])
        for j in range(fine - 1, coarse - 1, -1):
            op = op.then(self.operators[j - 1])
        return op

    def composite(self, level: int) -> CoarseningOperator:
        """Operator from the finest resolution to ``level``, ``X_K @ Lc == X_level``."""
        return self.operator_between(level, self.n_levels)

    def _check_level(self, level):
        if not 1 <= level <= self.n_levels:
            raise InvalidDimensionError(f"level {level} outside 1..{self.n_levels}")


def accumulate(contributions, design: MultiscaleDesign, up_to: int) -> np.ndarray:
    """Sum per-scale contributions lifted to resolution ``up_to``.

    ``contributions`` is a sequence of :class:`ScaleContribution` (or plain
    vectors, taken as levels 1, 2, ...). Levels above ``up_to`` are ignored.
    """
    by_level = {}
    for i, c in enumerate(contributions):
        if isinstance(c, ScaleContribution):
            by_level[c.level] = np.asarray(c.theta, dtype=float)
        else:
            by_level[i + 1] = np.asarray(c, dtype=float)
    missing = [h for h in range(1, up_to + 1) if h not in by_level]
    if missing:
        raise IncompleteChainError(f"missing contributions for levels {missing}")
    total = np.zeros(design.X(up_to).shape[1])
    for h in range(1, up_to + 1):
        total += design.operator_between(h, up_to).lift(by_level[h])
    return total

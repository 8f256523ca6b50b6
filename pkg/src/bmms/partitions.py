"""
Step-function modules whose coarsening is itself unknown.

A changepoint partition cuts ``1..p`` into ``H`` contiguous pieces; a Voronoi
partition assigns each pixel of an image grid to its nearest center. Either
one induces a sum-mode :class:`~bmms.multiscale.CoarseningOperator`, so the
module design is ``X @ L`` and the coefficient image is ``L @ levels``.

Level values and the noise variance are conjugate and are integrated out when
moving the partition, which is sampled by Metropolis-Hastings with symmetric
local proposals (invalid proposals are rejected, never clamped).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conjugate import GaussianPrior, NoisePrior, log_marginal_likelihood, module_posterior
from .errors import InvalidConfigError, InvalidPartitionError
from .multiscale import CoarseningOperator

__all__ = [
    "ChangepointPartition",
    "VoronoiPartition",
    "PartitionModuleConfig",
    "partition_to_operator",
    "partition_log_marginal",
    "mh_step_splits",
    "mh_step_centers",
    "sample_levels_given_partition",
    "MarginalCache",
]


@dataclass(frozen=True)
class ChangepointPartition:
    """``splits[h]`` is the number of columns covered by pieces ``0..h``.

    With ``p=8`` and ``splits=(4,)`` the pieces are columns ``0-3`` and ``4-7``.
    """

    p: int
    splits: tuple[int, ...] = ()

    def __post_init__(self):
        s = tuple(int(t) for t in self.splits)
        object.__setattr__(self, "splits", s)
        edges = (0,) + s + (self.p,)
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise InvalidPartitionError(f"splits {s} do not give non-empty pieces of 1..{self.p}")

    @property
    def n_pieces(self) -> int:
        return len(self.splits) + 1

    def assignment(self) -> np.ndarray:
        return np.searchsorted(np.asarray(self.splits, dtype=np.intp),
                               np.arange(self.p), side="right")

    def segment_lengths(self) -> np.ndarray:
        return np.diff((0,) + self.splits + (self.p,))

    @classmethod
    def even(cls, p: int, n_pieces: int) -> "ChangepointPartition":
        if not 1 <= n_pieces <= p:
            raise InvalidPartitionError(f"cannot cut {p} columns into {n_pieces} pieces")
        edges = np.round(np.linspace(0, p, n_pieces + 1)).astype(int)
        return cls(p, tuple(edges[1:-1]))


@dataclass(frozen=True)
class VoronoiPartition:
    """Nearest-center cells on a ``shape = (height, width)`` pixel grid.

    Pixels are flattened row-major; distance ties go to the lowest center index.
    """

    shape: tuple[int, int]
    centers: tuple[tuple[int, int], ...]

    def __post_init__(self):
        c = tuple((int(r), int(q)) for r, q in self.centers)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "shape", (int(self.shape[0]), int(self.shape[1])))
        if not c:
            raise InvalidPartitionError("need at least one center")
        if len(set(c)) != len(c):
            raise InvalidPartitionError("centers must be distinct")
        h, w = self.shape
        if any(not (0 <= r < h and 0 <= q < w) for r, q in c):
            raise InvalidPartitionError("center outside the grid")

    @property
    def n_pieces(self) -> int:
        return len(self.centers)

    def assignment(self) -> np.ndarray:
        h, w = self.shape
        rows, cols = np.divmod(np.arange(h * w), w)
        cen = np.asarray(self.centers)
        d2 = (rows[:, None] - cen[:, 0]) ** 2 + (cols[:, None] - cen[:, 1]) ** 2
        return np.argmin(d2, axis=1)


@dataclass(frozen=True)
class PartitionModuleConfig:
    n_pieces: tuple[int, ...]
    width: int = 3
    min_segment: int = 1

    def __post_init__(self):
        if any(b < a for a, b in zip(self.n_pieces, self.n_pieces[1:])):
            raise InvalidConfigError("piece counts must be non-decreasing coarse to fine")
        if self.width < 1 or self.min_segment < 1:
            raise InvalidConfigError("width and min_segment must be >= 1")


def partition_to_operator(partition) -> CoarseningOperator:
    a = partition.assignment()
    counts = np.bincount(a, minlength=partition.n_pieces)
    if np.any(counts == 0):
        raise InvalidPartitionError("partition has an empty cell")
    return CoarseningOperator(a, partition.n_pieces, mode="sum")


def _group_design(X, partition):
    if isinstance(partition, ChangepointPartition):
        edges = (0,) + partition.splits + (partition.p,)
        return np.column_stack([X[:, a:b].sum(axis=1) for a, b in zip(edges, edges[1:])])
    a = partition.assignment()
    Z = np.zeros((X.shape[0], partition.n_pieces))
    for g in range(partition.n_pieces):
        cols = a == g
        if not cols.any():
            raise InvalidPartitionError("partition has an empty cell")
        Z[:, g] = X[:, cols].sum(axis=1)
    return Z


def partition_log_marginal(X, residual, partition, prior: GaussianPrior | None = None,
                           noise: NoisePrior | None = None) -> float:
    """Log evidence of ``residual`` under the step design ``X @ L(partition)``."""
    prior = prior or GaussianPrior.unit_info()
    Z = _group_design(np.asarray(X, dtype=float), partition)
    post = module_posterior(Z, residual, prior, noise)
    return log_marginal_likelihood(post, Z.shape[0], noise)


class MarginalCache:
    """Memoised log marginals for one residual vector.

    MH moves revisit a handful of partitions many times while the residual is
    fixed; the cache must be rebuilt whenever the residual changes.
    """

    def __init__(self, X, residual, prior=None, noise=None):
        self.X = np.asarray(X, dtype=float)
        self.residual = np.asarray(residual, dtype=float)
        self.prior = prior or GaussianPrior.unit_info()
        self.noise = noise
        self._store = {}

    def __call__(self, partition) -> float:
        key = partition.splits if isinstance(partition, ChangepointPartition) else partition.centers
        if key not in self._store:
            self._store[key] = partition_log_marginal(
                self.X, self.residual, partition, self.prior, self.noise)
        return self._store[key]


def _accept(log_ratio, rng) -> bool:
    return log_ratio >= 0 or np.log(rng.random()) < log_ratio


def mh_step_splits(state: ChangepointPartition, X, residual, rng, width=3, min_segment=1,
                   prior=None, noise=None, log_marginal=None) -> ChangepointPartition:
    """One Metropolis-Hastings move of a single split location.

    A split is picked uniformly and shifted by a nonzero integer in
    ``[-width, width]``. Proposals that break ordering or leave a piece shorter
    than ``min_segment`` are rejected.
    """
    if state.n_pieces == 1:
        return state
    if log_marginal is None:
        log_marginal = MarginalCache(X, residual, prior, noise)
    h = rng.integers(state.n_pieces - 1)
    step = rng.integers(1, width + 1) * (1 if rng.random() < 0.5 else -1)
    splits = list(state.splits)
    splits[h] += step
    edges = [0] + splits + [state.p]
    if any(b - a < min_segment for a, b in zip(edges, edges[1:])):
        return state
    proposal = ChangepointPartition(state.p, tuple(splits))
    if _accept(log_marginal(proposal) - log_marginal(state), rng):
        return proposal
    return state


def mh_step_centers(state: VoronoiPartition, X, residual, rng, width=2,
                    prior=None, noise=None, log_marginal=None) -> VoronoiPartition:
    """One Metropolis-Hastings move of a single Voronoi center inside a
    ``(2*width+1)^2`` window. Off-grid, duplicate or empty-cell proposals are
    rejected."""
    if log_marginal is None:
        log_marginal = MarginalCache(X, residual, prior, noise)
    k = rng.integers(state.n_pieces)
    while True:
        dr, dc = rng.integers(-width, width + 1, size=2)
        if dr or dc:
            break
    r, c = state.centers[k]
    r, c = r + int(dr), c + int(dc)
    h, w = state.shape
    if not (0 <= r < h and 0 <= c < w) or (r, c) in state.centers:
        return state
    centers = list(state.centers)
    centers[k] = (r, c)
    proposal = VoronoiPartition(state.shape, tuple(centers))
    if len(np.unique(proposal.assignment())) < proposal.n_pieces:
        return state
    if _accept(log_marginal(proposal) - log_marginal(state), rng):
        return proposal
    return state


def sample_levels_given_partition(X, residual, partition, rng, prior=None, noise=None,
                                  sigma2=None):
    """Conjugate draw of the piece levels and the noise variance.

    Returns ``(levels, sigma2, posterior)``; a supplied ``sigma2`` is kept fixed.
    """
    prior = prior or GaussianPrior.unit_info()
    Z = _group_design(np.asarray(X, dtype=float), partition)
    post = module_posterior(Z, residual, prior, noise)
    levels, s2 = post.draw(rng, sigma2)
    return levels, s2, post

"""
Sequential sampling from the modular posterior.

Each sweep visits the modules coarse to fine. Module ``j`` regresses the
running residual ``e_{j-1} = y - sum_{h<j} X_h theta_h`` on its own design and
then subtracts its fitted values. Every module owns an independent random
stream, so a module's draws never depend on anything finer than itself.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import truncnorm

from .conjugate import GaussianPrior, NoisePrior, module_posterior
from .errors import InvalidConfigError, InvalidDimensionError, InvalidInputError
from .multiscale import CoarseningOperator, MultiscaleDesign
from .partitions import (
    ChangepointPartition,
    MarginalCache,
    VoronoiPartition,
    mh_step_centers,
    mh_step_splits,
    partition_to_operator,
    sample_levels_given_partition,
)

__all__ = [
    "ModuleSpec",
    "ModularChain",
    "ProbitState",
    "PosteriorSummary",
    "ModularSampler",
    "run_modular_sampler",
    "run_probit_sampler",
    "run_chains",
    "merge_chains",
    "posterior_summaries",
    "conjugate_means",
    "sample_latent_utilities",
    "effective_sample_size",
    "split_rhat",
]

KINDS = ("conjugate", "changepoint", "voronoi")
DEFAULT_WIDTH = {"changepoint": 3, "voronoi": 2}


@dataclass(frozen=True)
class ModuleSpec:
    """Configuration of one module.

    ``n_pieces`` is the number of pieces ``H`` (changepoint) or of centers
    (voronoi). ``sigma2`` fixes the noise variance instead of sampling it.
    ``grid_shape`` is required for voronoi modules.
    """

    kind: str
    level: int
    prior: GaussianPrior = field(default_factory=GaussianPrior.unit_info)
    noise: NoisePrior = field(default_factory=NoisePrior)
    sigma2: float | None = None
    n_pieces: int = 1
    width: int | None = None
    min_segment: int = 1
    grid_shape: tuple[int, int] | None = None
    n_inner: int = 10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfigError(f"unknown module kind {self.kind!r}")
        if self.sigma2 is not None and self.sigma2 <= 0:
            raise InvalidConfigError("fixed sigma2 must be positive")
        if self.kind == "voronoi" and self.grid_shape is None:
            raise InvalidConfigError("voronoi modules need grid_shape")


@dataclass
class ModularChain:
    """Stored draws, one entry per retained sweep.

    ``theta[j]`` holds the raw level-``j`` coefficients; ``lifted[j]`` the same
    contribution stretched to the finest grid; ``cond_mean[j]`` the lifted
    conditional posterior mean of that draw (for Rao-Blackwellised means).
    """

    specs: tuple[ModuleSpec, ...]
    theta: list[np.ndarray]
    lifted: list[np.ndarray]
    cond_mean: list[np.ndarray]
    sigma2: np.ndarray
    partitions: list[np.ndarray | None]
    latent: np.ndarray | None = None
    seed: object = None
    burn_in: int = 0
    thin: int = 1

    @property
    def n_draws(self) -> int:
        return self.sigma2.shape[0]

    @property
    def n_levels(self) -> int:
        return len(self.specs)

    def total(self, up_to: int | None = None) -> np.ndarray:
        """Draws of the accumulated finest-grid coefficient up to a level."""
        up_to = up_to or self.n_levels
        return np.sum(self.lifted[:up_to], axis=0)


@dataclass
class ProbitState:
    Z: np.ndarray
    y: np.ndarray

    def is_consistent(self) -> bool:
        return bool(np.all((self.Z > 0) == (self.y == 1)))


@dataclass
class _ModuleDraw:
    theta: np.ndarray
    sigma2: float
    fitted: np.ndarray
    operator: CoarseningOperator
    cond_mean: np.ndarray
    partition: object = None


class _ConjugateModule:
    def __init__(self, spec, design, rng):
        self.spec, self.rng = spec, rng
        self.X = design.X(spec.level)
        self.op = design.composite(spec.level)

    def draw(self, residual):
        post = module_posterior(self.X, residual, self.spec.prior, self.spec.noise)
        theta, s2 = post.draw(self.rng, self.spec.sigma2)
        return _ModuleDraw(theta, s2, self.X @ theta, self.op, post.mean)


class _PartitionModule:
    def __init__(self, spec, design, rng):
        self.spec, self.rng = spec, rng
        self.X = design.X_fine
        p = self.X.shape[1]
        self.width = spec.width or DEFAULT_WIDTH[spec.kind]
        self._cache = None
        if spec.kind == "changepoint":
            self.state = ChangepointPartition.even(p, spec.n_pieces)
        else:
            h, w = spec.grid_shape
            if h * w != p:
                raise InvalidDimensionError(f"grid {spec.grid_shape} does not cover {p} columns")
            if not 1 <= spec.n_pieces <= p:
                raise InvalidConfigError("number of centers must lie in 1..pixels")
            pix = np.sort(rng.choice(p, size=spec.n_pieces, replace=False))
            self.state = VoronoiPartition((h, w), tuple(zip(*np.divmod(pix, w))))

    def draw(self, residual):
        spec = self.spec
        # level 1 always sees the same response, so its marginals can be kept
        cache = self._cache
        if cache is None or not np.array_equal(cache.residual, residual):
            cache = self._cache = MarginalCache(self.X, residual, spec.prior, spec.noise)
        for _ in range(spec.n_inner):
            if spec.kind == "changepoint":
                self.state = mh_step_splits(self.state, self.X, residual, self.rng, self.width,
                                            spec.min_segment, log_marginal=cache)
            else:
                self.state = mh_step_centers(self.state, self.X, residual, self.rng,
                                             self.width, log_marginal=cache)
        levels, s2, post = sample_levels_given_partition(
            self.X, residual, self.state, self.rng, spec.prior, spec.noise, spec.sigma2)
        op = partition_to_operator(self.state)
        fitted = self.X @ op.lift(levels)
        return _ModuleDraw(levels, s2, fitted, op, post.mean, self.state)


def _as_seed_sequence(seed):
    # fresh copy: spawn() mutates its receiver, which would break reruns
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    return np.random.SeedSequence(seed)


def _check_specs(specs):
    if not specs:
        raise InvalidConfigError("need at least one module")
    levels = [s.level for s in specs]
    if levels != list(range(1, len(specs) + 1)):
        raise InvalidConfigError(f"module levels must be 1..K in order, got {levels}")


class ModularSampler:
    """Holds module states and random streams for one chain."""

    def __init__(self, design: MultiscaleDesign, specs, seed=0):
        specs = tuple(specs)
        _check_specs(specs)
        self.design, self.specs = design, specs
        streams = _as_seed_sequence(seed).spawn(len(specs) + 1)
        self.latent_rng = np.random.default_rng(streams[-1])
        self.modules = []
        for spec, ss in zip(specs, streams):
            rng = np.random.default_rng(ss)
            if spec.kind == "conjugate":
                if spec.level > design.n_levels:
                    raise InvalidConfigError(
                        f"conjugate module at level {spec.level} but design has "
                        f"{design.n_levels} levels")
                self.modules.append(_ConjugateModule(spec, design, rng))
            else:
                self.modules.append(_PartitionModule(spec, design, rng))

    def sweep(self, response):
        """One pass over all modules. Returns ``(draws, residuals)`` where
        ``residuals[j]`` is the response seen by module ``j+1``."""
        e = np.asarray(response, dtype=float)
        draws, residuals = [], []
        for module in self.modules:
            residuals.append(e)
            d = module.draw(e)
            draws.append(d)
            e = e - d.fitted
        residuals.append(e)
        return draws, residuals


class _ChainRecorder:
    def __init__(self, specs):
        self.specs = specs
        self.rows = []
        self.latent = []

    def add(self, draws, latent=None):
        self.rows.append(draws)
        if latent is not None:
            self.latent.append(latent)

    def build(self, seed, burn_in, thin):
        K = len(self.specs)
        theta = [np.array([r[j].theta for r in self.rows]) for j in range(K)]
        lifted = [np.array([r[j].operator.lift(r[j].theta) for r in self.rows]) for j in range(K)]
        cond = [np.array([r[j].operator.lift(r[j].cond_mean) for r in self.rows]) for j in range(K)]
        sigma2 = np.array([[d.sigma2 for d in r] for r in self.rows]).reshape(len(self.rows), K)
        parts = []
        for j, spec in enumerate(self.specs):
            if spec.kind == "changepoint":
                parts.append(np.array([r[j].partition.splits for r in self.rows],
                                      dtype=int).reshape(len(self.rows), -1))
            elif spec.kind == "voronoi":
                parts.append(np.array([r[j].partition.centers for r in self.rows], dtype=int))
            else:
                parts.append(None)
        latent = np.array(self.latent) if self.latent else None
        return ModularChain(self.specs, theta, lifted, cond, sigma2, parts, latent,
                            seed, burn_in, thin)


def _check_run_args(design, y, T, burn_in, thin):
    y = np.asarray(y, dtype=float).ravel()
    if y.size != design.n:
        raise InvalidDimensionError(f"response has {y.size} entries, design {design.n} rows")
    if T < 1 or burn_in < 0 or thin < 1:
        raise InvalidConfigError("need T >= 1, burn_in >= 0, thin >= 1")
    return y


def run_modular_sampler(design: MultiscaleDesign, y, specs, T=5000, burn_in=1000, thin=1,
                        seed=0) -> ModularChain:
    """Draw from the modular posterior with ``burn_in + T`` sweeps, keeping every
    ``thin``-th post-burn-in sweep."""
    y = _check_run_args(design, y, T, burn_in, thin)
    sampler = ModularSampler(design, specs, seed)
    rec = _ChainRecorder(sampler.specs)
    for t in range(burn_in + T):
        draws, _ = sampler.sweep(y)
        if t >= burn_in and (t - burn_in) % thin == 0:
            rec.add(draws)
    return rec.build(seed, burn_in, thin)


def conjugate_means(design: MultiscaleDesign, y, specs) -> list[np.ndarray]:
    """Exact modular posterior means of all-conjugate modules.

    Each conditional mean is affine in the upstream coefficients, so the
    marginal means follow from one sequential pass on posterior means.
    Returned vectors are on each level's own grid.
    """
    specs = tuple(specs)
    _check_specs(specs)
    if any(s.kind != "conjugate" for s in specs):
        raise InvalidConfigError("closed-form means need conjugate modules only")
    e = np.asarray(y, dtype=float).ravel()
    means = []
    for s in specs:
        X = design.X(s.level)
        m = module_posterior(X, e, s.prior, s.noise).mean
        means.append(m)
        e = e - X @ m
    return means


def sample_latent_utilities(eta, y, rng) -> np.ndarray:
    """Latent ``Z ~ N(eta, 1)`` truncated to ``Z > 0`` where ``y == 1`` and
    ``Z < 0`` where ``y == 0``."""
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y)
    lower = np.where(y == 1, -eta, -np.inf)
    upper = np.where(y == 1, np.inf, -eta)
    return eta + truncnorm.rvs(lower, upper, random_state=rng)


def run_probit_sampler(design: MultiscaleDesign, y, specs, T=5000, burn_in=1000, thin=1,
                       seed=0) -> ModularChain:
    """Data-augmentation Gibbs sampler for the probit link.

    Alternates latent utilities given the current linear predictor with one
    modular sweep on the utilities. Noise variances are fixed at 1.
    """
    y = _check_run_args(design, y, T, burn_in, thin)
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("probit response must be 0/1")
    specs = tuple(replace(s, sigma2=1.0) for s in specs)
    sampler = ModularSampler(design, specs, seed)
    rec = _ChainRecorder(sampler.specs)
    eta = np.zeros(design.n)
    for t in range(burn_in + T):
        Z = sample_latent_utilities(eta, y, sampler.latent_rng)
        draws, residuals = sampler.sweep(Z)
        eta = Z - residuals[-1]
        if t >= burn_in and (t - burn_in) % thin == 0:
            rec.add(draws, Z)
    return rec.build(seed, burn_in, thin)


def _run_one(args):
    probit, design, y, specs, T, burn_in, thin, seed = args
    fn = run_probit_sampler if probit else run_modular_sampler
    return fn(design, y, specs, T, burn_in, thin, seed)


def run_chains(design, y, specs, n_chains=1, T=5000, burn_in=1000, thin=1, seed=0,
               probit=False, max_workers=None) -> list[ModularChain]:
    """Independent chains from spawned seeds; worker count defaults to
    ``$BMMS_THREADS`` (or 1)."""
    seeds = _as_seed_sequence(seed).spawn(n_chains)
    jobs = [(probit, design, y, tuple(specs), T, burn_in, thin, s) for s in seeds]
    if max_workers is None:
        max_workers = int(os.environ.get("BMMS_THREADS", "1"))
    max_workers = max(1, min(max_workers, n_chains))
    if max_workers == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_one, jobs))


def merge_chains(chains) -> ModularChain:
    first = chains[0]
    if len(chains) == 1:
        return first
    K = first.n_levels
    cat = np.concatenate

    def parts(j):
        if first.partitions[j] is None:
            return None
        return cat([c.partitions[j] for c in chains])

    return ModularChain(
        first.specs,
        [cat([c.theta[j] for c in chains]) for j in range(K)],
        [cat([c.lifted[j] for c in chains]) for j in range(K)],
        [cat([c.cond_mean[j] for c in chains]) for j in range(K)],
        cat([c.sigma2 for c in chains]),
        [parts(j) for j in range(K)],
        None if first.latent is None else cat([c.latent for c in chains]),
        first.seed, first.burn_in, first.thin,
    )


@dataclass
class PosteriorSummary:
    """Per-scale and accumulated summaries on the finest grid, shape ``(K, p)``.

    ``scale_*`` describe each scale's own contribution; ``total_*[j]`` the sum of
    contributions of levels ``1..j+1``.
    """

    alpha: float
    scale_mean: np.ndarray
    scale_rb_mean: np.ndarray
    scale_lower: np.ndarray
    scale_upper: np.ndarray
    total_mean: np.ndarray
    total_lower: np.ndarray
    total_upper: np.ndarray


def posterior_summaries(chain: ModularChain, design: MultiscaleDesign | None = None,
                        alpha=0.05) -> PosteriorSummary:
    """Means and equal-tailed ``1 - alpha`` intervals of every scale's lifted
    contribution and of the running totals. ``design`` is only used to check
    that the chain matches it."""
    if chain.n_draws == 0:
        raise InvalidInputError("chain has no draws")
    if design is not None and chain.lifted[0].shape[1] != design.X_fine.shape[1]:
        raise InvalidDimensionError("chain does not match the design width")
    if not 0 < alpha < 1:
        raise InvalidInputError("alpha must lie in (0, 1)")
    lifted = np.stack(chain.lifted)                  # (K, S, p)
    totals = np.cumsum(lifted, axis=0)
    lo, hi = alpha / 2, 1 - alpha / 2

    def q(a, level, method):
        return np.quantile(a, level, axis=1, method=method)

    return PosteriorSummary(
        alpha,
        lifted.mean(axis=1),
        np.stack(chain.cond_mean).mean(axis=1),
        q(lifted, lo, "lower"), q(lifted, hi, "higher"),
        totals.mean(axis=1),
        q(totals, lo, "lower"), q(totals, hi, "higher"),
    )


def effective_sample_size(x) -> float:
    """Autocorrelation-based ESS with Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return float(n)
    xc = x - x.mean()
    f = np.fft.rfft(xc, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * np.var(x))
    total = 0.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        total += pair
    tau = max(2 * total - 1, 1 / n)
    return float(n / tau)


def split_rhat(chains) -> float:
    """Split R-hat of a scalar quantity; ``chains`` has shape (m, n)."""
    c = np.atleast_2d(np.asarray(chains, dtype=float))
    half = c.shape[1] // 2
    if half < 2:
        raise InvalidInputError("need at least 4 draws per chain")
    parts = np.concatenate([c[:, :half], c[:, half:2 * half]])
    n = parts.shape[1]
    W = parts.var(axis=1, ddof=1).mean()
    B = n * parts.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))

"""
Closed-form posteriors for Gaussian linear modules.

A module regresses the running residual on its own design block with prior
``theta ~ N(m, sigma2 * M)`` and an inverse-gamma (or ``1/sigma2``) prior on the
noise variance. Priors are stored through the precision factor ``M^{-1}`` so
that a flat prior is simply a zero matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln
from scipy.stats import multivariate_normal, norm

from .errors import InvalidDimensionError, InvalidInputError, NumericalSingularityError

__all__ = [
    "GaussianPrior",
    "NoisePrior",
    "GaussianModulePosterior",
    "TwoScaleJoint",
    "cholesky_jitter",
    "module_posterior",
    "log_marginal_likelihood",
    "two_scale_joint",
    "prop1_density_identity_check",
]

JITTER_START = 1e-10
JITTER_TRIES = 3


def cholesky_jitter(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``A``, retrying with escalating diagonal jitter."""
    A = np.asarray(A, dtype=float)
    try:
        return linalg.cholesky(A, lower=True)
    except linalg.LinAlgError:
        pass
    p = A.shape[0]
    scale = np.trace(A) / p if p else 1.0
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    eps = JITTER_START * scale
    for _ in range(JITTER_TRIES):
        try:
            return linalg.cholesky(A + eps * np.eye(p), lower=True)
        except linalg.LinAlgError:
            eps *= 10
    raise NumericalSingularityError(f"matrix of size {p} is not positive definite")


@dataclass(frozen=True)
class GaussianPrior:
    """Prior ``theta ~ N(mean, sigma2 * M)``.

    ``precision`` holds ``M^{-1}``: ``None`` means flat, a scalar means
    ``precision * I``. With ``unit_information=True`` the precision is
    ``X'X / n`` for whatever design the module sees.
    """

    mean: np.ndarray | float = 0.0
    precision: np.ndarray | float | None = None
    unit_information: bool = False

    @classmethod
    def flat(cls, mean=0.0):
        return cls(mean=mean)

    @classmethod
    def unit_info(cls, mean=0.0):
        return cls(mean=mean, unit_information=True)

    @classmethod
    def from_scale(cls, mean, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls(mean=mean, precision=linalg.inv(M))

    @property
    def is_flat(self) -> bool:
        return self.precision is None and not self.unit_information

    def resolve(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(m, M^{-1})`` sized for design ``X``."""
        n, p = X.shape
        m = np.broadcast_to(np.asarray(self.mean, dtype=float), (p,)).copy()
        if self.unit_information:
            return m, X.T @ X / n
        if self.precision is None:
            return m, np.zeros((p, p))
        P = np.asarray(self.precision, dtype=float)
        if P.ndim == 0:
            return m, float(P) * np.eye(p)
        if P.shape != (p, p):
            raise InvalidDimensionError(f"prior precision must be {p}x{p}")
        return m, P


@dataclass(frozen=True)
class NoisePrior:
    """Inverse-gamma prior on a noise variance; ``shape=None`` is ``1/sigma2``."""

    shape: float | None = None
    rate: float | None = None

    def __post_init__(self):
        if (self.shape is None) != (self.rate is None):
            raise InvalidInputError("give both shape and rate, or neither")
        if self.shape is not None and (self.shape <= 0 or self.rate <= 0):
            raise InvalidInputError("inverse-gamma shape and rate must be positive")

    @classmethod
    def improper(cls):
        return cls()

    @property
    def is_improper(self) -> bool:
        return self.shape is None


@dataclass(frozen=True)
class GaussianModulePosterior:
    """Output of one module: ``theta | sigma2 ~ N(mean, sigma2 * cov)``,
    ``sigma2 ~ InvG(shape, rate)``."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    shape: float
    rate: float
    logdet_ratio: float

    def draw(self, rng, sigma2=None):
        """Draw ``(theta, sigma2)``; a given ``sigma2`` is held fixed."""
        if sigma2 is None:
            sigma2 = self.rate / rng.gamma(self.shape)
        z = rng.standard_normal(self.mean.size)
        return self.mean + np.sqrt(sigma2) * (self.chol @ z), sigma2


def module_posterior(X, residual, prior: GaussianPrior | None = None,
                     noise: NoisePrior | None = None) -> GaussianModulePosterior:
    """Conjugate update for ``residual = X theta + eps``.

    ``cov = (M^{-1} + X'X)^{-1}``, ``mean = cov (M^{-1} m + X' residual)``,
    noise shape ``a + n/2`` and rate ``b + S/2`` where
    ``S = |residual - X mean|^2 + (mean - m)' M^{-1} (mean - m)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.asarray(residual, dtype=float).ravel()
    if X.shape[0] != r.size:
        raise InvalidDimensionError(f"design has {X.shape[0]} rows, residual {r.size}")
    prior = prior or GaussianPrior.flat()
    noise = noise or NoisePrior.improper()
    m, P = prior.resolve(X)
    A = P + X.T @ X
    C = cholesky_jitter(A)
    mean = linalg.cho_solve((C, True), P @ m + X.T @ r)
    # chol of cov = A^{-1}: inverse transpose of the factor of A
    cov_chol = linalg.solve_triangular(C, np.eye(A.shape[0]), lower=True, trans="T")
    cov = cov_chol @ cov_chol.T
    fit = r - X @ mean
    d = mean - m
    S = fit @ fit + d @ P @ d
    n = r.size
    shape = n / 2 if noise.is_improper else noise.shape + n / 2
    rate = S / 2 if noise.is_improper else noise.rate + S / 2
    # log|cov| - log|M|, with log|M| dropped for flat priors
    logdet_A = 2 * np.sum(np.log(np.diag(C)))
    if prior.is_flat:
        logdet_ratio = -logdet_A
    else:
        logdet_ratio = np.linalg.slogdet(P)[1] - logdet_A
    return GaussianModulePosterior(mean, cov, cov_chol, shape, rate, logdet_ratio)


def log_marginal_likelihood(post: GaussianModulePosterior, n: int,
                            noise: NoisePrior | None = None) -> float:
    """Log evidence of the residual after integrating out theta and sigma2.

    Improper noise priors drop the ``b^a / Gamma(a)`` constant; flat
    coefficient priors drop ``-log|M|/2``. Both constants cancel when
    comparing models with the same number of coefficients.
    """
    noise = noise or NoisePrior.improper()
    out = -0.5 * n * np.log(2 * np.pi) + 0.5 * post.logdet_ratio
    out += gammaln(post.shape) - post.shape * np.log(post.rate)
    if not noise.is_improper:
        out += noise.shape * np.log(noise.rate) - gammaln(noise.shape)
    return float(out)


@dataclass(frozen=True)
class TwoScaleJoint:
    mean: np.ndarray
    cov: np.ndarray
    Q: np.ndarray
    p1: int

    @property
    def mean1(self):
        return self.mean[: self.p1]

    @property
    def mean2(self):
        return self.mean[self.p1:]


def two_scale_joint(X1, X2, y, priors=(None, None), sigma2=(1.0, 1.0)) -> TwoScaleJoint:
    """Closed-form modular posterior of ``(theta_1, theta_2)`` given both
    noise variances."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    s1, s2 = sigma2
    if s1 <= 0 or s2 <= 0:
        raise InvalidInputError("noise variances must be positive")
    post1 = module_posterior(X1, y, priors[0])
    post2 = module_posterior(X2, y, priors[1])
    Q = post2.cov @ X2.T @ X1
    mean = np.concatenate([post1.mean, post2.mean - Q @ post1.mean])
    S11 = s1 * post1.cov
    S21 = -Q @ S11
    S22 = s2 * post2.cov + Q @ S11 @ Q.T
    cov = np.block([[S11, S21.T], [S21, S22]])
    return TwoScaleJoint(mean, 0.5 * (cov + cov.T), Q, X1.shape[1])


def prop1_density_identity_check(x1, x2, y, prior_means=(0.0, 0.0), prior_vars=(1.0, 1.0),
                                 sigma2=(1.0, 1.0), grid_size=101, width=4.0) -> float:
    """Max relative gap between the modular posterior density and the
    data-dependent-prior representation, over a grid of scalar ``(theta_1, theta_2)``.

    Left side: ``m(theta_1) m(theta_2 | theta_1)``. Right side:
    ``pi(t1) pi(t2|t1) p1(t1|y) / p2(t1|y) * p2(y|t1,t2) / p2(y)`` where ``p2`` is the
    joint two-scale model with both coefficients unknown. Everything is
    evaluated in log space.
    """
    x1 = np.asarray(x1, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    m1, m2 = prior_means
    v1, v2 = prior_vars  # prior scale factors M_1, M_2
    s1, s2 = sigma2

    # module posteriors
    prec1 = 1 / v1 + x1 @ x1
    mu1 = (m1 / v1 + x1 @ y) / prec1
    prec2 = 1 / v2 + x2 @ x2
    q = (x2 @ x1) / prec2
    mub2 = (m2 / v2 + x2 @ y) / prec2

    sd1 = np.sqrt(s1 / prec1)
    sd2 = np.sqrt(s2 / prec2 + q ** 2 * s1 / prec1)
    t1 = np.linspace(mu1 - width * sd1, mu1 + width * sd1, grid_size)
    t2 = np.linspace(mub2 - q * mu1 - width * sd2, mub2 - q * mu1 + width * sd2, grid_size)
    T1, T2 = np.meshgrid(t1, t2, indexing="ij")

    log_left = (norm.logpdf(T1, mu1, sd1)
                + norm.logpdf(T2, mub2 - q * T1, np.sqrt(s2 / prec2)))

    # joint model p2 with Gaussian prior diag(s1 v1, s2 v2) and noise s2
    X = np.column_stack([x1, x2])
    prior_cov = np.diag([s1 * v1, s2 * v2])
    prior_mean = np.array([m1, m2])
    post_prec = linalg.inv(prior_cov) + X.T @ X / s2
    post_cov = linalg.inv(post_prec)
    post_mean = post_cov @ (linalg.solve(prior_cov, prior_mean) + X.T @ y / s2)
    log_p2_t1 = norm.logpdf(T1, post_mean[0], np.sqrt(post_cov[0, 0]))
    evidence = multivariate_normal.logpdf(
        y, X @ prior_mean, s2 * np.eye(y.size) + X @ prior_cov @ X.T)

    fitted = T1[..., None] * x1 + T2[..., None] * x2
    loglik = (-0.5 * y.size * np.log(2 * np.pi * s2)
              - 0.5 * np.sum((y - fitted) ** 2, axis=-1) / s2)
    log_right = (norm.logpdf(T1, m1, np.sqrt(s1 * v1))
                 + norm.logpdf(T2, m2, np.sqrt(s2 * v2))
                 + norm.logpdf(T1, mu1, sd1) - log_p2_t1
                 + loglik - evidence)
    return float(np.max(np.abs(np.expm1(log_right - log_left))))

"""
Simulation designs, test functions and analytic reference values.

Contains the correlated-design generator, the classic Donoho-Johnstone and
Nason-Silverman test signals, the sequential least-squares procedure that the
modular posterior reduces to in large samples, the large-sample normal limit
of a two-scale fit, the finite-sample MSE of the shrunk two-sensor estimator,
and evaluation metrics.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.stats import rankdata

from .errors import (
    InvalidConfigError,
    InvalidDimensionError,
    InvalidInputError,
    NumericalSingularityError,
)
from .multiscale import CoarseningOperator, MultiscaleDesign, accumulate

__all__ = [
    "TEST_FUNCTIONS",
    "SimulationDesign",
    "AsymptoticSpec",
    "AsymptoticDistribution",
    "MetricsReport",
    "gen_test_function",
    "correlation_matrix",
    "gen_design",
    "gen_out_of_sample",
    "gen_toy_design",
    "sequential_ls_oracle",
    "rss_ladder",
    "asymptotic_distribution",
    "toy_shrunk_mse",
    "compute_metrics",
    "auc_score",
    "read_fixture",
    "write_fixture",
]

_JUMPS = np.array([0.1, 0.13, 0.15, 0.23, 0.25, 0.40, 0.44, 0.65, 0.76, 0.78, 0.81])
_BLOCK_HEIGHTS = np.array([4, -5, 3, -4, 5, -4.2, 2.1, 4.3, -3.1, 2.1, -4.2])
_BUMP_HEIGHTS = np.array([4, 5, 3, 4, 5, 4.2, 2.1, 4.3, 3.1, 5.1, 4.2])
_BUMP_WIDTHS = np.array([0.005, 0.005, 0.006, 0.01, 0.01, 0.03, 0.01, 0.01, 0.005, 0.008, 0.005])


def _blocks(t):
    # right-continuous steps: a jump falling exactly on a grid point is taken in full
    return np.sum(_BLOCK_HEIGHTS * np.heaviside(t[:, None] - _JUMPS, 1.0), axis=1)


def _bumps(t):
    return np.sum(_BUMP_HEIGHTS * (1 + np.abs((t[:, None] - _JUMPS) / _BUMP_WIDTHS)) ** -4, axis=1)


def _heavisine(t):
    return 4 * np.sin(4 * np.pi * t) - np.sign(t - 0.3) - np.sign(0.72 - t)


def _doppler(t, eps=0.05):
    return np.sqrt(t * (1 - t)) * np.sin(2 * np.pi * (1 + eps) / (t + eps))


def _ppoly(t):
    return np.select(
        [t < 0.5, t < 0.75],
        [4 * t ** 2 * (3 - 4 * t), 4 / 3 * t * (4 * t ** 2 - 10 * t + 7) - 1.5],
        16 / 3 * t * (t - 1) ** 2,
    )


TEST_FUNCTIONS = {
    "blocks": _blocks,
    "bumps": _bumps,
    "heavisine": _heavisine,
    "doppler": _doppler,
    "ppoly": _ppoly,
}


def gen_test_function(name: str, p: int, normalize: bool = False) -> np.ndarray:
    """Evaluate a named test signal on ``t_i = i/p``, ``i = 1..p``.

    With ``normalize=True`` the result is scaled to unit maximum absolute value.
    """
    if name not in TEST_FUNCTIONS:
        raise InvalidConfigError(f"unknown test function {name!r}; choose from {sorted(TEST_FUNCTIONS)}")
    if p < 2:
        raise InvalidConfigError("test functions need p >= 2")
    beta = TEST_FUNCTIONS[name](np.arange(1, p + 1) / p)
    if normalize:
        beta = beta / np.max(np.abs(beta))
    return beta


def correlation_matrix(p: int, rho: float) -> np.ndarray:
    """``omega[h, j] = exp(-(1 - rho) |h - j|)``."""
    idx = np.arange(p)
    return np.exp(-(1 - rho) * np.abs(idx[:, None] - idx[None, :]))


@dataclass(frozen=True)
class SimulationDesign:
    n: int = 60
    p: int = 128
    rho: float = 0.98
    sigma: float = 1.0
    function: str = "blocks"
    seed: int = 0
    link: str = "identity"

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise InvalidConfigError("n and p must be >= 1")
        if not 0 <= self.rho < 1:
            raise InvalidConfigError("rho must lie in [0, 1)")
        if self.sigma < 0:
            raise InvalidConfigError("sigma must be non-negative")
        if self.link not in ("identity", "probit"):
            raise InvalidConfigError("link must be 'identity' or 'probit'")


def gen_design(design: SimulationDesign, rng=None):
    """Draw ``(X, y, beta)`` with rows ``x_i ~ N(0, Omega)`` and ``y = X beta + eps``.

    ``beta`` is the named test function scaled to unit max-abs; with ``p == 1``
    it is the single coefficient 1. Under the probit link ``y`` is the 0/1
    indicator of ``X beta + eps > 0``.
    """
    rng = rng if rng is not None else np.random.default_rng(design.seed)
    if design.p == 1:
        beta = np.ones(1)
    else:
        beta = gen_test_function(design.function, design.p, normalize=True)
    X, y = gen_out_of_sample(design, beta, design.n, rng)
    return X, y, beta


def gen_out_of_sample(design: SimulationDesign, beta, n_out: int, rng):
    """Fresh ``(X, y)`` from the same predictor law and coefficient."""
    omega = correlation_matrix(design.p, design.rho)
    try:
        C = linalg.cholesky(omega, lower=True)
    except linalg.LinAlgError as err:
        raise NumericalSingularityError("correlation matrix is not positive definite") from err
    X = rng.standard_normal((n_out, design.p)) @ C.T
    y = X @ beta + design.sigma * rng.standard_normal(n_out)
    if design.link == "probit":
        y = (y > 0).astype(float)
    return X, y


def gen_toy_design(n: int, r: float, rng, exact: bool = False) -> np.ndarray:
    """Two-sensor design with ``X'X / n`` equal to ``[[1, r], [r, 1]]``.

    With ``exact=False`` rows are i.i.d. normal with that covariance; with
    ``exact=True`` the empirical second moment matches it to rounding.
    """
    C = np.array([[1.0, r], [r, 1.0]])
    L = linalg.cholesky(C, lower=True)
    Z = rng.standard_normal((n, 2))
    if exact:
        Q, _ = np.linalg.qr(Z)
        return np.sqrt(n) * Q @ L.T
    return Z @ L.T


def _ols(X, y):
    XtX = X.T @ X
    try:
        C = linalg.cho_factor(XtX)
    except linalg.LinAlgError as err:
        raise NumericalSingularityError("cross-product matrix is singular") from err
    return linalg.cho_solve(C, X.T @ y)


def sequential_ls_oracle(design: MultiscaleDesign, y):
    """Regress running residuals on successively finer designs.

    Returns ``(thetas, betas)`` where ``betas[j]`` is the accumulation of
    ``thetas[:j+1]`` at resolution ``j+1``.
    """
    y = np.asarray(y, dtype=float).ravel()
    thetas, e = [], y
    for j in range(1, design.n_levels + 1):
        X = design.X(j)
        th = _ols(X, e)
        thetas.append(th)
        e = e - X @ th
    betas = [accumulate(thetas, design, j) for j in range(1, design.n_levels + 1)]
    return thetas, betas


def rss_ladder(X, y, operators) -> np.ndarray:
    """In-sample RSS after each sequential least-squares level.

    ``operators[j]`` maps the columns of ``X`` to the level-``j`` design.
    Entry 0 is the RSS of the empty model, ``|y|^2``.
    """
    e = np.asarray(y, dtype=float).ravel()
    out = [e @ e]
    for op in operators:
        Z = X @ op.to_dense()
        th = np.linalg.lstsq(Z, e, rcond=None)[0]
        e = e - Z @ th
        out.append(e @ e)
    return np.array(out)


@dataclass(frozen=True)
class AsymptoticSpec:
    """Limit second moment ``omega`` of the true-resolution predictors, true
    coefficient ``b``, operators taking the true resolution to levels 1 and 2,
    and the two module noise variances."""

    omega: np.ndarray
    b: np.ndarray
    to_level1: CoarseningOperator
    to_level2: CoarseningOperator
    sigma2: tuple[float, float] = (1.0, 1.0)


@dataclass(frozen=True)
class AsymptoticDistribution:
    """Normal limit of the modular posterior. ``cov`` is per observation: the
    covariance at sample size ``n`` is approximately ``cov / n``."""

    theta1: np.ndarray
    theta2: np.ndarray
    cov: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    L_tilde: np.ndarray = field(repr=False)

    @property
    def mean(self):
        return np.concatenate([self.theta1, self.theta2])


def asymptotic_distribution(spec: AsymptoticSpec) -> AsymptoticDistribution:
    omega = np.asarray(spec.omega, dtype=float)
    b = np.asarray(spec.b, dtype=float)
    L1 = spec.to_level1.to_dense()
    L2 = spec.to_level2.to_dense()
    s1, s2 = spec.sigma2
    O1 = L1.T @ omega @ L1
    O2 = L2.T @ omega @ L2
    try:
        c1 = linalg.cho_factor(O1)
        c2 = linalg.cho_factor(O2)
    except linalg.LinAlgError as err:
        raise NumericalSingularityError("coarsened second-moment matrix is singular") from err
    beta1 = linalg.cho_solve(c1, L1.T @ omega @ b)
    beta2 = linalg.cho_solve(c2, L2.T @ omega @ b)
    Lt = linalg.cho_solve(c2, L2.T @ omega @ L1)
    O1inv = linalg.cho_solve(c1, np.eye(O1.shape[0]))
    O2inv = linalg.cho_solve(c2, np.eye(O2.shape[0]))
    S11 = s1 * O1inv
    S21 = -s1 * Lt @ O1inv
    S22 = s2 * O2inv + s1 * Lt @ O1inv @ Lt.T
    cov = np.block([[S11, S21.T], [S21, S22]])
    return AsymptoticDistribution(beta1, beta2 - Lt @ beta1, cov, beta1, beta2, Lt)


def toy_shrunk_mse(c, r, n, beta1, beta2, sigma2=1.0, exact=False) -> float:
    """Frequentist MSE of ``(1 - c l) L0 mu0 + c l beta_hat`` in the two-sensor
    toy model, ``l = n / (n + 1)``.

    The default evaluates the published closed form, whose variance term treats
    the coarse estimate as unshrunk. ``exact=True`` keeps the ``l`` factor on the
    coarse term in the variance as well, matching the bias term.
    """
    if not 0 <= r < 1:
        raise InvalidInputError("r must lie in [0, 1); the variance diverges as r -> 1")
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    l = n / (n + 1)
    k = 1 - c * l
    bias = k ** 2 * ((l - 2) ** 2 + l ** 2) * (beta1 ** 2 + beta2 ** 2) / 4
    bias += k ** 2 * l * (l - 2) * beta1 * beta2
    if exact:
        coarse = l * l * k ** 2 + 2 * c * l * l * k
    else:
        coarse = k * (1 + c * l)
    var = sigma2 / (n * (1 + r)) * (coarse + 2 * c ** 2 * l ** 2 / (1 - r))
    return float(bias + var)


def auc_score(labels, scores) -> float:
    """Area under the ROC curve from the Mann-Whitney rank statistic."""
    labels = np.asarray(labels).ravel()
    scores = np.asarray(scores, dtype=float).ravel()
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class MetricsReport:
    beta_mse: float | None = None
    mape: float | None = None
    contribution_norms: np.ndarray | None = None
    rss: np.ndarray | None = None

    def rows(self):
        out = []
        if self.beta_mse is not None:
            out.append(("beta_mse", self.beta_mse))
        if self.mape is not None:
            out.append(("mape", self.mape))
        if self.contribution_norms is not None:
            out += [(f"norm_scale_{j + 1}", v) for j, v in enumerate(self.contribution_norms)]
        if self.rss is not None:
            out += [(f"rss_level_{j}", v) for j, v in enumerate(self.rss)]
        return out


def compute_metrics(beta_hat, beta_true=None, X_out=None, y_out=None, contributions=None,
                    X_in=None, y_in=None) -> MetricsReport:
    """Estimation and prediction error summaries.

    ``contributions`` are per-scale finest-grid vectors; with ``X_in, y_in``
    the RSS ladder is computed from their running sums.
    """
    beta_hat = np.asarray(beta_hat, dtype=float).ravel()
    rep = MetricsReport()
    if beta_true is not None:
        beta_true = np.asarray(beta_true, dtype=float).ravel()
        if beta_true.shape != beta_hat.shape:
            raise InvalidDimensionError("beta_hat and beta_true differ in length")
        rep.beta_mse = float(np.mean((beta_hat - beta_true) ** 2))
    if X_out is not None and y_out is not None:
        X_out = np.atleast_2d(np.asarray(X_out, dtype=float))
        y_out = np.asarray(y_out, dtype=float).ravel()
        if X_out.shape != (y_out.size, beta_hat.size):
            raise InvalidDimensionError("out-of-sample data do not match beta_hat")
        rep.mape = float(np.mean(np.abs(y_out - X_out @ beta_hat)))
    if contributions is not None:
        contributions = np.atleast_2d(np.asarray(contributions, dtype=float))
        rep.contribution_norms = np.linalg.norm(contributions, axis=1)
        if X_in is not None and y_in is not None:
            e = np.asarray(y_in, dtype=float).ravel()
            rss = [e @ e]
            for c in contributions:
                e = e - np.asarray(X_in) @ c
                rss.append(e @ e)
            rep.rss = np.array(rss)
    return rep


def write_fixture(path, values) -> None:
    """Plain text, one value per line, 17 significant digits."""
    Path(path).write_text("".join(f"{v:.17g}\n" for v in np.asarray(values, dtype=float).ravel()))


def read_fixture(path) -> np.ndarray:
    return np.array([float(s) for s in Path(path).read_text().split()])

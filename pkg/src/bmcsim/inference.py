"""Least-squares inference for the bifurcating autoregression.

Observing a complete tree through generation ``r + 1`` identifies the
four regression parameters by regressing each daughter on its mother
over the ``2^(r+1) - 1`` mothers, the noise variance and sister-sister
correlation from the residual pairs, and the stationary first and
second moments of a random lineage.  A quadratic asymmetry statistic
compares the two daughter regressions; large values reject the
symmetric null.

Normalization conventions (fixed here so the estimates converge to the
model quantities):

* ``sigma2_hat`` averages all ``2 |T_r|`` squared residuals;
* ``rho_hat`` divides the residual cross sum by ``|T_r| * sigma2_hat``,
  making it a correlation in [-1, 1];
* the asymmetry statistic weights the slope difference by the lineage
  variance ``mu2_hat - mu1_hat^2``.

The chi-square(2) reference used for the test decision is a Wald-style
reading of the statistic's quadratic form.  It is exact when the two
sister residuals are uncorrelated; for ``rho != 0`` the asymptotic law
is ``(1 - rho)`` times a chi-square(2), so the nominal level is
conservative for positive ``rho`` and anticonservative for negative
``rho``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator

from .simulate import TreePopulation
from .tree import subtree_size

DEGENERATE_TOL = 1e-12
ZERO_VARIANCE_TOL = 1e-14


class DegenerateDesignError(ValueError):
    """Empirical mother variance too small to identify the slopes."""


class ZeroVarianceError(ValueError):
    """Residual variance too small to identify the correlation."""


def _fsum(values) -> float:
    return math.fsum(np.asarray(values, dtype=np.float64).tolist())


def _mother_daughter_views(values: np.ndarray, r: int):
    """Views (mothers, left daughters, right daughters) over T_r."""
    size = subtree_size(r)
    x = values[:size]
    y = values[1 : 2 * size : 2]
    z = values[2 : 2 * size + 1 : 2]
    return x, y, z


def check_tree_values(values, min_depth: int = 1) -> tuple[np.ndarray, int]:
    """Validate a flat heap array of tree values.

    Returns the array and the observed depth ``d`` with
    ``len(values) = 2^(d+1) - 1``.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    n = len(values)
    depth = n.bit_length() - 1
    if n < 3 or n != subtree_size(depth):
        raise ValueError(
            f"need a complete tree (2^(d+1) - 1 values, d >= 1), got {n} values"
        )
    if depth < min_depth:
        raise ValueError(f"need observation depth >= {min_depth}, got {depth}")
    if not np.all(np.isfinite(values)):
        raise ValueError("tree values must be finite")
    return values, depth


def least_squares(pop: TreePopulation, r: int):
    """Daughter-on-mother least squares over the mothers of T_r.

    Returns ``(theta_hat, (A_r, B_r))`` where ``A_r`` and ``B_r`` are the
    empirical mean and variance of the mother values.  Requires the
    population observed through generation ``r + 1``.
    """
    if pop.depth < r + 1:
        raise ValueError(
            f"estimation at depth {r} needs observations through {r + 1}, "
            f"population has {pop.depth}"
        )
    x, y, z = _mother_daughter_views(pop.values, r)
    size = subtree_size(r)
    mean_x = _fsum(x) / size
    mean_x2 = _fsum(x * x) / size
    b = mean_x2 - mean_x**2
    if b <= DEGENERATE_TOL:
        raise DegenerateDesignError(
            f"mother variance {b:.3e} below {DEGENERATE_TOL} at depth {r}"
        )
    theta = []
    for d in (y, z):
        mean_d = _fsum(d) / size
        mean_xd = _fsum(x * d) / size
        a_hat = (mean_xd - mean_x * mean_d) / b
        theta.extend([a_hat, mean_d - a_hat * mean_x])
    return tuple(theta), (mean_x, b)


def residuals(pop: TreePopulation, theta_hat, r: int):
    """Residual pairs of both daughter regressions over T_r."""
    a0, b0, a1, b1 = theta_hat
    x, y, z = _mother_daughter_views(pop.values, r)
    return y - a0 * x - b0, z - a1 * x - b1


def residual_moments(pop: TreePopulation, theta_hat, r: int):
    """Noise variance and sister-sister correlation from the residuals.

    ``sigma2_hat`` pools all ``2 |T_r|`` squared residuals; ``rho_hat``
    is the cross sum over ``|T_r| * sigma2_hat``, which lies in [-1, 1]
    by the arithmetic-geometric mean inequality.
    """
    e0, e1 = residuals(pop, theta_hat, r)
    size = subtree_size(r)
    sigma2 = (_fsum(e0 * e0) + _fsum(e1 * e1)) / (2 * size)
    if sigma2 <= ZERO_VARIANCE_TOL:
        raise ZeroVarianceError(
            f"residual variance {sigma2:.3e} below {ZERO_VARIANCE_TOL}; "
            "correlation undefined"
        )
    rho = _fsum(e0 * e1) / (size * sigma2)
    if abs(rho) > 1.0:
        if abs(rho) > 1.0 + 1e-9:
            raise ZeroVarianceError(f"correlation estimate {rho} outside [-1, 1]")
        warnings.warn("clipping correlation estimate to [-1, 1]", stacklevel=2)
        rho = math.copysign(1.0, rho)
    return sigma2, rho


def stationary_moments(theta, sigma2: float) -> tuple[float, float]:
    """First and second stationary moments of the random-lineage chain.

    Solves the fixed-point equations obtained by pushing the stationary
    law one step through the mean kernel:
    ``mu1 = ((a0 + a1)/2) mu1 + (b0 + b1)/2`` and
    ``mu2 = ((a0^2 + a1^2)/2) mu2 + (a0 b0 + a1 b1) mu1
           + (b0^2 + b1^2)/2 + sigma2``.
    """
    a0, b0, a1, b1 = theta
    if max(abs(a0), abs(a1)) >= 1:
        raise ValueError("slopes must lie in (-1, 1) for a stationary lineage")
    mu1 = (b0 + b1) / (2.0 - a0 - a1)
    mu2 = ((a0 * b0 + a1 * b1) * mu1 + (b0**2 + b1**2) / 2.0 + sigma2) / (
        1.0 - (a0**2 + a1**2) / 2.0
    )
    return mu1, mu2


@dataclass
class EstimatorReport:
    """Full inference record for one observed tree."""

    r: int
    alpha0_hat: float
    beta0_hat: float
    alpha1_hat: float
    beta1_hat: float
    sigma2_hat: float
    rho_hat: float
    mu1_hat: float
    mu2_hat: float
    a_r: float
    b_r: float
    chi1: float
    degenerate: bool = False

    @property
    def theta_hat(self):
        return (self.alpha0_hat, self.beta0_hat, self.alpha1_hat, self.beta1_hat)

    def to_json_dict(self) -> dict:
        return asdict(self)


def chi_square_statistic(report: EstimatorReport) -> float:
    """Quadratic asymmetry statistic of the two daughter regressions.

    ``(|T_r| / (2 sigma2_hat)) * ((da)^2 (mu2 - mu1^2)
    + (da * mu1 + db)^2)`` with ``da``, ``db`` the slope and intercept
    differences and the moments evaluated at the estimates.  Vanishes
    exactly on symmetric estimates and is invariant under swapping the
    daughter labels.
    """
    if report.sigma2_hat <= ZERO_VARIANCE_TOL:
        raise ZeroVarianceError("asymmetry statistic needs a positive sigma2_hat")
    variance = report.mu2_hat - report.mu1_hat**2
    if variance <= DEGENERATE_TOL:
        raise DegenerateDesignError("asymmetry statistic needs mu2 - mu1^2 > 0")
    da = report.alpha0_hat - report.alpha1_hat
    db = report.beta0_hat - report.beta1_hat
    size = subtree_size(report.r)
    return (size / (2.0 * report.sigma2_hat)) * (
        da**2 * variance + (da * report.mu1_hat + db) ** 2
    )


@dataclass(frozen=True)
class TestDecision:
    """Outcome of the level-``level`` asymmetry test."""

    statistic: float
    level: float
    threshold: float
    reject: bool

    def to_json_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "level": self.level,
            "threshold": self.threshold,
            "verdict": "reject" if self.reject else "fail to reject",
        }


def asymmetry_test(chi: float, level: float) -> TestDecision:
    """Compare the statistic to the chi-square(2) upper quantile."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    threshold = float(stats.chi2.ppf(1.0 - level, df=2))
    return TestDecision(statistic=chi, level=level, threshold=threshold,
                        reject=chi > threshold)


@dataclass(frozen=True)
class AsymptoticCovariance:
    """Limit covariances of the scaled estimation errors.

    ``k`` is the 2x2 inverse design moment matrix of one daughter
    regression; ``sigma_prime`` the 4x4 limit covariance of
    ``sqrt(|T_r|) (theta_hat - theta)``; ``sigma_dprime`` the 2x2 limit
    covariance of the slope/intercept differences.
    """

    k: np.ndarray
    sigma_prime: np.ndarray
    sigma_dprime: np.ndarray


def asymptotic_covariance(theta, sigma2: float, rho: float) -> AsymptoticCovariance:
    """K, the 4x4 block covariance, and the difference covariance.

    ``K = [[1, -mu1], [-mu1, mu2]] / (mu2 - mu1^2)``; the 4x4 matrix has
    ``sigma2 K`` on the diagonal blocks and ``rho sigma2 K`` off the
    diagonal; the difference covariance is ``2 sigma2 (1 - rho) K``.
    """
    mu1, mu2 = stationary_moments(theta, sigma2)
    variance = mu2 - mu1**2
    if variance <= DEGENERATE_TOL:
        raise DegenerateDesignError("lineage variance mu2 - mu1^2 must be positive")
    k = np.array([[1.0, -mu1], [-mu1, mu2]]) / variance
    sigma_prime = sigma2 * np.block([[k, rho * k], [rho * k, k]])
    sigma_dprime = 2.0 * sigma2 * (1.0 - rho) * k
    return AsymptoticCovariance(k=k, sigma_prime=sigma_prime,
                                sigma_dprime=sigma_dprime)


def estimator_deviation_bound(alpha: float, delta: float, r: int,
                              setting: str = "gaussian",
                              c: float = 1.0, c_prime: float = 1.0,
                              c_dprime: float = 1.0) -> float:
    """Deviation bound for the estimation error at depth ``r``.

    ``setting`` selects the polynomial family (unbounded noise) or the
    exponential family (compactly supported noise); the constants are
    configuration, fit empirically by the harness.
    """
    from .exact import BoundSpec, evaluate_bound

    family = {"gaussian": "estimator-dev-gaussian",
              "bounded": "estimator-dev-bounded"}.get(setting)
    if family is None:
        raise ValueError("setting must be 'gaussian' or 'bounded'")
    spec = BoundSpec(family=family, scope="tree", alpha=alpha, c=c,
                     c_prime=c_prime, c_dprime=c_dprime, delta=delta)
    return evaluate_bound(spec, r=r)


def estimate(pop: TreePopulation, r: int | None = None) -> EstimatorReport:
    """Run the whole inference pipeline on one observed tree."""
    if r is None:
        r = pop.depth - 1
    theta_hat, (a_r, b_r) = least_squares(pop, r)
    sigma2_hat, rho_hat = residual_moments(pop, theta_hat, r)
    mu1_hat, mu2_hat = stationary_moments(theta_hat, sigma2_hat)
    report = EstimatorReport(
        r=r,
        alpha0_hat=theta_hat[0], beta0_hat=theta_hat[1],
        alpha1_hat=theta_hat[2], beta1_hat=theta_hat[3],
        sigma2_hat=sigma2_hat, rho_hat=rho_hat,
        mu1_hat=mu1_hat, mu2_hat=mu2_hat,
        a_r=a_r, b_r=b_r, chi1=float("nan"),
        degenerate=b_r <= DEGENERATE_TOL,
    )
    report.chi1 = chi_square_statistic(report)
    return report


def estimate_batch(values: np.ndarray) -> dict[str, np.ndarray]:
    """Vectorized inference over a batch of trees (one row per tree).

    Rows are flat heap arrays observed through depth ``d``; estimation
    runs at ``r = d - 1``.  Returns arrays keyed ``alpha0 .. beta1,
    sigma2, rho, mu1, mu2, a, b, chi, degenerate``; degenerate rows
    (mother variance or residual variance at tolerance) carry NaN
    statistics instead of raising.  Uses pairwise numpy summation; the
    single-tree path (:func:`estimate`) is the compensated reference.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("expected a (replications, nodes) matrix")
    n_nodes = values.shape[1]
    depth = n_nodes.bit_length() - 1
    if n_nodes != subtree_size(depth) or depth < 1:
        raise ValueError("rows must be complete trees of depth >= 1")
    size = subtree_size(depth - 1)
    x = values[:, :size]
    y = values[:, 1::2]
    z = values[:, 2::2]
    mx = x.mean(axis=1)
    b = (x * x).mean(axis=1) - mx**2
    degenerate = b <= DEGENERATE_TOL
    b_safe = np.where(degenerate, np.nan, b)
    out = {"a": mx, "b": b, "degenerate": degenerate}
    for tag, d in (("0", y), ("1", z)):
        md = d.mean(axis=1)
        slope = ((x * d).mean(axis=1) - mx * md) / b_safe
        out["alpha" + tag] = slope
        out["beta" + tag] = md - slope * mx
    e0 = y - out["alpha0"][:, None] * x - out["beta0"][:, None]
    e1 = z - out["alpha1"][:, None] * x - out["beta1"][:, None]
    sigma2 = ((e0 * e0).sum(axis=1) + (e1 * e1).sum(axis=1)) / (2 * size)
    degenerate |= sigma2 <= ZERO_VARIANCE_TOL
    sigma2_safe = np.where(sigma2 <= ZERO_VARIANCE_TOL, np.nan, sigma2)
    out["sigma2"] = sigma2
    out["rho"] = np.clip((e0 * e1).sum(axis=1) / (size * sigma2_safe), -1.0, 1.0)
    mu1 = (out["beta0"] + out["beta1"]) / (2.0 - out["alpha0"] - out["alpha1"])
    mu2 = ((out["alpha0"] * out["beta0"] + out["alpha1"] * out["beta1"]) * mu1
           + (out["beta0"] ** 2 + out["beta1"] ** 2) / 2.0 + sigma2) / (
        1.0 - (out["alpha0"] ** 2 + out["alpha1"] ** 2) / 2.0
    )
    out["mu1"], out["mu2"] = mu1, mu2
    variance = mu2 - mu1**2
    degenerate |= ~np.isfinite(variance) | (variance <= DEGENERATE_TOL)
    da = out["alpha0"] - out["alpha1"]
    db = out["beta0"] - out["beta1"]
    chi = (size / (2.0 * sigma2_safe)) * (da**2 * variance + (da * mu1 + db) ** 2)
    out["chi"] = np.where(degenerate, np.nan, chi)
    out["degenerate"] = degenerate
    return out


class BifurcatingAutoregression(BaseEstimator):
    """Scikit-learn style estimator for the bifurcating autoregression.

    ``fit`` takes the flat heap array of a complete tree observed
    through generation ``r + 1`` (``2^(r+2) - 1`` values) and exposes
    the fitted parameters as trailing-underscore attributes.

    Parameters
    ----------
    level : float
        Significance level of the symmetry test run by :meth:`test`.

    Attributes
    ----------
    theta_ : tuple of 4 floats
        ``(alpha0, beta0, alpha1, beta1)`` estimates.
    sigma2_, rho_ : float
        Residual variance and sister-sister correlation estimates.
    mu1_, mu2_ : float
        Stationary lineage moments at the fitted parameters.
    chi1_ : float
        Asymmetry statistic.
    report_ : EstimatorReport
        The full serializable record.
    """

    def __init__(self, level: float = 0.05):
        self.level = level

    def fit(self, X, y=None):
        values, depth = check_tree_values(X, min_depth=1)
        pop = TreePopulation(depth=depth, values=values)
        report = estimate(pop, depth - 1)
        self.depth_ = depth
        self.r_ = report.r
        self.theta_ = report.theta_hat
        self.sigma2_ = report.sigma2_hat
        self.rho_ = report.rho_hat
        self.mu1_ = report.mu1_hat
        self.mu2_ = report.mu2_hat
        self.chi1_ = report.chi1
        self.report_ = report
        return self

    def predict(self, X):
        """Conditional daughter means for mother values ``X``.

        Returns an ``(n, 2)`` array: first column the expected first
        daughter, second column the expected second daughter.
        """
        self._check_fitted()
        x = np.asarray(X, dtype=np.float64).ravel()
        a0, b0, a1, b1 = self.theta_
        return np.column_stack([a0 * x + b0, a1 * x + b1])

    def test(self, level: float | None = None) -> TestDecision:
        """Symmetry test decision at the configured (or given) level."""
        self._check_fitted()
        return asymmetry_test(self.chi1_, self.level if level is None else level)

    def _check_fitted(self):
        if not hasattr(self, "report_"):
            raise RuntimeError("estimator is not fitted; call fit first")

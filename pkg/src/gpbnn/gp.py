"""Single-fidelity Gaussian-process regression.

The prior is a zero-mean GP (outputs are centered on the training mean and
re-offset at prediction) with a tensorized Matern-5/2 covariance: variance
times the product over input dimensions of m(|dx_k| / l_k), where
m(r) = (1 + sqrt(5) r + 5 r^2 / 3) exp(-sqrt(5) r).  Hyperparameters are
fitted by multi-start L-BFGS-B maximization of the log marginal likelihood
with analytic gradients; predictions use the standard Cholesky identities
so each test point costs O(N) for the mean and O(N^2) for the variance.
"""

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.special import ndtri

from .design import Dataset, read_dataset
from .rng import make_rng

__all__ = [
    "NuggetMode",
    "KernelConfig",
    "GPPosterior",
    "IllConditionedKernelError",
    "matern52",
    "fit_gp",
    "build_posterior",
    "gp_predict",
    "gp_predict_batch",
    "gp_quantile",
    "log_marginal_likelihood",
    "save_gp",
    "load_gp",
]

_SQRT5 = math.sqrt(5.0)
DEFAULT_RESTARTS = 10
FIXED_NUGGET_FACTOR = 1e-8  # nugget = factor * variance in Fixed mode
_JITTER_TRIES = 6


class IllConditionedKernelError(RuntimeError):
    """Cholesky failed even after escalating the nugget."""


class NuggetMode(enum.Enum):
    FIXED = "fixed"
    ESTIMATED = "estimated"


@dataclass(frozen=True)
class KernelConfig:
    """Hyperparameters of the tensorized Matern-5/2 kernel."""

    variance: float
    lengthscales: np.ndarray
    nugget: float = 0.0
    nugget_mode: NuggetMode = NuggetMode.FIXED

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "nugget", float(self.nugget))
        if self.variance <= 0:
            raise ValueError("kernel variance must be positive")
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")
        if self.nugget < 0:
            raise ValueError("nugget must be non-negative")


def _matern_factor(r: np.ndarray) -> np.ndarray:
    """1D Matern-5/2 correlation as a function of |dx| / lengthscale."""
    return (1.0 + _SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-_SQRT5 * r)


def matern52(x, x_prime, cfg: KernelConfig) -> float:
    """Tensorized Matern-5/2 covariance between two points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape or x.shape != cfg.lengthscales.shape:
        raise ValueError("point dimensions must match cfg.lengthscales")
    r = np.abs(x - x_prime) / cfg.lengthscales
    return float(cfg.variance * np.prod(_matern_factor(r)))


def _factor_matrices(X, Z, lengthscales):
    """Per-dimension correlation factors m(|x_k - z_k| / l_k)."""
    diff = np.abs(X[:, None, :] - Z[None, :, :]) / lengthscales
    return _matern_factor(diff)  # (n, m, d)


def _kernel_matrix(X, Z, variance, lengthscales):
    return variance * np.prod(_factor_matrices(X, Z, lengthscales), axis=-1)


def _chol_with_escalation(K, nugget, variance):
    """Cholesky of K + nugget*I, escalating the nugget tenfold on failure.

    A zero nugget escalates from a floor of 1e-12 * variance.  Returns the
    lower factor and the nugget actually used.
    """
    n = K.shape[0]
    base = nugget if nugget > 0 else 1e-12 * variance
    for attempt in range(_JITTER_TRIES + 1):
        trial = base * 10.0**attempt if attempt else nugget
        try:
            L = cholesky(K + trial * np.eye(n), lower=True)
            return L, trial
        except np.linalg.LinAlgError:
            continue
    raise IllConditionedKernelError(
        f"kernel matrix not positive definite after {_JITTER_TRIES} "
        f"nugget escalations (nugget reached {base * 10.0 ** _JITTER_TRIES:g})"
    )


@dataclass(frozen=True)
class GPPosterior:
    """Fitted GP: hyperparameters plus the precomputed training solves.

    alpha = C^{-1} (y - prior_mean) and chol is the lower Cholesky factor
    of the training covariance plus nugget.  prior_mean is the constant
    prior mean in output units (the training mean, making the centered
    process zero-mean).
    """

    kernel: KernelConfig
    train_inputs: np.ndarray
    train_outputs: np.ndarray
    alpha: np.ndarray
    chol: np.ndarray
    prior_mean: float
    log_marginal: float

    @property
    def n(self) -> int:
        return self.train_inputs.shape[0]

    @property
    def d(self) -> int:
        return self.train_inputs.shape[1]


def build_posterior(
    inputs, outputs, cfg: KernelConfig, prior_mean: float = None
) -> GPPosterior:
    """Assemble a GPPosterior for fixed hyperparameters (no fitting)."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(outputs, dtype=float).ravel()
    mu = float(np.mean(y)) if prior_mean is None else float(prior_mean)
    K = _kernel_matrix(X, X, cfg.variance, cfg.lengthscales)
    L, nugget_used = _chol_with_escalation(K, cfg.nugget, cfg.variance)
    if nugget_used != cfg.nugget:
        cfg = replace(cfg, nugget=nugget_used)
    resid = y - mu
    alpha = cho_solve((L, True), resid)
    lml = (
        -0.5 * float(resid @ alpha)
        - float(np.sum(np.log(np.diag(L))))
        - 0.5 * X.shape[0] * math.log(2.0 * math.pi)
    )
    return GPPosterior(
        kernel=cfg,
        train_inputs=X,
        train_outputs=y,
        alpha=alpha,
        chol=L,
        prior_mean=mu,
        log_marginal=lml,
    )


def log_marginal_likelihood(gp: GPPosterior) -> float:
    """Log marginal likelihood of the training data under the fitted kernel."""
    return gp.log_marginal


def _lml_and_grad(z, X, y_centered, estimate_nugget):
    """Negative LML and gradient in log-hyperparameter space.

    z = [log variance, log l_1..d, (log nugget)].  In Fixed mode the nugget
    is tied to the variance (FIXED_NUGGET_FACTOR * variance) so
    C = variance * (R + factor*I) and dC/dlog variance = C.
    """
    n, d = X.shape
    variance = math.exp(z[0])
    lengthscales = np.exp(z[1 : 1 + d])
    factors = _factor_matrices(X, X, lengthscales)  # (n, n, d)
    R = np.prod(factors, axis=-1)
    if estimate_nugget:
        nugget = math.exp(z[1 + d])
        C = variance * R + nugget * np.eye(n)
    else:
        nugget = FIXED_NUGGET_FACTOR * variance
        C = variance * (R + FIXED_NUGGET_FACTOR * np.eye(n))
    try:
        L = cholesky(C, lower=True)
    except np.linalg.LinAlgError:
        return np.inf, np.zeros_like(z)
    alpha = cho_solve((L, True), y_centered)
    lml = (
        -0.5 * float(y_centered @ alpha)
        - float(np.sum(np.log(np.diag(L))))
        - 0.5 * n * math.log(2.0 * math.pi)
    )
    # dLML/dtheta = 0.5 * sum(G * dC/dtheta), G = alpha alpha^T - C^{-1}
    G = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n))
    grad = np.empty_like(z)
    if estimate_nugget:
        grad[0] = 0.5 * float(np.sum(G * (variance * R)))
        grad[1 + d] = 0.5 * nugget * float(np.trace(G))
    else:
        grad[0] = 0.5 * float(np.sum(G * C))
    # scaled distances and the log-lengthscale derivative of the 1D factor:
    # d m(r) / d log l = (5/3) r^2 (1 + sqrt(5) r) exp(-sqrt(5) r)
    diff = np.abs(X[:, None, :] - X[None, :, :]) / lengthscales
    dfactor = (5.0 / 3.0) * diff**2 * (1.0 + _SQRT5 * diff) * np.exp(-_SQRT5 * diff)
    for k in range(d):
        excl = np.ones((n, n))
        for j in range(d):
            if j != k:
                excl *= factors[:, :, j]
        dC = variance * excl * dfactor[:, :, k]
        grad[k + 1] = 0.5 * float(np.sum(G * dC))
    return -lml, -grad


def fit_gp(
    data: Dataset,
    nugget_mode: NuggetMode = NuggetMode.FIXED,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
) -> GPPosterior:
    """Fit kernel hyperparameters by maximum marginal likelihood.

    Search is multi-start L-BFGS-B in log space with bounds
    lengthscale in [1e-2, 1e1] * box width and variance in
    [1e-4, 1e2] * var(y); Estimated mode adds the nugget as a third
    hyperparameter.  The best optimized start wins.
    """
    if data.n < 2:
        raise ValueError("fit_gp needs at least two points")
    X = data.inputs
    y = data.outputs
    y_mean = float(y.mean())
    yc = y - y_mean
    var_y = float(yc.var())
    widths = np.where(data.box[:, 1] > data.box[:, 0], data.box[:, 1] - data.box[:, 0], 1.0)

    if var_y == 0.0:
        # constant outputs: any kernel interpolates them exactly
        cfg = KernelConfig(
            variance=1.0,
            lengthscales=widths,
            nugget=FIXED_NUGGET_FACTOR,
            nugget_mode=nugget_mode,
        )
        return build_posterior(X, y, cfg, prior_mean=y_mean)

    estimate_nugget = nugget_mode is NuggetMode.ESTIMATED
    lo = np.concatenate(
        [
            [math.log(1e-4 * var_y)],
            np.log(1e-2 * widths),
            [math.log(1e-8 * var_y)] if estimate_nugget else [],
        ]
    )
    hi = np.concatenate(
        [
            [math.log(1e2 * var_y)],
            np.log(1e1 * widths),
            [math.log(1e2 * var_y)] if estimate_nugget else [],
        ]
    )
    bounds = list(zip(lo, hi))

    rng = make_rng(seed, "gp-fit")
    starts = [
        np.concatenate(
            [
                [math.log(var_y)],
                np.log(0.3 * widths),
                [math.log(1e-2 * var_y)] if estimate_nugget else [],
            ]
        )
    ]
    for _ in range(restarts - 1):
        starts.append(lo + rng.random(lo.size) * (hi - lo))

    best_z, best_val = None, np.inf
    for z0 in starts:
        res = minimize(
            _lml_and_grad,
            z0,
            args=(X, yc, estimate_nugget),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
        )
        if res.fun < best_val:
            best_z, best_val = res.x, res.fun
    if best_z is None or not np.isfinite(best_val):
        raise IllConditionedKernelError("all hyperparameter starts failed")

    d = X.shape[1]
    variance = math.exp(best_z[0])
    lengthscales = np.exp(best_z[1 : 1 + d])
    nugget = (
        math.exp(best_z[1 + d]) if estimate_nugget else FIXED_NUGGET_FACTOR * variance
    )
    cfg = KernelConfig(
        variance=variance,
        lengthscales=lengthscales,
        nugget=nugget,
        nugget_mode=nugget_mode,
    )
    return build_posterior(X, y, cfg, prior_mean=y_mean)


def _cross_covariance(gp: GPPosterior, X):
    return _kernel_matrix(
        np.atleast_2d(X), gp.train_inputs, gp.kernel.variance, gp.kernel.lengthscales
    )


def gp_predict_batch(gp: GPPosterior, X):
    """Posterior mean and variance at each row of X.

    mean = prior_mean + r(x)^T alpha and
    var = C(x, x) - r(x)^T C^{-1} r(x), clamped at zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    R = _cross_covariance(gp, X)  # (m, n)
    means = gp.prior_mean + R @ gp.alpha
    V = solve_triangular(gp.chol, R.T, lower=True)  # (n, m)
    variances = gp.kernel.variance - np.sum(V * V, axis=0)
    return means, np.maximum(variances, 0.0)


def gp_predict(gp: GPPosterior, x):
    """Posterior (mean, variance) at a single point."""
    means, variances = gp_predict_batch(gp, np.atleast_2d(x))
    return float(means[0]), float(variances[0])


def gp_quantile(gp: GPPosterior, x, level: float) -> float:
    """Gaussian posterior quantile: mean + ndtri(level) * std."""
    if not 0.0 < level < 1.0:
        raise ValueError("quantile level must be in (0, 1)")
    mean, variance = gp_predict(gp, x)
    return mean + float(ndtri(level)) * math.sqrt(variance)


def save_gp(gp: GPPosterior, path, train_data_path=None) -> None:
    """Serialize hyperparameters plus a training-data reference as JSON."""
    doc = {
        "variance": gp.kernel.variance,
        "lengthscales": gp.kernel.lengthscales.tolist(),
        "nugget": gp.kernel.nugget,
        "nugget_mode": gp.kernel.nugget_mode.value,
        "prior_mean": gp.prior_mean,
        "train_data": None if train_data_path is None else str(train_data_path),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_gp(path, data: Dataset = None) -> GPPosterior:
    """Rebuild a serialized GP; reads the referenced dataset unless given."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if data is None:
        if not doc.get("train_data"):
            raise ValueError(f"{path}: no train_data reference and no dataset given")
        ref = Path(doc["train_data"])
        if not ref.is_absolute():
            ref = Path(path).parent / ref
        data = read_dataset(ref)
    cfg = KernelConfig(
        variance=doc["variance"],
        lengthscales=np.asarray(doc["lengthscales"], dtype=float),
        nugget=doc["nugget"],
        nugget_mode=NuggetMode(doc["nugget_mode"]),
    )
    return build_posterior(data.inputs, data.outputs, cfg, prior_mean=doc["prior_mean"])

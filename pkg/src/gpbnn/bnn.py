"""One-hidden-layer Bayesian neural network.

The network maps x to w2^T phi(w1 x + b1) + b2 with a ReLU or tanh
activation.  Observations are Gaussian around the network output with
standard deviation sigma; weights and biases carry independent zero-mean
Gaussian priors and sigma a half-normal prior, handled in the
unconstrained coordinate log_sigma with the Jacobian term included, so the
log posterior is finite everywhere.  Analytic gradients of the log
posterior over all coordinates drive the HMC sampler.

Training data may be grouped: each target can be tied to several input
rows whose network outputs are combined with fixed weights before entering
the Gaussian likelihood.  That is how quadrature realisations of the
low-fidelity emulator enter the high-fidelity likelihood; plain
(one row per target) data is the single-row special case.
"""

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Activation",
    "BNNConfig",
    "BNNParams",
    "TrainingSet",
    "bnn_forward",
    "bnn_forward_batch",
    "log_posterior",
    "grad_log_posterior",
    "log_posterior_and_grad",
]

_LOG_2PI = math.log(2.0 * math.pi)


class Activation:
    RELU = "relu"
    TANH = "tanh"


@dataclass(frozen=True)
class BNNConfig:
    """Architecture and prior scales."""

    input_dim: int
    hidden: int = 30
    activation: str = Activation.RELU
    prior_std_w1: float = 1.0
    prior_std_b1: float = 1.0
    prior_std_w2: float = 1.0
    prior_std_b2: float = 1.0
    noise_prior_scale: float = 1.0

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden < 1:
            raise ValueError("input_dim and hidden must be >= 1")
        if self.activation not in (Activation.RELU, Activation.TANH):
            raise ValueError(f"unknown activation {self.activation!r}")
        for name in ("prior_std_w1", "prior_std_b1", "prior_std_w2",
                     "prior_std_b2", "noise_prior_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def n_params(self) -> int:
        # w1, b1, w2, b2, log_sigma
        return self.hidden * self.input_dim + 2 * self.hidden + 2


@dataclass(frozen=True)
class BNNParams:
    """Network weights plus the unconstrained noise coordinate."""

    w1: np.ndarray  # (hidden, input_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float
    log_sigma: float

    @property
    def sigma(self) -> float:
        return math.exp(self.log_sigma)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1, self.w2, [self.b2, self.log_sigma]]
        )

    @staticmethod
    def from_vector(vec, cfg: BNNConfig) -> "BNNParams":
        vec = np.asarray(vec, dtype=float)
        if vec.size != cfg.n_params:
            raise ValueError(f"expected {cfg.n_params} coordinates, got {vec.size}")
        h, d = cfg.hidden, cfg.input_dim
        return BNNParams(
            w1=vec[: h * d].reshape(h, d),
            b1=vec[h * d : h * d + h],
            w2=vec[h * d + h : h * d + 2 * h],
            b2=float(vec[-2]),
            log_sigma=float(vec[-1]),
        )


def _activation(name, a):
    if name == Activation.RELU:
        return np.maximum(a, 0.0)
    return np.tanh(a)


def _activation_grad(name, a, h):
    if name == Activation.RELU:
        return (a > 0.0).astype(float)  # subgradient 0 at the kink
    return 1.0 - h * h


def bnn_forward_batch(params: BNNParams, X, activation=Activation.RELU):
    """Network outputs for each row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    H = _activation(activation, X @ params.w1.T + params.b1)
    return H @ params.w2 + params.b2


def bnn_forward(params: BNNParams, x, activation=Activation.RELU) -> float:
    """Network output at a single input."""
    return float(bnn_forward_batch(params, np.atleast_2d(x), activation)[0])


@dataclass(frozen=True)
class TrainingSet:
    """Inputs, targets and within-group combination weights.

    inputs has one row per realisation; rows for a target are contiguous,
    group_size per group, combined as sum(row_weights * outputs).  Plain
    regression data has group_size 1 and row_weights (1.0,).
    """

    inputs: np.ndarray  # (n_targets * group_size, d)
    targets: np.ndarray  # (n_targets,)
    row_weights: np.ndarray = field(default=None)  # (group_size,)

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        targets = np.asarray(self.targets, dtype=float).ravel()
        w = (
            np.ones(1)
            if self.row_weights is None
            else np.asarray(self.row_weights, dtype=float).ravel()
        )
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "row_weights", w)
        if targets.size < 1:
            raise ValueError("training set must be non-empty")
        if inputs.shape[0] != targets.size * w.size:
            raise ValueError(
                f"{inputs.shape[0]} rows do not split into "
                f"{targets.size} groups of {w.size}"
            )

    @staticmethod
    def from_pairs(data) -> "TrainingSet":
        """Build from a sequence of (x, y) pairs."""
        xs = np.atleast_2d(np.asarray([np.atleast_1d(x) for x, _ in data], dtype=float))
        ys = np.asarray([y for _, y in data], dtype=float)
        return TrainingSet(inputs=xs, targets=ys)

    @property
    def group_size(self) -> int:
        return self.row_weights.size


def _as_training_set(data) -> TrainingSet:
    return data if isinstance(data, TrainingSet) else TrainingSet.from_pairs(data)


def _prior_terms(cfg: BNNConfig):
    # (sizes, stds) of the Gaussian parameter groups, in vector order
    return (
        (cfg.hidden * cfg.input_dim, cfg.prior_std_w1),
        (cfg.hidden, cfg.prior_std_b1),
        (cfg.hidden, cfg.prior_std_w2),
        (1, cfg.prior_std_b2),
    )


def log_posterior_and_grad(vec, data, cfg: BNNConfig):
    """Log posterior density and its gradient at the parameter vector.

    The density is the Gaussian likelihood of the (possibly grouped)
    targets, plus the Gaussian log priors of the weights, plus the
    half-normal log prior of sigma with the log-sigma Jacobian.
    """
    data = _as_training_set(data)
    vec = np.asarray(vec, dtype=float)
    params = BNNParams.from_vector(vec, cfg)
    X, y, w = data.inputs, data.targets, data.row_weights
    n_groups, S = y.size, data.group_size
    sigma = params.sigma
    inv_var = math.exp(-2.0 * params.log_sigma)

    A = X @ params.w1.T + params.b1
    H = _activation(cfg.activation, A)
    out = H @ params.w2 + params.b2
    group_means = (out.reshape(n_groups, S) * w).sum(axis=1)
    resid = y - group_means
    rss = float(resid @ resid)

    log_lik = -n_groups * (0.5 * _LOG_2PI + params.log_sigma) - 0.5 * rss * inv_var

    log_prior = 0.0
    grad = np.empty_like(vec)
    pos = 0
    for size, std in _prior_terms(cfg):
        block = vec[pos : pos + size]
        log_prior += -0.5 * size * math.log(2.0 * math.pi * std * std)
        log_prior += -0.5 * float(block @ block) / (std * std)
        grad[pos : pos + size] = -block / (std * std)
        pos += size
    # half-normal prior on sigma in the log_sigma coordinate:
    # log p(s) = log sqrt(2/pi) - log tau - sigma^2 / (2 tau^2) + s
    tau = cfg.noise_prior_scale
    log_prior += (
        0.5 * math.log(2.0 / math.pi)
        - math.log(tau)
        - 0.5 * sigma * sigma / (tau * tau)
        + params.log_sigma
    )
    grad[-1] = -sigma * sigma / (tau * tau) + 1.0

    # likelihood backprop
    d_out = ((resid * inv_var)[:, None] * w).reshape(-1)  # dloglik/d out_r
    grad_w2 = H.T @ d_out
    grad_b2 = float(d_out.sum())
    dA = np.outer(d_out, params.w2) * _activation_grad(cfg.activation, A, H)
    grad_w1 = dA.T @ X
    grad_b1 = dA.sum(axis=0)
    h, d = cfg.hidden, cfg.input_dim
    grad[: h * d] += grad_w1.ravel()
    grad[h * d : h * d + h] += grad_b1
    grad[h * d + h : h * d + 2 * h] += grad_w2
    grad[-2] += grad_b2
    grad[-1] += -n_groups + rss * inv_var

    return log_lik + log_prior, grad


def log_posterior(params, data, cfg: BNNConfig) -> float:
    """Log posterior density (see log_posterior_and_grad)."""
    vec = params.to_vector() if isinstance(params, BNNParams) else params
    value, _ = log_posterior_and_grad(vec, data, cfg)
    return value


def grad_log_posterior(params, data, cfg: BNNConfig) -> np.ndarray:
    """Gradient of the log posterior over all parameter coordinates."""
    vec = params.to_vector() if isinstance(params, BNNParams) else params
    _, grad = log_posterior_and_grad(vec, data, cfg)
    return grad

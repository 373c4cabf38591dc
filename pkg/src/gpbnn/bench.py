"""Benchmark code pairs: 1D analytic, 2D CURRIN with noise, double pendulum.

Each pair exposes a deterministic high-fidelity code and a cheaper
low-fidelity code on a common input box.  The CURRIN low-fidelity code adds
Gaussian noise from a counter-based stream: noise for evaluation index k is
a pure function of (noise_seed, k), so replays are exact and there is no
shared mutable state.

The double pendulum is a mass M hanging on a vertical spring (stiffness k)
with a rigid pendulum (length l, point mass m) hinged to it.  The spring
coordinate u is measured from the static equilibrium of the loaded spring,
which absorbs the constant gravity term; theta is the pendulum angle from
the downward vertical.  The equations of motion follow from the Lagrangian

    L = (M+m)/2 u'^2 + m l^2/2 th'^2 + m l sin(th) u' th'
        - k/2 u^2 + m g l cos(th),

the low-fidelity code replacing sin(th) -> th, cos(th) -> 1, th'^2 -> 0 in
the dynamics.  Both codes report the maximum over the first 10 seconds of
the bob height u(t) - l cos(theta(t)) (y up, zero at the spring
equilibrium), integrated by fixed-step RK4 with a parabolic refinement of
the discrete maximum.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng

__all__ = [
    "CodePair",
    "PendulumParams",
    "IntegrationFailureError",
    "pair_1d",
    "pair_currin",
    "pair_pendulum",
    "pendulum_high",
    "pendulum_low",
    "simulate_pendulum",
    "pendulum_energy",
    "PENDULUM_BOX",
]


class IntegrationFailureError(RuntimeError):
    """The ODE state left the finite range during integration."""


@dataclass(frozen=True)
class CodePair:
    """A high-/low-fidelity pair of scalar codes on a common box."""

    name: str
    d: int
    box: np.ndarray
    f_high: object  # callable (B, d) -> (B,)
    f_low_clean: object  # callable (B, d) -> (B,), noise-free
    noise_std_low: float = 0.0
    noise_seed: int = 0

    def eval_high(self, X) -> np.ndarray:
        return np.asarray(self.f_high(np.atleast_2d(X)), dtype=float)

    def eval_low(self, X, start_index: int = 0) -> np.ndarray:
        """Low-fidelity outputs; noise indexed by evaluation count."""
        X = np.atleast_2d(X)
        values = np.asarray(self.f_low_clean(X), dtype=float)
        if self.noise_std_low > 0.0:
            noise = np.array(
                [
                    make_rng(self.noise_seed, "low-noise", start_index + k)
                    .standard_normal()
                    for k in range(X.shape[0])
                ]
            )
            values = values + self.noise_std_low * noise
        return values


def pair_1d() -> CodePair:
    """f_L(x) = sin(8 pi x), f_H(x) = (x - sqrt(2)) f_L(x)^2 on [0, 1]."""

    def f_low(X):
        return np.sin(8.0 * np.pi * X[:, 0])

    def f_high(X):
        s = np.sin(8.0 * np.pi * X[:, 0])
        return (X[:, 0] - math.sqrt(2.0)) * s * s

    return CodePair(
        name="one_d",
        d=1,
        box=np.array([[0.0, 1.0]]),
        f_high=f_high,
        f_low_clean=f_low,
    )


def _currin_high(X):
    x1 = X[:, 0]
    x2 = X[:, 1]
    with np.errstate(divide="ignore"):
        factor = np.where(x2 > 0.0, 1.0 - np.exp(-1.0 / (2.0 * np.maximum(x2, 1e-300))), 1.0)
    numer = 2300.0 * x1**3 + 1900.0 * x1**2 + 2092.0 * x1 + 60.0
    denom = 100.0 * x1**3 + 500.0 * x1**2 + 4.0 * x1 + 20.0
    return factor * numer / denom


def pair_currin(delta: float = 0.1, noise_std: float = math.sqrt(0.08), seed: int = 0) -> CodePair:
    """CURRIN function and its four-point delta-filtered low fidelity.

    The low-fidelity code averages the high-fidelity values at the four
    filter points (x1 +- delta, x2 + delta / max(0, x2 - delta)) and adds
    zero-mean Gaussian noise of the given standard deviation.
    """
    if not 0.0 <= delta < 0.5:
        raise ValueError("delta must be in [0, 0.5)")

    def f_low_clean(X):
        x1 = X[:, 0]
        x2 = X[:, 1]
        up = x2 + delta
        down = np.maximum(0.0, x2 - delta)
        total = np.zeros(X.shape[0])
        for a in (x1 + delta, x1 - delta):
            for b in (up, down):
                total += _currin_high(np.column_stack([a, b]))
        return 0.25 * total

    return CodePair(
        name="currin",
        d=2,
        box=np.array([[0.0, 1.0], [0.0, 1.0]]),
        f_high=_currin_high,
        f_low_clean=f_low_clean,
        noise_std_low=noise_std,
        noise_seed=seed,
    )


# fixed physical parameters of the pendulum benchmark
PENDULUM_G = 9.81
PENDULUM_LENGTH = 2.0
PENDULUM_BOB_MASS = 0.5
PENDULUM_HORIZON = 10.0
# input box: (k, M, theta0, theta_dot0, y0)
PENDULUM_BOX = np.array(
    [
        [1.0, 1.4],
        [10.0, 12.0],
        [math.pi / 4.0, math.pi / 3.0],
        [0.0, 0.1],
        [0.0, 0.2],
    ]
)


@dataclass(frozen=True)
class PendulumParams:
    """Variable inputs of the pendulum benchmark, checked against the box."""

    k: float
    M: float
    theta0: float
    theta_dot0: float
    y0: float

    def __post_init__(self):
        values = self.as_array()
        lo, hi = PENDULUM_BOX[:, 0], PENDULUM_BOX[:, 1]
        if np.any(values < lo) or np.any(values > hi):
            raise ValueError(f"pendulum inputs {values} leave the box {PENDULUM_BOX}")

    def as_array(self) -> np.ndarray:
        return np.array([self.k, self.M, self.theta0, self.theta_dot0, self.y0])


def _pendulum_rhs(state, k, M, linearized):
    """Time derivative of (u, u', theta, theta') for a batch of systems."""
    g, l, m = PENDULUM_G, PENDULUM_LENGTH, PENDULUM_BOB_MASS
    u, v, th, om = state
    if linearized:
        u_acc = (-k * u + m * g * th) / M
        th_acc = (k * u - (M + m) * g * th) / (M * l)
    else:
        sin, cos = np.sin(th), np.cos(th)
        denom = M + m * cos * cos  # = ((M+m) l - m l sin^2) / l
        u_acc = (-k * u - m * l * cos * om * om + m * g * sin * sin) / denom
        th_acc = sin * (-(M + m) * g + k * u + m * l * cos * om * om) / (l * denom)
    return np.stack([v, u_acc, om, th_acc])


def _bob_height(state):
    return state[0] - PENDULUM_LENGTH * np.cos(state[2])


def simulate_pendulum(params, dt: float = 0.005, linearized: bool = False,
                      return_trajectory: bool = False):
    """Integrate a batch of pendulums over [0, 10] with fixed-step RK4.

    params is (B, 5) rows (k, M, theta0, theta_dot0, y0).  Returns the
    per-row maximum bob height (parabola-refined over the time grid), or
    (times, states, heights) when return_trajectory is set, with states
    of shape (n_steps + 1, 4, B).
    """
    P = np.atleast_2d(np.asarray(params, dtype=float))
    if not 0.0 < dt <= 0.05:
        raise ValueError("dt must be in (0, 0.05]")
    k, M = P[:, 0], P[:, 1]
    n_steps = max(1, round(PENDULUM_HORIZON / dt))
    h = PENDULUM_HORIZON / n_steps
    state = np.stack([P[:, 4], np.zeros(P.shape[0]), P[:, 2], P[:, 3]])

    heights = np.empty((n_steps + 1, P.shape[0]))
    heights[0] = _bob_height(state)
    states = np.empty((n_steps + 1, 4, P.shape[0])) if return_trajectory else None
    if return_trajectory:
        states[0] = state
    for step in range(n_steps):
        k1 = _pendulum_rhs(state, k, M, linearized)
        k2 = _pendulum_rhs(state + 0.5 * h * k1, k, M, linearized)
        k3 = _pendulum_rhs(state + 0.5 * h * k2, k, M, linearized)
        k4 = _pendulum_rhs(state + h * k3, k, M, linearized)
        state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        heights[step + 1] = _bob_height(state)
        if return_trajectory:
            states[step + 1] = state
    if not np.all(np.isfinite(heights)):
        raise IntegrationFailureError("pendulum state became non-finite")
    if return_trajectory:
        return np.arange(n_steps + 1) * h, states, heights

    # refine the grid maximum with the parabola through its neighbours
    idx = np.argmax(heights, axis=0)
    best = heights[idx, np.arange(P.shape[0])]
    interior = (idx > 0) & (idx < n_steps)
    if np.any(interior):
        cols = np.nonzero(interior)[0]
        i = idx[cols]
        a = heights[i - 1, cols]
        b = heights[i, cols]
        c = heights[i + 1, cols]
        curv = a - 2.0 * b + c
        ok = curv < -1e-300
        refined = b - 0.125 * (c - a) ** 2 / np.where(ok, curv, -1.0)
        best[cols] = np.where(ok, refined, b)
    return best


def pendulum_high(p: PendulumParams, dt: float = 0.005) -> float:
    """Max bob height over 10 s under the full nonlinear dynamics."""
    return float(simulate_pendulum(p.as_array()[None, :], dt, linearized=False)[0])


def pendulum_low(p: PendulumParams, dt: float = 0.005) -> float:
    """Max bob height over 10 s under small-angle linearized dynamics."""
    return float(simulate_pendulum(p.as_array()[None, :], dt, linearized=True)[0])


def pendulum_energy(state, k, M) -> np.ndarray:
    """Total energy of the nonlinear system; conserved along trajectories.

    Potential zero at theta = 0, u = 0 (bob energy offset by m g l).
    """
    g, l, m = PENDULUM_G, PENDULUM_LENGTH, PENDULUM_BOB_MASS
    u, v, th, om = state
    kinetic = 0.5 * (M + m) * v * v + 0.5 * m * l * l * om * om \
        + m * l * np.sin(th) * v * om
    potential = 0.5 * k * u * u + m * g * l * (1.0 - np.cos(th))
    return kinetic + potential


def pair_pendulum(dt: float = 0.005) -> CodePair:
    """Pendulum code pair: nonlinear vs linearized dynamics."""

    def f_high(X):
        return simulate_pendulum(X, dt, linearized=False)

    def f_low(X):
        return simulate_pendulum(X, dt, linearized=True)

    return CodePair(
        name="pendulum",
        d=5,
        box=PENDULUM_BOX.copy(),
        f_high=f_high,
        f_low_clean=f_low,
    )

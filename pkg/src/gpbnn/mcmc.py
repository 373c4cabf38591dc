"""Posterior samplers: random-walk Metropolis-Hastings and HMC/NUTS.

mh_step performs one Gaussian-proposal Metropolis-Hastings update; the
symmetric proposal reduces the acceptance ratio to min(1, p(x')/p(x)).
mh_sample adapts the proposal scale toward a target acceptance rate
(default 1/4) during warmup.

hmc_sample draws from a differentiable log density with the No-U-Turn
sampler: trajectory doubling with a slice variable, dual-averaging step
size adaptation during warmup, identity mass matrix.  A fixed-trajectory
HMC mode is available as a simpler fallback.  A transition whose energy
error exceeds 1000 counts as divergent; more than half the warmup
diverging aborts the run.

All randomness comes from an explicit Generator (or the config seed), so
identical (target, config, seed) reproduce identical draws.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .design import Dataset, write_dataset
from .rng import make_rng

__all__ = [
    "ChainConfig",
    "SampleSet",
    "SamplerFailureError",
    "mh_step",
    "mh_sample",
    "leapfrog",
    "hmc_sample",
    "effective_sample_size",
    "dump_draws",
]

ENERGY_ERROR_LIMIT = 1000.0  # divergence threshold on the energy error


class SamplerFailureError(RuntimeError):
    """The chain cannot proceed (e.g. warmup dominated by divergences)."""


@dataclass(frozen=True)
class ChainConfig:
    """Sampler settings.

    n_samples post-warmup draws are returned.  step_size None lets the
    sampler pick an initial step by the doubling heuristic; a float fixes
    the initial step.  algorithm is "nuts" or "hmc" (fixed n_leapfrog
    trajectory).
    """

    n_samples: int
    warmup: int = 500
    target_accept: float = 0.8
    step_size: float = None
    max_tree_depth: int = 10
    seed: int = 0
    algorithm: str = "nuts"
    n_leapfrog: int = 32

    def __post_init__(self):
        if self.n_samples < 1 or self.warmup < 0:
            raise ValueError("n_samples must be >= 1 and warmup >= 0")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")
        if not 1 <= self.max_tree_depth <= 15:
            raise ValueError("max_tree_depth must be in [1, 15]")
        if self.algorithm not in ("nuts", "hmc"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass(frozen=True)
class SampleSet:
    """Draws from a chain plus basic diagnostics."""

    draws: np.ndarray  # (n_samples, dim)
    accept_rate: float
    diagnostics: dict = field(default_factory=dict)
    log_probs: np.ndarray = None

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]


def _mh_transition(current, log_p_current, log_target, proposal_std, rng):
    current = np.atleast_1d(np.asarray(current, dtype=float))
    proposal = current + proposal_std * rng.standard_normal(current.size)
    log_p_prop = log_target(proposal)
    log_ratio = log_p_prop - log_p_current
    if log_ratio >= 0.0 or rng.random() < math.exp(log_ratio):
        return proposal, log_p_prop, True
    return current, log_p_current, False


def mh_step(current, log_target, proposal_std, rng):
    """One Metropolis-Hastings step with a N(current, std^2 I) proposal.

    Returns the proposal on acceptance (probability min(1, p'/p)) and the
    current state otherwise.
    """
    state, _, _ = _mh_transition(
        current, log_target(np.atleast_1d(current)), log_target, proposal_std, rng
    )
    return state


def mh_sample(
    log_target,
    init,
    n_samples: int,
    warmup: int = 1000,
    proposal_std: float = 1.0,
    target_accept: float = 0.25,
    seed: int = 0,
) -> SampleSet:
    """Random-walk MH chain with warmup adaptation of the proposal scale.

    The scale follows a Robbins-Monro recursion toward the target
    acceptance rate (about 1/4 for random-walk proposals).
    """
    rng = make_rng(seed, "mh")
    state = np.atleast_1d(np.asarray(init, dtype=float))
    log_p = log_target(state)
    if not np.isfinite(log_p):
        raise ValueError("log_target must be finite at init")
    log_std = math.log(proposal_std)
    draws = np.empty((n_samples, state.size))
    log_probs = np.empty(n_samples)
    accepted = 0
    for t in range(warmup + n_samples):
        state, log_p, acc = _mh_transition(
            state, log_p, log_target, math.exp(log_std), rng
        )
        if t < warmup:
            log_std += (float(acc) - target_accept) / math.sqrt(t + 1.0)
        else:
            draws[t - warmup] = state
            log_probs[t - warmup] = log_p
            accepted += acc
    return SampleSet(
        draws=draws,
        accept_rate=accepted / n_samples,
        diagnostics={"proposal_std": math.exp(log_std)},
        log_probs=log_probs,
    )


def leapfrog(position, momentum, step_size, n_steps, grad_log_target):
    """Leapfrog integrator with identity mass matrix.

    Half kick, full drift, half kick per step; time-reversible and volume
    preserving.  Non-finite gradients propagate into the returned state,
    which the caller detects as a divergence.
    """
    q = np.array(position, dtype=float)
    p = np.array(momentum, dtype=float)
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    p = p + 0.5 * step_size * grad_log_target(q)
    for step in range(n_steps):
        q = q + step_size * p
        g = grad_log_target(q)
        p = p + (step_size if step < n_steps - 1 else 0.5 * step_size) * g
    return q, p


class _Target:
    """Fused value/gradient evaluations with a call counter."""

    def __init__(self, log_target, grad_log_target, logp_and_grad=None):
        if logp_and_grad is not None:
            self._fused = logp_and_grad
        else:
            self._fused = lambda q: (log_target(q), grad_log_target(q))
        self.n_evals = 0

    def __call__(self, q):
        self.n_evals += 1
        value, grad = self._fused(q)
        return float(value), np.asarray(grad, dtype=float)


def _leapfrog_fused(q, p, grad, step_size, target):
    """One leapfrog step reusing the cached gradient at q."""
    p_half = p + 0.5 * step_size * grad
    q_new = q + step_size * p_half
    logp_new, grad_new = target(q_new)
    p_new = p_half + 0.5 * step_size * grad_new
    return q_new, p_new, logp_new, grad_new


def _find_reasonable_step(q, logp, grad, target, rng):
    """Doubling/halving heuristic for the initial step size."""
    step = 1.0
    p = rng.standard_normal(q.size)
    joint0 = logp - 0.5 * float(p @ p)
    _, p1, logp1, _ = _leapfrog_fused(q, p, grad, step, target)
    joint1 = logp1 - 0.5 * float(p1 @ p1)
    if not np.isfinite(joint1):
        joint1 = -np.inf
    direction = 1.0 if joint1 - joint0 > math.log(0.5) else -1.0
    for _ in range(60):
        if direction * (joint1 - joint0) <= -direction * math.log(2.0):
            break
        step *= 2.0**direction
        _, p1, logp1, _ = _leapfrog_fused(q, p, grad, step, target)
        joint1 = logp1 - 0.5 * float(p1 @ p1)
        if not np.isfinite(joint1):
            joint1 = -np.inf
    return step


@dataclass
class _Tree:
    q_minus: np.ndarray
    p_minus: np.ndarray
    grad_minus: np.ndarray
    q_plus: np.ndarray
    p_plus: np.ndarray
    grad_plus: np.ndarray
    q_prop: np.ndarray
    logp_prop: float
    grad_prop: np.ndarray
    n_inside: int
    keep_going: bool
    accept_sum: float
    n_accept: int
    diverged: bool


def _build_tree(q, p, grad, log_u, direction, depth, step_size, joint0, target, rng):
    """Recursive NUTS trajectory doubling (slice-sampling variant)."""
    if depth == 0:
        q1, p1, logp1, grad1 = _leapfrog_fused(
            q, p, grad, direction * step_size, target
        )
        joint = logp1 - 0.5 * float(p1 @ p1)
        if not np.isfinite(joint):
            joint = -np.inf
        diverged = log_u > joint + ENERGY_ERROR_LIMIT
        return _Tree(
            q_minus=q1, p_minus=p1, grad_minus=grad1,
            q_plus=q1, p_plus=p1, grad_plus=grad1,
            q_prop=q1, logp_prop=logp1, grad_prop=grad1,
            n_inside=int(log_u <= joint),
            keep_going=not diverged,
            accept_sum=min(1.0, math.exp(min(joint - joint0, 0.0))),
            n_accept=1,
            diverged=diverged,
        )
    tree = _build_tree(
        q, p, grad, log_u, direction, depth - 1, step_size, joint0, target, rng
    )
    if tree.keep_going:
        if direction == -1:
            sub = _build_tree(
                tree.q_minus, tree.p_minus, tree.grad_minus,
                log_u, direction, depth - 1, step_size, joint0, target, rng,
            )
            tree.q_minus, tree.p_minus, tree.grad_minus = (
                sub.q_minus, sub.p_minus, sub.grad_minus,
            )
        else:
            sub = _build_tree(
                tree.q_plus, tree.p_plus, tree.grad_plus,
                log_u, direction, depth - 1, step_size, joint0, target, rng,
            )
            tree.q_plus, tree.p_plus, tree.grad_plus = (
                sub.q_plus, sub.p_plus, sub.grad_plus,
            )
        if sub.n_inside > 0 and rng.random() < sub.n_inside / max(
            tree.n_inside + sub.n_inside, 1
        ):
            tree.q_prop, tree.logp_prop, tree.grad_prop = (
                sub.q_prop, sub.logp_prop, sub.grad_prop,
            )
        span = tree.q_plus - tree.q_minus
        tree.keep_going = (
            sub.keep_going
            and float(span @ tree.p_minus) >= 0.0
            and float(span @ tree.p_plus) >= 0.0
        )
        tree.n_inside += sub.n_inside
        tree.accept_sum += sub.accept_sum
        tree.n_accept += sub.n_accept
        tree.diverged = tree.diverged or sub.diverged
    return tree


def _nuts_iteration(q, logp, grad, step_size, max_depth, target, rng):
    p0 = rng.standard_normal(q.size)
    joint0 = logp - 0.5 * float(p0 @ p0)
    log_u = joint0 - rng.exponential()
    q_minus = q_plus = q
    p_minus = p_plus = p0
    grad_minus = grad_plus = grad
    n_inside, keep_going, depth = 1, True, 0
    accept_stat, diverged = 0.0, False
    while keep_going and depth < max_depth:
        direction = -1 if rng.random() < 0.5 else 1
        if direction == -1:
            tree = _build_tree(
                q_minus, p_minus, grad_minus, log_u, direction, depth,
                step_size, joint0, target, rng,
            )
            q_minus, p_minus, grad_minus = tree.q_minus, tree.p_minus, tree.grad_minus
        else:
            tree = _build_tree(
                q_plus, p_plus, grad_plus, log_u, direction, depth,
                step_size, joint0, target, rng,
            )
            q_plus, p_plus, grad_plus = tree.q_plus, tree.p_plus, tree.grad_plus
        if tree.keep_going and tree.n_inside > 0:
            if rng.random() < min(1.0, tree.n_inside / n_inside):
                q, logp, grad = tree.q_prop, tree.logp_prop, tree.grad_prop
        n_inside += tree.n_inside
        accept_stat = tree.accept_sum / tree.n_accept
        diverged = diverged or tree.diverged
        span = q_plus - q_minus
        keep_going = (
            tree.keep_going
            and float(span @ p_minus) >= 0.0
            and float(span @ p_plus) >= 0.0
        )
        depth += 1
    return q, logp, grad, accept_stat, diverged


def _hmc_iteration(q, logp, grad, step_size, n_leapfrog, target, rng):
    """Fixed-trajectory HMC with a Metropolis correction."""
    p0 = rng.standard_normal(q.size)
    joint0 = logp - 0.5 * float(p0 @ p0)
    q1, p1, logp1, grad1 = q, p0, logp, grad
    for _ in range(n_leapfrog):
        q1, p1, logp1, grad1 = _leapfrog_fused(q1, p1, grad1, step_size, target)
    joint1 = logp1 - 0.5 * float(p1 @ p1)
    if not np.isfinite(joint1):
        joint1 = -np.inf
    accept_stat = min(1.0, math.exp(min(joint1 - joint0, 0.0)))
    diverged = joint0 - joint1 > ENERGY_ERROR_LIMIT
    log_ratio = joint1 - joint0
    if not diverged and (log_ratio >= 0.0 or rng.random() < math.exp(log_ratio)):
        return q1, logp1, grad1, accept_stat, diverged
    return q, logp, grad, accept_stat, diverged


def hmc_sample(
    log_target,
    grad_log_target,
    init,
    cfg: ChainConfig,
    logp_and_grad=None,
) -> SampleSet:
    """Draw cfg.n_samples from the target after warmup adaptation.

    During warmup the step size follows dual averaging toward
    cfg.target_accept; afterwards it is frozen at the averaged value.
    Passing logp_and_grad avoids evaluating value and gradient separately.
    """
    target = _Target(log_target, grad_log_target, logp_and_grad)
    rng = make_rng(cfg.seed, "hmc")
    q = np.array(init, dtype=float)
    logp, grad = target(q)
    if not np.isfinite(logp):
        raise ValueError("log_target must be finite at init")

    if cfg.step_size is not None:
        step = float(cfg.step_size)
    elif cfg.warmup > 0:
        step = _find_reasonable_step(q, logp, grad, target, rng)
    else:
        step = 0.1
    mu = math.log(10.0 * step)
    log_step_avg, h_avg = math.log(step), 0.0
    gamma, t0, kappa = 0.05, 10.0, 0.75

    draws = np.empty((cfg.n_samples, q.size))
    log_probs = np.empty(cfg.n_samples)
    accept_total, divergences_warmup, divergences = 0.0, 0, 0
    for t in range(cfg.warmup + cfg.n_samples):
        if cfg.algorithm == "nuts":
            q, logp, grad, accept_stat, diverged = _nuts_iteration(
                q, logp, grad, step, cfg.max_tree_depth, target, rng
            )
        else:
            q, logp, grad, accept_stat, diverged = _hmc_iteration(
                q, logp, grad, step, cfg.n_leapfrog, target, rng
            )
        if t < cfg.warmup:
            divergences_warmup += diverged
            m = t + 1
            eta = 1.0 / (m + t0)
            h_avg = (1.0 - eta) * h_avg + eta * (cfg.target_accept - accept_stat)
            log_step = mu - math.sqrt(m) / gamma * h_avg
            weight = m**-kappa
            log_step_avg = (1.0 - weight) * log_step_avg + weight * log_step
            step = math.exp(log_step)
            if m == cfg.warmup:
                if divergences_warmup > 0.5 * cfg.warmup:
                    raise SamplerFailureError(
                        f"{divergences_warmup}/{cfg.warmup} warmup transitions "
                        "diverged; retry with a smaller initial step size"
                    )
                step = math.exp(log_step_avg)
        else:
            divergences += diverged
            accept_total += accept_stat
            draws[t - cfg.warmup] = q
            log_probs[t - cfg.warmup] = logp
    return SampleSet(
        draws=draws,
        accept_rate=accept_total / cfg.n_samples,
        diagnostics={
            "step_size": step,
            "divergences": divergences,
            "warmup_divergences": divergences_warmup,
            "n_grad_evals": target.n_evals,
            "ess": effective_sample_size(draws),
        },
        log_probs=log_probs,
    )


def effective_sample_size(draws: np.ndarray) -> np.ndarray:
    """Per-coordinate ESS from the initial-positive autocorrelation sums."""
    draws = np.atleast_2d(draws)
    n, dim = draws.shape
    ess = np.empty(dim)
    for j in range(dim):
        x = draws[:, j] - draws[:, j].mean()
        var = float(x @ x) / n
        if var == 0.0:
            ess[j] = float(n)
            continue
        # FFT autocorrelation, truncated at the first negative pair sum
        size = 1 << (2 * n - 1).bit_length()
        f = np.fft.rfft(x, size)
        acf = np.fft.irfft(f * np.conj(f), size)[:n].real / (n * var)
        pair_sums = acf[1:-1:2] + acf[2::2]
        tau = 1.0
        for s in pair_sums:
            if s < 0.0:
                break
            tau += 2.0 * s
        ess[j] = n / tau
    return ess


def dump_draws(samples: SampleSet, path) -> None:
    """Write draws in the dataset CSV format, log density as the y column."""
    y = (
        samples.log_probs
        if samples.log_probs is not None
        else np.zeros(samples.n_draws)
    )
    write_dataset(Dataset(inputs=samples.draws, outputs=y), path)

"""Brute-force exact computations on tiny instances.

Replaces the gaussian hidden noise with a moment-matched discrete grid so the
marginal likelihood and the bound become finite sums: every joint assignment
of the per-timestep, per-dimension noise scalars is enumerated. These values
are the ground truth the bound claims are tested against.

The unroll and emission math here are written independently of the model
module (vectorized across all paths at once) on purpose: agreement between
this module and the objectives module is evidence, not construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BudgetExceeded, ContractViolation, InputError
from .model import CATEGORICAL, Parameters, VisibleTrajectory
from .numkit import RngState


@dataclass(frozen=True)
class NoiseGrid:
    """Discrete zero-mean surrogate for the per-scalar noise distribution.

    Grids with >= 2 points must be moment-matched (mean 0, variance 1 within
    1e-12) so sigma keeps its scale meaning; the 1-point grid {0} is an
    allowed degenerate case (no randomness).
    """

    values: tuple
    logprobs: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        lp = np.asarray(self.logprobs, dtype=np.float64)
        if v.ndim != 1 or v.shape != lp.shape or v.size == 0:
            raise InputError("grid needs matching non-empty values/logprobs")
        probs = np.exp(lp)
        if abs(probs.sum() - 1.0) > 1e-12:
            raise InputError("grid probabilities must sum to 1")
        if v.size >= 2:
            if abs(float(probs @ v)) > 1e-12:
                raise InputError("grid must have zero mean")
            if abs(float(probs @ (v * v)) - 1.0) > 1e-12:
                raise InputError("grid must have unit variance")

    @property
    def size(self) -> int:
        return len(self.values)

    def sample(self, rng: RngState, n: int) -> np.ndarray:
        """Draw n iid grid points; usable as a noise_sampler for the
        Monte-Carlo estimate."""
        u = rng.uniform(0.0, 1.0, n)
        cum = np.cumsum(np.exp(np.asarray(self.logprobs)))
        idx = np.searchsorted(cum, u, side="right")
        idx = np.minimum(idx, self.size - 1)
        return np.asarray(self.values)[idx]


def two_point_grid() -> NoiseGrid:
    """{-1, +1} with probability 1/2 each."""
    return NoiseGrid((-1.0, 1.0), (math.log(0.5), math.log(0.5)))


def three_point_grid() -> NoiseGrid:
    """{-sqrt(3), 0, +sqrt(3)} with probabilities {1/6, 2/3, 1/6}."""
    r = math.sqrt(3.0)
    return NoiseGrid((-r, 0.0, r), (math.log(1 / 6), math.log(2 / 3), math.log(1 / 6)))


def one_point_grid() -> NoiseGrid:
    """Degenerate single path: eps = 0 with probability 1."""
    return NoiseGrid((0.0,), (0.0,))


def grid_by_size(n: int) -> NoiseGrid:
    if n == 1:
        return one_point_grid()
    if n == 2:
        return two_point_grid()
    if n == 3:
        return three_point_grid()
    raise InputError(f"no built-in grid with {n} points")


@dataclass(frozen=True)
class EnumerationBudget:
    max_paths: int = 10**6


def required_paths(p: Parameters, T: int, grid: NoiseGrid) -> int:
    return grid.size ** (p.cfg.hidden_dim * max(T - 1, 0))


def _check_budget(p: Parameters, x: VisibleTrajectory, grid: NoiseGrid, budget: EnumerationBudget) -> int:
    need = required_paths(p, len(x), grid)
    if need > budget.max_paths:
        raise BudgetExceeded(need, budget.max_paths)
    return need


def _emission_logprob_paths(p: Parameters, states: np.ndarray, x_t) -> np.ndarray:
    """log p(x_t | h) for every path's state at once; states is (P, H)."""
    if p.cfg.visible_kind == CATEGORICAL:
        logits = states @ p.w_eh.T + p.b_e  # (P, M)
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        return logits[:, int(x_t)] - lse
    mean = states @ p.w_eh.T + p.b_e
    diff = np.asarray(x_t, dtype=np.float64) - mean
    return -0.5 * p.cfg.visible_dim * math.log(2 * math.pi) - 0.5 * (diff * diff).sum(axis=1)


def _input_drive(p: Parameters, x_t) -> np.ndarray:
    if p.cfg.visible_kind == CATEGORICAL:
        return p.w_xh[:, int(x_t)]
    return p.w_xh @ np.asarray(x_t, dtype=np.float64)


def _noise_path_table(p: Parameters, x: VisibleTrajectory, grid: NoiseGrid, budget: EnumerationBudget):
    """Per noise path: (log prior weight, total emission log-probability).

    Paths assign one grid point to every (timestep >= 2, hidden dim) noise
    scalar. With sigma = 0 the noise never enters, so a single zero path is
    enumerated regardless of the grid.
    """
    T, H = len(x), p.cfg.hidden_dim
    sigma = p.sigma_vector()
    if p.sigma_is_zero():
        eff_grid = one_point_grid()
    else:
        eff_grid = grid
        _check_budget(p, x, grid, budget)
    n_scalars = H * (T - 1)
    G = eff_grid.size
    P = G**n_scalars
    # (P, n_scalars) grid indices in odometer order, via base-G digits
    if n_scalars and G > 1:
        place = G ** np.arange(n_scalars - 1, -1, -1, dtype=np.int64)
        idx = (np.arange(P, dtype=np.int64)[:, None] // place) % G
    else:
        idx = np.zeros((P, n_scalars), dtype=np.int64)
    gvals = np.asarray(eff_grid.values)
    glogp = np.asarray(eff_grid.logprobs)
    eps = gvals[idx].reshape(P, T - 1, H) if n_scalars else np.zeros((P, 0, H))
    log_prior = glogp[idx].sum(axis=1) if n_scalars else np.zeros(P)

    states = np.broadcast_to(p.h1[0], (P, H)).copy()
    emis = _emission_logprob_paths(p, states, x.steps[0]).copy()
    for t in range(1, T):
        z = states @ p.w_hh.T + _input_drive(p, x.steps[t - 1]) + p.b_h
        states = np.tanh(z) + sigma * eps[:, t - 1, :]
        emis += _emission_logprob_paths(p, states, x.steps[t])
    return log_prior, emis


def enumerate_exact_loglik(
    p: Parameters,
    x: VisibleTrajectory,
    grid: NoiseGrid,
    budget: EnumerationBudget = EnumerationBudget(),
) -> float:
    """log sum over noise paths of prior(path) * likelihood(path)."""
    log_prior, emis = _noise_path_table(p, x, grid, budget)
    a = log_prior + emis
    m = float(np.max(a))
    return m + float(np.log(np.sum(np.exp(a - m))))


def enumerate_exact_elbo(
    p: Parameters,
    x: VisibleTrajectory,
    grid: NoiseGrid,
    budget: EnumerationBudget = EnumerationBudget(),
) -> float:
    """Exact expectation under the discrete noise of the emission sum."""
    log_prior, emis = _noise_path_table(p, x, grid, budget)
    return float(np.dot(np.exp(log_prior), emis))


@dataclass
class JensenReport:
    exact_loglik: float
    exact_elbo: float
    gap: float


def jensen_gap_report(
    p: Parameters,
    x: VisibleTrajectory,
    grid: NoiseGrid,
    budget: EnumerationBudget = EnumerationBudget(),
) -> JensenReport:
    """Exact log-likelihood minus exact bound; nonnegative up to rounding."""
    log_prior, emis = _noise_path_table(p, x, grid, budget)
    a = log_prior + emis
    m = float(np.max(a))
    loglik = m + float(np.log(np.sum(np.exp(a - m))))
    elbo = float(np.dot(np.exp(log_prior), emis))
    return JensenReport(exact_loglik=loglik, exact_elbo=elbo, gap=loglik - elbo)


def mixture_exact_loglik(p: Parameters, x: VisibleTrajectory) -> float:
    """log-likelihood of the uniform mixture over particle initial states.

    Second implementation of the same quantity as the sequence-form particle
    bound, by a different route: per-step emission probabilities are computed
    in the probability domain and multiplied out, falling back to an fsum
    log-domain reduction when the products would leave double range.
    """
    if not p.sigma_is_zero():
        raise ContractViolation("mixture likelihood requires deterministic dynamics")
    T, L = len(x), p.cfg.n_particles
    step_probs = []  # per particle: per-step probabilities
    step_logps = []  # same, log domain (for the underflow fallback)
    for l in range(L):
        h = np.array(p.h1[l])
        probs, logps = [], []
        for t in range(T):
            if t > 0:
                h = np.tanh(p.w_hh @ h + _input_drive(p, x.steps[t - 1]) + p.b_h)
            if p.cfg.visible_kind == CATEGORICAL:
                logits = p.w_eh @ h + p.b_e
                m = float(logits.max())
                denom = float(np.exp(logits - m).sum())
                lp = float(logits[int(x.steps[t])]) - m - math.log(denom)
            else:
                mean = p.w_eh @ h + p.b_e
                diff = np.asarray(x.steps[t], dtype=np.float64) - mean
                lp = -0.5 * p.cfg.visible_dim * math.log(2 * math.pi) - 0.5 * float(
                    diff @ diff
                )
            probs.append(math.exp(lp))
            logps.append(lp)
        step_probs.append(probs)
        step_logps.append(logps)

    products = [math.prod(probs) for probs in step_probs]
    if all(pr > 1e-290 for pr in products):
        return math.log(math.fsum(products) / L)
    # log-domain fallback for long or unlikely sequences
    logw = [math.fsum(logps) for logps in step_logps]
    m = max(logw)
    return m + math.log(math.fsum(math.exp(w - m) for w in logw) / L)

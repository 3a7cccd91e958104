"""Training objectives and bounds.

Four scalar objectives over one sequence:

- ``loglik_deterministic``: sum over t of log p(x[t] | h[t]) along the
  deterministic unroll (the standard training objective).
- ``variational_objective_deterministic``: the same quantity reached by the
  variational route (sample the inference trajectory, accumulate the
  emission terms of log p(H, X)/q(H | X); the transition terms cancel).
  Deliberately a separate code path so the equality is a test, not a
  tautology.
- ``noisy_elbo_estimate``: Monte-Carlo average of the emission sum over
  noisy unrolls (the pathwise bound for sigma > 0).
- ``step_particle_objective`` / ``sequence_particle_bound``: the two
  multi-particle forms. The step form averages particle emission
  probabilities inside each timestep; the sequence form averages whole
  per-particle sequence weights. They differ in general; the gap comparator
  measures by how much.

All particle reductions run in log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model as M
from .exceptions import ContractViolation, InputError
from .model import Parameters, VisibleTrajectory
from .numkit import RngState, log_sum_exp

OBJECTIVE_IDS = ("loglik", "step_particle", "sequence_particle", "noisy_elbo")


@dataclass
class ObjectiveReport:
    """Objective value (nats) with its decomposition.

    ``per_timestep`` sums to ``value`` where a per-step decomposition exists
    (it does not for the sequence-form particle bound, which reduces over
    whole sequences). ``per_particle_logweights`` is only populated by the
    sequence form. ``std_error`` is the Monte-Carlo standard error for the
    noisy estimate (None when undefined).
    """

    value: float
    per_timestep: np.ndarray | None
    objective_id: str
    n_sequences: int = 1
    per_particle_logweights: np.ndarray | None = None
    std_error: float | None = None


def loglik_deterministic(p: Parameters, x: VisibleTrajectory) -> ObjectiveReport:
    """Direct route: stream the unroll of particle 0, accumulating emission
    log-probabilities as the states are produced."""
    per_t = np.empty(len(x))
    h = p.h1[0]
    for t in range(len(x)):
        if t > 0:
            h = np.tanh(
                p.w_hh @ h + p.w_xh @ M.encode_obs(p.cfg, x.steps[t - 1]) + p.b_h
            )
        per_t[t] = M.emission_logprob(p, h, x.steps[t])
    value = 0.0
    for t in range(len(x)):
        value += per_t[t]
    return ObjectiveReport(value=value, per_timestep=per_t, objective_id="loglik")


def variational_objective_deterministic(p: Parameters, x: VisibleTrajectory) -> ObjectiveReport:
    """Variational route: materialize the inference-model trajectory (which
    for deterministic dynamics is also the generative posterior), then score
    log p(H, X) - log q(H | X). The hidden-transition terms of p and q are
    identical and cancel, leaving the emission terms."""
    traj = M.unroll_deterministic(p, x, particle=0)
    per_t = np.empty(len(x))
    for t in range(len(x)):
        per_t[t] = M.emission_logprob(p, traj.states[t], x.steps[t])
    value = 0.0
    for t in range(len(x)):
        value += per_t[t]
    return ObjectiveReport(value=value, per_timestep=per_t, objective_id="loglik")


def noisy_elbo_estimate(
    p: Parameters,
    x: VisibleTrajectory,
    rng: RngState,
    n_mc: int,
    noise_sampler=None,
) -> ObjectiveReport:
    """Average the emission sum over n_mc noisy unrolls.

    noise_sampler optionally replaces the standard-gaussian eps draw (see
    model.unroll_noisy); used to verify the estimator against exact
    discrete-noise enumeration.
    """
    if p.sigma_is_zero():
        raise ContractViolation("sigma=0: use the deterministic objective")
    if n_mc < 1:
        raise InputError(f"n_mc must be >= 1, got {n_mc}")
    T = len(x)
    per_sample = np.empty(n_mc)
    per_t_acc = np.zeros(T)
    for m in range(n_mc):
        traj = M.unroll_noisy(p, x, rng, particle=0, noise_sampler=noise_sampler)
        lps = np.array(
            [M.emission_logprob(p, traj.states[t], x.steps[t]) for t in range(T)]
        )
        per_sample[m] = lps.sum()
        per_t_acc += lps
    value = float(np.mean(per_sample))
    se = None
    if n_mc > 1:
        se = float(np.std(per_sample, ddof=1) / math.sqrt(n_mc))
    return ObjectiveReport(
        value=value,
        per_timestep=per_t_acc / n_mc,
        objective_id="noisy_elbo",
        std_error=se,
    )


def particle_emission_table(p: Parameters, x: VisibleTrajectory) -> np.ndarray:
    """(T, L) emission log-probabilities along each particle's deterministic
    unroll."""
    if not p.sigma_is_zero():
        raise ContractViolation("particle objectives require deterministic dynamics")
    T, L = len(x), p.cfg.n_particles
    table = np.empty((T, L))
    for l in range(L):
        traj = M.unroll_deterministic(p, x, particle=l)
        for t in range(T):
            table[t, l] = M.emission_logprob(p, traj.states[t], x.steps[t])
    return table


def step_values_from_table(log_table: np.ndarray) -> np.ndarray:
    """Per-timestep log mean-over-particles emission probability."""
    log_table = np.asarray(log_table, dtype=np.float64)
    T, L = log_table.shape
    return np.array([log_sum_exp(log_table[t]) - math.log(L) for t in range(T)])


def sequence_logweights_from_table(log_table: np.ndarray) -> np.ndarray:
    """Per-particle whole-sequence log-weights (column sums)."""
    return np.asarray(log_table, dtype=np.float64).sum(axis=0)


def step_particle_objective(p: Parameters, x: VisibleTrajectory) -> ObjectiveReport:
    """Per-step form: sum over t of log((1/L) sum_l p(x[t] | h_l[t]))."""
    table = particle_emission_table(p, x)
    per_t = step_values_from_table(table)
    return ObjectiveReport(
        value=float(per_t.sum()), per_timestep=per_t, objective_id="step_particle"
    )


def sequence_particle_bound(p: Parameters, x: VisibleTrajectory) -> ObjectiveReport:
    """Sequence form: log((1/L) sum_l exp(w_l)) with w_l the whole-sequence
    emission sum of particle l."""
    table = particle_emission_table(p, x)
    w = sequence_logweights_from_table(table)
    value = log_sum_exp(w) - math.log(p.cfg.n_particles)
    return ObjectiveReport(
        value=float(value),
        per_timestep=None,
        objective_id="sequence_particle",
        per_particle_logweights=w,
    )


@dataclass
class GapReport:
    step_form: float
    sequence_form: float
    gap: float


def gap_from_table(log_table: np.ndarray) -> GapReport:
    """Step-form minus sequence-form value, from one shared emission table."""
    log_table = np.asarray(log_table, dtype=np.float64)
    L = log_table.shape[1]
    step = float(step_values_from_table(log_table).sum())
    seq = float(log_sum_exp(sequence_logweights_from_table(log_table)) - math.log(L))
    return GapReport(step_form=step, sequence_form=seq, gap=step - seq)


def objective_gap_report(p: Parameters, x: VisibleTrajectory) -> GapReport:
    return gap_from_table(particle_emission_table(p, x))


def objective_value(
    objective_id: str,
    p: Parameters,
    x: VisibleTrajectory,
    rng: RngState | None = None,
    n_mc: int = 1,
) -> ObjectiveReport:
    """Dispatch a single-sequence objective evaluation by id."""
    if objective_id == "loglik":
        return loglik_deterministic(p, x)
    if objective_id == "step_particle":
        return step_particle_objective(p, x)
    if objective_id == "sequence_particle":
        return sequence_particle_bound(p, x)
    if objective_id == "noisy_elbo":
        if rng is None:
            raise InputError("noisy_elbo needs an rng")
        return noisy_elbo_estimate(p, x, rng, n_mc)
    raise InputError(f"unknown objective {objective_id!r}")

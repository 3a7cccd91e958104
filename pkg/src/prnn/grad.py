"""Exact analytic gradients (backpropagation through time) for every
objective, an independent central-finite-difference oracle, and a comparator.

BPTT here is hand-rolled reverse mode through the unroll. Each objective is
expressed as a weighted sum of per-timestep, per-particle emission
log-probabilities; the weights are the objective's softmax responsibilities
(all ones for the plain log-likelihood), so one backward kernel serves every
objective. For the noisy bound the noise record is frozen before
differentiation and the gradient is pathwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from . import objectives as O
from .exceptions import ContractViolation, InputError
from .model import PARAM_FIELDS, Parameters, VisibleTrajectory
from .numkit import RngState


@dataclass
class GradientBundle:
    """Gradients shaped exactly like Parameters, plus the objective value at
    the evaluation point."""

    value: float
    w_hh: np.ndarray
    w_xh: np.ndarray
    b_h: np.ndarray
    h1: np.ndarray
    w_eh: np.ndarray
    b_e: np.ndarray
    log_sigma: np.ndarray | None = None

    def blocks(self):
        for name in PARAM_FIELDS:
            arr = getattr(self, name)
            if arr is not None:
                yield name, arr

    def to_flat(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for _, arr in self.blocks()])

    @classmethod
    def zeros_like(cls, p: Parameters, value: float = 0.0) -> "GradientBundle":
        kw = {name: np.zeros_like(arr) for name, arr in p.blocks()}
        return cls(value=value, **kw)

    def scale(self, c: float) -> None:
        for _, arr in self.blocks():
            arr *= c

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for _, a in self.blocks())))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.blocks())


def draw_noise_records(p: Parameters, x: VisibleTrajectory, rng: RngState, n_mc: int):
    """Frozen eps records for the noisy objective, drawn exactly as the noisy
    unroll draws them. backprop and finite_diff both use this, so rngs seeded
    identically give identical records on both routes."""
    T, H = len(x), p.cfg.hidden_dim
    records = []
    for _ in range(n_mc):
        rec = np.empty((max(T - 1, 0), H))
        for t in range(T - 1):
            rec[t] = rng.normal(H)
        records.append(rec)
    return records


def frozen_noise_objective(p: Parameters, x: VisibleTrajectory, records) -> float:
    """Mean emission sum over replayed noisy unrolls with fixed noise."""
    total = 0.0
    for rec in records:
        traj = M.replay_noisy(p, x, rec, particle=0)
        total += sum(
            M.emission_logprob(p, traj.states[t], x.steps[t]) for t in range(len(x))
        )
    return total / len(records)


def _emission_backward(p: Parameters, h: np.ndarray, x_t, weight: float, acc: GradientBundle):
    """Gradient of weight * log p(x_t | h). Returns d/dh."""
    if p.cfg.visible_kind == M.CATEGORICAL:
        logits = p.w_eh @ h + p.b_e
        shifted = logits - np.max(logits)
        probs = np.exp(shifted)
        probs /= probs.sum()
        glogits = -probs
        glogits[int(x_t)] += 1.0
        glogits *= weight
        acc.w_eh += np.outer(glogits, h)
        acc.b_e += glogits
        return p.w_eh.T @ glogits
    mean = p.w_eh @ h + p.b_e
    gdiff = (np.asarray(x_t, dtype=np.float64) - mean) * weight
    acc.w_eh += np.outer(gdiff, h)
    acc.b_e += gdiff
    return p.w_eh.T @ gdiff


def _bptt_one_particle(
    p: Parameters,
    x: VisibleTrajectory,
    particle: int,
    weights: np.ndarray,
    noise: np.ndarray | None,
    acc: GradientBundle,
) -> None:
    """Accumulate the gradient of sum_t weights[t] * log p(x[t] | h[t]) along
    one particle's (possibly noisy) unroll into acc."""
    T = len(x)
    if noise is None:
        traj = M.unroll_deterministic(p, x, particle)
        locations = traj.states[1:]
    else:
        traj = M.replay_noisy(p, x, noise, particle)
        locations = traj.locations
    states = traj.states
    sigma = p.sigma_vector()
    gbar = np.zeros(p.cfg.hidden_dim)
    for t in range(T - 1, -1, -1):
        gbar += _emission_backward(p, states[t], x.steps[t], weights[t], acc)
        if t > 0:
            if p.log_sigma is not None and noise is not None:
                acc.log_sigma += gbar * sigma * noise[t - 1]
            loc = locations[t - 1]
            dz = gbar * (1.0 - loc * loc)
            acc.w_hh += np.outer(dz, states[t - 1])
            if p.cfg.visible_kind == M.CATEGORICAL:
                acc.w_xh[:, int(x.steps[t - 1])] += dz
            else:
                acc.w_xh += np.outer(dz, x.steps[t - 1])
            acc.b_h += dz
            gbar = p.w_hh.T @ dz
        else:
            acc.h1[particle] += gbar


def backprop(
    objective_id: str,
    p: Parameters,
    x: VisibleTrajectory,
    rng: RngState | None = None,
    n_mc: int = 1,
) -> GradientBundle:
    """Exact gradient of the chosen scalar objective w.r.t. every parameter."""
    if objective_id not in O.OBJECTIVE_IDS:
        raise InputError(f"unknown objective {objective_id!r}")
    acc = GradientBundle.zeros_like(p)
    T = len(x)

    if objective_id == "loglik":
        acc.value = O.loglik_deterministic(p, x).value
        _bptt_one_particle(p, x, 0, np.ones(T), None, acc)
        return acc

    if objective_id == "step_particle":
        table = O.particle_emission_table(p, x)  # (T, L)
        per_t = O.step_values_from_table(table)
        acc.value = float(per_t.sum())
        # responsibility of particle l at step t
        resp = np.exp(table - per_t[:, None]) / p.cfg.n_particles
        for l in range(p.cfg.n_particles):
            _bptt_one_particle(p, x, l, resp[:, l], None, acc)
        return acc

    if objective_id == "sequence_particle":
        table = O.particle_emission_table(p, x)
        w = O.sequence_logweights_from_table(table)
        shifted = np.exp(w - np.max(w))
        resp = shifted / shifted.sum()
        acc.value = float(
            np.max(w) + np.log(shifted.sum()) - np.log(p.cfg.n_particles)
        )
        for l in range(p.cfg.n_particles):
            _bptt_one_particle(p, x, l, np.full(T, resp[l]), None, acc)
        return acc

    # noisy_elbo: pathwise gradient with the noise records frozen up front
    if p.sigma_is_zero():
        raise ContractViolation("sigma=0: noisy_elbo gradient undefined")
    if rng is None:
        raise InputError("noisy_elbo backprop needs an rng")
    records = draw_noise_records(p, x, rng, n_mc)
    acc.value = frozen_noise_objective(p, x, records)
    for rec in records:
        _bptt_one_particle(p, x, 0, np.full(T, 1.0 / n_mc), rec, acc)
    return acc


def central_difference(f, theta: np.ndarray, step: float) -> np.ndarray:
    """Per-coordinate central differences (f(t+d) - f(t-d)) / (2d)."""
    if step <= 0:
        raise InputError("finite-difference step must be > 0")
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for i in range(theta.size):
        plus = theta.copy()
        minus = theta.copy()
        plus[i] += step
        minus[i] -= step
        g[i] = (f(plus) - f(minus)) / (2.0 * step)
    return g


def finite_diff(
    objective_id: str,
    p: Parameters,
    x: VisibleTrajectory,
    rng: RngState | None = None,
    step: float = 1e-5,
    n_mc: int = 1,
) -> GradientBundle:
    """Finite-difference gradient oracle. For the noisy objective the same
    frozen noise records are replayed on both sides of every perturbation."""
    if objective_id not in O.OBJECTIVE_IDS:
        raise InputError(f"unknown objective {objective_id!r}")
    records = None
    if objective_id == "noisy_elbo":
        if rng is None:
            raise InputError("noisy_elbo finite_diff needs an rng")
        records = draw_noise_records(p, x, rng, n_mc)

    def f(flat: np.ndarray) -> float:
        q = p.from_flat(flat)
        if records is not None:
            return frozen_noise_objective(q, x, records)
        return O.objective_value(objective_id, q, x).value

    flat0 = p.to_flat()
    gflat = central_difference(f, flat0, step)
    out = GradientBundle.zeros_like(p, value=f(flat0))
    i = 0
    for name, arr in out.blocks():
        arr[...] = gflat[i:i + arr.size].reshape(arr.shape)
        i += arr.size
    return out


@dataclass
class CompareReport:
    max_rel_err: float
    worst_param: str


def grad_compare(a: GradientBundle, b: GradientBundle) -> CompareReport:
    """Worst relative disagreement between two bundles.

    Per scalar: |a - b| / max(1e-8, |a| + |b|); the floor keeps jointly
    vanishing gradients from reading as failures.
    """
    a_blocks = list(a.blocks())
    b_blocks = list(b.blocks())
    if [n for n, _ in a_blocks] != [n for n, _ in b_blocks]:
        raise InputError("gradient bundles have different blocks")
    worst, worst_name = 0.0, ""
    for (name, ga), (_, gb) in zip(a_blocks, b_blocks):
        if ga.shape != gb.shape:
            raise InputError(f"{name}: shape mismatch {ga.shape} vs {gb.shape}")
        rel = np.abs(ga - gb) / np.maximum(1e-8, np.abs(ga) + np.abs(gb))
        idx = np.unravel_index(np.argmax(rel), rel.shape) if rel.size else ()
        if rel.size and rel[idx] >= worst:
            worst = float(rel[idx])
            worst_name = f"{name}[{','.join(str(i) for i in idx)}]"
    return CompareReport(max_rel_err=worst, worst_param=worst_name)

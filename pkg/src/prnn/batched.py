"""Vectorized objective and gradient evaluation over equal-length batches.

Computes the same numbers as running the per-sequence routines and averaging,
but with the batch and particle axes folded into array operations. Only the
deterministic (sigma = 0) objectives are supported here; the noisy estimator
stays on the per-sequence path.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ContractViolation, InputError
from .grad import GradientBundle
from .model import CATEGORICAL, Parameters

BATCH_OBJECTIVES = ("loglik", "step_particle", "sequence_particle")

_LOG_2PI = float(np.log(2.0 * np.pi))


def _logsumexp(arr: np.ndarray, axis: int) -> np.ndarray:
    m = arr.max(axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.exp(arr - m).sum(axis=axis))


def _check_batch(p: Parameters, batch: np.ndarray) -> None:
    if not p.sigma_is_zero():
        raise ContractViolation("batched path requires sigma = 0")
    if p.cfg.visible_kind == CATEGORICAL:
        if batch.ndim != 2 or not np.issubdtype(batch.dtype, np.integer):
            raise InputError("categorical batch must be an integer (B, T) array")
        if batch.min() < 0 or batch.max() >= p.cfg.vocab:
            raise InputError("batch token out of vocab range")
    else:
        if batch.ndim != 3 or batch.shape[2] != p.cfg.visible_dim:
            raise InputError("gaussian batch must be a (B, T, D) array")
    if batch.shape[1] < 1:
        raise InputError("batch sequences must have at least one step")


def _forward(p: Parameters, batch: np.ndarray):
    """Hidden states hs (T, B, L, H) and emission table (B, T, L)."""
    B, T = batch.shape[0], batch.shape[1]
    L, H = p.cfg.n_particles, p.cfg.hidden_dim
    hs = np.empty((T, B, L, H))
    hs[0] = np.broadcast_to(p.h1[None, :, :], (B, L, H))
    for t in range(1, T):
        if p.cfg.visible_kind == CATEGORICAL:
            drive = p.w_xh.T[batch[:, t - 1]]
        else:
            drive = batch[:, t - 1] @ p.w_xh.T
        pre = hs[t - 1] @ p.w_hh.T + drive[:, None, :] + p.b_h
        hs[t] = np.tanh(pre)

    table = np.empty((B, T, L))
    for t in range(T):
        e = hs[t] @ p.w_eh.T + p.b_e
        if p.cfg.visible_kind == CATEGORICAL:
            lse = _logsumexp(e, axis=-1)
            pick = np.take_along_axis(
                e, batch[:, t][:, None, None].repeat(L, axis=1), axis=-1
            )[..., 0]
            table[:, t] = pick - lse
        else:
            diff = batch[:, t][:, None, :] - e
            D = p.cfg.visible_dim
            table[:, t] = -0.5 * D * _LOG_2PI - 0.5 * np.sum(diff * diff, axis=-1)
    return hs, table


def _particle_weights(objective_id: str, table: np.ndarray) -> np.ndarray:
    """Per (sequence, step, particle) emission weights for the backward pass."""
    B, T, L = table.shape
    if objective_id == "loglik":
        if L != 1:
            raise ContractViolation("loglik requires a single particle")
        return np.ones((B, T, L))
    if objective_id == "step_particle":
        m = table.max(axis=2, keepdims=True)
        ex = np.exp(table - m)
        return ex / ex.sum(axis=2, keepdims=True)
    if objective_id == "sequence_particle":
        tot = table.sum(axis=1)
        m = tot.max(axis=1, keepdims=True)
        ex = np.exp(tot - m)
        w = ex / ex.sum(axis=1, keepdims=True)
        return np.broadcast_to(w[:, None, :], (B, T, L)).copy()
    raise InputError(f"objective {objective_id!r} has no batched form")


def _batch_values(objective_id: str, table: np.ndarray) -> np.ndarray:
    """Per-sequence objective values (B,) from the emission table."""
    B, T, L = table.shape
    if objective_id == "loglik":
        if L != 1:
            raise ContractViolation("loglik requires a single particle")
        return table[:, :, 0].sum(axis=1)
    if objective_id == "step_particle":
        return (_logsumexp(table, axis=2) - np.log(L)).sum(axis=1)
    if objective_id == "sequence_particle":
        return _logsumexp(table.sum(axis=1), axis=1) - np.log(L)
    raise InputError(f"objective {objective_id!r} has no batched form")


def batch_objective(objective_id: str, p: Parameters, batch: np.ndarray) -> float:
    """Mean per-sequence objective over the batch."""
    _check_batch(p, batch)
    _, table = _forward(p, batch)
    return float(np.mean(_batch_values(objective_id, table)))


def batch_backprop(objective_id: str, p: Parameters, batch: np.ndarray) -> GradientBundle:
    """Mean objective and mean parameter gradient over the batch.

    Matches averaging per-sequence backprop results to float rounding.
    """
    _check_batch(p, batch)
    hs, table = _forward(p, batch)
    B, T = batch.shape[0], batch.shape[1]
    L, H = p.cfg.n_particles, p.cfg.hidden_dim
    value = float(np.mean(_batch_values(objective_id, table)))
    weights = _particle_weights(objective_id, table)

    g = GradientBundle.zeros_like(p, value=value)
    gbar = np.zeros((B, L, H))
    for t in range(T - 1, -1, -1):
        e = hs[t] @ p.w_eh.T + p.b_e
        if p.cfg.visible_kind == CATEGORICAL:
            m = e.max(axis=-1, keepdims=True)
            ex = np.exp(e - m)
            probs = ex / ex.sum(axis=-1, keepdims=True)
            dlogits = -probs * weights[:, t][..., None]
            np.add.at(
                dlogits,
                (np.arange(B)[:, None], np.arange(L)[None, :], batch[:, t][:, None]),
                weights[:, t],
            )
            g.w_eh += np.einsum("blv,blh->vh", dlogits, hs[t])
            g.b_e += dlogits.sum(axis=(0, 1))
            gbar += dlogits @ p.w_eh
        else:
            dmean = weights[:, t][..., None] * (batch[:, t][:, None, :] - e)
            g.w_eh += np.einsum("bld,blh->dh", dmean, hs[t])
            g.b_e += dmean.sum(axis=(0, 1))
            gbar += dmean @ p.w_eh

        if t > 0:
            dz = gbar * (1.0 - hs[t] * hs[t])
            g.w_hh += np.einsum("blh,blk->hk", dz, hs[t - 1])
            dz_in = dz.sum(axis=1)
            if p.cfg.visible_kind == CATEGORICAL:
                acc = np.zeros((p.cfg.input_dim, H))
                np.add.at(acc, batch[:, t - 1], dz_in)
                g.w_xh += acc.T
            else:
                g.w_xh += np.einsum("bh,bd->hd", dz_in, batch[:, t - 1])
            g.b_h += dz.sum(axis=(0, 1))
            gbar = dz @ p.w_hh
        else:
            g.h1 += gbar.sum(axis=0)

    g.scale(1.0 / B)
    g.value = value
    return g

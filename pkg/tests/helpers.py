"""Shared builders for test models and sequences."""

import math

import numpy as np

from prnn.model import CATEGORICAL, GAUSSIAN, ModelConfig, Parameters, VisibleTrajectory
from prnn.numkit import RngState


def cat_cfg(hidden=2, vocab=3, particles=1, sigma=0.0, learn=False):
    return ModelConfig(
        visible_kind=CATEGORICAL,
        hidden_dim=hidden,
        vocab=vocab,
        n_particles=particles,
        noise_sigma=sigma,
        learn_sigma=learn,
    )


def gauss_cfg(hidden=2, dim=1, particles=1, sigma=0.0, learn=False):
    return ModelConfig(
        visible_kind=GAUSSIAN,
        hidden_dim=hidden,
        visible_dim=dim,
        n_particles=particles,
        noise_sigma=sigma,
        learn_sigma=learn,
    )


def zero_params(cfg):
    log_sigma = None
    if cfg.learn_sigma:
        log_sigma = np.full(cfg.hidden_dim, math.log(cfg.noise_sigma))
    return Parameters(
        cfg=cfg,
        w_hh=np.zeros((cfg.hidden_dim, cfg.hidden_dim)),
        w_xh=np.zeros((cfg.hidden_dim, cfg.input_dim)),
        b_h=np.zeros(cfg.hidden_dim),
        h1=np.zeros((cfg.n_particles, cfg.hidden_dim)),
        w_eh=np.zeros((cfg.emission_dim, cfg.hidden_dim)),
        b_e=np.zeros(cfg.emission_dim),
        log_sigma=log_sigma,
    )


def random_params(cfg, seed=0, scale=1.0):
    rng = RngState(seed)
    h, e, m, ell = cfg.hidden_dim, cfg.input_dim, cfg.emission_dim, cfg.n_particles
    log_sigma = None
    if cfg.learn_sigma:
        log_sigma = np.log(cfg.noise_sigma) + 0.1 * rng.normal(h)
    return Parameters(
        cfg=cfg,
        w_hh=scale * rng.normal(h * h).reshape(h, h) / math.sqrt(h),
        w_xh=scale * rng.normal(h * e).reshape(h, e) / math.sqrt(e),
        b_h=0.1 * rng.normal(h),
        h1=rng.uniform(-1.0, 1.0, (ell, h)),
        w_eh=scale * rng.normal(m * h).reshape(m, h) / math.sqrt(h),
        b_e=0.1 * rng.normal(m),
        log_sigma=log_sigma,
    )


def random_tokens(cfg, T, seed=0):
    rng = RngState(seed)
    return VisibleTrajectory.from_tokens([rng.integers(0, cfg.vocab) for _ in range(T)])


def random_values(cfg, T, seed=0):
    rng = RngState(seed)
    return VisibleTrajectory.from_values(rng.normal(T * cfg.visible_dim).reshape(T, -1))


def random_sequence(cfg, T, seed=0):
    if cfg.visible_kind == CATEGORICAL:
        return random_tokens(cfg, T, seed)
    return random_values(cfg, T, seed)

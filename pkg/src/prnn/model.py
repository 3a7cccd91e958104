"""Generative recurrent model: tanh transition, categorical or gaussian
emission, deterministic unroll, and the noisy (location-scale) unroll.

The hidden update is

    h[t] = tanh(W_hh h[t-1] + W_xh enc(x[t-1]) + b_h) + sigma * eps[t]

with enc a one-hot encoding for tokens and the identity for real vectors.
The tanh output is the location; noise (when sigma > 0) is added after the
nonlinearity. h[1] is a learned parameter, one row per particle; all
particles share the transition and emission weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numkit
from .exceptions import ContractViolation, InputError
from .numkit import RngState

CATEGORICAL = "categorical"
GAUSSIAN = "gaussian"

PARAM_FIELDS = ("w_hh", "w_xh", "b_h", "h1", "w_eh", "b_e", "log_sigma")

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ModelConfig:
    """Shape and dynamics configuration.

    visible_kind: "categorical" (vocab tokens) or "gaussian" (real vectors).
    noise_sigma: scale of the post-tanh hidden noise; 0 means deterministic
    dynamics. learn_sigma promotes the scale to a per-dimension trainable
    parameter initialized at log(noise_sigma).
    """

    visible_kind: str
    hidden_dim: int
    vocab: int | None = None
    visible_dim: int | None = None
    n_particles: int = 1
    noise_sigma: float = 0.0
    learn_sigma: bool = False

    def __post_init__(self):
        if self.visible_kind not in (CATEGORICAL, GAUSSIAN):
            raise InputError(f"unknown visible_kind {self.visible_kind!r}")
        if self.visible_kind == CATEGORICAL:
            if self.vocab is None or self.vocab < 2:
                raise InputError("categorical models need vocab >= 2")
        else:
            if self.visible_dim is None or self.visible_dim < 1:
                raise InputError("gaussian models need visible_dim >= 1")
        if self.hidden_dim < 1:
            raise InputError("hidden_dim must be >= 1")
        if self.n_particles < 1:
            raise InputError("n_particles must be >= 1")
        if self.noise_sigma < 0:
            raise InputError("noise_sigma must be >= 0")
        if self.learn_sigma and self.noise_sigma <= 0:
            raise InputError("learn_sigma needs noise_sigma > 0 as the initial scale")

    @property
    def input_dim(self) -> int:
        return self.vocab if self.visible_kind == CATEGORICAL else self.visible_dim

    @property
    def emission_dim(self) -> int:
        return self.input_dim


@dataclass
class VisibleTrajectory:
    """One observed sequence: token ids (T,) or real vectors (T, D)."""

    kind: str
    steps: np.ndarray

    def __post_init__(self):
        if self.kind == CATEGORICAL:
            self.steps = np.asarray(self.steps, dtype=np.int64)
            if self.steps.ndim != 1 or self.steps.shape[0] < 1:
                raise InputError("token trajectory must be a non-empty 1-D sequence")
            if np.any(self.steps < 0):
                raise InputError("token ids must be non-negative")
        elif self.kind == GAUSSIAN:
            self.steps = np.asarray(self.steps, dtype=np.float64)
            if self.steps.ndim != 2 or self.steps.shape[0] < 1:
                raise InputError("real trajectory must be a non-empty (T, D) array")
            if not np.all(np.isfinite(self.steps)):
                raise InputError("real trajectory has non-finite entries")
        else:
            raise InputError(f"unknown trajectory kind {self.kind!r}")

    @classmethod
    def from_tokens(cls, tokens) -> "VisibleTrajectory":
        return cls(CATEGORICAL, np.asarray(tokens))

    @classmethod
    def from_values(cls, values) -> "VisibleTrajectory":
        return cls(GAUSSIAN, np.asarray(values))

    def __len__(self) -> int:
        return int(self.steps.shape[0])


@dataclass
class HiddenTrajectory:
    """Hidden path of one particle.

    states[0] is h[1] (the learned initial vector); states[t] for t >= 1 are
    the unrolled hidden states. For noisy unrolls, ``noise`` holds the eps
    draws (T-1, H) and ``locations`` the pre-noise tanh outputs, so the path
    can be replayed and differentiated exactly.
    """

    particle: int
    states: np.ndarray
    noise: np.ndarray | None = None
    locations: np.ndarray | None = None

    @property
    def T(self) -> int:
        return int(self.states.shape[0])


@dataclass
class HiddenTrajectories:
    """Per-particle hidden paths for one sequence."""

    particles: list = field(default_factory=list)

    def __getitem__(self, l: int) -> HiddenTrajectory:
        return self.particles[l]

    def __len__(self) -> int:
        return len(self.particles)


@dataclass
class Parameters:
    """All trainable quantities, shaped per the attached ModelConfig.

    h1 has one row per particle; log_sigma is present exactly when the config
    says the noise scale is learned.
    """

    cfg: ModelConfig
    w_hh: np.ndarray
    w_xh: np.ndarray
    b_h: np.ndarray
    h1: np.ndarray
    w_eh: np.ndarray
    b_e: np.ndarray
    log_sigma: np.ndarray | None = None

    def __post_init__(self):
        c = self.cfg
        h, e, m, ell = c.hidden_dim, c.input_dim, c.emission_dim, c.n_particles
        expected = {
            "w_hh": (h, h),
            "w_xh": (h, e),
            "b_h": (h,),
            "h1": (ell, h),
            "w_eh": (m, h),
            "b_e": (m,),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise InputError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name}: non-finite entries")
            setattr(self, name, arr)
        if c.learn_sigma:
            if self.log_sigma is None:
                raise InputError("learn_sigma config but log_sigma is missing")
            self.log_sigma = np.asarray(self.log_sigma, dtype=np.float64)
            if self.log_sigma.shape != (h,):
                raise InputError(
                    f"log_sigma: expected shape {(h,)}, got {self.log_sigma.shape}"
                )
            if not np.all(np.isfinite(self.log_sigma)):
                raise InputError("log_sigma: non-finite entries")
        elif self.log_sigma is not None:
            raise InputError("log_sigma given but config does not learn sigma")

    # -- block access helpers -------------------------------------------------

    def blocks(self):
        """(name, array) pairs in declared order, skipping inactive log_sigma."""
        for name in PARAM_FIELDS:
            arr = getattr(self, name)
            if arr is not None:
                yield name, arr

    def copy(self) -> "Parameters":
        return Parameters(
            self.cfg,
            *(np.array(getattr(self, n)) if getattr(self, n) is not None else None
              for n in PARAM_FIELDS),
        )

    def n_scalars(self) -> int:
        return sum(arr.size for _, arr in self.blocks())

    def to_flat(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for _, arr in self.blocks()])

    def from_flat(self, flat: np.ndarray) -> "Parameters":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_scalars(),):
            raise InputError("from_flat: wrong number of scalars")
        out, i = {}, 0
        for name, arr in self.blocks():
            out[name] = flat[i:i + arr.size].reshape(arr.shape)
            i += arr.size
        return Parameters(self.cfg, **{n: out.get(n) for n in PARAM_FIELDS})

    # -- noise scale ----------------------------------------------------------

    def sigma_vector(self) -> np.ndarray:
        """Effective per-dimension noise scale (exp(log_sigma) when learned)."""
        if self.log_sigma is not None:
            return np.exp(self.log_sigma)
        return np.full(self.cfg.hidden_dim, self.cfg.noise_sigma)

    def sigma_is_zero(self) -> bool:
        return self.log_sigma is None and self.cfg.noise_sigma == 0.0


def encode_obs(cfg: ModelConfig, x) -> np.ndarray:
    """One-hot for tokens, identity (validated) for real vectors."""
    if cfg.visible_kind == CATEGORICAL:
        tok = int(x)
        if not 0 <= tok < cfg.vocab:
            raise InputError(f"token {tok} out of range for vocab {cfg.vocab}")
        e = np.zeros(cfg.vocab)
        e[tok] = 1.0
        return e
    return numkit.as_vector(x, "observation")


def transition_step(p: Parameters, h_prev: np.ndarray, x_prev, eps=None) -> np.ndarray:
    """One hidden update. eps must be present iff the model is noisy."""
    h_prev = numkit.as_vector(h_prev, "h_prev")
    if h_prev.shape[0] != p.cfg.hidden_dim:
        raise InputError(
            f"h_prev has length {h_prev.shape[0]}, model hidden_dim is {p.cfg.hidden_dim}"
        )
    noisy = not p.sigma_is_zero()
    if noisy and eps is None:
        raise ContractViolation("noisy model: transition_step needs an eps draw")
    if not noisy and eps is not None:
        raise ContractViolation("sigma=0 model: transition_step must not get eps")
    loc = np.tanh(p.w_hh @ h_prev + p.w_xh @ encode_obs(p.cfg, x_prev) + p.b_h)
    if eps is None:
        return loc
    eps = numkit.as_vector(eps, "eps")
    if eps.shape[0] != p.cfg.hidden_dim:
        raise InputError("eps has wrong length")
    return loc + p.sigma_vector() * eps


def emission_logprob(p: Parameters, h: np.ndarray, x) -> float:
    """log p(x | h): log-softmax pick for tokens, unit-covariance gaussian
    density for real vectors."""
    h = np.asarray(h, dtype=np.float64)
    if p.cfg.visible_kind == CATEGORICAL:
        tok = int(x)
        if not 0 <= tok < p.cfg.vocab:
            raise InputError(f"token {tok} out of range for vocab {p.cfg.vocab}")
        logits = p.w_eh @ h + p.b_e
        shifted = logits - np.max(logits)
        return float(shifted[tok] - np.log(np.sum(np.exp(shifted))))
    mean = p.w_eh @ h + p.b_e
    xv = numkit.as_vector(x, "observation")
    if xv.shape != mean.shape:
        raise InputError("observation dimension does not match emission dimension")
    diff = xv - mean
    return float(-p.cfg.visible_dim * _HALF_LOG_2PI - 0.5 * np.dot(diff, diff))


def unroll_deterministic(p: Parameters, x: VisibleTrajectory, particle: int = 0) -> HiddenTrajectory:
    """Hidden path with sigma treated as 0: pure function of (p, x, particle)."""
    T = len(x)
    states = np.empty((T, p.cfg.hidden_dim))
    states[0] = p.h1[particle]
    for t in range(1, T):
        states[t] = np.tanh(
            p.w_hh @ states[t - 1]
            + p.w_xh @ encode_obs(p.cfg, x.steps[t - 1])
            + p.b_h
        )
    return HiddenTrajectory(particle=particle, states=states)


def unroll_noisy(
    p: Parameters,
    x: VisibleTrajectory,
    rng: RngState,
    particle: int = 0,
    noise_sampler=None,
) -> HiddenTrajectory:
    """Hidden path with fresh per-timestep noise drawn from rng.

    noise_sampler(rng, n) overrides the default standard-gaussian draw (used
    for discrete-noise verification against the enumeration oracle). The
    draws are recorded so the path can be replayed exactly.
    """
    if p.sigma_is_zero():
        raise ContractViolation("sigma=0: use unroll_deterministic")
    T, H = len(x), p.cfg.hidden_dim
    draw = noise_sampler if noise_sampler is not None else numkit.sample_gauss
    noise = np.empty((max(T - 1, 0), H))
    for t in range(T - 1):
        noise[t] = draw(rng, H)
    return replay_noisy(p, x, noise, particle)


def replay_noisy(
    p: Parameters, x: VisibleTrajectory, noise: np.ndarray, particle: int = 0
) -> HiddenTrajectory:
    """Re-run the noisy recursion with a fixed noise record."""
    if p.sigma_is_zero():
        raise ContractViolation("sigma=0: use unroll_deterministic")
    T, H = len(x), p.cfg.hidden_dim
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (T - 1, H):
        raise InputError(f"noise record must have shape {(T - 1, H)}")
    sigma = p.sigma_vector()
    states = np.empty((T, H))
    locations = np.empty((max(T - 1, 0), H))
    states[0] = p.h1[particle]
    for t in range(1, T):
        loc = np.tanh(
            p.w_hh @ states[t - 1]
            + p.w_xh @ encode_obs(p.cfg, x.steps[t - 1])
            + p.b_h
        )
        locations[t - 1] = loc
        states[t] = loc + sigma * noise[t - 1]
    return HiddenTrajectory(particle=particle, states=states, noise=noise, locations=locations)


def unroll_all_particles(p: Parameters, x: VisibleTrajectory) -> HiddenTrajectories:
    """Deterministic unroll of every particle."""
    return HiddenTrajectories(
        [unroll_deterministic(p, x, l) for l in range(p.cfg.n_particles)]
    )

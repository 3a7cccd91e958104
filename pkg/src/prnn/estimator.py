"""Scikit-learn style front door for the sequence model.

ParticleRNN follows the density-estimator conventions: ``fit`` trains on a
collection of sequences, ``score_samples`` returns per-sequence objective
values, ``score`` their sum. Constructor arguments are stored verbatim and
validated in fit, so ``clone`` and ``get_params`` behave as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import Dataset
from .exceptions import InputError
from .model import CATEGORICAL, GAUSSIAN, ModelConfig, VisibleTrajectory
from .numkit import RngState
from .objectives import objective_value
from .trainer import TrainConfig, evaluate, train


def sequences_to_dataset(X, vocab: int | None = None) -> Dataset:
    """Coerce user input to a Dataset.

    Accepted forms: an integer (n, T) array or list of token-id lists
    (categorical), or a float (n, T, D) array (gaussian).
    """
    if isinstance(X, Dataset):
        return X
    if isinstance(X, np.ndarray) and X.ndim == 3:
        seqs = [VisibleTrajectory.from_values(row) for row in X]
        return Dataset(seqs, GAUSSIAN, dim=X.shape[2])
    if isinstance(X, np.ndarray) and X.ndim == 2:
        if not np.issubdtype(X.dtype, np.integer):
            if not np.allclose(X, np.round(X)):
                raise InputError("2-D input must contain integer token ids")
            X = X.astype(np.int64)
        seqs = [VisibleTrajectory.from_tokens(row) for row in X]
    elif isinstance(X, (list, tuple)):
        seqs = [VisibleTrajectory.from_tokens(row) for row in X]
    else:
        raise InputError(f"cannot interpret {type(X).__name__} as sequences")
    if vocab is None:
        vocab = max(int(s.steps.max()) for s in seqs) + 1
    return Dataset(seqs, CATEGORICAL, vocab=max(vocab, 2))


class ParticleRNN(BaseEstimator):
    """Recurrent sequence density estimator with particle averaging.

    Parameters mirror the library's ModelConfig / TrainConfig; see those for
    semantics. ``objective`` picks the training objective; with the default
    single particle and "loglik" this is ordinary maximum likelihood.
    """

    def __init__(
        self,
        hidden_dim: int = 8,
        n_particles: int = 1,
        objective: str = "loglik",
        vocab: int | None = None,
        noise_sigma: float = 0.0,
        learn_sigma: bool = False,
        lr: float = 0.05,
        batch_size: int = 32,
        epochs: int = 100,
        optimizer: str = "adam",
        eval_every: int = 1,
        patience: int = 0,
        clip_norm: float = 5.0,
        n_mc: int = 1,
        valid_fraction: float = 0.0,
        random_state: int = 0,
    ):
        self.hidden_dim = hidden_dim
        self.n_particles = n_particles
        self.objective = objective
        self.vocab = vocab
        self.noise_sigma = noise_sigma
        self.learn_sigma = learn_sigma
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.optimizer = optimizer
        self.eval_every = eval_every
        self.patience = patience
        self.clip_norm = clip_norm
        self.n_mc = n_mc
        self.valid_fraction = valid_fraction
        self.random_state = random_state

    def _model_config(self, d: Dataset) -> ModelConfig:
        if d.kind == CATEGORICAL:
            return ModelConfig(
                visible_kind=CATEGORICAL,
                hidden_dim=self.hidden_dim,
                vocab=d.vocab,
                n_particles=self.n_particles,
                noise_sigma=self.noise_sigma,
                learn_sigma=self.learn_sigma,
            )
        return ModelConfig(
            visible_kind=GAUSSIAN,
            hidden_dim=self.hidden_dim,
            visible_dim=d.dim,
            n_particles=self.n_particles,
            noise_sigma=self.noise_sigma,
            learn_sigma=self.learn_sigma,
        )

    def fit(self, X, y=None):
        """Train on sequences X; y is ignored (density estimation)."""
        d = sequences_to_dataset(X, vocab=self.vocab)
        if not 0.0 <= self.valid_fraction < 1.0:
            raise InputError("valid_fraction must be in [0, 1)")
        if self.valid_fraction > 0.0 and d.n >= 4:
            perm = RngState(self.random_state).spawn(7).permutation(d.n)
            n_va = max(1, round(d.n * self.valid_fraction))
            va = d.subset(perm[:n_va], split="valid")
            tr = d.subset(perm[n_va:], split="train")
        else:
            tr, va = d, d
        tcfg = TrainConfig(
            objective_id=self.objective,
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.random_state,
            eval_every=self.eval_every,
            patience=self.patience,
            optimizer=self.optimizer,
            clip_norm=self.clip_norm,
            n_mc=self.n_mc,
        )
        result = train(tcfg, self._model_config(d), tr, va)
        self.checkpoint_ = result.best
        self.final_checkpoint_ = result.final
        self.params_ = result.best.params
        self.metrics_ = result.metrics
        self.n_sequences_fit_ = d.n
        return self

    def _fitted_dataset(self, X) -> Dataset:
        if not hasattr(self, "params_"):
            raise NotFittedError("ParticleRNN instance is not fitted yet")
        cfg = self.params_.cfg
        d = sequences_to_dataset(
            X, vocab=cfg.vocab if cfg.visible_kind == CATEGORICAL else None
        )
        if d.kind != cfg.visible_kind:
            raise InputError(f"expected {cfg.visible_kind} sequences, got {d.kind}")
        return d

    def score_samples(self, X) -> np.ndarray:
        """Per-sequence value of the fitted objective."""
        d = self._fitted_dataset(X)
        rng = RngState(self.random_state) if self.objective == "noisy_elbo" else None
        vals = [
            objective_value(self.objective, self.params_, s, rng=rng, n_mc=self.n_mc).value
            for s in d.sequences
        ]
        return np.asarray(vals)

    def score(self, X, y=None) -> float:
        """Total objective over X (sum of score_samples)."""
        return float(np.sum(self.score_samples(X)))

    def per_step_score(self, X) -> float:
        """Mean objective per timestep, convenient for comparing lengths."""
        d = self._fitted_dataset(X)
        rep = evaluate(self.params_, d, self.objective, n_mc=self.n_mc)
        return rep.per_step_value

"""Estimator facade: sklearn conventions, input coercion, scoring."""

import numpy as np
import numpy.testing as npt
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from prnn.data import BimodalSpec, Dataset, gen_bimodal
from prnn.estimator import ParticleRNN, sequences_to_dataset
from prnn.exceptions import ConfigError, InputError
from prnn.model import CATEGORICAL, GAUSSIAN
from prnn.numkit import RngState


def token_array(n=24, T=5, seed=0):
    d = gen_bimodal(BimodalSpec(T=T, t0=2, rho=0.5), n, RngState(seed))
    return d.token_matrix()


# ---------------------------------------------------------------- coercion


def test_sequences_to_dataset_forms():
    arr = np.array([[0, 1, 2], [2, 1, 0]])
    d = sequences_to_dataset(arr)
    assert d.kind == CATEGORICAL and d.vocab == 3 and d.n == 2

    lists = sequences_to_dataset([[0, 1], [1, 0], [1, 1]])
    assert lists.n == 3 and lists.vocab == 2

    floats = sequences_to_dataset(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert floats.kind == CATEGORICAL  # integral floats are token ids

    real = sequences_to_dataset(RngState(0).normal(12).reshape(2, 3, 2))
    assert real.kind == GAUSSIAN and real.dim == 2

    passthrough = sequences_to_dataset(d)
    assert passthrough is d

    assert sequences_to_dataset(arr, vocab=7).vocab == 7


def test_sequences_to_dataset_rejects_bad_input():
    with pytest.raises(InputError):
        sequences_to_dataset(np.array([[0.5, 1.2]]))
    with pytest.raises(InputError):
        sequences_to_dataset({"not": "sequences"})


# ---------------------------------------------------------------- protocol


def test_get_params_round_trip():
    est = ParticleRNN(hidden_dim=4, n_particles=2, objective="step_particle")
    params = est.get_params()
    assert params["hidden_dim"] == 4
    assert params["n_particles"] == 2
    est2 = ParticleRNN(**params)
    assert est2.get_params() == params


def test_clone_preserves_settings():
    est = ParticleRNN(hidden_dim=3, epochs=7, random_state=5)
    dup = clone(est)
    assert dup.get_params() == est.get_params()


def test_set_params():
    est = ParticleRNN()
    est.set_params(hidden_dim=6, lr=0.01)
    assert est.hidden_dim == 6 and est.lr == 0.01


def test_constructor_defers_validation():
    # sklearn convention: bad settings surface in fit, not __init__
    est = ParticleRNN(hidden_dim=-5)
    with pytest.raises(InputError):
        est.fit(token_array())
    with pytest.raises(ConfigError):
        ParticleRNN(hidden_dim=2, objective="bogus").fit(token_array())


def test_unfitted_raises():
    est = ParticleRNN()
    with pytest.raises(NotFittedError):
        est.score(token_array())
    with pytest.raises(NotFittedError):
        est.score_samples(token_array())


# ---------------------------------------------------------------- fitting


def test_fit_sets_attributes():
    X = token_array()
    est = ParticleRNN(hidden_dim=3, epochs=4, batch_size=8)
    out = est.fit(X)
    assert out is est
    assert est.params_.cfg.hidden_dim == 3
    assert est.n_sequences_fit_ == 24
    assert len(est.metrics_) >= 4
    assert est.checkpoint_.params is est.params_


def test_score_is_sum_of_score_samples():
    X = token_array()
    est = ParticleRNN(hidden_dim=3, epochs=4, batch_size=8).fit(X)
    per = est.score_samples(X)
    assert per.shape == (24,)
    npt.assert_allclose(est.score(X), per.sum(), rtol=0, atol=1e-9)
    assert np.isfinite(est.per_step_score(X))


def test_fit_deterministic_in_random_state():
    X = token_array()
    a = ParticleRNN(hidden_dim=3, epochs=5, batch_size=8, random_state=1).fit(X)
    b = ParticleRNN(hidden_dim=3, epochs=5, batch_size=8, random_state=1).fit(X)
    npt.assert_array_equal(a.params_.to_flat(), b.params_.to_flat())
    c = ParticleRNN(hidden_dim=3, epochs=5, batch_size=8, random_state=2).fit(X)
    assert not np.array_equal(a.params_.to_flat(), c.params_.to_flat())


def test_fit_improves_score():
    X = token_array(n=32)
    trained = ParticleRNN(hidden_dim=4, epochs=25, batch_size=8).fit(X)
    brief = ParticleRNN(hidden_dim=4, epochs=1, batch_size=8).fit(X)
    assert trained.score(X) > brief.score(X)


def test_fit_with_validation_carve():
    X = token_array(n=20)
    est = ParticleRNN(
        hidden_dim=3, epochs=4, batch_size=8, valid_fraction=0.25
    ).fit(X)
    valid_rows = [r for r in est.metrics_ if r.split == "valid"]
    assert valid_rows and est.checkpoint_.best_valid >= max(
        r.value for r in valid_rows
    ) - 1e-12
    with pytest.raises(InputError):
        ParticleRNN(valid_fraction=1.5).fit(X)


def test_fit_particles_objective():
    X = token_array()
    est = ParticleRNN(
        hidden_dim=2, n_particles=3, objective="step_particle", epochs=4, batch_size=8
    ).fit(X)
    assert est.params_.h1.shape == (3, 2)
    samples = est.score_samples(X)
    assert samples.shape == (24,)


def test_fit_gaussian_sequences():
    X = RngState(3).normal(2 * 24 * 4).reshape(24, 4, 2)
    est = ParticleRNN(hidden_dim=3, epochs=3, batch_size=8).fit(X)
    assert est.params_.cfg.visible_kind == GAUSSIAN
    assert est.params_.cfg.visible_dim == 2
    assert np.isfinite(est.score(X))


def test_score_rejects_kind_mismatch():
    est = ParticleRNN(hidden_dim=2, epochs=2, batch_size=8).fit(token_array())
    real = RngState(0).normal(6).reshape(1, 3, 2)
    with pytest.raises(InputError):
        est.score(real)


def test_vocab_override_respected():
    X = token_array()
    est = ParticleRNN(hidden_dim=2, epochs=2, batch_size=8, vocab=5).fit(X)
    assert est.params_.cfg.vocab == 5
    # scoring tolerates tokens beyond the training set but inside the vocab
    wider = np.array([[0, 4, 4, 1, 2]])
    assert np.isfinite(est.score(wider))


def test_dataset_passthrough_fit():
    d = gen_bimodal(BimodalSpec(T=5, t0=2, rho=0.5), 16, RngState(9))
    est = ParticleRNN(hidden_dim=2, epochs=2, batch_size=8).fit(d)
    assert isinstance(est._fitted_dataset(d), Dataset)

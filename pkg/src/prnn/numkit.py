"""Dense math kernel: validated float64 vectors and matrices, overflow-safe
log-domain reductions, and a seedable random stream with derivable substreams.

Everything here is double precision. Vectors and matrices are plain numpy
arrays that have passed :func:`as_vector` / :func:`as_matrix` validation
(finite entries, correct rank); the semantic meaning of any particular array
is assigned by the model layer.
"""

from __future__ import annotations

import numpy as np

from .exceptions import InputError

Vector = np.ndarray  # 1-D float64
Matrix = np.ndarray  # 2-D float64


def as_vector(data, name: str = "vector") -> Vector:
    """Coerce to a finite 1-D float64 array, or raise InputError."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name}: expected 1-D data, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: non-finite entries")
    return arr


def as_matrix(data, name: str = "matrix") -> Matrix:
    """Coerce to a finite 2-D float64 array, or raise InputError."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"{name}: expected 2-D data, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: non-finite entries")
    return arr


def matvec(m: Matrix, v: Vector) -> Vector:
    """Matrix-vector product with shape checking."""
    m = as_matrix(m, "matvec: m")
    v = as_vector(v, "matvec: v")
    if m.shape[1] != v.shape[0]:
        raise InputError(
            f"matvec: dimension mismatch, matrix is {m.shape[0]}x{m.shape[1]} "
            f"but vector has length {v.shape[0]}"
        )
    return m @ v


def log_sum_exp(v) -> float:
    """log(sum(exp(v_i))), max-shifted so inputs up to +-1e6 cannot overflow."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] == 0:
        raise InputError("log_sum_exp: need a non-empty 1-D input")
    m = float(np.max(arr))
    return m + float(np.log(np.sum(np.exp(arr - m))))


def log_softmax(logits) -> Vector:
    """Log-probabilities from logits; exp of the result sums to 1."""
    x = as_vector(logits, "log_softmax: logits")
    shifted = x - np.max(x)
    return shifted - np.log(np.sum(np.exp(shifted)))


class RngState:
    """Deterministic random stream (numpy PCG64).

    The same seed reproduces the identical draw sequence across runs.
    Substreams come from :meth:`spawn`, which mixes (seed, key) through a
    SeedSequence so different keys give statistically independent streams
    and the same key always gives the same stream.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.default_rng(self.seed)

    def spawn(self, key: int) -> "RngState":
        child = RngState.__new__(RngState)
        child.seed = self.seed
        child._gen = np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(int(key),))
        )
        return child

    # draw methods used across the package

    def normal(self, n: int) -> Vector:
        return self._gen.standard_normal(int(n))

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def random(self) -> float:
        return float(self._gen.random())

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(int(n))

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))

    # state capture for checkpointing

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def sample_gauss(rng: RngState, n: int) -> Vector:
    """n independent standard-normal draws; advances rng deterministically."""
    if n < 1:
        raise InputError(f"sample_gauss: n must be >= 1, got {n}")
    return rng.normal(n)

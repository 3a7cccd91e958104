"""Synthetic bimodal sequence generation and dataset file IO.

Token files: one sequence per line, space-separated decimal token ids.
Real-valued files: a ``dim=D,T=T`` header line, then one sequence per line as
comma-separated reals in repeated groups of D. Both formats round-trip
byte-identically for files this module wrote.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError
from .model import CATEGORICAL, GAUSSIAN, VisibleTrajectory
from .numkit import RngState


@dataclass
class Dataset:
    sequences: list
    kind: str
    vocab: int | None = None
    dim: int | None = None
    split: str = ""

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, GAUSSIAN):
            raise InputError(f"unknown dataset kind {self.kind!r}")
        if not self.sequences:
            raise InputError("empty dataset")
        for s in self.sequences:
            if s.kind != self.kind:
                raise InputError("dataset sequences must share one kind")
        if self.kind == CATEGORICAL:
            if self.vocab is None or self.vocab < 2:
                raise InputError("token dataset needs vocab >= 2")
            for i, s in enumerate(self.sequences):
                bad = s.steps[s.steps >= self.vocab]
                if bad.size:
                    raise InputError(
                        f"sequence {i}: token {int(bad[0])} >= vocab {self.vocab}"
                    )
        else:
            if self.dim is None or self.dim < 1:
                raise InputError("real dataset needs dim >= 1")
            for i, s in enumerate(self.sequences):
                if s.steps.shape[1] != self.dim:
                    raise InputError(f"sequence {i}: dimension != {self.dim}")

    @property
    def n(self) -> int:
        return len(self.sequences)

    def common_length(self) -> int | None:
        """Shared sequence length, or None if lengths differ."""
        lengths = {len(s) for s in self.sequences}
        return lengths.pop() if len(lengths) == 1 else None

    def token_matrix(self) -> np.ndarray:
        """(n, T) token matrix; requires categorical equal-length data."""
        if self.kind != CATEGORICAL or self.common_length() is None:
            raise InputError("token_matrix needs equal-length token sequences")
        return np.stack([s.steps for s in self.sequences])

    def value_tensor(self) -> np.ndarray:
        """(n, T, D) array; requires gaussian equal-length data."""
        if self.kind != GAUSSIAN or self.common_length() is None:
            raise InputError("value_tensor needs equal-length real sequences")
        return np.stack([s.steps for s in self.sequences])

    def subset(self, indices, split: str = "") -> "Dataset":
        return Dataset(
            [self.sequences[i] for i in indices],
            self.kind,
            vocab=self.vocab,
            dim=self.dim,
            split=split or self.split,
        )


def _default_pattern(first: int, length: int) -> tuple:
    """Alternating continuation over {1, 2} starting opposite the mode token."""
    other = 2 if first == 1 else 1
    return tuple(other if k % 2 == 0 else first for k in range(length))


@dataclass(frozen=True)
class BimodalSpec:
    """Two-branch token generator.

    Tokens before step t0 are 0; at t0 the sequence branches (token 1 with
    probability rho, else token 2); afterwards a deterministic per-mode
    pattern over {1, 2} plays out, so the only irreducible uncertainty is the
    branch choice.
    """

    T: int
    t0: int
    rho: float
    vocab: int = 3
    pattern_a: tuple = field(default=None)
    pattern_b: tuple = field(default=None)

    def __post_init__(self):
        if self.vocab < 3:
            raise InputError("bimodal generator needs vocab >= 3")
        if not 1 < self.t0 < self.T:
            raise InputError(f"need 1 < t0 < T, got t0={self.t0}, T={self.T}")
        if not 0.0 <= self.rho <= 1.0:
            raise InputError(f"rho must be in [0, 1], got {self.rho}")
        tail = self.T - self.t0
        if self.pattern_a is None:
            object.__setattr__(self, "pattern_a", _default_pattern(1, tail))
        if self.pattern_b is None:
            object.__setattr__(self, "pattern_b", _default_pattern(2, tail))
        for name, pat in (("pattern_a", self.pattern_a), ("pattern_b", self.pattern_b)):
            if len(pat) != tail:
                raise InputError(f"{name} must have length T - t0 = {tail}")
            if any(tok not in (1, 2) for tok in pat):
                raise InputError(f"{name} tokens must be in {{1, 2}}")


def gen_bimodal(spec: BimodalSpec, n: int, rng: RngState) -> Dataset:
    """n sequences from the two-branch construction; reproducible per seed."""
    if n < 1:
        raise InputError("n must be >= 1")
    seqs = []
    for _ in range(n):
        mode_a = rng.random() < spec.rho
        tokens = [0] * (spec.t0 - 1)
        tokens.append(1 if mode_a else 2)
        tokens.extend(spec.pattern_a if mode_a else spec.pattern_b)
        seqs.append(VisibleTrajectory.from_tokens(tokens))
    return Dataset(seqs, CATEGORICAL, vocab=spec.vocab)


def mode_fractions(spec: BimodalSpec, d: Dataset) -> tuple:
    """(fraction mode A, fraction mode B) by the branch token at t0."""
    a = sum(1 for s in d.sequences if int(s.steps[spec.t0 - 1]) == 1)
    return a / d.n, (d.n - a) / d.n


def analytic_optimal_loglik(spec: BimodalSpec) -> float:
    """Best achievable expected log-likelihood per sequence, in nats.

    Every step is deterministic given the prefix except the branch at t0,
    which contributes the negative Bernoulli entropy of rho.
    """
    if spec.rho in (0.0, 1.0):
        return 0.0
    return spec.rho * math.log(spec.rho) + (1 - spec.rho) * math.log(1 - spec.rho)


def save_dataset(d: Dataset, path) -> None:
    """Write the canonical text format for the dataset's kind."""
    lines = []
    if d.kind == CATEGORICAL:
        for s in d.sequences:
            lines.append(" ".join(str(int(t)) for t in s.steps))
    else:
        T = d.common_length()
        if T is None:
            raise InputError("real-valued format requires equal-length sequences")
        lines.append(f"dim={d.dim},T={T}")
        for s in d.sequences:
            lines.append(",".join("%.12e" % v for v in s.steps.ravel()))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_sequences(path, kind: str, vocab: int | None = None) -> Dataset:
    """Parse a dataset file; errors name the offending line."""
    with open(path, "r", encoding="ascii") as fh:
        raw = fh.read()
    lines = [ln for ln in raw.split("\n") if ln.strip() != ""]
    if not lines:
        raise InputError(f"{path}: empty dataset")
    if kind == CATEGORICAL:
        seqs = []
        for i, ln in enumerate(lines, start=1):
            try:
                tokens = [int(tok) for tok in ln.split()]
            except ValueError:
                raise InputError(f"{path}: line {i}: not a token sequence") from None
            if not tokens:
                raise InputError(f"{path}: line {i}: empty sequence")
            if vocab is not None:
                for tok in tokens:
                    if not 0 <= tok < vocab:
                        raise InputError(
                            f"{path}: line {i}: token {tok} out of range for vocab {vocab}"
                        )
            seqs.append(VisibleTrajectory.from_tokens(tokens))
        v = vocab if vocab is not None else max(int(s.steps.max()) for s in seqs) + 1
        return Dataset(seqs, CATEGORICAL, vocab=max(v, 2))
    if kind == GAUSSIAN:
        header = lines[0].strip()
        try:
            dpart, tpart = header.split(",")
            dim = int(dpart.split("=")[1])
            T = int(tpart.split("=")[1])
        except (ValueError, IndexError):
            raise InputError(f"{path}: line 1: bad header {header!r}") from None
        seqs = []
        for i, ln in enumerate(lines[1:], start=2):
            try:
                vals = [float(v) for v in ln.split(",")]
            except ValueError:
                raise InputError(f"{path}: line {i}: not a real sequence") from None
            if len(vals) != dim * T:
                raise InputError(
                    f"{path}: line {i}: expected {dim * T} values, got {len(vals)}"
                )
            seqs.append(VisibleTrajectory.from_values(np.array(vals).reshape(T, dim)))
        if not seqs:
            raise InputError(f"{path}: empty dataset")
        return Dataset(seqs, GAUSSIAN, dim=dim)
    raise InputError(f"unknown dataset kind {kind!r}")


def split(d: Dataset, fractions, rng: RngState):
    """Seeded shuffle, then contiguous cut into train/valid/test."""
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f <= 0 for f in fr):
        raise InputError("need three positive split fractions")
    if abs(sum(fr) - 1.0) > 1e-9:
        raise InputError(f"fractions must sum to 1, got {sum(fr)}")
    perm = rng.permutation(d.n)
    c1 = round(d.n * fr[0])
    c2 = round(d.n * (fr[0] + fr[1]))
    parts = (perm[:c1], perm[c1:c2], perm[c2:])
    if any(len(part) == 0 for part in parts):
        raise InputError(f"{d.n} sequences are too few for non-empty splits {fr}")
    tags = ("train", "valid", "test")
    return tuple(d.subset(part, split=tag) for part, tag in zip(parts, tags))

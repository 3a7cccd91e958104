"""Optimization loop, evaluation, metrics stream, and checkpoint persistence.

The optimizers are plain minimizers; the training loop hands them the negated
objective gradient, so training ascends the chosen objective. Given the same
seed, configs, and data, the loop produces an identical metrics stream and
final checkpoint on every run.
"""

from __future__ import annotations

import dataclasses
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import batched
from .data import Dataset
from .exceptions import CheckpointError, ConfigError, NumericsError
from .grad import GradientBundle, backprop
from .model import CATEGORICAL, ModelConfig, Parameters
from .numkit import RngState
from .objectives import OBJECTIVE_IDS, objective_value
from .oracle import EnumerationBudget, NoiseGrid, enumerate_exact_elbo

CHECKPOINT_MAGIC_PREFIX = b"PRNN"
CHECKPOINT_VERSION = 1
METRICS_COLUMNS = (
    "epoch",
    "split",
    "objective_id",
    "value",
    "per_step_value",
    "sigma",
    "n_particles",
    "seed",
    "wall_ms",
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    objective_id: str = "step_particle"
    lr: float = 0.05
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    eval_every: int = 1
    patience: int = 0
    optimizer: str = "adam"
    clip_norm: float = 5.0
    n_mc: int = 1

    def __post_init__(self):
        if self.objective_id not in OBJECTIVE_IDS:
            raise ConfigError(f"unknown objective_id {self.objective_id!r}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.clip_norm < 0:
            raise ConfigError(f"clip_norm must be >= 0, got {self.clip_norm}")
        if self.n_mc < 1:
            raise ConfigError(f"n_mc must be >= 1, got {self.n_mc}")


def check_objective_compat(objective_id: str, cfg: ModelConfig) -> None:
    """Reject objective/model pairings that cannot be evaluated."""
    if objective_id not in OBJECTIVE_IDS:
        raise ConfigError(f"unknown objective_id {objective_id!r}")
    if objective_id == "noisy_elbo":
        if cfg.noise_sigma == 0.0:
            raise ConfigError("objective noisy_elbo requires noise_sigma > 0")
    else:
        if cfg.noise_sigma != 0.0:
            raise ConfigError(
                f"objective {objective_id} requires noise_sigma = 0, "
                f"got {cfg.noise_sigma}"
            )
    if objective_id == "loglik" and cfg.n_particles != 1:
        raise ConfigError("objective loglik requires n_particles = 1")


def _check_data_compat(cfg: ModelConfig, d: Dataset, label: str) -> None:
    if d.kind != cfg.visible_kind:
        raise ConfigError(f"{label} dataset kind {d.kind} != model {cfg.visible_kind}")
    if cfg.visible_kind == CATEGORICAL and d.vocab > cfg.vocab:
        raise ConfigError(f"{label} dataset vocab {d.vocab} exceeds model {cfg.vocab}")
    if cfg.visible_kind != CATEGORICAL and d.dim != cfg.visible_dim:
        raise ConfigError(f"{label} dataset dim {d.dim} != model {cfg.visible_dim}")


def init_params(cfg: ModelConfig, rng: RngState) -> Parameters:
    """Uniform(-1/sqrt(fan_in)) weights, zero biases, spread initial states.

    h1 rows are drawn independently from uniform(-1, 1) so particles start in
    distinct regions of the state space.
    """
    s_h = 1.0 / np.sqrt(cfg.hidden_dim)
    s_x = 1.0 / np.sqrt(cfg.input_dim)
    w_hh = rng.uniform(-s_h, s_h, (cfg.hidden_dim, cfg.hidden_dim))
    w_xh = rng.uniform(-s_x, s_x, (cfg.hidden_dim, cfg.input_dim))
    h1 = rng.uniform(-1.0, 1.0, (cfg.n_particles, cfg.hidden_dim))
    w_eh = rng.uniform(-s_h, s_h, (cfg.emission_dim, cfg.hidden_dim))
    log_sigma = None
    if cfg.learn_sigma:
        log_sigma = np.full(cfg.hidden_dim, np.log(cfg.noise_sigma))
    return Parameters(
        cfg=cfg,
        w_hh=w_hh,
        w_xh=w_xh,
        b_h=np.zeros(cfg.hidden_dim),
        h1=h1,
        w_eh=w_eh,
        b_e=np.zeros(cfg.emission_dim),
        log_sigma=log_sigma,
    )


class SgdOptimizer:
    """theta <- theta - lr * g."""

    kind = "sgd"

    def __init__(self):
        self.t = 0

    def step(self, p: Parameters, g: GradientBundle, lr: float) -> None:
        self.t += 1
        for name, arr in p.blocks():
            arr -= lr * getattr(g, name)

    def moment_blocks(self, p: Parameters):
        return []

    def clone(self) -> "SgdOptimizer":
        c = SgdOptimizer()
        c.t = self.t
        return c


class AdamOptimizer:
    """Bias-corrected first/second moment minimizer (0.9 / 0.999, eps 1e-8)."""

    kind = "adam"

    def __init__(self):
        self.t = 0
        self.m = {}
        self.v = {}

    def _ensure(self, p: Parameters) -> None:
        if not self.m:
            for name, arr in p.blocks():
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)

    def step(self, p: Parameters, g: GradientBundle, lr: float) -> None:
        self._ensure(p)
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for name, arr in p.blocks():
            grad = getattr(g, name)
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * grad
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * grad * grad
            arr -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)

    def moment_blocks(self, p: Parameters):
        self._ensure(p)
        out = []
        for name, _ in p.blocks():
            out.append((f"adam_m_{name}", self.m[name]))
        for name, _ in p.blocks():
            out.append((f"adam_v_{name}", self.v[name]))
        return out

    def clone(self) -> "AdamOptimizer":
        c = AdamOptimizer()
        c.t = self.t
        c.m = {k: v.copy() for k, v in self.m.items()}
        c.v = {k: v.copy() for k, v in self.v.items()}
        return c


def make_optimizer(kind: str):
    if kind == "sgd":
        return SgdOptimizer()
    if kind == "adam":
        return AdamOptimizer()
    raise ConfigError(f"unknown optimizer {kind!r}")


def effective_sigma(p: Parameters) -> float:
    """Scalar sigma for reporting: geometric mean when per-dim learned."""
    if p.log_sigma is not None:
        return float(np.exp(np.mean(p.log_sigma)))
    return p.cfg.noise_sigma


@dataclass
class EvalReport:
    objective_id: str
    value: float
    per_step_value: float
    n_sequences: int
    n_steps: int


@dataclass
class Checkpoint:
    """Everything needed to resume: parameters, optimizer moments, rng state."""

    params: Parameters
    epoch: int = 0
    best_valid: float = float("-inf")
    opt_kind: str = "none"
    opt_t: int = 0
    opt_moments: list = field(default_factory=list)
    rng_seed: int = 0
    rng_state: dict | None = None
    version: int = CHECKPOINT_VERSION

    @property
    def cfg(self) -> ModelConfig:
        return self.params.cfg


def evaluate(
    model,
    data: Dataset,
    objective_id: str,
    n_mc: int = 1,
    seed: int = 0,
) -> EvalReport:
    """Mean per-sequence and per-step objective; parameters untouched.

    The noisy objective draws its samples from a stream seeded only by
    ``seed``, so evaluating the same checkpoint twice gives the same value.
    """
    p = model.params if isinstance(model, Checkpoint) else model
    _check_data_compat(p.cfg, data, "eval")
    n_steps = sum(len(s) for s in data.sequences)
    use_batch = (
        objective_id in batched.BATCH_OBJECTIVES
        and p.sigma_is_zero()
        and data.common_length() is not None
    )
    if use_batch:
        arr = data.token_matrix() if data.kind == CATEGORICAL else data.value_tensor()
        mean_value = batched.batch_objective(objective_id, p, arr)
        total = mean_value * data.n
    else:
        rng = RngState(seed) if objective_id == "noisy_elbo" else None
        total = 0.0
        for s in data.sequences:
            total += objective_value(objective_id, p, s, rng=rng, n_mc=n_mc).value
        mean_value = total / data.n
    return EvalReport(
        objective_id=objective_id,
        value=float(mean_value),
        per_step_value=float(total / n_steps),
        n_sequences=data.n,
        n_steps=n_steps,
    )


@dataclass
class MetricsRow:
    epoch: int
    split: str
    objective_id: str
    value: float
    per_step_value: float
    sigma: float
    n_particles: int
    seed: int
    wall_ms: int = 0

    def format(self) -> str:
        return ",".join(
            (
                str(self.epoch),
                self.split,
                self.objective_id,
                "%.12e" % self.value,
                "%.12e" % self.per_step_value,
                "%.12e" % self.sigma,
                str(self.n_particles),
                str(self.seed),
                str(self.wall_ms),
            )
        )


def metrics_header() -> str:
    return ",".join(METRICS_COLUMNS)


def write_metrics(rows, path) -> None:
    lines = [metrics_header()]
    lines.extend(r.format() for r in rows)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    metrics: list
    clip_events: int
    stopped_early: bool


def _first_bad_block(g: GradientBundle) -> str:
    for name, arr in g.blocks():
        if not np.all(np.isfinite(arr)):
            return name
    return "objective"


def _batch_gradient(tcfg, p, data, fast_batch, idx, rng) -> GradientBundle:
    """Mean ascent gradient over the index set."""
    if fast_batch is not None:
        return batched.batch_backprop(tcfg.objective_id, p, fast_batch[idx])
    acc = GradientBundle.zeros_like(p)
    total = 0.0
    for i in idx:
        gi = backprop(tcfg.objective_id, p, data.sequences[i], rng=rng, n_mc=tcfg.n_mc)
        total += gi.value
        for name, arr in acc.blocks():
            arr += getattr(gi, name)
    acc.scale(1.0 / len(idx))
    acc.value = total / len(idx)
    return acc


def train(
    tcfg: TrainConfig,
    mcfg: ModelConfig,
    data: Dataset,
    valid: Dataset,
    resume: Checkpoint | None = None,
    log=None,
) -> TrainResult:
    """Seeded mini-batch ascent on the chosen objective.

    Records the full-train objective every epoch and the validation objective
    every ``eval_every`` epochs (and at the last epoch); keeps the
    best-validation checkpoint. A resume checkpoint restores parameters,
    optimizer moments, epoch counter, and the rng stream, so the remaining
    epochs replay exactly as in an uninterrupted run. The patience counter
    restarts on resume.
    """
    check_objective_compat(tcfg.objective_id, mcfg)
    _check_data_compat(mcfg, data, "train")
    _check_data_compat(mcfg, valid, "valid")
    emit = log if log is not None else (lambda msg: None)

    root = RngState(tcfg.seed)
    loop_rng = root.spawn(1)
    if resume is not None:
        if resume.cfg != mcfg:
            raise ConfigError("resume checkpoint model config differs from mcfg")
        params = resume.params.copy()
        opt = make_optimizer(tcfg.optimizer)
        if resume.opt_kind != "none":
            if resume.opt_kind != tcfg.optimizer:
                raise ConfigError(
                    f"resume optimizer {resume.opt_kind} != config {tcfg.optimizer}"
                )
            _restore_optimizer(opt, params, resume)
        if resume.rng_state is not None:
            loop_rng.set_state(resume.rng_state)
        start_epoch = resume.epoch
        best_valid = resume.best_valid
    else:
        params = init_params(mcfg, root.spawn(0))
        opt = make_optimizer(tcfg.optimizer)
        start_epoch = 0
        best_valid = float("-inf")
    if start_epoch >= tcfg.epochs:
        raise ConfigError(
            f"resume epoch {start_epoch} already at or past epochs {tcfg.epochs}"
        )

    fast_batch = None
    if (
        tcfg.objective_id in batched.BATCH_OBJECTIVES
        and params.sigma_is_zero()
        and data.common_length() is not None
    ):
        fast_batch = (
            data.token_matrix() if data.kind == CATEGORICAL else data.value_tensor()
        )

    def snapshot(epoch: int, best: float) -> Checkpoint:
        return Checkpoint(
            params=params.copy(),
            epoch=epoch,
            best_valid=best,
            opt_kind=opt.kind,
            opt_t=opt.t,
            opt_moments=[(n, a.copy()) for n, a in opt.moment_blocks(params)],
            rng_seed=tcfg.seed,
            rng_state=loop_rng.get_state(),
            version=CHECKPOINT_VERSION,
        )

    metrics: list = []
    best_ckpt: Checkpoint | None = None
    clip_events = 0
    since_best = 0
    stopped_early = False

    for epoch in range(start_epoch + 1, tcfg.epochs + 1):
        perm = loop_rng.permutation(data.n)
        for b0 in range(0, data.n, tcfg.batch_size):
            idx = perm[b0 : b0 + tcfg.batch_size]
            g = _batch_gradient(tcfg, params, data, fast_batch, idx, loop_rng)
            if not np.isfinite(g.value) or not g.all_finite():
                raise NumericsError(
                    f"epoch {epoch} batch {b0 // tcfg.batch_size}: "
                    f"non-finite gradient in block {_first_bad_block(g)}"
                )
            g.scale(-1.0)
            norm = g.global_norm()
            if tcfg.clip_norm > 0 and norm > tcfg.clip_norm:
                g.scale(tcfg.clip_norm / norm)
                clip_events += 1
                emit(
                    f"clip: epoch {epoch} batch {b0 // tcfg.batch_size} "
                    f"norm {norm:.6g} -> {tcfg.clip_norm}"
                )
            opt.step(params, g, tcfg.lr)

        train_rep = evaluate(params, data, tcfg.objective_id, n_mc=tcfg.n_mc)
        metrics.append(_row(epoch, "train", tcfg, params, train_rep))
        if epoch % tcfg.eval_every == 0 or epoch == tcfg.epochs:
            valid_rep = evaluate(params, valid, tcfg.objective_id, n_mc=tcfg.n_mc)
            metrics.append(_row(epoch, "valid", tcfg, params, valid_rep))
            if valid_rep.value > best_valid:
                best_valid = valid_rep.value
                best_ckpt = snapshot(epoch, best_valid)
                since_best = 0
            else:
                since_best += 1
                if tcfg.patience and since_best >= tcfg.patience:
                    stopped_early = True
                    emit(f"early stop at epoch {epoch} (patience {tcfg.patience})")
                    break
        if stopped_early:
            break

    final_ckpt = snapshot(epoch, best_valid)
    if best_ckpt is None:
        # possible only when resuming and never improving on the stored best
        best_ckpt = resume if resume is not None else final_ckpt
    return TrainResult(
        best=best_ckpt,
        final=final_ckpt,
        metrics=metrics,
        clip_events=clip_events,
        stopped_early=stopped_early,
    )


def _row(epoch, split, tcfg, params, rep: EvalReport) -> MetricsRow:
    return MetricsRow(
        epoch=epoch,
        split=split,
        objective_id=rep.objective_id,
        value=rep.value,
        per_step_value=rep.per_step_value,
        sigma=effective_sigma(params),
        n_particles=params.cfg.n_particles,
        seed=tcfg.seed,
        wall_ms=0,
    )


def with_sigma(p: Parameters, sigma: float) -> Parameters:
    """Same weights under a different fixed noise scale (for sweeps)."""
    if p.cfg.learn_sigma:
        raise ConfigError("sigma sweep needs a fixed-sigma model")
    cfg = dataclasses.replace(p.cfg, noise_sigma=float(sigma))
    kw = {name: arr.copy() for name, arr in p.blocks()}
    return Parameters(cfg=cfg, **kw)


def sigma_sweep(
    p: Parameters,
    data: Dataset,
    sigmas,
    grid: NoiseGrid,
    budget: EnumerationBudget = EnumerationBudget(),
):
    """Mean exact ELBO of the same weights at each noise scale.

    No retraining happens: the weights are fixed and only sigma varies. At
    sigma = 0 the value is the exact log-likelihood. Single-particle models
    only, since the enumeration follows one initial state.
    """
    if p.cfg.n_particles != 1:
        raise ConfigError("sigma sweep is defined for n_particles = 1")
    out = []
    for s in sigmas:
        ps = with_sigma(p, s)
        total = 0.0
        for x in data.sequences:
            total += enumerate_exact_elbo(ps, x, grid, budget)
        out.append((float(s), total / data.n))
    return out


def _header_lines(ckpt: Checkpoint) -> list:
    c = ckpt.cfg
    rs = ckpt.rng_state
    if rs is None:
        rng_repr = "none"
    else:
        inner = rs["state"]
        rng_repr = ",".join(
            (
                str(inner["state"]),
                str(inner["inc"]),
                str(rs["has_uint32"]),
                str(rs["uinteger"]),
            )
        )
    lines = [
        f"version={ckpt.version}",
        f"visible_kind={c.visible_kind}",
        f"hidden_dim={c.hidden_dim}",
        f"vocab={'none' if c.vocab is None else c.vocab}",
        f"visible_dim={'none' if c.visible_dim is None else c.visible_dim}",
        f"n_particles={c.n_particles}",
        f"noise_sigma={c.noise_sigma!r}",
        f"learn_sigma={int(c.learn_sigma)}",
        f"epoch={ckpt.epoch}",
        f"best_valid={ckpt.best_valid!r}",
        f"opt_kind={ckpt.opt_kind}",
        f"opt_t={ckpt.opt_t}",
        f"rng_seed={ckpt.rng_seed}",
        f"rng_state={rng_repr}",
    ]
    blocks = [f"{name}:{'x'.join(str(d) for d in arr.shape)}" for name, arr in ckpt.params.blocks()]
    blocks += [f"{name}:{'x'.join(str(d) for d in arr.shape)}" for name, arr in ckpt.opt_moments]
    lines.append("payload=" + ";".join(blocks))
    return lines


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Binary format: magic, length-prefixed text header, float64 payload,
    crc32 of all prior bytes. Round-trips every real bit-exactly."""
    magic = CHECKPOINT_MAGIC_PREFIX + b"%04d" % ckpt.version
    header = ("\n".join(_header_lines(ckpt)) + "\n").encode("ascii")
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for _, arr in list(ckpt.params.blocks()) + list(ckpt.opt_moments)
    )
    body = magic + struct.pack("<I", len(header)) + header + payload
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(body)


def _parse_header(text: str) -> dict:
    kv = {}
    for line in text.split("\n"):
        if not line:
            continue
        key, _, val = line.partition("=")
        if not _:
            raise CheckpointError(f"malformed header line {line!r}")
        kv[key] = val
    return kv


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        body = fh.read()
    if len(body) < 16:
        raise CheckpointError(f"{path}: truncated checkpoint")
    stored = struct.unpack("<I", body[-4:])[0]
    if zlib.crc32(body[:-4]) & 0xFFFFFFFF != stored:
        raise CheckpointError(f"{path}: checksum mismatch")
    magic = body[:8]
    if magic[:4] != CHECKPOINT_MAGIC_PREFIX:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = int(magic[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    (hlen,) = struct.unpack("<I", body[8:12])
    header_end = 12 + hlen
    if header_end > len(body) - 4:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    kv = _parse_header(body[12:header_end].decode("ascii"))
    try:
        cfg = ModelConfig(
            visible_kind=kv["visible_kind"],
            hidden_dim=int(kv["hidden_dim"]),
            vocab=None if kv["vocab"] == "none" else int(kv["vocab"]),
            visible_dim=None if kv["visible_dim"] == "none" else int(kv["visible_dim"]),
            n_particles=int(kv["n_particles"]),
            noise_sigma=float(kv["noise_sigma"]),
            learn_sigma=bool(int(kv["learn_sigma"])),
        )
        epoch = int(kv["epoch"])
        best_valid = float(kv["best_valid"])
        opt_kind = kv["opt_kind"]
        opt_t = int(kv["opt_t"])
        rng_seed = int(kv["rng_seed"])
        payload_decl = kv["payload"]
    except KeyError as e:
        raise CheckpointError(f"{path}: header missing key {e.args[0]}") from None
    rng_state = None
    if kv.get("rng_state", "none") != "none":
        parts = kv["rng_state"].split(",")
        if len(parts) != 4:
            raise CheckpointError(f"{path}: malformed rng_state")
        rng_state = {
            "bit_generator": "PCG64",
            "state": {"state": int(parts[0]), "inc": int(parts[1])},
            "has_uint32": int(parts[2]),
            "uinteger": int(parts[3]),
        }

    raw = body[header_end:-4]
    arrays = {}
    offset = 0
    order = []
    for decl in payload_decl.split(";") if payload_decl else []:
        name, _, shape_s = decl.partition(":")
        shape = tuple(int(d) for d in shape_s.split("x"))
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: payload shorter than declared for {name}")
        arrays[name] = (
            np.frombuffer(raw[offset : offset + nbytes], dtype="<f8")
            .astype(np.float64)
            .reshape(shape)
        )
        order.append(name)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} undeclared payload bytes")

    param_kw = {}
    moments = []
    for name in order:
        if name.startswith("adam_"):
            moments.append((name, arrays[name]))
        else:
            param_kw[name] = arrays[name]
    params = Parameters(cfg=cfg, **param_kw)
    return Checkpoint(
        params=params,
        epoch=epoch,
        best_valid=best_valid,
        opt_kind=opt_kind,
        opt_t=opt_t,
        opt_moments=moments,
        rng_seed=rng_seed,
        rng_state=rng_state,
        version=version,
    )


def _restore_optimizer(opt, params: Parameters, ckpt: Checkpoint) -> None:
    opt.t = ckpt.opt_t
    if opt.kind != "adam":
        return
    by_name = dict(ckpt.opt_moments)
    opt.m = {}
    opt.v = {}
    for name, arr in params.blocks():
        m = by_name.get(f"adam_m_{name}")
        v = by_name.get(f"adam_v_{name}")
        if m is None or v is None:
            raise CheckpointError(f"checkpoint lacks optimizer moments for {name}")
        opt.m[name] = m.copy()
        opt.v[name] = v.copy()

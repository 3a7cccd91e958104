"""Command line surface: data generation, training, and verification suites.

Commands are batch-style: flags in, files out, deterministic for a given
seed. Exit codes are a stable contract: 0 success, 2 usage or configuration
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .data import (
    BimodalSpec,
    Dataset,
    gen_bimodal,
    load_sequences,
    mode_fractions,
    save_dataset,
    split,
)
from .exceptions import (
    BudgetExceeded,
    CheckpointError,
    ConfigError,
    ContractViolation,
    InputError,
    NumericsError,
)
from .grad import backprop, finite_diff, grad_compare
from .model import (
    CATEGORICAL,
    GAUSSIAN,
    ModelConfig,
    Parameters,
    VisibleTrajectory,
)
from .numkit import RngState
from .objectives import (
    loglik_deterministic,
    sequence_particle_bound,
    variational_objective_deterministic,
)
from .oracle import (
    EnumerationBudget,
    grid_by_size,
    jensen_gap_report,
    mixture_exact_loglik,
)
from .trainer import (
    TrainConfig,
    evaluate,
    save_checkpoint,
    sigma_sweep,
    train,
    with_sigma,
    write_metrics,
)

GRAD_TOL = 1e-4
EQUIV_TOL = 1e-12
JENSEN_TOL = 1e-12
DOMINANCE_TOL = 1e-9
SEQMIX_TOL = 1e-12


# ---------------------------------------------------------------- sampling

def draw_params(cfg: ModelConfig, rng: RngState, scale: float = 1.0) -> Parameters:
    """Random weights of moderate size for verification suites."""
    H, I, E = cfg.hidden_dim, cfg.input_dim, cfg.emission_dim
    s_h = scale / np.sqrt(H)
    s_x = scale / np.sqrt(I)
    log_sigma = None
    if cfg.learn_sigma:
        log_sigma = np.log(cfg.noise_sigma) + 0.1 * rng.normal(H)
    return Parameters(
        cfg=cfg,
        w_hh=s_h * rng.normal(H * H).reshape(H, H),
        w_xh=s_x * rng.normal(H * I).reshape(H, I),
        b_h=0.3 * rng.normal(H),
        h1=rng.uniform(-1.0, 1.0, (cfg.n_particles, H)),
        w_eh=s_h * rng.normal(E * H).reshape(E, H),
        b_e=0.3 * rng.normal(E),
        log_sigma=log_sigma,
    )


def draw_sequence(cfg: ModelConfig, T: int, rng: RngState) -> VisibleTrajectory:
    """Random observation sequence matching the config's visible kind."""
    if cfg.visible_kind == CATEGORICAL:
        return VisibleTrajectory.from_tokens(
            [rng.integers(0, cfg.vocab) for _ in range(T)]
        )
    return VisibleTrajectory.from_values(rng.normal(T * cfg.visible_dim).reshape(T, -1))


# ---------------------------------------------------------------- grad check

@dataclass
class GradCheckRow:
    trial: int
    objective: str
    seed: int
    worst_param: str
    max_rel_err: float

    def format(self) -> str:
        return ",".join(
            (
                str(self.trial),
                self.objective,
                str(self.seed),
                self.worst_param,
                "%.12e" % self.max_rel_err,
            )
        )


def _grad_check_cases(trial: int, rng: RngState):
    """Model/sequence/objective cases for one trial, spanning both visible
    kinds, particle counts, and the noisy objective."""
    hidden = 2 + trial % 2
    T = 3 + trial % 3
    L = 1 + trial % 3
    if trial % 3 == 2:
        base = dict(visible_kind=GAUSSIAN, hidden_dim=hidden, visible_dim=1 + trial % 2)
    else:
        base = dict(visible_kind=CATEGORICAL, hidden_dim=hidden, vocab=3 + trial % 3)
    cases = []
    cfg1 = ModelConfig(n_particles=1, **base)
    cases.append(("loglik", cfg1, T, 1))
    cfgL = ModelConfig(n_particles=L, **base)
    cases.append(("step_particle", cfgL, T, 1))
    cases.append(("sequence_particle", cfgL, T, 1))
    sigma = 0.1 if trial % 2 == 0 else 0.3
    cfgN = ModelConfig(n_particles=1, noise_sigma=sigma, **base)
    cases.append(("noisy_elbo", cfgN, T, 2))
    if trial % 4 == 0:
        cfgS = ModelConfig(n_particles=1, noise_sigma=sigma, learn_sigma=True, **base)
        cases.append(("noisy_elbo", cfgS, T, 2))
    return cases


def run_grad_check(trials: int, seed: int):
    """Analytic-vs-numeric gradient comparison on random models.

    Returns (rows, max_rel_err); the check passes when the max stays at or
    under 1e-4.
    """
    if trials < 1:
        raise InputError(f"trials must be >= 1, got {trials}")
    base = RngState(seed)
    rows = []
    worst = 0.0
    for trial in range(trials):
        rng = base.spawn(trial)
        for objective_id, cfg, T, n_mc in _grad_check_cases(trial, rng):
            p = draw_params(cfg, rng)
            x = draw_sequence(cfg, T, rng)
            noise_key = 10_000 + trial
            analytic = backprop(
                objective_id, p, x, rng=base.spawn(noise_key), n_mc=n_mc
            )
            numeric = finite_diff(
                objective_id, p, x, rng=base.spawn(noise_key), n_mc=n_mc
            )
            rep = grad_compare(analytic, numeric)
            rows.append(
                GradCheckRow(
                    trial=trial,
                    objective=objective_id,
                    seed=seed,
                    worst_param=rep.worst_param,
                    max_rel_err=rep.max_rel_err,
                )
            )
            worst = max(worst, rep.max_rel_err)
    return rows, worst


# ---------------------------------------------------------------- bound check

@dataclass
class BoundCheckRow:
    trial: int
    check: str
    sigma: float
    value_a: float
    value_b: float
    delta: float
    ok: bool

    def format(self) -> str:
        return ",".join(
            (
                str(self.trial),
                self.check,
                "%.12e" % self.sigma,
                "%.12e" % self.value_a,
                "%.12e" % self.value_b,
                "%.12e" % self.delta,
                "ok" if self.ok else "FAIL",
            )
        )


def _toy_trained_model(hdim: int, T: int, seed: int, epochs: int = 120) -> tuple:
    """Small single-particle model trained to convergence on toy data."""
    spec = BimodalSpec(T=T, t0=2, rho=0.5, vocab=3)
    data = gen_bimodal(spec, 16, RngState(seed).spawn(3))
    mcfg = ModelConfig(
        visible_kind=CATEGORICAL, hidden_dim=hdim, vocab=3, n_particles=1
    )
    tcfg = TrainConfig(
        objective_id="loglik",
        lr=0.05,
        batch_size=16,
        epochs=epochs,
        seed=seed,
        eval_every=epochs,
    )
    result = train(tcfg, mcfg, data, data)
    return result.final.params, data


def run_bound_check(trials: int, tmax: int, hdim: int, grid_size: int, sigmas, seed: int):
    """Equivalence, Jensen, noise-dominance, and mixture-identity checks.

    Returns (rows, all_ok). Uses exact enumeration under a discrete noise
    grid, so every inequality is checked without Monte Carlo error.
    """
    if trials < 1:
        raise InputError(f"trials must be >= 1, got {trials}")
    if tmax < 2:
        raise InputError(f"tmax must be >= 2, got {tmax}")
    grid = grid_by_size(grid_size)
    budget = EnumerationBudget()
    base = RngState(seed)
    rows = []
    for trial in range(trials):
        rng = base.spawn(trial)
        T = 2 + trial % (tmax - 1)

        cfg = ModelConfig(visible_kind=CATEGORICAL, hidden_dim=hdim, vocab=4)
        p = draw_params(cfg, rng)
        x = draw_sequence(cfg, T, rng)
        direct = loglik_deterministic(p, x).value
        varia = variational_objective_deterministic(p, x).value
        delta = abs(varia - direct)
        rows.append(
            BoundCheckRow(trial, "equivalence", 0.0, varia, direct, delta, delta <= EQUIV_TOL)
        )

        for s in sigmas:
            # sigma 0 collapses to the single deterministic path: gap exactly 0
            rep = jensen_gap_report(with_sigma(p, s), x, grid, budget)
            ok = rep.gap >= -JENSEN_TOL
            if s == 0.0:
                ok = abs(rep.gap) <= JENSEN_TOL
            rows.append(
                BoundCheckRow(
                    trial,
                    "jensen",
                    s,
                    rep.exact_loglik,
                    rep.exact_elbo,
                    rep.gap,
                    ok,
                )
            )

        trained, toy = _toy_trained_model(hdim, min(tmax, 4), seed * 1000 + trial)
        sweep = dict(sigma_sweep(trained, toy, sigmas, grid, budget))
        base_elbo = sweep.get(0.0)
        if base_elbo is None:
            base_elbo = sigma_sweep(trained, toy, [0.0], grid, budget)[0][1]
        for s in sigmas:
            if s == 0.0:
                continue
            margin = base_elbo - sweep[s]
            rows.append(
                BoundCheckRow(
                    trial,
                    "dominance",
                    s,
                    base_elbo,
                    sweep[s],
                    margin,
                    margin >= -DOMINANCE_TOL,
                )
            )

        cfgM = ModelConfig(
            visible_kind=CATEGORICAL,
            hidden_dim=hdim,
            vocab=4,
            n_particles=2 + trial % 3,
        )
        pm = draw_params(cfgM, rng)
        xm = draw_sequence(cfgM, T, rng)
        seq = sequence_particle_bound(pm, xm).value
        mix = mixture_exact_loglik(pm, xm)
        dmix = abs(seq - mix)
        rows.append(
            BoundCheckRow(trial, "mixture", 0.0, seq, mix, dmix, dmix <= SEQMIX_TOL)
        )
    return rows, all(r.ok for r in rows)


# ---------------------------------------------------------------- particle compare

@dataclass
class CellResult:
    n_particles: int
    hidden_dim: int
    seed: int
    step_value: float
    step_per_step: float
    sequence_value: float
    sequence_per_step: float
    gap_value: float

    def format(self) -> str:
        return ",".join(
            (
                str(self.n_particles),
                str(self.hidden_dim),
                str(self.seed),
                "%.12e" % self.step_value,
                "%.12e" % self.step_per_step,
                "%.12e" % self.sequence_value,
                "%.12e" % self.sequence_per_step,
                "%.12e" % self.gap_value,
            )
        )


CELL_HEADER = (
    "n_particles,hidden_dim,seed,step_value,step_per_step,"
    "sequence_value,sequence_per_step,gap_value"
)


def run_particle_compare(
    data: Dataset,
    particles,
    hdims,
    seed: int,
    epochs: int = 60,
    lr: float = 0.05,
    batch_size: int = 64,
):
    """Train every (particle count, hidden size) cell under one budget and
    score the held-out split with both particle objectives."""
    tr, va, te = split(data, (0.8, 0.1, 0.1), RngState(seed).spawn(99))
    out = []
    for L in particles:
        for h in hdims:
            mcfg = ModelConfig(
                visible_kind=CATEGORICAL,
                hidden_dim=h,
                vocab=data.vocab,
                n_particles=L,
            )
            tcfg = TrainConfig(
                objective_id="step_particle",
                lr=lr,
                batch_size=batch_size,
                epochs=epochs,
                seed=seed,
                eval_every=epochs,
            )
            result = train(tcfg, mcfg, tr, va)
            p = result.final.params
            step = evaluate(p, te, "step_particle")
            seqb = evaluate(p, te, "sequence_particle")
            out.append(
                CellResult(
                    n_particles=L,
                    hidden_dim=h,
                    seed=seed,
                    step_value=step.value,
                    step_per_step=step.per_step_value,
                    sequence_value=seqb.value,
                    sequence_per_step=seqb.per_step_value,
                    gap_value=step.value - seqb.value,
                )
            )
    return out


# ---------------------------------------------------------------- run config

_CONFIG_SCHEMA = {
    "visible_kind": ("str", CATEGORICAL),
    "hidden_dim": ("int", None),
    "vocab": ("int", None),
    "visible_dim": ("int", None),
    "n_particles": ("int", 1),
    "noise_sigma": ("float", 0.0),
    "learn_sigma": ("bool", False),
    "objective_id": ("str", "step_particle"),
    "lr": ("float", 0.05),
    "batch_size": ("int", 32),
    "epochs": ("int", 100),
    "seed": ("int", 0),
    "eval_every": ("int", 1),
    "patience": ("int", 0),
    "optimizer": ("str", "adam"),
    "clip_norm": ("float", 5.0),
    "n_mc": ("int", 1),
    "train_data": ("str", None),
    "valid_data": ("str", None),
    "valid_fraction": ("float", 0.1),
}
_REQUIRED_KEYS = ("hidden_dim", "train_data")


def _convert(key: str, kind: str, raw: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} as {kind}") from None


def parse_run_config(path) -> dict:
    """key = value lines with # comments; unknown keys rejected by name."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    values = {k: default for k, (_, default) in _CONFIG_SCHEMA.items()}
    for lineno, raw_line in enumerate(text.split("\n"), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, raw_val = line.partition("=")
        if not eq:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key = key.strip()
        raw_val = raw_val.strip()
        if key not in _CONFIG_SCHEMA:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, _CONFIG_SCHEMA[key][0], raw_val)
    for key in _REQUIRED_KEYS:
        if values[key] is None:
            raise ConfigError(f"config is missing required key {key!r}")
    return values


def _load_train_valid(values: dict):
    kind = values["visible_kind"]
    if kind not in (CATEGORICAL, GAUSSIAN):
        raise ConfigError(f"config key visible_kind: unknown kind {kind!r}")
    data = load_sequences(values["train_data"], kind, vocab=values["vocab"])
    if values["valid_data"] is not None:
        valid = load_sequences(
            values["valid_data"], kind, vocab=data.vocab if kind == CATEGORICAL else None
        )
        return data, valid
    f = values["valid_fraction"]
    if not 0.0 <= f < 1.0:
        raise ConfigError(f"config key valid_fraction: must be in [0, 1), got {f}")
    if f == 0.0 or data.n < 4:
        return data, data
    perm = RngState(values["seed"]).spawn(2).permutation(data.n)
    n_va = min(max(1, round(data.n * f)), data.n - 1)
    return data.subset(perm[n_va:], "train"), data.subset(perm[:n_va], "valid")


def _model_config_from(values: dict, data: Dataset) -> ModelConfig:
    kind = values["visible_kind"]
    if kind == CATEGORICAL:
        vocab = values["vocab"] if values["vocab"] is not None else data.vocab
        return ModelConfig(
            visible_kind=CATEGORICAL,
            hidden_dim=values["hidden_dim"],
            vocab=vocab,
            n_particles=values["n_particles"],
            noise_sigma=values["noise_sigma"],
            learn_sigma=values["learn_sigma"],
        )
    if values["visible_dim"] is None:
        raise ConfigError("config is missing required key 'visible_dim'")
    return ModelConfig(
        visible_kind=GAUSSIAN,
        hidden_dim=values["hidden_dim"],
        visible_dim=values["visible_dim"],
        n_particles=values["n_particles"],
        noise_sigma=values["noise_sigma"],
        learn_sigma=values["learn_sigma"],
    )


def _train_config_from(values: dict) -> TrainConfig:
    return TrainConfig(
        objective_id=values["objective_id"],
        lr=values["lr"],
        batch_size=values["batch_size"],
        epochs=values["epochs"],
        seed=values["seed"],
        eval_every=values["eval_every"],
        patience=values["patience"],
        optimizer=values["optimizer"],
        clip_norm=values["clip_norm"],
        n_mc=values["n_mc"],
    )


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    spec = BimodalSpec(T=args.t, t0=args.t0, rho=args.rho, vocab=args.vocab)
    d = gen_bimodal(spec, args.n, RngState(args.seed))
    save_dataset(d, args.out)
    fa, fb = mode_fractions(spec, d)
    print(f"n={d.n}")
    print("mode_a=%.12e" % fa)
    print("mode_b=%.12e" % fb)
    return 0


def cmd_train(args) -> int:
    values = parse_run_config(args.config)
    data, valid = _load_train_valid(values)
    mcfg = _model_config_from(values, data)
    tcfg = _train_config_from(values)
    os.makedirs(args.out, exist_ok=True)
    result = train(tcfg, mcfg, data, valid, log=lambda m: print(m, file=sys.stderr))
    save_checkpoint(result.best, os.path.join(args.out, "best.ckpt"))
    save_checkpoint(result.final, os.path.join(args.out, "final.ckpt"))
    write_metrics(result.metrics, os.path.join(args.out, "metrics.csv"))
    last_train = [r for r in result.metrics if r.split == "train"][-1]
    print("final_train=%.12e" % last_train.value)
    print("best_valid=%.12e" % result.best.best_valid)
    print(f"clip_events={result.clip_events}")
    return 0


def cmd_grad_check(args) -> int:
    rows, worst = run_grad_check(args.trials, args.seed)
    lines = ["trial,objective,seed,worst_param,max_rel_err"]
    lines.extend(r.format() for r in rows)
    lines.append("worst=%.12e" % worst)
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    if args.out:
        with open(args.out, "w", encoding="ascii", newline="\n") as fh:
            fh.write(report)
    return 0 if worst <= GRAD_TOL else 3


def cmd_bound_check(args) -> int:
    try:
        sigmas = tuple(float(s) for s in args.sigmas.split(","))
    except ValueError:
        raise InputError(f"cannot parse --sigmas {args.sigmas!r}") from None
    if any(s < 0 for s in sigmas):
        raise InputError("--sigmas entries must be >= 0")
    rows, ok = run_bound_check(
        args.trials, args.tmax, args.hdim, args.grid, sigmas, args.seed
    )
    lines = ["trial,check,sigma,value_a,value_b,delta,status"]
    lines.extend(r.format() for r in rows)
    lines.append("all_ok=1" if ok else "all_ok=0")
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    if args.out:
        with open(args.out, "w", encoding="ascii", newline="\n") as fh:
            fh.write(report)
    return 0 if ok else 3


def cmd_particle_compare(args) -> int:
    try:
        particles = tuple(int(v) for v in args.particles.split(","))
        hdims = tuple(int(v) for v in args.hdims.split(","))
    except ValueError:
        raise InputError("--particles and --hdims take comma-separated ints") from None
    data = load_sequences(args.data, CATEGORICAL)
    cells = run_particle_compare(
        data,
        particles,
        hdims,
        args.seed,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
    )
    lines = [CELL_HEADER]
    lines.extend(c.format() for c in cells)
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    os.makedirs(args.out, exist_ok=True)
    with open(
        os.path.join(args.out, "particle_compare.csv"), "w", encoding="ascii", newline="\n"
    ) as fh:
        fh.write(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prnn",
        description="Particle RNN sequence modeling: train, verify, compare.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset file")
    g.add_argument("--kind", choices=["bimodal"], default="bimodal")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--t", type=int, required=True)
    g.add_argument("--t0", type=int, required=True)
    g.add_argument("--rho", type=float, required=True)
    g.add_argument("--vocab", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from a run config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    gc = sub.add_parser("grad-check", help="finite-difference gradient suite")
    gc.add_argument("--trials", type=int, default=20)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--out", default=None)
    gc.set_defaults(func=cmd_grad_check)

    bc = sub.add_parser("bound-check", help="bound and equivalence suite")
    bc.add_argument("--trials", type=int, default=20)
    bc.add_argument("--tmax", type=int, default=4)
    bc.add_argument("--hdim", type=int, default=2)
    bc.add_argument("--grid", type=int, default=3)
    bc.add_argument("--sigmas", default="0,0.1,0.2,0.4")
    bc.add_argument("--seed", type=int, default=0)
    bc.add_argument("--out", default=None)
    bc.set_defaults(func=cmd_bound_check)

    pc = sub.add_parser("particle-compare", help="train a particle/width grid")
    pc.add_argument("--particles", default="1,4")
    pc.add_argument("--hdims", default="2,8")
    pc.add_argument("--data", required=True)
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--epochs", type=int, default=60)
    pc.add_argument("--lr", type=float, default=0.05)
    pc.add_argument("--batch-size", type=int, default=64)
    pc.add_argument("--out", required=True)
    pc.set_defaults(func=cmd_particle_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ConfigError, BudgetExceeded) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NumericsError, ContractViolation, CheckpointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

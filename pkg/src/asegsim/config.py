"""Flat key-value run configuration, override handling, semantic hashing."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields, replace

from .errors import ConfigError

ENV_SEED = "ASEG_SEED"


@dataclass(frozen=True)
class RunConfig:
    # data source: a libsvm file, or the synthetic quadratic family when unset
    data_path: str | None = None
    loss: str = "quadratic"
    lam: float | None = None  # None resolves to L/100 of the unpenalized loss
    clients: int = 10
    server_batches: int = 2
    partition_seed: int = 0
    synth_d: int = 30
    synth_points: int = 40
    synth_hetero: float = 0.5
    synth_seed: int = 0
    synth_label_noise: float = 0.0

    # network
    batch: int = 1
    noise_kind: str = "none"
    noise_scale: float = 0.0
    replacement: bool = True
    reweight: bool = True
    full_participation: bool = False

    # outer loop
    mode: str = "strongly_convex"
    tuning: str = "deterministic"
    theta: float | None = None
    theta_rule: str = "cap"  # cap | horizon
    eta_rule: str = "proof"
    iters: int = 100
    seeds: tuple = (0,)

    # constants
    mu_override: float | None = None
    delta_override: float | None = None
    delta_safety: bool = True
    delta_points: int = 100
    blind: bool = False
    ref_tol: float = 1e-10

    # subproblem solver
    solver_kind: str = "sgd"
    solver_step: float | None = None
    solver_iters: int = 50
    solver_epoch: int | None = None
    solver_minibatch: int = 0
    solver_schedule: str = "constant"
    solver_stop: str = "surrogate"
    solver_max_steps: int | None = None
    solver_last_iterate: bool = False

    # output
    out: str = "runs/latest"
    timing: bool = False
    jobs: int = 1


def _int(raw):
    return int(raw)


def _float(raw):
    return float(raw)


def _opt_float(raw):
    return None if raw.lower() in ("auto", "none") else float(raw)


def _opt_int(raw):
    return None if raw.lower() in ("auto", "none") else int(raw)


def _opt_str(raw):
    return None if raw.lower() == "none" else raw


def _bool(raw):
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _seeds(raw):
    vals = tuple(int(tok) for tok in raw.split(",") if tok.strip())
    if not vals:
        raise ValueError("empty seed list")
    return vals


def _str(raw):
    return raw


# key -> (attribute, caster); the file format is one `key = value` per line
KEYS = {
    "data.path": ("data_path", _opt_str),
    "loss": ("loss", _str),
    "lambda": ("lam", _opt_float),
    "clients": ("clients", _int),
    "server.batches": ("server_batches", _int),
    "partition.seed": ("partition_seed", _int),
    "synth.d": ("synth_d", _int),
    "synth.points": ("synth_points", _int),
    "synth.hetero": ("synth_hetero", _float),
    "synth.seed": ("synth_seed", _int),
    "synth.label_noise": ("synth_label_noise", _float),
    "batch": ("batch", _int),
    "noise.kind": ("noise_kind", _str),
    "noise.scale": ("noise_scale", _float),
    "replacement": ("replacement", _bool),
    "reweight": ("reweight", _bool),
    "full_participation": ("full_participation", _bool),
    "mode": ("mode", _str),
    "tuning": ("tuning", _str),
    "theta": ("theta", _opt_float),
    "theta.rule": ("theta_rule", _str),
    "eta.rule": ("eta_rule", _str),
    "iters": ("iters", _int),
    "seeds": ("seeds", _seeds),
    "mu": ("mu_override", _opt_float),
    "delta": ("delta_override", _opt_float),
    "delta.safety": ("delta_safety", _bool),
    "delta.points": ("delta_points", _int),
    "blind": ("blind", _bool),
    "ref.tol": ("ref_tol", _float),
    "solver.kind": ("solver_kind", _str),
    "solver.step": ("solver_step", _opt_float),
    "solver.iters": ("solver_iters", _int),
    "solver.epoch": ("solver_epoch", _opt_int),
    "solver.minibatch": ("solver_minibatch", _int),
    "solver.schedule": ("solver_schedule", _str),
    "solver.stop": ("solver_stop", _str),
    "solver.max_steps": ("solver_max_steps", _opt_int),
    "solver.last_iterate": ("solver_last_iterate", _bool),
    "out": ("out", _str),
    "timing": ("timing", _bool),
    "jobs": ("jobs", _int),
}

_ENUMS = {
    "loss": ("quadratic", "logistic"),
    "noise_kind": ("none", "gaussian", "uniform"),
    "mode": ("strongly_convex", "convex"),
    "tuning": ("deterministic", "sampled"),
    "theta_rule": ("cap", "horizon"),
    "eta_rule": ("proof", "statement"),
    "solver_kind": ("sgd", "svrg", "sarah"),
    "solver_schedule": ("constant", "decreasing"),
    "solver_stop": ("fixed", "surrogate"),
}

# keys that do not change what is computed, only where/how it is emitted
_NON_SEMANTIC = ("out", "jobs", "timing")


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines; '#' comments and blank lines are ignored."""
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key = value, got {raw!r}")
        pairs[key.strip()] = value.strip()
    return pairs


def apply_pairs(cfg: RunConfig, pairs: dict) -> RunConfig:
    updates = {}
    for key, raw in pairs.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        attr, caster = KEYS[key]
        try:
            updates[attr] = caster(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {e}") from None
    return replace(cfg, **updates)


def parse_overrides(items) -> dict:
    pairs = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        pairs[key.strip()] = value.strip()
    return pairs


def validate(cfg: RunConfig) -> RunConfig:
    for attr, allowed in _ENUMS.items():
        if getattr(cfg, attr) not in allowed:
            raise ConfigError(
                f"{attr} must be one of {', '.join(allowed)}, got {getattr(cfg, attr)!r}")
    if cfg.batch < 1 or cfg.iters < 1 or cfg.clients < 2:
        raise ConfigError("batch and iters must be >= 1, clients >= 2")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    return cfg


def load_config(path: str | None = None, overrides=None,
                env=None) -> RunConfig:
    """Defaults, then the file, then --set overrides, then ASEG_SEED."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from None
        cfg = apply_pairs(cfg, parse_config_text(text))
    cfg = apply_pairs(cfg, parse_overrides(overrides))
    env = os.environ if env is None else env
    if ENV_SEED in env:
        try:
            cfg = replace(cfg, seeds=(int(env[ENV_SEED]),))
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer") from None
    return validate(cfg)


def semantic_items(cfg: RunConfig) -> list:
    """Canonical (key, value-string) pairs of everything that affects results."""
    by_attr = {attr: key for key, (attr, _) in KEYS.items()}
    items = []
    for f in sorted(fields(cfg), key=lambda f: f.name):
        if f.name in _NON_SEMANTIC:
            continue
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            canon = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            canon = repr(value)
        else:
            canon = str(value)
        items.append((by_attr[f.name], canon))
    return items


def config_hash(cfg: RunConfig) -> str:
    """Short digest of the semantic configuration (output keys excluded)."""
    blob = "\n".join(f"{k}={v}" for k, v in semantic_items(cfg))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]

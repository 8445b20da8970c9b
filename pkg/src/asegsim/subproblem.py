"""Inexact solvers for the server-side proximal subproblem.

Each outer iteration asks for an approximate minimizer of

    A(x) = <s, x - x_g> + ||x - x_g||^2 / (2 theta) + r_1(x),

which is (1/theta)-strongly convex and (1/theta + L_1)-smooth. Only the
r_1 term is ever sampled; the quadratic envelope stays exact. Solvers start
from x_g unless told otherwise and report the full squared gradient norm of
their output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError

SGD = "sgd"
SVRG = "svrg"
SARAH = "sarah"

STOP_FIXED = "fixed"
STOP_SURROGATE = "surrogate"

SCHEDULE_CONSTANT = "constant"
SCHEDULE_DECREASING = "decreasing"


@dataclass
class SubproblemSpec:
    """One prox subproblem: correction direction, center, radius, local model."""

    s_k: np.ndarray
    x_g: np.ndarray
    theta: float
    server: object
    l1: float  # smoothness of r_1, fixed once per run

    def __post_init__(self):
        self.s_k = np.asarray(self.s_k, dtype=float)
        self.x_g = np.asarray(self.x_g, dtype=float)
        if self.theta <= 0.0:
            raise ValueError("theta must be positive")
        if self.s_k.shape != self.x_g.shape:
            raise ValueError("s_k and x_g disagree on shape")

    @property
    def dim(self) -> int:
        return self.x_g.shape[0]

    @property
    def l_a(self) -> float:
        return 1.0 / self.theta + self.l1

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        diff = x - self.x_g
        return (float(self.s_k @ diff)
                + float(diff @ diff) / (2.0 * self.theta)
                + self.server.value(x))

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.s_k + (x - self.x_g) / self.theta + self.server.grad(x)

    def stochastic_grad(self, x, rows) -> np.ndarray:
        """Minibatch gradient: only the r_1 term is sampled."""
        x = np.asarray(x, dtype=float)
        return (self.s_k + (x - self.x_g) / self.theta
                + self.server.stochastic_grad(x, rows))

    def estimate_noise_sq(self, rng, draws: int = 100, minibatch: int = 1) -> float:
        """Minibatch gradient variance at the center, for step-size presets."""
        center = self.grad(self.x_g)
        acc = 0.0
        for _ in range(draws):
            rows = self.server.sample_rows(rng, minibatch)
            g = self.stochastic_grad(self.x_g, rows)
            acc += float(np.linalg.norm(g - center) ** 2)
        return acc / draws


@dataclass
class SolverConfig:
    """Inner solver choice and budget.

    ``iters`` counts steps for sgd and epochs for svrg/sarah; ``epoch`` is the
    inner loop length of the variance-reduced solvers. ``minibatch`` 0 means
    full batch. ``step`` None picks the solver's preset.
    """

    kind: str = SGD
    step: float | None = None
    iters: int = 100
    epoch: int | None = None
    minibatch: int = 1
    schedule: str = SCHEDULE_CONSTANT
    last_iterate: bool = False

    def __post_init__(self):
        if self.kind not in (SGD, SVRG, SARAH):
            raise ConfigError(f"unknown solver kind {self.kind!r}")
        if self.schedule not in (SCHEDULE_CONSTANT, SCHEDULE_DECREASING):
            raise ConfigError(f"unknown step schedule {self.schedule!r}")
        if self.iters < 0:
            raise ConfigError("iteration budget must be nonnegative")
        if self.minibatch < 0:
            raise ConfigError("minibatch must be nonnegative (0 = full batch)")


@dataclass
class StopPolicy:
    """Fixed budget, or repeat budget chunks until the gradient surrogate for
    the relative accuracy criterion holds."""

    kind: str = STOP_FIXED
    delta: float | None = None
    max_steps: int | None = None

    def __post_init__(self):
        if self.kind not in (STOP_FIXED, STOP_SURROGATE):
            raise ConfigError(f"unknown stop policy {self.kind!r}")
        if self.kind == STOP_SURROGATE and (self.delta is None or self.delta <= 0):
            raise ConfigError("surrogate stopping needs a positive delta")


@dataclass
class SubproblemResult:
    x: np.ndarray
    grad_norm_sq: float
    steps: int
    satisfied: bool = True


def _sample(spec: SubproblemSpec, rng, minibatch: int):
    if minibatch == 0:
        return None
    return spec.server.sample_rows(rng, minibatch)


def _grad_at(spec: SubproblemSpec, x, rows):
    if rows is None:
        return spec.grad(x)
    return spec.stochastic_grad(x, rows)


def _guard(x, spec: SubproblemSpec, what: str):
    if not np.all(np.isfinite(x)) or \
            np.linalg.norm(x - spec.x_g) > 1e6 * (1.0 + np.linalg.norm(spec.x_g)):
        raise DivergenceError(f"{what} iterate left the trust region")


def sgd_solve(spec: SubproblemSpec, cfg: SolverConfig, rng, x0=None):
    """(Mini)batch gradient descent on the subproblem.

    The constant step defaults to 1/(2 L_A) and must not exceed it. The
    decreasing schedule keeps the constant step for the first half of the
    budget and then decays like O(1/t), continuously at the switch.
    """
    gamma0 = 1.0 / (2.0 * spec.l_a) if cfg.step is None else cfg.step
    if gamma0 <= 0.0:
        raise ConfigError("step must be positive")
    if gamma0 > 1.0 / (2.0 * spec.l_a) * (1.0 + 1e-12):
        raise ConfigError(
            f"step {gamma0:g} exceeds the stability bound 1/(2 L_A) = "
            f"{1.0 / (2.0 * spec.l_a):g}")

    x = spec.x_g.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    switch = cfg.iters // 2
    for t in range(cfg.iters):
        gamma = gamma0
        if cfg.schedule == SCHEDULE_DECREASING and t >= switch:
            gamma = min(gamma0, 2.0 * spec.theta
                        / (4.0 * spec.l_a * spec.theta + (t - switch)))
        g = _grad_at(spec, x, _sample(spec, rng, cfg.minibatch))
        x = x - gamma * g
        _guard(x, spec, "sgd")
    return x, float(np.linalg.norm(spec.grad(x)) ** 2)


def svrg_epoch_factor(spec: SubproblemSpec, gamma: float, epoch: int) -> float:
    """Per-epoch contraction bound for the expected subproblem gap.

    Uses the subproblem's own strong convexity 1/theta, so the bound reads
    2 (theta + 2 J gamma^2 L_A) / (J gamma (1 - 2 gamma L_A)).
    """
    if gamma <= 0.0 or gamma >= 1.0 / (2.0 * spec.l_a):
        raise ConfigError(
            f"svrg step {gamma:g} outside (0, 1/(2 L_A)) = "
            f"(0, {1.0 / (2.0 * spec.l_a):g})")
    if epoch < 1:
        raise ConfigError("epoch length must be at least 1")
    return (2.0 * (spec.theta + 2.0 * epoch * gamma ** 2 * spec.l_a)
            / (epoch * gamma * (1.0 - 2.0 * gamma * spec.l_a)))


def _svrg_defaults(spec: SubproblemSpec, cfg: SolverConfig):
    # gamma = 1/(16 L_A) with J = 96 * theta * L_A pins the epoch factor at
    # 2/3 regardless of conditioning
    gamma = 1.0 / (16.0 * spec.l_a) if cfg.step is None else cfg.step
    epoch = cfg.epoch
    if epoch is None:
        epoch = max(1, math.ceil(96.0 * spec.theta * spec.l_a))
    return gamma, epoch


def svrg_solve(spec: SubproblemSpec, cfg: SolverConfig, rng, x0=None):
    """Variance-reduced epochs with snapshot at the epoch average.

    Refuses configurations whose epoch contraction factor is not below one.
    ``cfg.last_iterate`` switches the snapshot to the last inner iterate.
    """
    gamma, epoch = _svrg_defaults(spec, cfg)
    factor = svrg_epoch_factor(spec, gamma, epoch)
    if factor >= 1.0:
        raise ConfigError(
            f"svrg epoch factor {factor:.3f} >= 1 for gamma={gamma:g}, "
            f"J={epoch}; raise J or shrink gamma")
    w = spec.x_g.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    for _ in range(cfg.iters):
        anchor = spec.grad(w)
        x = w.copy()
        acc = np.zeros_like(w)
        for _ in range(epoch):
            rows = _sample(spec, rng, cfg.minibatch)
            if rows is None:
                v = spec.grad(x)
            else:
                v = spec.stochastic_grad(x, rows) - spec.stochastic_grad(w, rows) + anchor
            x = x - gamma * v
            acc += x
            _guard(x, spec, "svrg")
        w = x if cfg.last_iterate else acc / epoch
    return w, float(np.linalg.norm(spec.grad(w)) ** 2)


def sarah_solve(spec: SubproblemSpec, cfg: SolverConfig, rng, x0=None):
    """Recursive gradient epochs; each epoch restarts from a full gradient."""
    gamma = 1.0 / (2.0 * spec.l_a) if cfg.step is None else cfg.step
    if gamma <= 0.0:
        raise ConfigError("step must be positive")
    epoch = cfg.epoch if cfg.epoch is not None else max(1, spec.server.n_points)
    if epoch < 1:
        raise ConfigError("epoch length must be at least 1")
    w = spec.x_g.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    for _ in range(cfg.iters):
        v = spec.grad(w)
        x_prev, x = w, w - gamma * v
        _guard(x, spec, "sarah")
        for _ in range(epoch - 1):
            rows = _sample(spec, rng, cfg.minibatch)
            if rows is None:
                v = spec.grad(x)
            else:
                v = spec.stochastic_grad(x, rows) - spec.stochastic_grad(x_prev, rows) + v
            x_prev, x = x, x - gamma * v
            _guard(x, spec, "sarah")
        w = x
    return w, float(np.linalg.norm(spec.grad(w)) ** 2)


_SOLVERS = {SGD: sgd_solve, SVRG: svrg_solve, SARAH: sarah_solve}


def stop_surrogate_check(spec: SubproblemSpec, x, delta: float) -> bool:
    """Computable sufficient condition for the relative accuracy criterion.

    The criterion compares ||grad A(x)||^2 against (9 delta^2 / 11) times the
    squared distance from x_g to the true subproblem minimizer. That distance
    is unknown, but smoothness gives ||x_g - argmin|| >= ||grad A(x_g)|| / L_A,
    so the check below implies the criterion. It can only fire once the
    gradient has shrunk by the factor 3 delta / (sqrt(11) L_A).
    """
    lhs = np.linalg.norm(spec.grad(np.asarray(x, dtype=float)))
    anchor = np.linalg.norm(spec.grad(spec.x_g))
    return bool(lhs <= (3.0 * delta / math.sqrt(11.0)) * anchor / spec.l_a)


def solve_subproblem(spec: SubproblemSpec, cfg: SolverConfig, rng,
                     stop: StopPolicy | None = None, x0=None) -> SubproblemResult:
    """Run the configured solver under the given stopping policy.

    Fixed policy spends the budget once. Surrogate policy re-invokes the
    solver warm-started in budget-sized chunks until the gradient surrogate
    holds, ``max_steps`` is exhausted, or a chunk stops making progress
    (rounding floor or solver variance floor); only the surrogate outcome
    sets ``satisfied``.
    """
    stop = stop or StopPolicy()
    solver = _SOLVERS[cfg.kind]
    if stop.kind == STOP_FIXED:
        x, gn2 = solver(spec, cfg, rng, x0=x0)
        return SubproblemResult(x, gn2, cfg.iters, True)

    cap = stop.max_steps if stop.max_steps is not None else 50 * max(cfg.iters, 1)
    x = spec.x_g.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    steps = 0
    if stop_surrogate_check(spec, x, stop.delta):
        return SubproblemResult(x, float(np.linalg.norm(spec.grad(x)) ** 2), 0, True)
    prev = math.inf
    while steps < cap:
        x, gn2 = solver(spec, cfg, rng, x0=x)
        steps += max(cfg.iters, 1)
        if stop_surrogate_check(spec, x, stop.delta):
            return SubproblemResult(x, gn2, steps, True)
        if gn2 >= 0.5 * prev:
            break
        prev = gn2
    return SubproblemResult(x, gn2, steps, False)


@dataclass
class LooplessReport:
    """Paired comparison of a fixed inner budget against a random one."""

    fixed_mean: float
    random_mean: float
    diff: float
    std_err: float
    confident: bool
    trials: int
    low_confidence: bool


def loopless_compare(spec: SubproblemSpec, cfg: SolverConfig, law: str = "geometric",
                     mean_budget: int = 8, trials: int = 50,
                     seed: int = 0) -> LooplessReport:
    """Final gradient quality under a fixed budget vs a random budget law.

    Both arms share solver noise (common random numbers); only the budget
    differs. ``law`` 'geometric' draws budgets with the given mean,
    'fixed' is the degenerate point mass, making the arms identical.
    The one-sided confidence flag marks the random arm worse at the 95% level
    via a paired normal test; below 10 trials the report is flagged
    low-confidence instead.
    """
    if mean_budget < 1:
        raise ConfigError("mean budget must be at least 1")
    if trials < 1:
        raise ConfigError("need at least one trial")
    if law not in ("geometric", "fixed"):
        raise ConfigError(f"unknown budget law {law!r}")
    solver = _SOLVERS[cfg.kind]
    budget_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    fixed_vals, random_vals = [], []
    for trial in range(trials):
        t_rand = mean_budget if law == "fixed" else int(budget_rng.geometric(1.0 / mean_budget))
        out = []
        for budget in (mean_budget, t_rand):
            run_cfg = SolverConfig(kind=cfg.kind, step=cfg.step, iters=budget,
                                   epoch=cfg.epoch, minibatch=cfg.minibatch,
                                   schedule=cfg.schedule,
                                   last_iterate=cfg.last_iterate)
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, trial)))
            _, gn2 = solver(spec, run_cfg, rng)
            out.append(gn2)
        fixed_vals.append(out[0])
        random_vals.append(out[1])
    fixed_vals = np.array(fixed_vals)
    random_vals = np.array(random_vals)
    diffs = random_vals - fixed_vals
    diff = float(np.mean(diffs))
    std_err = float(np.std(diffs, ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    confident = diff > 1.645 * std_err if std_err > 0 else diff > 0.0
    return LooplessReport(float(np.mean(fixed_vals)), float(np.mean(random_vals)),
                          diff, std_err, bool(confident), trials,
                          low_confidence=trials < 10)

"""Outer accelerated extragradient loops, tuning presets and step schedules.

One outer iteration extrapolates, aggregates a sampled correction direction
against the server model, solves the local prox subproblem inexactly, then
takes a momentum-damped extragradient step on a second sampled gradient:

    x_g  = tau x + (1 - tau) x_f
    s    = round-one aggregate at x_g
    x_f+ ~ argmin  <s, . - x_g> + ||. - x_g||^2 / (2 theta) + r_1
    t    = round-two aggregate at x_f+
    x+   = x + eta alpha (x_f+ - x) - eta t

The two preset tunings differ in where the sampling variance is charged:
the deterministic preset contracts the potential by 1 - sqrt(mu theta) / 3
per iteration, the sampled preset by 1 - sqrt(mu theta) / 9 in expectation
with theta capped by mu^3 B^2 / (5184 delta^4).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .federation import Federation, ROUND_PROX
from .objectives import estimate_smoothness
from .subproblem import (SolverConfig, StopPolicy, SubproblemSpec,
                         solve_subproblem)


@dataclass(frozen=True)
class AsegParams:
    """Outer step sizes. ``zeta`` records which variance regime tuned them."""

    tau: float
    eta: float
    theta: float
    alpha: float
    B: int = 1
    N: int = 1
    zeta: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau:g}")
        if self.eta <= 0.0 or self.theta <= 0.0 or self.alpha <= 0.0:
            raise ConfigError("eta, theta, alpha must be positive")
        if self.B < 1 or self.N < 1:
            raise ConfigError("B and N must be at least 1")
        if self.zeta not in (0, 1):
            raise ConfigError("zeta must be 0 or 1")

    @property
    def tau_over_eta(self) -> float:
        return self.tau / self.eta


def _check_regime(mu: float, delta: float):
    if not 0.0 < mu <= delta:
        raise ConfigError(
            f"tuning presets need 0 < mu <= delta, got mu={mu:g}, delta={delta:g}")


def tune_deterministic(mu: float, delta: float, theta_opt: float | None = None,
                       B: int = 1, N: int = 1) -> AsegParams:
    """Exact-direction tuning: alpha = mu/3, tau = sqrt(mu theta)/3,
    eta = min(1/(3 alpha), theta/(3 tau)), theta at most 1/(3 delta)."""
    _check_regime(mu, delta)
    cap = 1.0 / (3.0 * delta)
    if theta_opt is None:
        theta = cap
    else:
        if theta_opt > cap * (1.0 + 1e-12):
            raise ConfigError(f"theta {theta_opt:g} exceeds 1/(3 delta) = {cap:g}")
        theta = theta_opt
    alpha = mu / 3.0
    tau = math.sqrt(mu * theta) / 3.0
    eta = min(1.0 / (3.0 * alpha), theta / (3.0 * tau))
    return AsegParams(tau=tau, eta=eta, theta=theta, alpha=alpha, B=B, N=N, zeta=0)


def tune_sampled(mu: float, delta: float, B: int, theta_opt: float | None = None,
                 N: int = 1) -> AsegParams:
    """Sampled-direction tuning: tau = sqrt(mu theta) and theta additionally
    capped by mu^3 B^2 / (5184 delta^4)."""
    _check_regime(mu, delta)
    if B < 1:
        raise ConfigError("B must be at least 1")
    cap = min(1.0 / (3.0 * delta), mu ** 3 * B ** 2 / (5184.0 * delta ** 4))
    if theta_opt is None:
        theta = cap
    else:
        if theta_opt > cap * (1.0 + 1e-12):
            raise ConfigError(f"theta {theta_opt:g} exceeds the cap {cap:g}")
        theta = theta_opt
    alpha = mu / 3.0
    tau = math.sqrt(mu * theta)
    eta = min(1.0 / (3.0 * alpha), theta / (3.0 * tau))
    return AsegParams(tau=tau, eta=eta, theta=theta, alpha=alpha, B=B, N=N, zeta=1)


def b_threshold(mu: float, delta: float) -> int:
    """Batch size above which sampling stops limiting theta: ceil(72 (delta/mu)^1.5).

    Discrepancy note: for (mu, delta) = (0.06, 0.07) this returns 91, not the
    57 sometimes quoted for that pair. 57 < 72 (7/6)^1.5 = 90.67, so it fails
    the defining inequality B >= 72 (delta/mu)^1.5 and cannot equalize the two
    theta caps; 91 is the least integer that does.
    """
    _check_regime(mu, delta)
    return math.ceil(72.0 * (delta / mu) ** 1.5)


def theta_schedule_strongly_convex(mu: float, delta: float, B: int, N: int,
                                   phi0: float, sigma_sq: float,
                                   zeta: int = 0) -> float:
    """Horizon-aware theta for a target budget of N outer iterations.

    ``sigma_sq`` is the combined variance 2 (sigma_sim^2 + sigma_noise^2); zero
    short-circuits to the similarity cap. The candidate balances the
    geometric term against the noise floor and is never allowed past the caps.
    """
    if N < 1 or B < 1:
        raise ConfigError("N and B must be at least 1")
    if phi0 < 0.0 or sigma_sq < 0.0:
        raise ConfigError("phi0 and sigma_sq must be nonnegative")
    if zeta not in (0, 1):
        raise ConfigError("zeta must be 0 or 1")
    if zeta == 0:
        cap = 1.0 / (3.0 * delta)
        if sigma_sq == 0.0:
            return cap
        arg = max(2.0, B * mu * N ** 2 * phi0 / (36.0 * sigma_sq))
        candidate = 9.0 * math.log(arg) ** 2 / (mu * N ** 2)
        return min(candidate, cap)
    cap = min(1.0 / (3.0 * delta), mu ** 3 * B ** 2 / (5184.0 * delta ** 4))
    if sigma_sq == 0.0:
        return cap
    arg = max(2.0, B * mu * N ** 2 * phi0 / (1296.0 * sigma_sq))
    candidate = 324.0 * math.log(arg) ** 2 / (mu * N ** 2)
    return min(candidate, cap)


def theta_schedule_convex(delta: float, B: int, N: int, dist0: float,
                          sigma_sq: float) -> float:
    """Horizon-aware theta for the convex loop."""
    if N < 1 or B < 1:
        raise ConfigError("N and B must be at least 1")
    if dist0 < 0.0 or sigma_sq < 0.0:
        raise ConfigError("dist0 and sigma_sq must be nonnegative")
    cap = 1.0 / (3.0 * delta) if delta > 0 else math.inf
    if sigma_sq == 0.0:
        if not math.isfinite(cap):
            raise ConfigError("noise-free convex schedule needs delta > 0")
        return cap
    candidate = (math.sqrt(B) * dist0
                 / (math.sqrt(3.0 * sigma_sq) * (N + 1) ** 1.5))
    return min(candidate, cap)


@dataclass(frozen=True)
class ConvexSchedule:
    """Iteration-indexed steps for the merely convex loop.

    tau_k = 2/(k+1) so the first extrapolation collapses onto x^0. The proof
    pairs it with eta = theta/(2 tau); the looser statement value theta/tau is
    kept behind ``eta_rule``.
    """

    theta: float
    B: int = 1
    N: int = 1
    eta_rule: str = "proof"

    def __post_init__(self):
        if self.theta <= 0.0:
            raise ConfigError("theta must be positive")
        if self.eta_rule not in ("proof", "statement"):
            raise ConfigError(f"unknown eta rule {self.eta_rule!r}")

    def tau(self, k: int) -> float:
        return 2.0 / (k + 1)

    def eta(self, k: int) -> float:
        t = self.tau(k)
        return self.theta / (2.0 * t) if self.eta_rule == "proof" else self.theta / t


@dataclass
class ReferenceInfo:
    """Precomputed optimum for gap and distance traces."""

    x_star: np.ndarray
    r_star: float


@dataclass
class TraceRow:
    k: int
    phi: float
    gap: float
    dist_sq: float
    contacts: int
    normalized_rounds: float
    grad_norm_sq: float
    wall_ms: float


@dataclass
class RunTrace:
    """Per-iteration history of one run. ``blind`` means no reference optimum
    was available, in which case phi column holds ||grad r(x_f)||^2."""

    rows: list = field(default_factory=list)
    blind: bool = False
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def final(self) -> TraceRow:
        return self.rows[-1]


def _trace_row(k, x, x_f, fed, reference, phi_of, t0):
    gn2 = float(np.linalg.norm(fed.global_obj.grad(x_f)) ** 2)
    if reference is None:
        phi, gap, dist_sq = gn2, math.nan, math.nan
    else:
        gap = fed.global_obj.value(x_f) - reference.r_star
        dist_sq = float(np.linalg.norm(x - reference.x_star) ** 2)
        phi = phi_of(k, dist_sq, gap)
    contacts, rounds, _ = fed.ledger.snapshot()
    wall = (time.perf_counter() - t0) * 1000.0
    return TraceRow(k, phi, gap, dist_sq, contacts, rounds, gn2, wall)


def _server_smoothness(fed: Federation, value: float | None) -> float:
    return value if value is not None else estimate_smoothness(fed.server).value


def run_aseg(fed: Federation, params: AsegParams, solver: SolverConfig,
             stop: StopPolicy | None = None, x0=None,
             reference: ReferenceInfo | None = None,
             server_smoothness: float | None = None) -> RunTrace:
    """Strongly convex outer loop for ``params.N`` iterations.

    Traces the potential (tau/eta) ||x - x*||^2 + 2 (r(x_f) - r*) when a
    reference optimum is supplied, else falls back to gradient norms (blind
    mode). Solver divergence is re-raised with the outer iteration attached.
    """
    l1 = _server_smoothness(fed, server_smoothness)
    x = np.zeros(fed.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    x_f = x.copy()
    phi_of = lambda k, dist_sq, gap: params.tau_over_eta * dist_sq + 2.0 * gap
    t0 = time.perf_counter()
    trace = RunTrace(blind=reference is None,
                     meta={"mode": "strongly_convex", "params": params})
    trace.rows.append(_trace_row(0, x, x_f, fed, reference, phi_of, t0))

    for k in range(params.N):
        x_g = params.tau * x + (1.0 - params.tau) * x_f
        s = fed.round_one(k, x_g)
        spec = SubproblemSpec(s, x_g, params.theta, fed.server, l1)
        try:
            res = solve_subproblem(spec, solver, fed.rng.stream(k, ROUND_PROX, 0, 0),
                                   stop=stop)
        except DivergenceError as e:
            raise DivergenceError(str(e), iteration=k) from e
        x_f = res.x
        t = fed.round_two(k, x_f)
        x = x + params.eta * params.alpha * (x_f - x) - params.eta * t
        if not np.all(np.isfinite(x)):
            raise DivergenceError("outer iterate is not finite", iteration=k)
        trace.rows.append(_trace_row(k + 1, x, x_f, fed, reference, phi_of, t0))
    return trace


def run_aseg_convex(fed: Federation, schedule: ConvexSchedule,
                    solver: SolverConfig, stop: StopPolicy | None = None,
                    x0=None, reference: ReferenceInfo | None = None,
                    server_smoothness: float | None = None) -> RunTrace:
    """Merely convex outer loop: no momentum damping, iteration-indexed steps.

    The phi column traces ||x - x*||^2 + (theta / tau_k^2) (r(x_f) - r*),
    the potential the O(1/N^2) gap bound contracts.
    """
    l1 = _server_smoothness(fed, server_smoothness)
    x = np.zeros(fed.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    x_f = x.copy()

    def phi_of(k, dist_sq, gap):
        t = schedule.tau(max(k, 1))
        return dist_sq + schedule.theta / t ** 2 * gap

    t0 = time.perf_counter()
    trace = RunTrace(blind=reference is None,
                     meta={"mode": "convex", "schedule": schedule})
    trace.rows.append(_trace_row(0, x, x_f, fed, reference, phi_of, t0))

    for k in range(schedule.N):
        tau = schedule.tau(k + 1)
        x_g = tau * x + (1.0 - tau) * x_f
        s = fed.round_one(k, x_g)
        spec = SubproblemSpec(s, x_g, schedule.theta, fed.server, l1)
        try:
            res = solve_subproblem(spec, solver, fed.rng.stream(k, ROUND_PROX, 0, 0),
                                   stop=stop)
        except DivergenceError as e:
            raise DivergenceError(str(e), iteration=k) from e
        x_f = res.x
        t = fed.round_two(k, x_f)
        x = x - schedule.eta(k + 1) * t
        if not np.all(np.isfinite(x)):
            raise DivergenceError("outer iterate is not finite", iteration=k)
        trace.rows.append(_trace_row(k + 1, x, x_f, fed, reference, phi_of, t0))
    return trace

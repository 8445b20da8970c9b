"""Hessian similarity constants: delta estimation and gradient-spread checks.

delta bounds the spectral norm of the server-vs-average Hessian gap,
``||hess r_1(x) - hess r(x)|| <= delta`` for all x. For quadratics the gap is
constant and computed exactly; for logistic losses it is sampled around the
optimum. Estimates ship with a 3/2 safety factor by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .objectives import MixtureObjective, QUADRATIC, power_iteration

EXACT_QUADRATIC = "exact_quadratic"
SAMPLED_LOGISTIC = "sampled_logistic"

SAFETY_FACTOR = 1.5


@dataclass
class DeltaEstimate:
    value: float
    method: str
    samples_used: int = 0
    safety_factor: float = 1.0

    @property
    def unscaled(self) -> float:
        return self.value / self.safety_factor


def hessian_gap_norm(server, global_obj, x, *, tol: float = 1e-8,
                     max_iters: int = 10_000, seed: int = 0) -> float:
    """Spectral norm of hess r_1(x) - hess r(x), matrix-free.

    The gap D is symmetric but possibly indefinite, so power iteration runs
    on D^2 and the norm is the square root of its top eigenvalue.
    """
    x = np.asarray(x, dtype=float)

    def gap(v):
        return server.hess_vec(x, v) - global_obj.hess_vec(x, v)

    eig, converged, _ = power_iteration(lambda v: gap(gap(v)), server.dim,
                                        tol=tol * tol, max_iters=max_iters,
                                        seed=seed)
    if not converged:
        raise RuntimeError("power iteration on the squared Hessian gap "
                           f"did not converge to tol {tol:g}")
    return float(np.sqrt(max(eig, 0.0)))


def _as_global(clients):
    return clients if isinstance(clients, MixtureObjective) else MixtureObjective(list(clients))


def delta_quadratic_exact(server, clients, *, safety: bool = True,
                          tol: float = 1e-8) -> DeltaEstimate:
    """Exact delta for quadratics: the Hessian gap is constant in x."""
    if server.model.kind != QUADRATIC:
        raise ValueError("exact delta path requires quadratic losses")
    global_obj = _as_global(clients)
    norm = hessian_gap_norm(server, global_obj, np.zeros(server.dim), tol=tol)
    factor = SAFETY_FACTOR if safety else 1.0
    return DeltaEstimate(norm * factor, EXACT_QUADRATIC, samples_used=1,
                         safety_factor=factor)


def delta_sampled(server, clients, x_star, *, n_points: int = 100,
                  radius: float | None = None, seed: int = 0,
                  safety: bool = True, tol: float = 1e-8) -> DeltaEstimate:
    """delta for state-dependent Hessians, sampled around the optimum.

    Evaluates the pointwise Hessian gap norm at x_star perturbed by Gaussian
    draws of the given radius (radius 0 collapses every sample onto x_star).
    Points come one by one from a single stream, so a longer run of the same
    seed extends a shorter one and the estimate grows monotonically in
    n_points.
    """
    if n_points < 1:
        raise ValueError("need at least one sample point")
    x_star = np.asarray(x_star, dtype=float)
    if radius is None:
        radius = float(np.linalg.norm(x_star)) / 10.0 + 0.1
    global_obj = _as_global(clients)
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_points):
        x = x_star + radius * rng.standard_normal(x_star.shape[0])
        best = max(best, hessian_gap_norm(server, global_obj, x, tol=tol))
    factor = SAFETY_FACTOR if safety else 1.0
    return DeltaEstimate(best * factor, SAMPLED_LOGISTIC, samples_used=n_points,
                         safety_factor=factor)


def sigma_sim_sq(clients, x_star) -> float:
    """Gradient spread at the optimum: 2 max_m ||grad r_m(x_star)||^2."""
    x_star = np.asarray(x_star, dtype=float)
    worst = max(float(np.linalg.norm(c.grad(x_star)) ** 2) for c in clients)
    return 2.0 * worst


@dataclass
class Prop1Report:
    checked: int
    max_slack: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_gradient_spread_bound(clients, global_obj, delta: float, x_star,
                                trial_points, *, tol: float = 1e-9) -> Prop1Report:
    """Verify ||grad r_m(x) - grad r(x)||^2 <= sigma_sim^2 + 2 delta^2 ||x - x_star||^2
    at each trial point for every node."""
    x_star = np.asarray(x_star, dtype=float)
    sim = sigma_sim_sq(clients, x_star)
    max_slack = -np.inf
    violations = []
    checked = 0
    for pi, x in enumerate(trial_points):
        x = np.asarray(x, dtype=float)
        g = global_obj.grad(x)
        rhs = sim + 2.0 * delta ** 2 * float(np.linalg.norm(x - x_star) ** 2)
        for m, c in enumerate(clients):
            lhs = float(np.linalg.norm(c.grad(x) - g) ** 2)
            slack = lhs - rhs
            max_slack = max(max_slack, slack)
            checked += 1
            if slack > tol:
                violations.append({"point": pi, "node": m + 1,
                                   "lhs": lhs, "rhs": rhs})
    return Prop1Report(checked, max_slack, violations)

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from asegsim.dataio import SynthSpec, gen_synthetic_quadratic
from asegsim.driver import (AsegParams, ConvexSchedule, ReferenceInfo,
                            b_threshold, run_aseg, run_aseg_convex,
                            theta_schedule_convex,
                            theta_schedule_strongly_convex,
                            tune_deterministic, tune_sampled)
from asegsim.errors import ConfigError, DivergenceError
from asegsim.federation import Federation, NoiseModel, SamplingPlan
from asegsim.subproblem import SolverConfig, StopPolicy


FULL_GD = SolverConfig(kind="sgd", iters=80, minibatch=0)


def small_problem():
    prob = gen_synthetic_quadratic(SynthSpec(d=10, M=6, points_per_node=12,
                                             hetero=0.5, seed=3, lam=0.05))
    return prob


def test_deterministic_preset_relations():
    mu, delta = 0.4, 0.9
    p = tune_deterministic(mu, delta)
    assert p.theta == 1.0 / (3.0 * delta)
    assert p.alpha == mu / 3.0
    assert p.tau == math.sqrt(mu * p.theta) / 3.0
    assert p.eta == min(1.0 / (3.0 * p.alpha), p.theta / (3.0 * p.tau))
    assert p.tau_over_eta == pytest.approx(mu / 3.0, rel=1e-12)
    assert p.zeta == 0
    # explicit theta below the cap is honored, above it refused
    q = tune_deterministic(mu, delta, theta_opt=0.1)
    assert q.theta == 0.1
    with pytest.raises(ConfigError):
        tune_deterministic(mu, delta, theta_opt=0.5)


def test_sampled_preset_relations():
    mu, delta, B = 0.4, 0.9, 3
    p = tune_sampled(mu, delta, B)
    cap = min(1.0 / (3.0 * delta), mu ** 3 * B ** 2 / (5184.0 * delta ** 4))
    assert p.theta == cap
    assert p.tau == math.sqrt(mu * p.theta)
    assert p.alpha == mu / 3.0
    assert p.tau_over_eta == pytest.approx(3.0 * mu, rel=1e-12)
    assert p.alpha * p.eta == pytest.approx(math.sqrt(mu * p.theta) / 9.0,
                                            rel=1e-12)
    assert p.zeta == 1
    with pytest.raises(ConfigError):
        tune_sampled(mu, delta, B, theta_opt=2.0 * cap)


def test_presets_require_mu_below_delta():
    with pytest.raises(ConfigError):
        tune_deterministic(1.0, 0.5)
    with pytest.raises(ConfigError):
        tune_deterministic(0.0, 0.5)
    with pytest.raises(ConfigError):
        tune_sampled(1.0, 0.5, 2)
    with pytest.raises(ConfigError):
        tune_sampled(0.4, 0.9, 0)


def test_params_validation():
    with pytest.raises(ConfigError):
        AsegParams(tau=0.0, eta=1.0, theta=1.0, alpha=1.0)
    with pytest.raises(ConfigError):
        AsegParams(tau=1.5, eta=1.0, theta=1.0, alpha=1.0)
    with pytest.raises(ConfigError):
        AsegParams(tau=0.5, eta=-1.0, theta=1.0, alpha=1.0)
    with pytest.raises(ConfigError):
        AsegParams(tau=0.5, eta=1.0, theta=1.0, alpha=1.0, zeta=2)


def test_b_threshold_frozen_values():
    assert b_threshold(0.105, 1.45) == 3695
    assert 3690 <= b_threshold(0.105, 1.45) <= 3700
    assert b_threshold(0.06, 0.07) == 91
    with pytest.raises(ConfigError):
        b_threshold(0.5, 0.4)


def test_sampling_cap_equalization_point():
    # the batch size where the sampling cap meets the similarity cap, found
    # by an independent root solve on the continuous relaxation
    mu, delta = 0.3, 1.0
    f = lambda b: mu ** 3 * b ** 2 / (5184.0 * delta ** 4) - 1.0 / (3.0 * delta)
    b_star = brentq(f, 1.0, 1e6)
    assert b_star == pytest.approx(math.sqrt(1728.0) * (delta / mu) ** 1.5,
                                   rel=1e-10)
    lo, hi = math.floor(b_star), math.ceil(b_star)
    assert lo < hi  # non-integer crossing for this pair
    assert tune_sampled(mu, delta, lo).theta < 1.0 / (3.0 * delta)
    assert tune_sampled(mu, delta, hi).theta == 1.0 / (3.0 * delta)
    # the threshold batch is comfortably past the crossing
    bt = b_threshold(mu, delta)
    assert bt >= hi
    assert tune_sampled(mu, delta, bt).theta == 1.0 / (3.0 * delta)


def test_theta_schedule_strongly_convex_frozen_values():
    # long horizon: the log-balanced candidate wins (frozen digits)
    got = theta_schedule_strongly_convex(0.5, 1.0, 2, 1000, 10.0, 0.3, zeta=0)
    assert got == pytest.approx(0.0033974593708741, rel=1e-12)
    assert got < 1.0 / 3.0
    # short horizon: capped
    assert theta_schedule_strongly_convex(0.5, 1.0, 2, 1, 10.0, 0.3, zeta=0) \
        == 1.0 / 3.0
    # sampled regime: the tiny sampling cap binds long before the candidate
    got1 = theta_schedule_strongly_convex(0.5, 1.0, 2, 1000, 10.0, 0.3, zeta=1)
    assert got1 == pytest.approx(9.645061728395061e-05, rel=1e-12)
    assert got1 == pytest.approx(0.5 ** 3 * 2 ** 2 / 5184.0, rel=1e-15)


def test_theta_schedule_noise_free_short_circuits():
    assert theta_schedule_strongly_convex(0.5, 1.0, 2, 50, 10.0, 0.0, zeta=0) \
        == 1.0 / 3.0
    want = min(1.0 / 3.0, 0.5 ** 3 * 4.0 / 5184.0)
    assert theta_schedule_strongly_convex(0.5, 1.0, 2, 50, 10.0, 0.0, zeta=1) \
        == want


def test_theta_schedule_shrinks_with_horizon():
    vals = [theta_schedule_strongly_convex(0.5, 1.0, 2, n, 10.0, 0.3, zeta=0)
            for n in (100, 1000, 10000, 100000)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-6


def test_theta_schedule_validation():
    with pytest.raises(ConfigError):
        theta_schedule_strongly_convex(0.5, 1.0, 0, 10, 1.0, 0.1)
    with pytest.raises(ConfigError):
        theta_schedule_strongly_convex(0.5, 1.0, 1, 0, 1.0, 0.1)
    with pytest.raises(ConfigError):
        theta_schedule_strongly_convex(0.5, 1.0, 1, 10, -1.0, 0.1)
    with pytest.raises(ConfigError):
        theta_schedule_strongly_convex(0.5, 1.0, 1, 10, 1.0, 0.1, zeta=2)


def test_theta_schedule_convex_values():
    got = theta_schedule_convex(1.0, 4, 200, 3.0, 0.4)
    assert got == pytest.approx(0.0019220582320553627, rel=1e-12)
    # noise free: similarity cap
    assert theta_schedule_convex(1.0, 4, 200, 3.0, 0.0) == 1.0 / 3.0
    # short horizons are capped
    assert theta_schedule_convex(1.0, 4, 1, 100.0, 0.4) == 1.0 / 3.0
    # longer horizons shrink theta
    assert theta_schedule_convex(1.0, 4, 2000, 3.0, 0.4) < got
    with pytest.raises(ConfigError):
        theta_schedule_convex(0.0, 4, 10, 3.0, 0.0)
    with pytest.raises(ConfigError):
        theta_schedule_convex(1.0, 0, 10, 3.0, 0.4)


def test_convex_schedule_steps():
    s = ConvexSchedule(theta=0.3)
    assert s.tau(1) == 1.0  # the first extrapolation collapses onto x^0
    assert s.tau(3) == 0.5
    assert s.eta(4) == 0.3 / (2.0 * s.tau(4))
    t = ConvexSchedule(theta=0.3, eta_rule="statement")
    assert t.eta(4) == 0.3 / t.tau(4)
    with pytest.raises(ConfigError):
        ConvexSchedule(theta=0.0)
    with pytest.raises(ConfigError):
        ConvexSchedule(theta=0.3, eta_rule="midpoint")


def test_optimum_is_a_fixed_point(std):
    params = tune_deterministic(std.constants.mu, std.delta, N=10)
    fed = Federation.full_participation(std.clients)
    stop = StopPolicy(kind="surrogate", delta=std.delta, max_steps=4000)
    trace = run_aseg(fed, params, FULL_GD, stop=stop, x0=std.x_star,
                     reference=std.reference)
    assert max(math.sqrt(r.dist_sq) for r in trace.rows) <= 1e-10
    assert max(abs(r.phi) for r in trace.rows) <= 1e-12


def test_trace_shape_and_ledger_integration(std):
    params = tune_sampled(std.constants.mu, std.delta, B=3, N=6)
    plan = SamplingPlan(batch=3)
    fed = Federation(std.clients, plan, NoiseModel(), master_seed=1)
    trace = run_aseg(fed, params, FULL_GD, x0=std.x0, reference=std.reference)
    assert [r.k for r in trace.rows] == list(range(7))
    assert trace.rows[0].contacts == 0
    assert trace.final.contacts == 2 * 3 * 6
    assert trace.final.normalized_rounds == 6 * 3 / len(std.clients)
    assert not trace.blind
    assert trace.meta["mode"] == "strongly_convex"
    contacts = trace.column("contacts")
    assert np.all(np.diff(contacts) > 0)


def test_blind_mode_traces_gradient_norms(std):
    params = tune_deterministic(std.constants.mu, std.delta, N=3)
    fed = Federation.full_participation(std.clients)
    trace = run_aseg(fed, params, FULL_GD, x0=std.x0)
    assert trace.blind
    for row in trace.rows:
        assert math.isnan(row.gap) and math.isnan(row.dist_sq)
        assert row.phi == row.grad_norm_sq


def test_runs_reproduce_bitwise():
    prob = small_problem()
    params = tune_sampled(prob.constants.mu, prob.constants.delta, B=2, N=5)
    solver = SolverConfig(kind="sgd", iters=30, minibatch=1)
    noise = NoiseModel("gaussian", 0.05)

    def phi_column(seed):
        fed = Federation(prob.clients, SamplingPlan(batch=2), noise,
                         master_seed=seed)
        trace = run_aseg(fed, params, solver, x0=np.ones(10))
        return trace.column("phi")

    assert np.array_equal(phi_column(5), phi_column(5))
    assert not np.array_equal(phi_column(5), phi_column(6))


def test_divergence_carries_outer_iteration():
    prob = small_problem()
    params = tune_deterministic(prob.constants.mu, prob.constants.delta, N=4)
    fed = Federation.full_participation(prob.clients)
    bad = SolverConfig(kind="sarah", step=1000.0, iters=50, epoch=5, minibatch=0)
    with pytest.raises(DivergenceError) as err:
        run_aseg(fed, params, bad, x0=np.ones(10))
    assert err.value.iteration == 0
    assert "iteration 0" in str(err.value)


def test_convex_loop_decreases_gap(std):
    sched = ConvexSchedule(theta=1.0 / (3.0 * std.delta), N=30)
    fed = Federation.full_participation(std.clients)
    stop = StopPolicy(kind="surrogate", delta=std.delta, max_steps=4000)
    trace = run_aseg_convex(fed, sched, FULL_GD, stop=stop,
                            reference=std.reference)
    assert trace.rows[0].gap > 1.0
    assert trace.final.gap <= 1e-4
    assert trace.final.gap <= trace.rows[0].gap * 1e-4
    assert trace.meta["mode"] == "convex"
    assert [r.k for r in trace.rows] == list(range(31))


def test_convex_eta_rules_change_the_run(std):
    stop = StopPolicy(kind="surrogate", delta=std.delta, max_steps=4000)
    finals = []
    for rule in ("proof", "statement"):
        sched = ConvexSchedule(theta=1.0 / (3.0 * std.delta), N=10,
                               eta_rule=rule)
        fed = Federation.full_participation(std.clients)
        trace = run_aseg_convex(fed, sched, FULL_GD, stop=stop,
                                reference=std.reference)
        finals.append(trace.final.gap)
    assert finals[0] != finals[1]

"""Assemble problems from a RunConfig and execute full experiment commands."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .config import RunConfig, apply_pairs, config_hash, semantic_items
from .dataio import SynthSpec, build_partition, gen_synthetic_quadratic, \
    parse_libsvm, write_libsvm
from .driver import ConvexSchedule, ReferenceInfo, RunTrace, \
    run_aseg, run_aseg_convex, theta_schedule_convex, \
    theta_schedule_strongly_convex, tune_deterministic, tune_sampled
from .errors import ConfigError
from .federation import Federation, NoiseModel, SamplingPlan
from .objectives import Dataset, LossModel, MixtureObjective, \
    ProblemConstants, estimate_mu, estimate_smoothness, \
    normalize_classification_labels, solve_reference
from .report import Report
from .similarity import delta_quadratic_exact, delta_sampled, sigma_sim_sq
from .subproblem import SolverConfig, StopPolicy


@dataclass
class Session:
    """A fully resolved experiment: nodes, constants, tuned parameters."""

    cfg: RunConfig
    server: object
    clients: list
    global_obj: MixtureObjective
    model: LossModel
    constants: ProblemConstants
    reference: ReferenceInfo | None


def _rebuild_with_lam(cfg: RunConfig, lam: float):
    model = LossModel(cfg.loss, lam)
    if cfg.data_path is None:
        spec = SynthSpec(d=cfg.synth_d, M=cfg.clients, points_per_node=cfg.synth_points,
                         hetero=cfg.synth_hetero, seed=cfg.synth_seed, lam=lam,
                         label_noise=cfg.synth_label_noise)
        prob = gen_synthetic_quadratic(spec)
        return prob.server, prob.clients, prob.global_obj, model, prob.constants
    with open(cfg.data_path) as fh:
        ds, _ = parse_libsvm(fh)
    if cfg.loss == "logistic":
        ds = normalize_classification_labels(ds)
    part = build_partition(ds, model, cfg.clients, cfg.server_batches,
                           cfg.partition_seed)
    return part.server, part.clients, part.global_obj, model, None


def build_session(cfg: RunConfig) -> Session:
    if cfg.data_path is None and cfg.loss != "quadratic":
        raise ConfigError("the synthetic family is quadratic; "
                          "logistic runs need data.path")

    lam = cfg.lam
    if lam is None:
        # resolve the penalty from the unpenalized smoothness, then rebuild
        _, _, bare_global, _, _ = _rebuild_with_lam(cfg, 0.0)
        lam = estimate_smoothness(bare_global).value / 100.0
    server, clients, global_obj, model, synth_consts = _rebuild_with_lam(cfg, lam)

    smoothness = estimate_smoothness(global_obj).value
    server_smoothness = estimate_smoothness(server).value
    if cfg.mu_override is not None:
        mu = cfg.mu_override
    elif synth_consts is not None:
        mu = synth_consts.mu
    else:
        mu = estimate_mu(global_obj)

    reference = None
    x_star = None
    r_star = None
    sigma_sim = None
    if not cfg.blind:
        sol = solve_reference(global_obj, tol=cfg.ref_tol, smoothness=smoothness)
        reference = ReferenceInfo(sol.x, sol.value)
        x_star, r_star = sol.x, sol.value
        sigma_sim = sigma_sim_sq(clients, x_star)

    if cfg.delta_override is not None:
        delta = cfg.delta_override
    elif cfg.loss == "quadratic":
        delta = delta_quadratic_exact(server, clients, safety=cfg.delta_safety).value
    else:
        if x_star is None:
            raise ConfigError("estimating delta for logistic losses needs a "
                              "reference solve; unset blind or set delta")
        delta = delta_sampled(server, clients, x_star,
                              n_points=cfg.delta_points,
                              safety=cfg.delta_safety).value

    constants = ProblemConstants(mu=mu, smoothness=smoothness,
                                 server_smoothness=server_smoothness,
                                 delta=delta, sigma_sim_sq=sigma_sim,
                                 x_star=x_star, r_star=r_star)
    return Session(cfg, server, clients, global_obj, model, constants, reference)


def combined_sigma_sq(session: Session) -> float:
    """Total per-contact variance 2 (sigma_sim^2 + sigma_noise^2)."""
    noise_var = NoiseModel(session.cfg.noise_kind, session.cfg.noise_scale) \
        .variance_bound(session.server.dim)
    sim = session.constants.sigma_sim_sq
    if sim is None:
        raise ConfigError("sigma_sim^2 unavailable in blind mode")
    return 2.0 * (sim + noise_var)


def _initial_scales(session: Session):
    # the loop starts at the origin, so the initial distance and gap are
    # computable from the reference alone
    ref = session.reference
    if ref is None:
        raise ConfigError("horizon-based theta needs a reference solve; unset blind")
    dist0_sq = float(np.linalg.norm(ref.x_star) ** 2)
    gap0 = session.global_obj.value(np.zeros(session.server.dim)) - ref.r_star
    return dist0_sq, gap0


def build_outer(session: Session):
    """Tuned outer parameters (strongly convex) or a convex schedule."""
    cfg = session.cfg
    mu, delta = session.constants.mu, session.constants.delta

    if cfg.mode == "convex":
        theta = cfg.theta
        if theta is None and cfg.theta_rule == "horizon":
            dist0_sq, _ = _initial_scales(session)
            theta = theta_schedule_convex(delta, cfg.batch, cfg.iters,
                                          math.sqrt(dist0_sq),
                                          combined_sigma_sq(session))
        elif theta is None:
            if delta <= 0:
                raise ConfigError("convex mode with a zero similarity gap "
                                  "needs an explicit theta")
            theta = 1.0 / (3.0 * delta)
        return ConvexSchedule(theta=theta, B=cfg.batch, N=cfg.iters,
                              eta_rule=cfg.eta_rule)

    zeta = 0 if cfg.tuning == "deterministic" else 1
    theta = cfg.theta
    if theta is None and cfg.theta_rule == "horizon":
        dist0_sq, gap0 = _initial_scales(session)
        tau_over_eta = mu / 3.0 if zeta == 0 else 3.0 * mu
        phi0 = tau_over_eta * dist0_sq + 2.0 * gap0
        theta = theta_schedule_strongly_convex(mu, delta, cfg.batch, cfg.iters,
                                               phi0, combined_sigma_sq(session),
                                               zeta=zeta)
    if zeta == 0:
        return tune_deterministic(mu, delta, theta_opt=theta,
                                  B=cfg.batch, N=cfg.iters)
    return tune_sampled(mu, delta, cfg.batch, theta_opt=theta, N=cfg.iters)


def build_solver(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(kind=cfg.solver_kind, step=cfg.solver_step,
                        iters=cfg.solver_iters, epoch=cfg.solver_epoch,
                        minibatch=cfg.solver_minibatch,
                        schedule=cfg.solver_schedule,
                        last_iterate=cfg.solver_last_iterate)


def build_stop(cfg: RunConfig, delta: float) -> StopPolicy:
    if cfg.solver_stop == "fixed":
        return StopPolicy()
    return StopPolicy(kind="surrogate", delta=delta,
                      max_steps=cfg.solver_max_steps)


def run_seed(session: Session, outer, seed: int) -> RunTrace:
    cfg = session.cfg
    plan = SamplingPlan(batch=cfg.batch, replacement=cfg.replacement,
                        full_participation=cfg.full_participation,
                        reweight=cfg.reweight)
    noise = NoiseModel(cfg.noise_kind, cfg.noise_scale)
    fed = Federation(session.clients, plan, noise, master_seed=seed)
    solver = build_solver(cfg)
    stop = build_stop(cfg, session.constants.delta)
    kwargs = dict(solver=solver, stop=stop, reference=session.reference,
                  server_smoothness=session.constants.server_smoothness)
    if isinstance(outer, ConvexSchedule):
        return run_aseg_convex(fed, outer, **kwargs)
    return run_aseg(fed, outer, **kwargs)


def _metadata(session: Session, outer) -> dict:
    c = session.constants
    meta = {
        "config": dict(semantic_items(session.cfg)),
        "config_hash": config_hash(session.cfg),
        "seeds": list(session.cfg.seeds),
        "constants": {
            "mu": c.mu, "smoothness": c.smoothness,
            "server_smoothness": c.server_smoothness, "delta": c.delta,
            "sigma_sim_sq": c.sigma_sim_sq, "r_star": c.r_star,
            "lam": session.model.lam,
        },
    }
    if isinstance(outer, ConvexSchedule):
        meta["outer"] = {"mode": "convex", "theta": outer.theta,
                         "eta_rule": outer.eta_rule}
    else:
        meta["outer"] = {"mode": "strongly_convex", "tau": outer.tau,
                         "eta": outer.eta, "theta": outer.theta,
                         "alpha": outer.alpha, "zeta": outer.zeta}
    if c.x_star is not None:
        meta["constants"]["x_star"] = [float(v) for v in c.x_star]
    return meta


def run_command(cfg: RunConfig, save: bool = True) -> Report:
    session = build_session(cfg)
    outer = build_outer(session)
    report = Report(seeds=list(cfg.seeds), metadata=_metadata(session, outer))
    for seed in cfg.seeds:
        report.traces[seed] = run_seed(session, outer, seed)
    if save:
        report.save(cfg.out, timing=cfg.timing)
    return report


def estimate_command(cfg: RunConfig) -> dict:
    session = build_session(cfg)
    c = session.constants
    out = {
        "delta": c.delta,
        "mu": c.mu,
        "smoothness": c.smoothness,
        "server_smoothness": c.server_smoothness,
        "lambda": session.model.lam,
        "sigma_sim_sq": c.sigma_sim_sq,
        "r_star": c.r_star,
    }
    if c.sigma_sim_sq is not None:
        out["sigma_sq"] = combined_sigma_sq(session)
    return out


SWEEP_AXES = {
    "batch": "batch",
    "noise": "noise.scale",
    "epoch": "solver.epoch",
    "theta": "theta",
}


def _sweep_cell(args):
    cfg, axis_key, value, out_dir = args
    cell_cfg = apply_pairs(cfg, {axis_key: value})
    cell_cfg = replace(cell_cfg, out=out_dir)
    report = run_command(cell_cfg)
    rows = report.aggregate()
    return value, rows[-1]


def sweep_command(cfg: RunConfig, axis: str, values: list) -> Path:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}")
    key = SWEEP_AXES[axis]
    base = Path(cfg.out)
    tasks = [(cfg, key, str(v), str(base / f"{axis}_{v}")) for v in values]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_sweep_cell, tasks))
    else:
        results = [_sweep_cell(t) for t in tasks]

    base.mkdir(parents=True, exist_ok=True)
    lines = ["axis,value,final_phi_mean,final_gap_mean,final_grad_norm_sq_mean,"
             "contacts,normalized_rounds"]
    for value, last in results:
        lines.append(",".join([
            axis, value, repr(float(last["phi_mean"])),
            repr(float(last["gap_mean"])),
            repr(float(last["grad_norm_sq_mean"])),
            str(int(last["contacts"])), repr(float(last["normalized_rounds"])),
        ]))
    summary = base / "sweep.csv"
    summary.write_text("\n".join(lines) + "\n")
    return summary


def compare_command(cfg: RunConfig) -> Path:
    """Sampled run vs the full-participation noise-free baseline."""
    arms = {
        "sampled": cfg,
        "full": replace(cfg, full_participation=True, noise_kind="none",
                        noise_scale=0.0),
    }
    base = Path(cfg.out)
    rows = []
    for name, arm_cfg in arms.items():
        arm_cfg = replace(arm_cfg, out=str(base / name))
        report = run_command(arm_cfg)
        for agg in report.aggregate():
            rows.append((name, agg))
    base.mkdir(parents=True, exist_ok=True)
    lines = ["arm,k,contacts,normalized_rounds,phi_mean,gap_mean,grad_norm_sq_mean"]
    for name, agg in rows:
        lines.append(",".join([
            name, str(int(agg["k"])), str(int(agg["contacts"])),
            repr(float(agg["normalized_rounds"])), repr(float(agg["phi_mean"])),
            repr(float(agg["gap_mean"])), repr(float(agg["grad_norm_sq_mean"])),
        ]))
    path = base / "comparison.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def export_command(cfg: RunConfig, out_path: str) -> Path:
    """Write the configured dataset as libsvm text (node rows in order)."""
    if cfg.data_path is not None:
        with open(cfg.data_path) as fh:
            ds, _ = parse_libsvm(fh)
    else:
        session_lam = cfg.lam if cfg.lam is not None else 0.0
        spec = SynthSpec(d=cfg.synth_d, M=cfg.clients,
                         points_per_node=cfg.synth_points,
                         hetero=cfg.synth_hetero, seed=cfg.synth_seed,
                         lam=session_lam, label_noise=cfg.synth_label_noise)
        prob = gen_synthetic_quadratic(spec)
        feats = sp.vstack([c.data.features for c in prob.clients])
        labels = np.concatenate([c.data.labels for c in prob.clients])
        ds = Dataset(feats, labels)
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(write_libsvm(ds))
    return path

"""Experiment orchestration: certify, solve and brute-force verify one instance."""

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, replace

import numpy as np

from .bregman import BregmanGenerator, NONNEG, REALS
from .errors import CertificateUnavailable, DomainError, ThresholdUndefined
from .fidelity import KL, LS, Fidelity, lipschitz_info
from .instances import gen_instance, load_instance
from .landscape import (
    BrscCertificate, brsc_kl_constructive, brsc_ls, burg_to_kl_generator, interval_kl, interval_l2,
    interval_ls, sublevel_box_bound, check_recovery_conditions,
)
from .objective import Problem
from .rng import derive_seed
from .solvers import brute_force_l0, oracle_solve, prox_gradient, support_table

ORACLE_ATOL = 1e-8

CSV_COLUMNS = ("trial", "seed", "lambda0", "certified", "interval_lo", "interval_hi", "bf_support",
               "bf_objective", "oracle_match", "solver_objective", "solver_critical", "noise", "amplitude")


class TheoryViolation(RuntimeError):
    """A certified promise was contradicted by brute force or sampling."""

    def __init__(self, message, reproducer):
        super().__init__(message)
        self.reproducer = reproducer


def ls_noise_ceiling(delta, min_amp):
    """Largest ``||eps||_2`` for which the least-squares interval is nonempty."""
    if delta >= 1:
        return 0.0
    clamp = min((1.0 - delta) ** 2, 1.0)
    return min_amp / (1.0 / clamp + 1.0 / math.sqrt(1.0 - delta))


def with_noise_norm(instance, norm):
    """Same instance with the noise rescaled to Euclidean norm ``norm`` (least squares only)."""
    if instance.b is not None:
        raise DomainError("noise rescaling applies to Gaussian noise")
    size = np.linalg.norm(instance.eps)
    eps = instance.eps * (norm / size) if size > 0 else instance.eps
    return replace(instance, y=instance.y_clean + eps, eps=eps)


def instance_from_config(cfg, seed=None):
    if cfg.instance is not None:
        spec = cfg.instance if seed is None else replace(cfg.instance, seed=int(seed))
        return gen_instance(spec)
    f = cfg.files
    return load_instance(f["matrix"], f["y"], f.get("x_star"), f.get("b"), seed or 0)


def fidelity_of(instance):
    if instance.b is not None:
        return Fidelity.kullback_leibler(instance.y, instance.b)
    return Fidelity.least_squares(instance.y)


def build_problem(instance, cfg, lambda0=1.0):
    """Problem with a generator meeting the concavity condition, honoring config overrides."""
    f = fidelity_of(instance)
    A = instance.A
    psi = cfg.psi or ("l2" if f.kind == LS else "kl")
    if psi == "l2" and cfg.gamma is not None:
        cset = REALS if f.kind == LS else NONNEG
        p = Problem(A, f, BregmanGenerator.quadratic(cfg.gamma, cset), lambda0)
    elif psi == "kl" and cfg.xi is not None:
        if f.kind != KL:
            raise DomainError("the KL generator needs the KL term")
        c = np.min(np.where(A > 0, A, np.inf), axis=0)
        bound = (A * A).T @ f.y / (c * c * cfg.xi)
        gamma = np.where(bound > 0, cfg.safety * bound, 1e-8)
        p = Problem(A, f, BregmanGenerator.smoothed_kl(gamma, c, cfg.xi), lambda0)
    else:
        p = Problem.calibrated(A, f, lambda0, psi=psi, safety=cfg.safety)
    return p


@dataclass
class Certification:
    route: str
    certificate: BrscCertificate = None
    interval: object = None
    reason: str = ""

    @property
    def applicable(self):
        return self.interval is not None and self.interval.nonempty

    def certifies(self, lam):
        return self.applicable and lam in self.interval


def default_K(cfg, instance):
    if cfg.K is not None:
        return cfg.K
    return min(2 * len(instance.sigma_star), instance.A.shape[1]) or 1


def certify(instance, p, cfg):
    """Certificate and ``lambda0`` interval for the instance's true support."""
    if not np.all(np.isfinite(instance.x_star)):
        return Certification("none", reason="certification needs x_star")
    K = default_K(cfg, instance)
    A, x_star, sigma = instance.A, instance.x_star, instance.sigma_star
    gen = p.generator
    try:
        if p.fidelity.kind == LS and gen.kind == "quadratic":
            gamma = float(np.max(gen.gamma))
            cert = brsc_ls(A, K, 1.0, gamma)
            colmax = float(np.max(np.linalg.norm(A, axis=0)))
            if gamma == 1.0 and colmax < 1:
                iv = interval_ls(x_star, instance.noise_l2, cert.details["delta"], K, len(sigma), colmax)
                return Certification("ls_interval", cert, iv)
            if not cert.C_K > 0:
                return Certification("l2_interval", cert, reason="C_K = 0")
            iv = interval_l2(x_star, p.F(x_star), A, sigma, cert.C_K, K, gamma, 1.0)
            return Certification("l2_interval", cert, iv)
        if p.fidelity.kind == KL and gen.kind == "smoothed_kl":
            F_star = p.F(x_star)
            Q = cfg.Q if cfg.Q is not None else sublevel_box_bound(A, p.fidelity, sigma, F_star)
            burg = brsc_kl_constructive(A, p.fidelity.y, p.fidelity.b, gen.xi / gen.c, K, Q)
            cert = burg_to_kl_generator(burg, gen.xi, gen.gamma)
            if not cert.C_K > 0:
                return Certification("kl_interval", cert, reason="C_K = 0")
            L_tilde = lipschitz_info(p.fidelity, A).L_tilde
            iv = interval_kl(x_star, A, p.fidelity.b, instance.noise_inf, gen.xi, gen.c, gen.gamma,
                             cert.C_K, K, L_tilde)
            return Certification("kl_interval", cert, iv)
        return Certification("none", reason="no certificate for this data term and generator")
    except (CertificateUnavailable, ThresholdUndefined) as exc:
        return Certification("none", reason=str(exc))


def lambda_values(cfg, cert):
    if not cfg.lambdas.automatic:
        return list(cfg.lambdas.values)
    if not cert.applicable:
        return []
    return [float(v) for v in cert.interval.interior_points(cfg.lambdas.count)]


def condition_report(p, instance, cert, lam):
    """Direct condition check at ``lam``; ``None`` without a positive constant."""
    if cert.certificate is None or not cert.certificate.C_K > 0:
        return None
    rep = check_recovery_conditions(p.with_lambda(lam), instance.x_star, instance.sigma_star, cert.certificate)
    return {
        "verdict": rep.verdict,
        "regime": rep.regime,
        "falsified": rep.falsified,
        "conditions": {k: {"passed": v.passed, "margin": v.margin, **v.detail} for k, v in rep.conditions.items()},
    }


def solve_at(p, cfg, lam):
    res = prox_gradient(p.with_lambda(lam), step_rule=cfg.step_rule, tol=cfg.tol, max_iter=cfg.max_iter)
    return {
        "lambda0": lam,
        "objective": res.objective,
        "iterations": res.iterations,
        "converged": res.converged,
        "critical": bool(res.converged and res.criticality_residual <= cfg.tol),
        "criticality_residual": res.criticality_residual,
        "support": [int(i) for i in np.flatnonzero(res.x)],
        "x": res.x,
    }


def verify_at(p, instance, cfg, lam, table, x_or):
    bf = brute_force_l0(p.with_lambda(lam), table=table)
    match = None
    if x_or is not None:
        match = bool(bf.unique and bf.best_support == tuple(instance.sigma_star)
                     and np.max(np.abs(bf.x_best - x_or), initial=0.0) <= ORACLE_ATOL * max(1.0, np.max(np.abs(x_or))))
    return {
        "lambda0": lam,
        "best_support": list(bf.best_support),
        "J0": bf.J0_value,
        "unique": bf.unique,
        "optima": [list(o) for o in bf.optima],
        "oracle_match": match,
    }


def check_promise(cert, row, instance, extra=None):
    lam = row["lambda0"]
    if cert.certifies(lam) and row["oracle_match"] is False:
        raise TheoryViolation(
            f"certified lambda0={lam} but brute force found support {row['best_support']}",
            {"lambda0": lam, "A": instance.A, "y": instance.y, "b": instance.b, "x_star": instance.x_star,
             "seed": instance.seed, "interval": [cert.interval.lower, cert.interval.upper], **(extra or {})})


def run_verification(instance, cfg, lambdas, cert, p):
    """Brute-force rows for every ``lambda0``; raises ``TheoryViolation`` on a broken promise."""
    table, _ = support_table(p, cfg.k_max)
    x_or = None
    if np.all(np.isfinite(instance.x_star)):
        x_or = oracle_solve(p, instance.sigma_star).x_or
    rows = []
    for lam in lambdas:
        row = verify_at(p, instance, cfg, lam, table, x_or)
        row["certified"] = cert.certifies(lam)
        check_promise(cert, row, instance)
        rows.append(row)
    return rows


def certification_summary(cert):
    out = {"route": cert.route, "applicable": cert.applicable, "reason": cert.reason}
    if cert.certificate is not None:
        c = cert.certificate
        out["certificate"] = {"K": c.K, "C_K": c.C_K, "provenance": c.provenance, "details": c.details}
    if cert.interval is not None:
        iv = cert.interval
        out["interval"] = {"lower": iv.lower, "upper": iv.upper, "nonempty": iv.nonempty,
                           "diagnostics": iv.diagnostics}
    return out


def instance_summary(instance):
    return {
        "seed": instance.seed,
        "M": int(instance.A.shape[0]),
        "N": int(instance.A.shape[1]),
        "fidelity": instance.fidelity,
        "sigma_star": list(instance.sigma_star),
        "noise_l2": instance.noise_l2,
        "noise_inf": instance.noise_inf,
        "min_amplitude": instance.min_amplitude,
    }


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class TrialPlan:
    trial: int
    seed: int
    noise: float
    amplitude: float


def sweep_plan(cfg, base_seed):
    if cfg.instance is None:
        raise DomainError("sweeps need an [instance] section")
    noise = cfg.noise_grid or (cfg.instance.sigma,)
    plans, t = [], 0
    for level in noise:
        for amp in cfg.amplitude_grid:
            for _ in range(cfg.trials):
                plans.append(TrialPlan(t, derive_seed(base_seed, t), level, amp))
                t += 1
    return plans


def trial_instance(cfg, plan):
    spec = cfg.instance
    spec = replace(spec, seed=plan.seed, a_min=spec.a_min * plan.amplitude, a_max=spec.a_max * plan.amplitude)
    if spec.fidelity == LS and cfg.noise_mode == "absolute":
        spec = replace(spec, sigma=plan.noise)
    elif spec.fidelity == LS:
        spec = replace(spec, sigma=1.0)
    instance = gen_instance(spec)
    if spec.fidelity == LS and cfg.noise_mode == "fraction":
        delta = brsc_ls(instance.A, default_K(cfg, instance)).details["delta"]
        instance = with_noise_norm(instance, plan.noise * ls_noise_ceiling(delta, instance.min_amplitude))
    return instance


def run_trial(cfg, plan):
    """CSV rows of one sweep trial (one per tested ``lambda0``)."""
    instance = trial_instance(cfg, plan)
    p = build_problem(instance, cfg)
    cert = certify(instance, p, cfg)
    lambdas = lambda_values(cfg, cert)
    lo = cert.interval.lower if cert.interval is not None else math.nan
    hi = cert.interval.upper if cert.interval is not None else math.nan
    if not lambdas:
        return [dict(trial=plan.trial, seed=plan.seed, lambda0=math.nan, certified=0, interval_lo=lo,
                     interval_hi=hi, bf_support="", bf_objective=math.nan, oracle_match="",
                     solver_objective=math.nan, solver_critical="", noise=plan.noise, amplitude=plan.amplitude)]
    verified = run_verification(instance, cfg, lambdas, cert, p)
    rows = []
    for lam, v in zip(lambdas, verified):
        s = solve_at(p, cfg, lam)
        rows.append(dict(trial=plan.trial, seed=plan.seed, lambda0=lam, certified=int(v["certified"]),
                         interval_lo=lo, interval_hi=hi, bf_support=" ".join(map(str, v["best_support"])),
                         bf_objective=v["J0"], oracle_match=int(bool(v["oracle_match"])),
                         solver_objective=s["objective"], solver_critical=int(s["critical"]),
                         noise=plan.noise, amplitude=plan.amplitude))
    return rows


@contextmanager
def timed(timings, name):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timings[name] = time.perf_counter() - t0

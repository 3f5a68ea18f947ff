"""Solvers: restricted convex fits, the oracle solution, forward-backward
splitting on the relaxed objective and exhaustive search over supports."""

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bregman import NONNEG
from .errors import GuardError, NumericalFailure, SupportNotIdentifiable
from .fidelity import LS, lipschitz_info
from .objective import DEFAULT_TOL, as_support, is_critical, support_of, zero_pad

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10
KKT_TOL = 1e-10
BRUTE_FORCE_MAX_N = 24
TIE_TOL = 1e-12


def _check_rank(A_omega):
    k = A_omega.shape[1]
    if k == 0:
        return
    s = np.linalg.svd(A_omega, compute_uv=False)
    if s.size < k or s[-1] <= RANK_RTOL * s[0]:
        raise SupportNotIdentifiable("support not identifiable: A restricted to it is rank deficient")


def _projected_newton(A, fidelity, u, tol, max_iter):
    """Minimize ``G_y(A u)`` over ``u >= 0``.

    Projected gradient with Armijo backtracking along the projection arc; on
    the coordinates that are not held at zero the gradient is scaled by the
    inverse Hessian (two-metric projection), which keeps the iteration count
    small without changing the fixed points.
    """
    k = A.shape[1]
    value = fidelity.value(A @ u)
    grad = A.T @ fidelity.gradient(A @ u)
    scale = max(1.0, float(np.max(np.abs(grad), initial=0.0)))
    for it in range(max_iter):
        kkt = float(np.max(np.abs(u - np.maximum(u - grad, 0.0)), initial=0.0))
        if kkt <= tol * scale:
            return u, value, it
        held = (u <= min(1e-12, kkt)) & (grad > 0)
        free = ~held
        direction = grad.copy()
        if free.any():
            Af = A[:, free]
            hess = Af.T @ (fidelity.curvature(A @ u)[:, None] * Af)
            hess += 1e-14 * max(np.trace(hess), 1e-300) * np.eye(hess.shape[0])
            try:
                newton = np.linalg.solve(hess, grad[free])
            except np.linalg.LinAlgError:
                newton = grad[free]
            if not np.dot(newton, grad[free]) > 0:
                newton = grad[free]
            direction[free] = newton
        t = 1.0
        while True:
            cand = np.maximum(u - t * direction, 0.0)
            cval = fidelity.value(A @ cand)
            expected = t * np.dot(grad[free], direction[free]) + np.dot(grad[held], u[held] - cand[held])
            if cval <= value - 1e-4 * expected or np.array_equal(cand, u):
                break
            t *= 0.5
            if t < 1e-20:
                raise NumericalFailure("restricted solve: line search failed",
                                       {"kkt_residual": kkt, "iterations": it, "support_size": k})
        if np.array_equal(cand, u):
            # rounding floor reached: accept if the residual is already tiny
            if kkt <= 1e-6 * scale:
                return u, value, it
            raise NumericalFailure("restricted solve stalled",
                                   {"kkt_residual": kkt, "iterations": it, "support_size": k})
        u, value = cand, cval
        grad = A.T @ fidelity.gradient(A @ u)
    raise NumericalFailure("restricted solve did not converge",
                           {"kkt_residual": kkt, "iterations": max_iter, "support_size": k})


def restricted_fit(A, fidelity, constraint_set, omega, tol=KKT_TOL, max_iter=100_000):
    """Minimize ``G_y(A_omega u)`` over ``u`` in the constraint set; returns ``(u, value)``."""
    omega = as_support(omega, A.shape[1])
    A_omega = A[:, list(omega)]
    if not omega:
        return np.zeros(0), fidelity.value(np.zeros(A.shape[0]))
    _check_rank(A_omega)
    u_ls = np.linalg.lstsq(A_omega, fidelity.y if fidelity.kind == LS else fidelity.y - fidelity.b,
                           rcond=None)[0]
    if fidelity.kind == LS and constraint_set != NONNEG:
        return u_ls, fidelity.value(A_omega @ u_ls)
    u, value, _ = _projected_newton(A_omega, fidelity, np.maximum(u_ls, 0.0), tol, max_iter)
    return u, value


def restricted_convex_solve(p, omega, tol=KKT_TOL, max_iter=100_000):
    """Minimizer of the data term over vectors supported in ``omega``; returns ``(u, F)``."""
    return restricted_fit(p.A, p.fidelity, p.constraint_set, omega, tol, max_iter)


@dataclass(frozen=True)
class OracleSolution:
    support: tuple
    u_or: np.ndarray
    x_or: np.ndarray
    F_value: float
    F_star: float = math.nan


def oracle_solve(p, sigma_star, x_star=None):
    """Data-term minimizer restricted to the true support ``sigma_star``.

    When ``x_star`` is given its data-term value is recorded in ``F_star``;
    by construction ``F_value <= F_star``.
    """
    sigma = as_support(sigma_star, p.N)
    u, value = restricted_convex_solve(p, sigma)
    F_star = p.F(x_star) if x_star is not None else math.nan
    return OracleSolution(sigma, u, zero_pad(sigma, u, p.N), value, F_star)


@dataclass
class SolveResult:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool
    final_step: float
    criticality_residual: float
    trace: list = field(default_factory=list)


def global_lipschitz(p):
    """``L ||A||_2^2``, a gradient Lipschitz constant of the data term on the constraint set."""
    L = lipschitz_info(p.fidelity, p.A).L
    return L * float(np.linalg.norm(p.A, 2)) ** 2


def _polish(p, x, value):
    """Refit on the support of ``x``; returns ``(x_refit, value)`` if that lowers the objective."""
    omega = support_of(x)
    try:
        u, _ = restricted_convex_solve(p, omega)
    except (SupportNotIdentifiable, NumericalFailure):
        return None
    cand = zero_pad(omega, u, p.N)
    cval = p.JPsi(cand)
    return (cand, cval) if cval < value else None


def prox_gradient(p, x0=None, step_rule="backtracking", tol=DEFAULT_TOL, max_iter=10_000,
                  decrease=1e-4, polish_after=5):
    """Forward-backward splitting on the relaxed objective.

    Each iteration takes ``x+ = prox_{t B}(x - t grad F(x))`` with the exact
    coordinate-wise prox.  With ``step_rule="backtracking"`` the step starts
    at ``1 / (L ||A||^2)`` and is halved until
    ``J(x+) <= J(x) - decrease / (2 t) ||x+ - x||^2``; the accepted step is
    reused as the next starting step.  ``"adaptive"`` does the same but first
    doubles the previous step, which helps when the global constant is far
    from the local curvature (typical for KL).  ``"fixed"`` keeps
    ``t = 1 / (L ||A||^2)``.  Stops once the displacement and the criticality residual are both below ``tol``.
    """
    if step_rule not in ("backtracking", "adaptive", "fixed"):
        raise ValueError(f"unknown step rule {step_rule!r}")
    x = p.check(np.zeros(p.N) if x0 is None else np.array(x0, dtype=float))
    lip = global_lipschitz(p)
    t0 = 1.0 / lip if lip > 0 else 1.0
    t = t0
    value = p.JPsi(x)
    trace = [value]
    residual = math.inf
    stable, polished = 0, None
    for it in range(1, max_iter + 1):
        grad = p.grad_F(x)
        if step_rule == "adaptive":
            t *= 2.0
        while True:
            cand = p.penalty.prox(x - t * grad, t)
            cval = p.JPsi(cand)
            move = float(np.sum((cand - x) ** 2))
            slack = 4 * np.finfo(float).eps * (1.0 + abs(value))
            if step_rule == "fixed" or cval <= value - decrease / (2 * t) * move + slack:
                break
            t *= 0.5
            if t < 1e-16 * t0:
                return SolveResult(x, value, it, False, t, residual, trace)
        disp = float(np.max(np.abs(cand - x)))
        stable = stable + 1 if support_of(cand) == support_of(x) else 0
        x, value = cand, cval if step_rule == "fixed" else min(cval, value)
        nz = x != 0
        if (polish_after is not None and stable >= polish_after and support_of(x) != polished
                and np.all(np.abs(x[nz]) > p.alpha[nz])):
            polished = support_of(x)
            refit = _polish(p, x, value)
            if refit is not None:
                x, value = refit
        trace.append(value)
        if disp <= tol:
            residual = is_critical(p, x, tol).max_residual
            if residual <= tol:
                return SolveResult(x, value, it, True, t, residual, trace)
    residual = is_critical(p, x, tol).max_residual
    return SolveResult(x, value, max_iter, False, t, residual, trace)


@dataclass(frozen=True)
class SupportRecord:
    support: tuple
    u: np.ndarray
    F_value: float


@dataclass(frozen=True)
class BruteForceResult:
    best_support: tuple
    x_best: np.ndarray
    J0_value: float
    table: list
    optima: list
    skipped: list

    @property
    def unique(self):
        return len(self.optima) == 1


def support_table(p, k_max=None):
    """Restricted fits on every support of size at most ``k_max``.

    Rank-deficient supports are logged and listed separately.  The table
    does not depend on ``lambda0`` and can be rescored for other values.
    """
    N = p.N
    if N > BRUTE_FORCE_MAX_N:
        raise GuardError(f"brute force needs N <= {BRUTE_FORCE_MAX_N}, got N={N}")
    k_max = N if k_max is None else int(k_max)
    if not 0 <= k_max <= N:
        raise GuardError(f"k_max must lie in [0, N={N}]")
    table, skipped = [], []
    for k in range(k_max + 1):
        for omega in itertools.combinations(range(N), k):
            try:
                u, value = restricted_convex_solve(p, omega)
            except SupportNotIdentifiable:
                log.info("skipping rank-deficient support %s", omega)
                skipped.append(omega)
                continue
            table.append(SupportRecord(omega, u, value))
    return table, skipped


def brute_force_l0(p, k_max=None, table=None):
    """Global minimizer of ``J_0`` by enumerating every support of size <= ``k_max``.

    Supports whose ``J_0`` value is within ``TIE_TOL`` of the best are all
    reported in ``optima``; ``best_support`` is the first of them in
    (size, lexicographic) order.
    """
    skipped = []
    if table is None:
        table, skipped = support_table(p, k_max)
    scores = np.array([rec.F_value + p.lambda0 * len(rec.support) for rec in table])
    best = int(np.argmin(scores))
    optima = [table[i].support for i in np.flatnonzero(scores <= scores[best] + TIE_TOL)]
    rec = table[best]
    return BruteForceResult(rec.support, zero_pad(rec.support, rec.u, p.N), float(scores[best]),
                            table, optima, skipped)

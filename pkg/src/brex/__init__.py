"""Exact l0-Bregman relaxations for sparse least-squares and Kullback-Leibler regression."""

from .bregman import NONNEG, REALS, BregmanGenerator, BrexPenalty, lambert_w0, solve_alpha
from .errors import (
    CertificateUnavailable, DomainError, GuardError, NumericalFailure, SupportNotIdentifiable,
    ThresholdUndefined,
)
from .fidelity import Fidelity, lipschitz_info
from .landscape import (
    BrscCertificate, LambdaInterval, SafeRegion, brsc_empirical, brsc_kl_constructive, brsc_ls,
    check_recovery_conditions, interval_kl, interval_l2, interval_ls, lrip_delta, prior_ls_interval, safe_ball,
)
from .objective import Problem, is_critical, isolation_check
from .solvers import brute_force_l0, oracle_solve, prox_gradient, restricted_convex_solve

__version__ = "0.1.0"

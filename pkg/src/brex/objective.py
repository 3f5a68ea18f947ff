"""The l0-penalized objective, its B-rex relaxation and first-order tests."""

from dataclasses import dataclass

import numpy as np

from .bregman import NONNEG, REALS, BregmanGenerator, BrexPenalty, SMOOTHED_KL
from .errors import DomainError, ThresholdUndefined
from .fidelity import KL, LS, cc_calibrate_kl, cc_calibrate_quadratic

DEFAULT_TOL = 1e-8


def as_support(indices, N=None):
    """Validate an index set and return it as a sorted tuple of ints."""
    omega = tuple(sorted(int(i) for i in indices))
    if len(set(omega)) != len(omega):
        raise DomainError("support has repeated indices")
    if omega and (omega[0] < 0 or (N is not None and omega[-1] >= N)):
        raise DomainError("support index out of range")
    return omega


def support_of(x):
    return tuple(int(i) for i in np.flatnonzero(np.asarray(x)))


def zero_pad(omega, u, N):
    """Embed ``u`` into a length-``N`` vector at the positions ``omega``."""
    omega = as_support(omega, N)
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != len(omega):
        raise DomainError("support size and vector length differ")
    x = np.zeros(N)
    x[list(omega)] = u
    return x


def restrict(x, omega):
    return np.asarray(x, dtype=float)[list(as_support(omega))]


@dataclass(frozen=True, eq=False)
class Problem:
    """``J_0(x) = G_y(Ax) + lambda0 ||x||_0`` and its relaxation ``G_y(Ax) + B_Psi(x)``.

    ``generator`` holds the coordinate generators with parameters broadcast to
    length ``N``.  ``cc_margin`` is the slack in the concavity condition
    (positive entries mean the strict inequality holds for that column).
    """

    A: np.ndarray
    fidelity: object
    generator: BregmanGenerator
    lambda0: float

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != self.fidelity.size:
            raise DomainError("A must be M x N with M = len(y)")
        if not np.all(np.isfinite(A)):
            raise DomainError("A has non-finite entries")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        if self.generator.shape not in ((), (A.shape[1],)):
            raise DomainError("generator parameters must be scalars or length-N vectors")
        if self.fidelity.kind == KL:
            if np.any(A < 0):
                raise DomainError("the KL fidelity needs a nonnegative matrix")
            if self.generator.constraint_set != NONNEG:
                raise DomainError("the KL fidelity needs the nonnegative constraint set")
        object.__setattr__(self, "lambda0", float(self.lambda0))
        object.__setattr__(self, "penalty", BrexPenalty(self.generator, self.lambda0))
        object.__setattr__(self, "cc_margin", self._cc_margin())

    @classmethod
    def calibrated(cls, A, fidelity, lambda0, psi=None, constraint_set=None, safety=1.0 + 1e-6):
        """Build a problem whose generator meets the concavity condition.

        ``psi`` is ``"l2"`` (default for least squares) or ``"kl"`` (default
        for the KL term).
        """
        A = np.asarray(A, dtype=float)
        psi = psi or ("l2" if fidelity.kind == LS else "kl")
        if psi == "l2":
            if constraint_set is None:
                constraint_set = REALS if fidelity.kind == LS else NONNEG
            if fidelity.kind == LS:
                gamma = cc_calibrate_quadratic(fidelity, A, safety)
            else:
                gamma = safety * float(np.max((A * A).T @ fidelity.curvature_sup()))
                gamma = gamma if gamma > 0 else 1.0
            gen = BregmanGenerator.quadratic(gamma, constraint_set)
        elif psi == "kl":
            xi, c, gamma = cc_calibrate_kl(fidelity, A, safety)
            gen = BregmanGenerator.smoothed_kl(gamma, c, xi)
        else:
            raise DomainError(f"unknown generator family {psi!r}")
        return cls(A, fidelity, gen, lambda0)

    def _cc_margin(self):
        A, gen = self.A, self.generator
        gamma = np.broadcast_to(gen.gamma, (self.N,))
        if gen.kind == SMOOTHED_KL:
            if self.fidelity.kind != KL:
                return np.full(self.N, np.nan)
            c = np.broadcast_to(gen.c, (self.N,))
            c_min = np.min(np.where(A > 0, A, np.inf), axis=0)
            bound = (A * A).T @ self.fidelity.y / (c * c * gen.xi)
            ok = np.isclose(c, c_min, rtol=1e-12) & (gen.xi <= np.min(self.fidelity.b))
            return np.where(ok, gamma - bound, -np.inf)
        return gamma - (A * A).T @ self.fidelity.curvature_sup()

    @property
    def cc_satisfied(self):
        return bool(np.all(self.cc_margin > 0))

    @property
    def N(self):
        return self.A.shape[1]

    @property
    def M(self):
        return self.A.shape[0]

    @property
    def constraint_set(self):
        return self.generator.constraint_set

    @property
    def alpha(self):
        return np.broadcast_to(self.penalty.alpha, (self.N,))

    def with_lambda(self, lambda0):
        return Problem(self.A, self.fidelity, self.generator, lambda0)

    def check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.N,):
            raise DomainError(f"expected a vector of length {self.N}")
        return self.generator.check_domain(x)

    def F(self, x):
        """Data term ``G_y(Ax)``."""
        return self.fidelity.value(self.A @ self.check(x))

    def grad_F(self, x):
        return self.A.T @ self.fidelity.gradient(self.A @ self.check(x))

    def J0(self, x):
        x = self.check(x)
        return self.F(x) + self.lambda0 * np.count_nonzero(x)

    def JPsi(self, x):
        x = self.check(x)
        return self.F(x) + float(np.sum(self.penalty.value(x)))

    def H(self, x):
        """``B_Psi(x) + Psi(x)``, the convex part of the relaxed objective split."""
        x = self.check(x)
        return float(np.sum(self.penalty.value(x) + self.generator.value(x)))


def eval_J0(p, x):
    return p.J0(x)


def eval_JPsi(p, x):
    return p.JPsi(x)


def eval_H(p, x):
    return p.H(x)


def compute_z(p, x):
    """``grad Psi(x) - A^T grad G_y(Ax)``."""
    x = p.check(x)
    return p.generator.derivative(x) - p.grad_F(x)


@dataclass(frozen=True)
class CriticalityReport:
    """Distances of ``z_i`` to ``dh_i(x_i)``, scaled by ``1 + |psi_i'(alpha_i)|``."""

    z: np.ndarray
    residuals: np.ndarray
    is_critical: bool
    tol: float

    @property
    def max_residual(self):
        return float(np.max(self.residuals, initial=0.0))


def is_critical(p, x, tol=DEFAULT_TOL):
    """Test the first-order condition ``z in dH(x)`` coordinate by coordinate."""
    z = compute_z(p, x)
    dist = np.asarray(p.penalty.h_subdiff(p.check(x)).distance(z))
    residuals = dist / (1.0 + np.abs(p.penalty.slope))
    residuals = np.broadcast_to(residuals, (p.N,)).copy()
    return CriticalityReport(z, residuals, bool(np.all(residuals <= tol)), tol)


@dataclass(frozen=True)
class IsolationReport:
    """Outcome of the band test on ``|z_i|``.

    ``margins`` are signed distances to the forbidden band: positive outside
    it, zero or negative inside.  An empty band gives infinite margins.
    """

    isolated: bool
    margins: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    critical: bool


def isolation_margins(z, slope, slope0, C_K):
    """Signed distances of ``|z_i|`` to the band ``[C_K d_i + s0, d_i / C_K + s0]``.

    ``d_i = slope_i - s0`` with ``slope_i = psi_i'(alpha_i)`` and
    ``s0 = psi_i'(0)``.  Returns ``(margins, band_lo, band_hi)``.
    """
    if not C_K > 0:
        raise DomainError("C_K must be positive")
    z = np.asarray(z, dtype=float)
    spread = np.broadcast_to(np.asarray(slope, dtype=float) - slope0, z.shape)
    lo = C_K * spread + slope0
    hi = spread / C_K + slope0
    az = np.abs(z)
    if C_K > 1:
        return np.full(z.shape, np.inf), lo, hi
    outside = np.maximum(lo - az, az - hi)
    margins = np.where(outside > 0, outside, -np.minimum(az - lo, hi - az))
    return margins, lo, hi


def isolation_check(p, x, C_K, tol=DEFAULT_TOL):
    """Band test on ``|z_i|`` at a critical point ``x``.

    When every margin is positive, any other critical point of the relaxed
    objective differs from ``x`` in more than ``K`` coordinates.
    """
    report = is_critical(p, x, tol)
    margins, lo, hi = isolation_margins(report.z, p.penalty.slope, p.penalty.slope0, C_K)
    return IsolationReport(bool(np.all(margins > 0)), margins, lo, hi, report.is_critical)


def uniqglob_bound(F_value, K, k):
    """``F / (1 + K - 2k)``: the unique-global threshold for a ``k``-sparse point."""
    if K < 2 * k:
        raise ThresholdUndefined(f"threshold undefined: K={K} < 2*||x||_0={2 * k}")
    return F_value / (1 + K - 2 * k)


def uniqglob_threshold(p, x, K):
    """``lambda0`` must exceed this for a critical ``x`` to be the unique global minimizer."""
    x = p.check(x)
    return uniqglob_bound(p.F(x), K, np.count_nonzero(x))

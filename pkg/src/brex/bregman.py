"""Scalar Bregman generators, the B-rex penalty and its proximal operator.

Every routine here is elementwise.  Generator parameters may be scalars or
arrays, so a single :class:`BregmanGenerator` can stand for the whole vector
of coordinate generators ``psi_1, ..., psi_N`` and broadcasting does the rest.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

REALS = "reals"
NONNEG = "nonneg"
QUADRATIC = "quadratic"
SMOOTHED_KL = "smoothed_kl"

_EPS = np.finfo(float).eps
# 1/e split in two doubles so that x + 1/e keeps its low-order bits near the
# branch point of W.
_INV_E_HI = 0.36787944117144233
_INV_E_LO = -1.2428753672788363e-17
# Series of W0 around the branch point in p = sqrt(2 (e x + 1)).
_BRANCH_SERIES = (-1.0, 1.0, -1.0 / 3.0, 11.0 / 72.0, -43.0 / 540.0,
                  769.0 / 17280.0, -221.0 / 8505.0)


def _scalar_or_array(a):
    a = np.asarray(a, dtype=float)
    return float(a) if a.ndim == 0 else a


def lambert_w0(x):
    """Principal branch of the Lambert W function.

    Returns ``w >= -1`` with ``w * exp(w) == x`` for ``x >= -1/e``.  The start
    point comes from a branch-point series, a log-based asymptotic or Winitzki's
    approximation, and Halley's iteration finishes the job.

    Raises
    ------
    DomainError
        If some ``x < -1/e - 1e-15`` or ``x`` is NaN.
    """
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)):
        raise DomainError("lambert_w0 of NaN")
    q = (x + _INV_E_HI) + _INV_E_LO
    if np.any(q < -1e-15):
        raise DomainError("lambert_w0 needs x >= -1/e")
    q = np.maximum(q, 0.0)
    p = np.sqrt(2.0 * math.e * q)

    with np.errstate(divide="ignore", invalid="ignore"):
        series = np.polynomial.polynomial.polyval(p, _BRANCH_SERIES)
        lx = np.log1p(np.maximum(x, -0.5))
        winitzki = lx * (1.0 - np.log1p(lx) / (2.0 + lx))
        l1 = np.log(np.maximum(x, 3.0))
        l2 = np.log(l1)
        asymptotic = l1 - l2 + l2 / l1
    w = np.where(p < 0.5, series, np.where(x > 3.0, asymptotic, winitzki))
    w = np.where(np.isinf(x), np.inf, w)

    # the series alone is accurate to ~p**7 very close to the branch point,
    # where Halley's denominator degenerates
    active = (p >= 1e-3) & np.isfinite(x) & (x != 0.0)
    for _ in range(50):
        if not active.any():
            break
        ew = np.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            step = f / (ew * wp1 - 0.5 * (w + 2.0) * f / wp1)
        step = np.where(active & np.isfinite(step), step, 0.0)
        w = w - step
        active &= np.abs(step) > 4.0 * _EPS * (1.0 + np.abs(w))
    w = np.where(x == 0.0, 0.0, w)
    return _scalar_or_array(w)


def _g1_shift(d):
    """``(1 + d) - log(1 + d) - 1`` accurate for small ``d``."""
    d = np.asarray(d, dtype=float)
    small = np.abs(d) < 1e-3
    ds = np.where(small, d, 0.0)
    series = ds * ds * (0.5 + ds * (-1.0 / 3.0 + ds * (0.25 + ds * (-0.2 + ds * (1.0 / 6.0)))))
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = d - np.log1p(d)
    return np.where(small, series, direct)


def g1kl(t):
    """``t - log(t) - 1``, the scalar KL kernel used by the KL generator."""
    t = np.asarray(t, dtype=float)
    return _scalar_or_array(_g1_shift(t - 1.0))


@dataclass(frozen=True, eq=False)
class BregmanGenerator:
    """Coordinate-wise Bregman generator ``psi``.

    ``kind`` is ``"quadratic"`` for ``psi(x) = gamma/2 x**2`` or
    ``"smoothed_kl"`` for ``psi(x) = gamma * g(c x + xi)`` with
    ``g(z) = z + xi log(xi / z) - xi``.  The smoothed KL family lives on the
    nonnegative half-line only.
    """

    kind: str
    gamma: object
    c: object = 1.0
    xi: object = 1.0
    constraint_set: str = REALS

    def __post_init__(self):
        if self.kind not in (QUADRATIC, SMOOTHED_KL):
            raise DomainError(f"unknown generator kind {self.kind!r}")
        if self.constraint_set not in (REALS, NONNEG):
            raise DomainError(f"unknown constraint set {self.constraint_set!r}")
        if self.kind == SMOOTHED_KL and self.constraint_set != NONNEG:
            raise DomainError("the smoothed KL generator lives on the nonnegative reals")
        for name in ("gamma", "c", "xi"):
            value = _scalar_or_array(getattr(self, name))
            if not np.all(np.isfinite(value)) or np.any(np.asarray(value) <= 0):
                raise DomainError(f"generator parameter {name} must be positive and finite")
            object.__setattr__(self, name, value)

    @classmethod
    def quadratic(cls, gamma, constraint_set=REALS):
        return cls(QUADRATIC, gamma, constraint_set=constraint_set)

    @classmethod
    def smoothed_kl(cls, gamma, c, xi):
        return cls(SMOOTHED_KL, gamma, c, xi, constraint_set=NONNEG)

    @property
    def shape(self):
        return np.broadcast_shapes(np.shape(self.gamma), np.shape(self.c), np.shape(self.xi))

    def coordinate(self, i):
        """The scalar generator of coordinate ``i``."""
        pick = lambda a: float(np.broadcast_to(a, self.shape)[i]) if self.shape else a
        return BregmanGenerator(self.kind, pick(self.gamma), pick(self.c), pick(self.xi),
                                self.constraint_set)

    def check_domain(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(np.isnan(x)):
            raise DomainError("NaN argument")
        if self.constraint_set == NONNEG and np.any(x < 0):
            raise DomainError("argument outside the nonnegative reals")
        return x

    def increment(self, x):
        """``psi(x) - psi(0)``, computed without cancellation."""
        x = self.check_domain(x)
        if self.kind == QUADRATIC:
            return 0.5 * self.gamma * x * x
        cx = self.c * x
        return self.gamma * (cx - self.xi * np.log1p(cx / self.xi))

    def value(self, x):
        # both families have psi(0) = 0
        return self.increment(x)

    def derivative(self, x):
        x = self.check_domain(x)
        if self.kind == QUADRATIC:
            return self.gamma * x
        cx = self.c * x
        return self.gamma * self.c * cx / (cx + self.xi)

    def curvature(self, x):
        x = self.check_domain(x)
        if self.kind == QUADRATIC:
            return self.gamma * np.ones_like(x)
        ratio = self.c / (self.c * x + self.xi)
        return self.gamma * self.xi * ratio * ratio

    def curvature_point(self, level):
        """Smallest ``x >= 0`` past which ``psi'' <= level``.

        The smoothed KL curvature decreases on the half-line so the answer is
        the point where ``psi''(x) = level`` (clamped at 0).  The quadratic has
        constant curvature: 0 if it is below ``level``, ``inf`` otherwise.
        """
        level = np.asarray(level, dtype=float)
        if self.kind == QUADRATIC:
            return np.where(self.gamma < level, 0.0, np.inf)
        root = (self.c * np.sqrt(self.gamma * self.xi / level) - self.xi) / self.c
        return np.maximum(root, 0.0)

    def derivative_inverse(self, level):
        """The ``x >= 0`` with ``psi'(x) = level``; ``inf`` when ``psi'`` stays below ``level``."""
        level = np.asarray(level, dtype=float)
        if np.any(level < 0):
            raise DomainError("level must be nonnegative")
        if self.kind == QUADRATIC:
            return level / self.gamma
        s = level / (self.gamma * self.c)
        with np.errstate(divide="ignore"):
            return np.where(s < 1, self.xi * s / (self.c * (1.0 - np.minimum(s, 1.0))), np.inf)

    def divergence(self, x, xp):
        """Bregman divergence ``psi(x) - psi(xp) - psi'(xp) (x - xp)``."""
        x = self.check_domain(x)
        xp = self.check_domain(xp)
        if self.kind == QUADRATIC:
            return 0.5 * self.gamma * (x - xp) ** 2
        num, den = self.c * x + self.xi, self.c * xp + self.xi
        d = self.c * (x - xp) / den
        # far below the anchor the ratio num/den can round to 0, so take the
        # log of each factor separately there
        with np.errstate(divide="ignore", invalid="ignore"):
            far = d - (np.log(num) - np.log(den))
        return self.gamma * self.xi * np.where(d > -0.5, _g1_shift(d), far)


def generator_calculus(gen, x):
    """``(psi(x), psi'(x), psi''(x))`` for a generator."""
    return (_scalar_or_array(gen.value(x)), _scalar_or_array(gen.derivative(x)),
            _scalar_or_array(gen.curvature(x)))


def bregman_scalar(gen, x, xp):
    return _scalar_or_array(gen.divergence(x, xp))


@dataclass(frozen=True)
class Threshold:
    """Point ``alpha`` with ``d_psi(0, alpha) = lambda0``."""

    alpha: object
    lambda0: float


def _kl_alpha(gen, lambda0):
    kappa = np.asarray(lambda0 / (gen.gamma * gen.xi) + 1.0, dtype=float)
    # t = (c alpha + xi) / xi is the root t > 1 of log t + 1/t = kappa; for
    # large kappa, W(-exp(-kappa)) underflows so iterate on u = log t instead
    small = kappa < 30.0
    t_small = -1.0 / lambert_w0(-np.exp(-np.where(small, kappa, 30.0)))
    u = np.asarray(kappa, dtype=float)
    for _ in range(3):
        u = kappa - np.exp(-u)
    with np.errstate(over="ignore"):
        t = np.where(small, t_small, np.exp(u))
    alpha = gen.xi * (t - 1.0) / gen.c
    if not np.all(np.isfinite(alpha)):
        raise DomainError("threshold overflows: lambda0 / (gamma xi) is too large")

    # Newton polish on d(0, alpha) - lambda0 inside a bisection bracket; near
    # kappa = 1 the closed form loses digits to W's rounding
    residual = lambda a: gen.divergence(0.0, a) - lambda0
    lo = np.zeros_like(alpha)
    hi = np.maximum(2.0 * alpha, gen.xi / gen.c)
    while np.any(residual(hi) <= 0):
        hi = np.where(residual(hi) <= 0, 2.0 * hi, hi)
    alpha = np.clip(alpha, lo, hi)
    for _ in range(30):
        r = residual(alpha)
        lo = np.where(r < 0, alpha, lo)
        hi = np.where(r > 0, alpha, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = alpha - r / (gen.curvature(alpha) * alpha)
        done = (np.abs(r) <= 2.0 * _EPS * lambda0) | (np.abs(newton - alpha) <= 4.0 * _EPS * alpha)
        if np.all(done):
            break
        bad = ~np.isfinite(newton) | (newton <= lo) | (newton >= hi)
        alpha = np.where(done, alpha, np.where(bad, 0.5 * (lo + hi), newton))
    return alpha


def solve_alpha(gen, lambda0):
    """Threshold ``alpha`` solving ``d_psi(0, alpha) = lambda0``."""
    lambda0 = float(lambda0)
    if not (lambda0 > 0 and math.isfinite(lambda0)):
        raise DomainError("lambda0 must be positive and finite")
    if gen.kind == QUADRATIC:
        alpha = np.sqrt(2.0 * lambda0 / np.asarray(gen.gamma, dtype=float))
    else:
        alpha = _kl_alpha(gen, lambda0)
    return Threshold(_scalar_or_array(alpha), lambda0)


@dataclass(frozen=True)
class SubgradInterval:
    """Closed interval ``[lo, hi]`` (elementwise when arrays)."""

    lo: object
    hi: object

    def distance(self, s):
        s = np.asarray(s, dtype=float)
        d = np.maximum(np.maximum(self.lo - s, s - self.hi), 0.0)
        return _scalar_or_array(d)

    def contains(self, s, tol=0.0):
        return np.asarray(self.distance(s)) <= tol


class BrexPenalty:
    """The B-rex penalty ``beta_psi`` of a generator at level ``lambda0``.

    ``alpha`` is the threshold beyond which the penalty equals ``lambda0``
    and ``slope`` is ``psi'(alpha)``.
    """

    def __init__(self, generator, lambda0):
        self.generator = generator
        self.lambda0 = float(lambda0)
        self.alpha = solve_alpha(generator, lambda0).alpha
        self.slope = generator.derivative(self.alpha)
        self.slope0 = generator.derivative(0.0)

    def value(self, x):
        x = self.generator.check_domain(x)
        ax = np.abs(x)
        inside = self.slope * ax - self.generator.increment(x)
        return _scalar_or_array(np.where(ax <= self.alpha, inside, self.lambda0))

    def subdiff(self, x):
        """Clarke subdifferential of the penalty.

        On the nonnegative half-line the normal cone of the constraint is
        included at 0, which makes the lower end ``-inf`` there.
        """
        x = self.generator.check_domain(x)
        ax = np.abs(x)
        slope, slope0 = self.slope, self.slope0
        inner = -self.generator.derivative(x) + np.sign(x) * slope
        point = np.where(ax <= self.alpha, inner, 0.0)
        lo_zero = -np.inf if self.generator.constraint_set == NONNEG else -slope - slope0
        zero = x == 0
        lo = np.where(zero, lo_zero, point)
        hi = np.where(zero, slope - slope0, point)
        return SubgradInterval(_scalar_or_array(lo), _scalar_or_array(hi))

    def h_subdiff(self, x):
        """Subdifferential of ``h = beta_psi + psi``, the convex envelope piece."""
        x = self.generator.check_domain(x)
        ax = np.abs(x)
        slope = np.broadcast_to(self.slope, np.broadcast_shapes(np.shape(self.slope), x.shape))
        point = np.where(ax <= self.alpha, np.sign(x) * slope, self.generator.derivative(x))
        lo_zero = -np.inf if self.generator.constraint_set == NONNEG else -slope
        zero = x == 0
        lo = np.where(zero, lo_zero, point)
        hi = np.where(zero, slope, point)
        return SubgradInterval(_scalar_or_array(lo), _scalar_or_array(hi))

    def prox(self, v, step):
        """Global minimizer of ``beta(x) + (x - v)**2 / (2 step)`` over the constraint set.

        Candidates are 0, the threshold ``alpha``, ``v`` itself when it lies
        beyond ``alpha``, and the stationary point on the convex part of
        ``(0, alpha)``; ties go to the candidate of smaller magnitude.
        """
        gen = self.generator
        v = np.asarray(v, dtype=float)
        step = np.asarray(step, dtype=float)
        if np.any(~(step > 0)):
            raise DomainError("prox step must be positive")
        if np.any(~np.isfinite(v)):
            raise DomainError("prox argument must be finite")
        shape = np.broadcast_shapes(v.shape, step.shape, np.shape(self.alpha))
        v, step, alpha, slope = (np.broadcast_to(a, shape).astype(float)
                                 for a in (v, step, self.alpha, self.slope))
        lam = self.lambda0

        if gen.constraint_set == REALS:
            sign, w = np.sign(v), np.abs(v)
        else:
            sign, w = np.ones(shape), v

        def objective(x):
            inside = slope * x - gen.increment(x)
            return np.where(x <= alpha, inside, lam) + (x - w) ** 2 / (2.0 * step)

        interior = self._interior_root(w, step, alpha, slope)
        beyond = np.where(w > alpha, w, np.nan)
        cands = np.stack([np.zeros(shape), np.where(np.isnan(interior), 0.0, interior),
                          alpha, np.where(np.isnan(beyond), alpha, beyond)])
        objs = np.stack([objective(cands[0]),
                         np.where(np.isnan(interior), np.inf, objective(cands[1])),
                         objective(cands[2]),
                         np.where(np.isnan(beyond), np.inf, lam)])
        best = objs.min(axis=0)
        tie = 4.0 * _EPS * (1.0 + np.abs(best))
        pick = np.argmax(objs <= best + tie, axis=0)
        x = np.take_along_axis(cands, pick[None], axis=0)[0]
        return _scalar_or_array(sign * x)

    def _interior_root(self, w, step, alpha, slope):
        """Stationary point of the prox objective on the convex part of ``(0, alpha)``.

        The derivative ``phi(x) = slope - psi'(x) + (x - w)/step`` increases
        past the curvature point ``x_c``; a root exists iff ``phi(x_c) < 0 <
        phi(alpha)``.  Returns NaN where there is none.
        """
        gen = self.generator
        xc = np.minimum(np.broadcast_to(gen.curvature_point(1.0 / step), w.shape), alpha)
        phi = lambda x: slope - gen.derivative(x) + (x - w) / step
        active = (phi(xc) < 0) & (phi(alpha) > 0) & (xc < alpha)
        if not active.any():
            return np.full(w.shape, np.nan)
        lo = np.where(active, xc, 0.0)
        hi = np.where(active, alpha, 0.0)
        x = 0.5 * (lo + hi)
        scale = 1e-12 * (1.0 + np.abs(slope) + np.abs(w) / step)
        todo = active.copy()
        for _ in range(64):
            f = phi(x)
            lo = np.where(f < 0, x, lo)
            hi = np.where(f > 0, x, hi)
            todo &= (np.abs(f) > scale) & (hi - lo > 4.0 * _EPS * hi)
            if not todo.any():
                break
            fp = 1.0 / step - gen.curvature(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                nxt = x - f / fp
            bad = ~np.isfinite(nxt) | (nxt <= lo) | (nxt >= hi)
            x = np.where(todo, np.where(bad, 0.5 * (lo + hi), nxt), x)
        return np.where(active, x, np.nan)


def brex_scalar(gen, lambda0, x):
    return BrexPenalty(gen, lambda0).value(x)


def brex_subdiff(gen, lambda0, x):
    return BrexPenalty(gen, lambda0).subdiff(x)


def h_subdiff(gen, lambda0, x):
    return BrexPenalty(gen, lambda0).h_subdiff(x)


def brex_prox_scalar(gen, lambda0, step, v):
    return BrexPenalty(gen, lambda0).prox(v, step)

"""Separable data terms ``G_y`` with their smoothness constants.

Two terms are provided: least squares ``1/2 ||w - y||^2`` and the generalized
Kullback-Leibler divergence ``sum_j (w_j + b_j) + y_j log(y_j / (w_j + b_j)) - y_j``
with a strictly positive background ``b``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .bregman import _g1_shift
from .errors import DomainError

LS = "ls"
KL = "kl"


@dataclass(frozen=True, eq=False)
class Fidelity:
    kind: str
    y: np.ndarray
    b: np.ndarray = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1 or not np.all(np.isfinite(y)):
            raise DomainError("y must be a finite vector")
        object.__setattr__(self, "y", y)
        if self.kind == LS:
            if self.b is not None:
                raise DomainError("least squares takes no background")
        elif self.kind == KL:
            b = np.asarray(self.b, dtype=float)
            if b.shape != y.shape:
                raise DomainError("background and measurements differ in length")
            if np.any(~(b > 0)) or not np.all(np.isfinite(b)):
                raise DomainError("background must be strictly positive")
            if np.any(y < 0):
                raise DomainError("KL measurements must be nonnegative")
            object.__setattr__(self, "b", b)
        else:
            raise DomainError(f"unknown fidelity kind {self.kind!r}")

    @classmethod
    def least_squares(cls, y):
        return cls(LS, y)

    @classmethod
    def kullback_leibler(cls, y, b):
        return cls(KL, y, b)

    @property
    def size(self):
        return self.y.size

    @property
    def nu(self):
        """Strong convexity modulus of ``G_y``."""
        return 1.0 if self.kind == LS else 0.0

    def _shifted(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape[-1:] != self.y.shape:
            raise DomainError("w has the wrong length")
        if self.kind == LS:
            return w
        z = w + self.b
        if np.any(~(z > 0)):
            raise DomainError("KL fidelity needs w + b > 0")
        return z

    def value(self, w):
        z = self._shifted(w)
        y = self.y
        if self.kind == LS:
            terms = 0.5 * (z - y) ** 2
        else:
            pos = y > 0
            # y (z/y - 1 - log(z/y)) is the stable form of z + y log(y/z) - y
            terms = np.where(pos, y * _g1_shift((z - y) / np.where(pos, y, 1.0)), z)
        total = np.sum(terms, axis=-1)
        return float(total) if z.ndim == 1 else total

    def gradient(self, w):
        z = self._shifted(w)
        if self.kind == LS:
            return z - self.y
        return 1.0 - self.y / z

    def curvature(self, w):
        """Diagonal of the Hessian of ``G_y`` at ``w``."""
        z = self._shifted(w)
        if self.kind == LS:
            return np.ones_like(z)
        return self.y / (z * z)

    def curvature_sup(self):
        """Per-component supremum of ``g_j''`` over the image of the nonnegative orthant.

        For least squares this is 1 everywhere; for KL it is ``y_j / b_j**2``
        (attained at ``w_j = 0``).
        """
        if self.kind == LS:
            return np.ones_like(self.y)
        return self.y / self.b ** 2


def fid_eval(fidelity, w):
    """Value and gradient of ``G_y`` at ``w``."""
    return fidelity.value(w), fidelity.gradient(w)


@dataclass(frozen=True)
class LipschitzInfo:
    """Gradient Lipschitz constant ``L`` and the descent-lemma constant ``L_tilde``.

    ``L_tilde`` guarantees ``||grad G(w)|| <= sqrt(2 L_tilde G(w))`` on the
    image of the constraint set.  For KL, ``L_tilde_printed`` is the constant
    ``1 / (2 eta - L eta**2)`` with ``eta = min(1/L, 0.99 delta / theta)``,
    which applies the curvature bound ``L`` beyond the region where it holds
    and can undershoot; it is kept for comparison only.
    """

    L: float
    L_tilde: float
    margin_delta: float = math.inf
    grad_sup_theta: float = math.nan
    eta: float = math.nan
    L_tilde_printed: float = math.nan


def _segment_descent_constant(y, b):
    """Best ``1 / (2 eta - L_eta eta**2)`` over a grid of steps ``eta < min b``.

    From ``w >= 0`` the point ``w - eta grad G(w)`` moves each component down
    by at most ``eta`` (every gradient component is below 1), so the curvature
    along the segment is at most ``L_eta = max_j y_j / (b_j - eta)**2``.  The
    descent lemma with that constant plus ``G >= 0`` gives the bound.
    """
    delta = float(np.min(b))
    etas = delta * np.linspace(0.0, 1.0, 4001)[1:-1]
    L_eta = np.max(y[None, :] / (b[None, :] - etas[:, None]) ** 2, axis=1)
    gain = 2.0 * etas - L_eta * etas ** 2
    k = int(np.argmax(gain))
    return 1.0 / gain[k], float(etas[k])


def lipschitz_info(fidelity, A):
    """Smoothness constants of ``G_y`` over the image of ``A`` on the constraint set.

    For KL, ``L = max_j y_j / b_j**2`` bounds the curvature on ``w >= 0``,
    ``delta = min_j b_j`` is the margin to the domain boundary and
    ``theta = sqrt(sum_j max(|1 - y_j/b_j|, 1)**2)`` bounds ``||grad G||``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != fidelity.size:
        raise DomainError("A must be an M x N matrix with M = len(y)")
    if fidelity.kind == LS:
        return LipschitzInfo(1.0, 1.0, L_tilde_printed=1.0)
    if np.any(A < 0):
        raise DomainError("the KL fidelity needs a nonnegative matrix")
    y, b = fidelity.y, fidelity.b
    L = float(np.max(y / b ** 2))
    delta = float(np.min(b))
    # sup over w >= 0 of |1 - y/(w + b)| is max(|1 - y/b|, 1) per component
    theta = float(np.sqrt(np.sum(np.maximum(np.abs(1.0 - y / b), 1.0) ** 2)))
    eta_printed = 0.99 * delta / theta
    if L > 0:
        eta_printed = min(1.0 / L, eta_printed)
    printed = 1.0 / (2.0 * eta_printed - L * eta_printed ** 2)
    L_tilde, eta = _segment_descent_constant(y, b)
    return LipschitzInfo(L, max(L_tilde, L), delta, theta, eta, max(printed, L))


def cc_calibrate_quadratic(fidelity, A, safety=1.0 + 1e-6):
    """Curvature ``gamma`` of the quadratic generator meeting the concavity condition.

    ``gamma = safety * max_i ||a_i||^2`` for least squares, or 1 when every
    column has norm below one.
    """
    if fidelity.kind != LS:
        raise DomainError("quadratic calibration is for the least-squares term")
    if safety < 1:
        raise DomainError("safety factor must be >= 1")
    A = np.asarray(A, dtype=float)
    norms = np.sum(A * A, axis=0)
    if np.any(norms == 0):
        raise DomainError("A has a zero column")
    top = float(np.max(norms))
    return 1.0 if top < 1.0 else safety * top


GAMMA_FLOOR = 1e-8


def cc_calibrate_kl(fidelity, A, safety=1.0 + 1e-6):
    """Parameters ``(xi, c, gamma)`` of the smoothed KL generator under the concavity condition.

    ``xi = min_j b_j``, ``c_i`` is the smallest positive entry of column
    ``i`` and ``gamma_i = safety * sum_j a_ji**2 y_j / (c_i**2 xi)``.  Columns
    that only meet zero counts get ``gamma_i = GAMMA_FLOOR``.
    """
    if fidelity.kind != KL:
        raise DomainError("KL calibration is for the KL term")
    if safety < 1:
        raise DomainError("safety factor must be >= 1")
    A = np.asarray(A, dtype=float)
    if np.any(A < 0):
        raise DomainError("the KL fidelity needs a nonnegative matrix")
    if np.any(np.all(A == 0, axis=0)):
        raise DomainError("A has a zero column")
    xi = float(np.min(fidelity.b))
    c = np.min(np.where(A > 0, A, np.inf), axis=0)
    bound = (A * A).T @ fidelity.y / (c * c * xi)
    gamma = np.where(bound > 0, safety * bound, GAMMA_FLOOR)
    return xi, c, gamma

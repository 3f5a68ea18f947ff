"""Seeded synthetic instances and their CSV files."""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError
from .fidelity import KL, LS
from .rng import Xoshiro256

GAUSSIAN = "gaussian"
POISSON = "poisson"
GAUSSIAN_IID = "gaussian_iid"
FILE = "file"


@dataclass(frozen=True)
class InstanceSpec:
    """Recipe for a synthetic instance.

    Matrix entries are standard Gaussians divided by ``sqrt(M)`` (absolute
    values for KL); with ``column_norm`` set every column is rescaled to
    that norm instead.  Nonzero amplitudes are uniform in
    ``[a_min, a_max]`` with a random sign (positive for KL).  ``noise`` is
    ``"gaussian"`` with standard deviation ``sigma`` or ``"poisson"``.
    """

    N: int
    M: int
    k_star: int
    fidelity: str = LS
    a_min: float = 1.0
    a_max: float = 2.0
    noise: str = GAUSSIAN
    sigma: float = 0.0
    background: float = 1.0
    ensemble: str = GAUSSIAN_IID
    matrix_path: str = None
    column_norm: float = None
    seed: int = 0

    def validate(self):
        if not 0 <= self.k_star <= self.N or self.M < 1:
            raise DomainError("need M >= 1 and 0 <= k_star <= N")
        if self.fidelity not in (LS, KL):
            raise DomainError(f"unknown fidelity {self.fidelity!r}")
        if self.noise not in (GAUSSIAN, POISSON):
            raise DomainError(f"unknown noise {self.noise!r}")
        if self.ensemble not in (GAUSSIAN_IID, FILE):
            raise DomainError(f"unknown ensemble {self.ensemble!r}")
        if self.ensemble == FILE and not self.matrix_path:
            raise DomainError("file ensemble needs matrix_path")
        if not 0 <= self.a_min <= self.a_max:
            raise DomainError("need 0 <= a_min <= a_max")
        if self.fidelity == KL:
            if self.a_min <= 0:
                raise DomainError("KL instances need a_min > 0")
            if self.background <= 0:
                raise DomainError("KL instances need a positive background")
            if self.noise != POISSON:
                raise DomainError("KL instances use Poisson noise")
        elif self.noise == POISSON:
            raise DomainError("Poisson noise needs the KL fidelity")
        if self.sigma < 0:
            raise DomainError("sigma must be nonnegative")


@dataclass(frozen=True)
class Instance:
    A: np.ndarray
    x_star: np.ndarray
    sigma_star: tuple
    y: np.ndarray
    y_clean: np.ndarray
    eps: np.ndarray
    seed: int
    b: np.ndarray = None
    spec: InstanceSpec = field(default=None, compare=False)

    @property
    def fidelity(self):
        return KL if self.b is not None else LS

    @property
    def noise_l2(self):
        return float(np.linalg.norm(self.eps))

    @property
    def noise_inf(self):
        return float(np.max(np.abs(self.eps), initial=0.0))

    @property
    def min_amplitude(self):
        nz = self.x_star[list(self.sigma_star)]
        return float(np.min(np.abs(nz))) if nz.size else math.inf


def gen_instance(spec):
    """Deterministic instance from ``spec``.

    Draw order: matrix (row-major), support (shuffle of ``0..N-1``, first
    ``k_star`` entries), amplitudes, signs, then noise.
    """
    spec.validate()
    rng = Xoshiro256(spec.seed)
    M, N = spec.M, spec.N
    if spec.ensemble == FILE:
        A = read_matrix(spec.matrix_path)
        if A.shape != (M, N):
            raise DomainError(f"matrix file has shape {A.shape}, expected {(M, N)}")
    else:
        A = np.array([[rng.normal() for _ in range(N)] for _ in range(M)]) / math.sqrt(M)
        if spec.fidelity == KL:
            A = np.abs(A)
        if spec.column_norm is not None:
            norms = np.linalg.norm(A, axis=0)
            A = A / np.where(norms > 0, norms, 1.0) * spec.column_norm
    support = tuple(sorted(rng.shuffle(list(range(N)))[:spec.k_star]))
    x_star = np.zeros(N)
    for i in support:
        amp = rng.uniform_range(spec.a_min, spec.a_max)
        if spec.fidelity == LS and rng.uniform() < 0.5:
            amp = -amp
        x_star[i] = amp
    if spec.fidelity == LS:
        y_clean = A @ x_star
        y = y_clean + spec.sigma * np.array([rng.normal() for _ in range(M)])
        b = None
    else:
        b = np.full(M, float(spec.background))
        y_clean = A @ x_star + b
        y = np.array([float(rng.poisson(mean)) for mean in y_clean])
    return Instance(A, x_star, support, y, y_clean, y - y_clean, spec.seed, b, spec)


# ---------------------------------------------------------------- CSV files

def write_matrix(path, A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    np.savetxt(path, A, fmt="%.17g", delimiter=",", header=f"{A.shape[0]} {A.shape[1]}", comments="# ")


def read_matrix(path):
    try:
        return np.loadtxt(path, delimiter=",", comments="#", ndmin=2, dtype=float)
    except (OSError, ValueError) as exc:
        raise DomainError(f"cannot read matrix {path}: {exc}") from exc


def write_vector(path, v):
    np.savetxt(path, np.asarray(v, dtype=float).ravel(), fmt="%.17g")


def read_vector(path):
    try:
        return np.loadtxt(path, comments="#", ndmin=1, dtype=float)
    except (OSError, ValueError) as exc:
        raise DomainError(f"cannot read vector {path}: {exc}") from exc


def save_instance(instance, directory):
    """Write ``A.csv``, ``y.csv``, ``x_star.csv`` (and ``b.csv`` for KL); returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"matrix": directory / "A.csv", "y": directory / "y.csv", "x_star": directory / "x_star.csv"}
    write_matrix(paths["matrix"], instance.A)
    write_vector(paths["y"], instance.y)
    write_vector(paths["x_star"], instance.x_star)
    if instance.b is not None:
        paths["b"] = directory / "b.csv"
        write_vector(paths["b"], instance.b)
    return paths


def load_instance(matrix, y, x_star=None, b=None, seed=0):
    """Instance from CSV files; without ``x_star`` the truth fields are NaN."""
    A, y = read_matrix(matrix), read_vector(y)
    if A.shape[0] != y.size:
        raise DomainError(f"A has {A.shape[0]} rows but y has {y.size} entries")
    b = read_vector(b) if b else None
    if b is not None and b.size != y.size:
        raise DomainError("b and y differ in length")
    if x_star:
        xs = read_vector(x_star)
        if xs.size != A.shape[1]:
            raise DomainError("x_star length does not match the columns of A")
    else:
        xs = np.full(A.shape[1], np.nan)
    support = tuple(int(i) for i in np.flatnonzero(xs)) if x_star else ()
    y_clean = A @ np.nan_to_num(xs) + (b if b is not None else 0.0)
    return Instance(A, xs, support, y, y_clean, y - y_clean, seed, b)

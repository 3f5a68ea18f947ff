"""Run configuration files (sectioned ``key = value`` text).

Sections and keys::

    [instance]    N, M, k_star, fidelity, a_min, a_max, noise, sigma,
                  background, column_norm, seed      (synthetic problem)
    [problem]     fidelity, matrix, y, b             (problem from CSV files)
    [truth]       x_star
    [relaxation]  psi = l2 | kl, gamma, xi, safety
    [certify]     K, Q
    [solver]      tol, max_iter, step_rule
    [verify]      k_max, lambda0_list = auto:5 | comma-separated values
    [sweep]       trials, noise, amplitude, noise_mode = absolute | fraction

Relative file paths are resolved against the directory of the config file.
"""

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import DomainError
from .fidelity import KL, LS
from .instances import InstanceSpec


class ConfigError(DomainError):
    """The configuration file is missing, malformed or inconsistent."""


AUTO = "auto"


@dataclass(frozen=True)
class LambdaChoice:
    """Either ``count`` points inside the certified interval or explicit ``values``."""

    count: int = 5
    values: tuple = ()

    @property
    def automatic(self):
        return not self.values


@dataclass(frozen=True)
class RunConfig:
    instance: InstanceSpec = None
    files: dict = field(default_factory=dict)
    psi: str = None
    gamma: float = None
    xi: float = None
    safety: float = 1.0 + 1e-6
    K: int = None
    Q: float = None
    tol: float = 1e-8
    max_iter: int = 10_000
    step_rule: str = "adaptive"
    k_max: int = None
    lambdas: LambdaChoice = LambdaChoice()
    trials: int = 1
    noise_grid: tuple = ()
    amplitude_grid: tuple = (1.0,)
    noise_mode: str = "absolute"

    @property
    def fidelity(self):
        return self.instance.fidelity if self.instance is not None else self.files["fidelity"]

    def with_seed(self, seed):
        if self.instance is None:
            return self
        return replace(self, instance=replace(self.instance, seed=int(seed)))


def _floats(text):
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"expected a list of numbers, got {text!r}") from exc


def _lambdas(text):
    text = text.strip()
    if text.startswith(AUTO):
        _, _, count = text.partition(":")
        try:
            n = int(count) if count else 5
        except ValueError as exc:
            raise ConfigError(f"bad lambda0_list {text!r}") from exc
        if n < 1:
            raise ConfigError("lambda0_list auto count must be positive")
        return LambdaChoice(count=n)
    values = _floats(text)
    if not values or any(v <= 0 for v in values):
        raise ConfigError("lambda0_list needs positive values")
    return LambdaChoice(values=values)


def _get(section, key, kind, default=None):
    if key not in section:
        return default
    try:
        if kind is bool:
            return section.getboolean(key)
        return kind(section[key].strip())
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: {exc}") from exc


def parse_config(text, base_dir="."):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    known = {"instance", "problem", "truth", "relaxation", "certify", "solver", "verify", "sweep"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    has_instance, has_problem = parser.has_section("instance"), parser.has_section("problem")
    if has_instance == has_problem:
        raise ConfigError("exactly one of [instance] or [problem] is required")

    base = Path(base_dir)
    kwargs = {}
    if has_instance:
        s = parser["instance"]
        fidelity = _get(s, "fidelity", str, LS)
        try:
            spec = InstanceSpec(
                N=_get(s, "N", int), M=_get(s, "M", int), k_star=_get(s, "k_star", int),
                fidelity=fidelity,
                a_min=_get(s, "a_min", float, 1.0), a_max=_get(s, "a_max", float, 2.0),
                noise=_get(s, "noise", str, "poisson" if fidelity == KL else "gaussian"),
                sigma=_get(s, "sigma", float, 0.0), background=_get(s, "background", float, 1.0),
                column_norm=_get(s, "column_norm", float), seed=_get(s, "seed", int, 0))
            if spec.N is None or spec.M is None or spec.k_star is None:
                raise ConfigError("[instance] needs N, M and k_star")
            spec.validate()
        except (TypeError, DomainError) as exc:
            raise ConfigError(str(exc)) from exc
        kwargs["instance"] = spec
    else:
        s = parser["problem"]
        files = {"fidelity": _get(s, "fidelity", str, LS)}
        if files["fidelity"] not in (LS, KL):
            raise ConfigError(f"unknown fidelity {files['fidelity']!r}")
        for key in ("matrix", "y", "b"):
            if key in s:
                files[key] = str(base / s[key].strip())
        if "matrix" not in files or "y" not in files:
            raise ConfigError("[problem] needs matrix and y")
        if files["fidelity"] == KL and "b" not in files:
            raise ConfigError("KL problems need b")
        if parser.has_section("truth") and "x_star" in parser["truth"]:
            files["x_star"] = str(base / parser["truth"]["x_star"].strip())
        kwargs["files"] = files

    if parser.has_section("relaxation"):
        s = parser["relaxation"]
        kwargs.update(psi=_get(s, "psi", str), gamma=_get(s, "gamma", float), xi=_get(s, "xi", float),
                      safety=_get(s, "safety", float, 1.0 + 1e-6))
        if kwargs["psi"] not in (None, "l2", "kl"):
            raise ConfigError(f"unknown psi {kwargs['psi']!r}")
    if parser.has_section("certify"):
        s = parser["certify"]
        kwargs.update(K=_get(s, "K", int), Q=_get(s, "Q", float))
    if parser.has_section("solver"):
        s = parser["solver"]
        kwargs.update(tol=_get(s, "tol", float, 1e-8), max_iter=_get(s, "max_iter", int, 10_000),
                      step_rule=_get(s, "step_rule", str, "adaptive"))
    if parser.has_section("verify"):
        s = parser["verify"]
        kwargs["k_max"] = _get(s, "k_max", int)
        if "lambda0_list" in s:
            kwargs["lambdas"] = _lambdas(s["lambda0_list"])
    if parser.has_section("sweep"):
        s = parser["sweep"]
        kwargs.update(trials=_get(s, "trials", int, 1),
                      noise_grid=_floats(s.get("noise", "")),
                      amplitude_grid=_floats(s.get("amplitude", "1")) or (1.0,),
                      noise_mode=_get(s, "noise_mode", str, "absolute"))
        if kwargs["noise_mode"] not in ("absolute", "fraction"):
            raise ConfigError("noise_mode must be absolute or fraction")
        if kwargs["trials"] < 1:
            raise ConfigError("trials must be positive")
    return RunConfig(**kwargs)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)

"""Experiment configuration: ``key = value`` files with ``#`` comments."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .algorithms import ALGORITHMS, PITPOC_VARIANTS
from .errors import ConfigurationError
from .heat_core import Grid, TimeGrid
from .optimal_control import ControlProblem


class ConfigError(ConfigurationError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


_PROFILE = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")
_PROFILE_ARGS = {
    "zero": (),
    "gaussian": ("cx", "cy", "sigma", "amp"),
    "product_sine": ("amp",),
    "random": ("scale",),
}


def parse_profile(text: str):
    """``name(arg, ...)`` into ``(name, tuple_of_floats)``."""
    m = _PROFILE.match(text)
    if not m or m.group(1) not in _PROFILE_ARGS:
        raise ConfigurationError(f"unknown profile {text!r}; choose from {sorted(_PROFILE_ARGS)}")
    name, raw = m.group(1), m.group(2)
    try:
        args = () if raw is None or not raw.strip() else tuple(float(a) for a in raw.split(","))
    except ValueError:
        raise ConfigurationError(f"profile arguments must be numbers: {text!r}") from None
    if len(args) != len(_PROFILE_ARGS[name]):
        raise ConfigurationError(f"profile {name} takes {len(_PROFILE_ARGS[name])} arguments, got {len(args)}")
    return name, args


def evaluate_profile(text: str, grid: Grid) -> np.ndarray:
    name, args = parse_profile(text)
    x, y = grid.coords
    if name == "zero":
        return np.zeros(grid.size)
    if name == "gaussian":
        cx, cy, sigma, amp = args
        return amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma**2))
    if name == "product_sine":
        return args[0] * np.sin(np.pi * x) * np.sin(np.pi * y)
    raise ConfigurationError(f"profile {name} is not a field profile")


def _int_list(s):
    out = []
    for x in s.split(","):
        x = x.strip()
        if not re.fullmatch(r"[+-]?\d+", x):
            raise ValueError(f"not an integer: {x!r}")
        out.append(int(x))
    return out


def _int(s):
    (v,) = _int_list(s)
    return v


def _bool(s):
    s = s.strip().lower()
    if s in ("true", "yes", "on", "1"):
        return True
    if s in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _tol(s):
    return None if s.strip() == "auto" else float(s)


def _workers(s):
    return None if s.strip() == "auto" else _int(s)


def _str(s):
    return s.strip()


@dataclass
class ExperimentConfig:
    alpha: float = 1e-2
    nu: float = 1e-2
    T: float = 6.4
    dt: float = 1e-2
    nx: int = 15
    ny: int = 15
    N: list = field(default_factory=lambda: [4])
    l_max: list = field(default_factory=lambda: [1])
    max_outer: int = 1000
    tol: float | None = None
    algorithm: str = "sitpoc"
    pitpoc_variant: str = "consistent"
    workers: int | None = None
    coarse_steps: int = 1
    y0: str = "product_sine(1)"
    y_target: str = "gaussian(0.5,0.5,0.1,1)"
    v0: str = "zero"
    seed: int = 0
    output: str = "results"
    wall_time: bool = False
    diagnostics: bool = True

    @property
    def M(self) -> int:
        return TimeGrid.from_step(self.T, self.dt).M

    def validate(self) -> ExperimentConfig:
        if not (self.alpha > 0 and self.nu > 0 and self.T > 0 and self.dt > 0):
            raise ConfigurationError("alpha, nu, T and dt must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError("nx and ny must be >= 1")
        if not self.N or not self.l_max:
            raise ConfigurationError("N and l_max sweeps must be non-empty")
        if min(self.N) < 1 or min(self.l_max) < 1 or self.coarse_steps < 1:
            raise ConfigurationError("N, l_max and coarse_steps must be >= 1")
        if self.max_outer < 0:
            raise ConfigurationError("max_outer must be >= 0")
        if self.tol is not None and not self.tol > 0:
            raise ConfigurationError("tol must be positive or 'auto'")
        if self.workers is not None and self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}")
        if self.pitpoc_variant not in PITPOC_VARIANTS:
            raise ConfigurationError(f"pitpoc_variant must be one of {PITPOC_VARIANTS}")
        M = self.M
        for N in self.N:
            if M % N:
                raise ConfigurationError(f"{M} time steps cannot be split into N={N} equal intervals")
            if (M // N) % self.coarse_steps:
                raise ConfigurationError(
                    f"coarse_steps={self.coarse_steps} does not divide the {M // N} steps per interval for N={N}"
                )
        for key in ("y0", "y_target"):
            if parse_profile(getattr(self, key))[0] == "random":
                raise ConfigurationError(f"{key} must be a field profile")
        if parse_profile(self.v0)[0] not in ("zero", "random"):
            raise ConfigurationError("v0 must be 'zero' or 'random(scale)'")
        return self

    def problem(self) -> ControlProblem:
        grid = Grid(self.nx, self.ny)
        return ControlProblem(
            grid=grid,
            time=TimeGrid.from_step(self.T, self.dt),
            alpha=self.alpha,
            nu=self.nu,
            y0=evaluate_profile(self.y0, grid),
            y_target=evaluate_profile(self.y_target, grid),
        )

    def initial_control(self, pb: ControlProblem) -> np.ndarray:
        name, args = parse_profile(self.v0)
        if name == "zero":
            return pb.zero_control()
        return args[0] * np.random.default_rng(self.seed).standard_normal(pb.control_shape)


_PARSERS = {
    "alpha": float, "nu": float, "T": float, "dt": float,
    "nx": _int, "ny": _int, "N": _int_list, "l_max": _int_list,
    "max_outer": _int, "tol": _tol, "algorithm": _str, "pitpoc_variant": _str,
    "workers": _workers, "coarse_steps": _int, "y0": _str, "y_target": _str, "v0": _str,
    "seed": _int, "output": _str, "wall_time": _bool, "diagnostics": _bool,
}


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            parsed = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno) from None
        if isinstance(parsed, float) and not math.isfinite(parsed):
            raise ConfigError(f"{key} must be finite", lineno)
        values[key] = (parsed, lineno)
    cfg = ExperimentConfig(**{k: v for k, (v, _) in values.items()})
    try:
        return cfg.validate()
    except ConfigurationError as exc:
        raise ConfigError(str(exc), _blame(exc, values)) from None


def _blame(exc, values):
    """Best-effort line number for a validation error."""
    msg = str(exc)
    for key, (_, lineno) in values.items():
        if re.search(rf"\b{re.escape(key)}\b", msg):
            return lineno
    return None


def _format(key, value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {_format(f.name, getattr(cfg, f.name))}\n" for f in fields(cfg))


def override(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Apply non-``None`` changes and re-validate."""
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(cfg, **changes).validate()

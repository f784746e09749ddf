"""Instance checks of the convergence theory: descent and step-size bounds,
Hessian spectral bounds and the linear-rate estimate."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import BoundViolation, ConfigurationError
from .optimal_control import (
    ControlProblem,
    evaluate_cost,
    gradient,
    hessian_apply,
    hessian_bounds,
    hessian_quadratic,
)

REL_SLACK = 1e-10
MIN_FIT_POINTS = 6
FIT_SKIP = 2


@dataclass
class HypothesisRow:
    k: int
    descent_inner: float
    eta_ratio: float
    eq1: bool
    eq2: bool
    theta_ok: bool
    rho_ok: bool
    et1: bool


@dataclass
class HypothesisReport:
    alpha: float
    beta_emp: float
    rows: list = field(default_factory=list)
    fitted_rate: float | None = None
    fit_note: str = ""
    finite_termination: bool = False

    @property
    def eta_bound(self) -> float:
        return self.beta_emp**2 / self.alpha

    @property
    def rate_bound(self) -> float:
        return 1.0 - 2.0 * self.alpha**2 / self.eta_bound**2

    @property
    def ok(self) -> bool:
        rows_ok = all(r.eq1 and r.eq2 and r.theta_ok and r.rho_ok and r.et1 for r in self.rows)
        rate_ok = self.fitted_rate is None or self.fitted_rate <= self.rate_bound + 1e-6
        return rows_ok and rate_ok

    def failures(self) -> list[str]:
        out = []
        for r in self.rows:
            for name in ("eq1", "eq2", "theta_ok", "rho_ok", "et1"):
                if not getattr(r, name):
                    out.append(f"k={r.k}: {name}")
        if self.fitted_rate is not None and self.fitted_rate > self.rate_bound + 1e-6:
            out.append(f"fitted rate {self.fitted_rate:.6g} above bound {self.rate_bound:.6g}")
        return out


def _within(x, lo, hi):
    return lo * (1 - REL_SLACK) <= x <= hi * (1 + REL_SLACK)


def fit_rate(gaps, skip: int = FIT_SKIP, min_points: int = MIN_FIT_POINTS):
    """Per-iteration contraction factor of ``sqrt(gap)`` by least squares on the log.

    Returns ``(rate, note)``; ``rate`` is ``None`` with fewer than
    ``min_points`` positive gaps after dropping the first ``skip``.
    """
    ks, logs = [], []
    for k, gap in enumerate(gaps):
        if k < skip:
            continue
        if not gap > 0:
            break
        ks.append(k)
        logs.append(0.5 * math.log(gap))
    if len(ks) < min_points:
        return None, "insufficient data"
    slope = np.polyfit(ks, logs, 1)[0]
    return float(math.exp(slope)), f"{len(ks)} points"


def check_hypotheses(history, J_star=None, *, alpha: float, beta_emp: float) -> HypothesisReport:
    """Check the per-iteration hypotheses on a run history.

    Rows are produced for every record that carries a step.  ``J_star``
    enables the finite-termination flag and the rate fit.
    """
    if len(history) < 2:
        raise ConfigurationError("need at least two iterations to check hypotheses")
    report = HypothesisReport(alpha=alpha, beta_emp=beta_emp)
    eta = report.eta_bound
    for cur, nxt in zip(history, history[1:]):
        g, s = cur.grad_norm, cur.step_norm
        if s == 0.0:
            continue
        scale = g * s
        drop = cur.J_true - nxt.J_true
        report.rows.append(HypothesisRow(
            k=cur.k,
            descent_inner=cur.descent_inner,
            eta_ratio=g / s,
            eq1=cur.descent_inner <= 1e-12 * scale,
            eq2=g <= eta * s * (1 + REL_SLACK),
            theta_ok=_within(cur.theta, alpha / beta_emp, beta_emp / alpha),
            rho_ok=all(_within(r, 1.0 / beta_emp, 1.0 / alpha) for r in cur.rhos),
            et1=drop >= 0.5 * alpha * s * s - 1e-13 * max(abs(cur.J_true), 1e-300),
        ))
    if J_star is None:
        report.fit_note = "no reference optimum"
        return report
    noise = 64 * np.finfo(float).eps * max(abs(J_star), abs(history[0].J_true))
    gaps = [r.J_true - J_star for r in history]
    report.finite_termination = gaps[0] <= noise
    report.fitted_rate, report.fit_note = fit_rate([gap if gap > noise else 0.0 for gap in gaps])
    return report


# --------------------------------------------------------------------------
# spectral bounds
# --------------------------------------------------------------------------

def rayleigh_quotient(pb: ControlProblem, dv) -> float:
    return hessian_quadratic(pb, dv) / pb.inner(dv, dv)


def high_frequency_probe(pb: ControlProblem) -> np.ndarray:
    """Sign alternating between time steps and between neighbouring control nodes."""
    grid = pb.grid
    i = grid.control_idx % grid.nx
    j = grid.control_idx // grid.nx
    space = np.where((i + j) % 2 == 0, 1.0, -1.0)
    time = np.where(np.arange(pb.M) % 2 == 0, 1.0, -1.0)
    return np.outer(time, space)


@dataclass
class BetaEstimate:
    beta_emp: float
    quotients: np.ndarray
    lanczos: float | None
    lower: float
    upper: float


def estimate_beta(pb: ControlProblem, probes: int = 100, seed: int = 0, lanczos: bool = True) -> BetaEstimate:
    """Largest observed Rayleigh quotient of the Hessian.

    Random Gaussian probes plus, by default, the top eigenvalue from a
    Lanczos run, which is itself a Rayleigh quotient.  Raises
    ``BoundViolation`` if any quotient leaves ``[alpha, alpha + C^2/(2 nu)]``.
    """
    if probes < 10:
        raise ConfigurationError(f"need at least 10 probes, got {probes}")
    bounds = hessian_bounds(pb)
    rng = np.random.default_rng(seed)
    q = np.array([rayleigh_quotient(pb, rng.standard_normal(pb.control_shape)) for _ in range(probes)])
    top = None
    if lanczos:
        n = pb.M * pb.grid.n_control
        shape = pb.control_shape
        op = LinearOperator((n, n), matvec=lambda x: hessian_apply(pb, x.reshape(shape)).ravel(), dtype=float)
        if n == 1:
            top = float(op.matvec(np.ones(1))[0])
        else:
            top = float(eigsh(op, k=1, which="LA", tol=1e-10, return_eigenvectors=False,
                              v0=np.ones(n))[0])
    candidates = q if top is None else np.append(q, top)
    lo, hi = bounds.alpha_lower, bounds.beta_upper
    bad = candidates[(candidates < lo * (1 - REL_SLACK)) | (candidates > hi * (1 + REL_SLACK))]
    if bad.size:
        raise BoundViolation(f"Rayleigh quotients {bad} outside [{lo}, {hi}]")
    return BetaEstimate(float(candidates.max()), q, top, lo, hi)


# --------------------------------------------------------------------------
# error bounds around the optimum
# --------------------------------------------------------------------------

def gamma_stated(alpha: float) -> float:
    return 1.0 / (2.0 * math.sqrt(alpha))


def gamma_valid(alpha: float) -> float:
    """Constant for ``sqrt(J - J*) <= gamma |grad J|`` that holds for every control.

    From ``J - J* = 1/2 <H e, e> <= 1/2 |grad J| |e|`` and ``|e| <= |grad J| / alpha``.
    """
    return 1.0 / math.sqrt(2.0 * alpha)


@dataclass
class ErrorBoundSample:
    gap: float
    grad_norm: float
    dist: float

    def cost_ratio(self) -> float:
        """``sqrt(J - J*) / |grad J|``; compare with a gamma constant."""
        return math.sqrt(max(self.gap, 0.0)) / self.grad_norm

    def dist_ratio(self) -> float:
        """``|v - v*| / |grad J|``; bounded by ``1/alpha``."""
        return self.dist / self.grad_norm


def error_bound_sample(pb: ControlProblem, v, v_star, J_star: float) -> ErrorBoundSample:
    return ErrorBoundSample(
        gap=evaluate_cost(pb, v) - J_star,
        grad_norm=pb.norm(gradient(pb, v)),
        dist=pb.norm(np.asarray(v) - v_star),
    )


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

DIAGNOSTIC_FIELDS = ("run", "k", "descent_inner", "eta_ratio", "eta_bound", "rate_bound",
                     "fitted_rate", "eq1", "eq2", "theta_ok", "rho_ok", "et1")


def write_diagnostics(stream, reports: dict):
    """CSV block with one row per checked iteration of each named run."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(DIAGNOSTIC_FIELDS)
    for name, rep in reports.items():
        fitted = "" if rep.fitted_rate is None else repr(float(rep.fitted_rate))
        for r in rep.rows:
            w.writerow([name, r.k, repr(float(r.descent_inner)), repr(float(r.eta_ratio)),
                        repr(float(rep.eta_bound)), repr(float(rep.rate_bound)), fitted, int(r.eq1), int(r.eq2), int(r.theta_ok),
                        int(r.rho_ok), int(r.et1)])

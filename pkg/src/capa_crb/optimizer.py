"""Riemannian conjugate-gradient descent on the power ellipsoid ``{w : w^H B0 w = P}``.

Tangent vectors at ``w`` satisfy ``Re{w^H B0 eta} = 0``.  Gradients follow the
Wirtinger convention ``F(w + d) ~ F(w) + 2 Re{g^H d}``.

Internally the iteration runs on the unit ellipsoid ``u^H B0 u = 1`` with the
objective divided by its starting value.  The CRB trace is homogeneous of
degree -2 in ``w`` and of order 1e-13 at physical scale, so this makes the
initial step, the fallback step and the stopping tolerance meaningful numbers
independent of power budget and units.  Reported objectives are physical.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Protocol

import numpy as np

DirectionRule = Literal["FR", "PR", "plain"]
DIRECTION_RULES = ("FR", "PR", "plain")


class Problem(Protocol):
    B0: np.ndarray
    power_budget: float

    def objective(self, w) -> float: ...

    def objective_and_gradient(self, w) -> tuple[float, np.ndarray]: ...


@dataclass(frozen=True)
class SmgdConfig:
    armijo_c: float = 1e-4
    armijo_tau: float = 0.5
    armijo_max_iter: int = 40
    fallback_step: float = 1e-6
    initial_step: float = 1.0
    tolerance_delta: float = 1e-6
    grad_tol: float = 1e-8
    max_iter: int = 200
    direction_rule: DirectionRule = "FR"

    def __post_init__(self):
        if not 0 < self.armijo_tau < 1:
            raise ValueError("armijo_tau must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if self.direction_rule not in DIRECTION_RULES:
            raise ValueError(f"unknown direction rule {self.direction_rule!r}")
        if self.max_iter < 0 or self.armijo_max_iter < 1:
            raise ValueError("iteration limits must be positive")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    objective: float
    grad_norm: float
    step: float
    fallback: bool = False


@dataclass
class SmgdTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def is_monotone(self, rtol: float = 1e-12) -> bool:
        """Objective non-increasing across every Armijo-accepted step."""
        obj = self.objectives
        for k in range(1, len(self.records)):
            if self.records[k].fallback:
                continue
            if obj[k] > obj[k - 1] * (1 + rtol):
                return False
        return True

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "objective", "grad_norm", "step"])
            for r in self.records:
                wr.writerow([r.iteration, f"{r.objective:.12e}", f"{r.grad_norm:.12e}", f"{r.step:.12e}"])


@dataclass(frozen=True)
class SmgdResult:
    w: np.ndarray
    objective: float
    trace: SmgdTrace
    iterations: int
    stop_reason: str


# ---------------------------------------------------------------------------
# manifold primitives


def _real_inner(a, b) -> float:
    return float(np.real(np.vdot(a, b)))


def tangent_project(w, v, B0) -> np.ndarray:
    """Orthogonal (real Euclidean) projection of ``v`` onto ``{x : Re{w^H B0 x} = 0}``."""
    v = np.asarray(v, dtype=complex)
    normal = B0 @ w
    nn = _real_inner(normal, normal)
    if nn == 0:
        raise ValueError("zero base point has no tangent space")
    return v - (_real_inner(normal, v) / nn) * normal


def riemannian_grad(w, euclidean_grad, B0) -> np.ndarray:
    """Tangent component of the Euclidean gradient at ``w``."""
    return tangent_project(np.asarray(w, dtype=complex), euclidean_grad, B0)


def retract(w, d, step: float, B0, power: float = 1.0) -> np.ndarray:
    """Normalize ``w + step d`` back onto ``x^H B0 x = power``."""
    x = np.asarray(w, dtype=complex) + step * np.asarray(d, dtype=complex)
    nrm = np.real(np.vdot(x, B0 @ x))
    if not nrm > 0:
        raise ValueError("retraction of a zero vector")
    return x * np.sqrt(power / nrm)


def transport(w_old, w_new, d_old, B0) -> np.ndarray:
    """Carry ``d_old`` into the tangent space at ``w_new`` by orthogonal projection."""
    return tangent_project(np.asarray(w_new, dtype=complex), d_old, B0)


def search_direction(eta_new, eta_old=None, d_old=None, rule: DirectionRule = "FR",
                     eta_old_moved=None) -> np.ndarray:
    """Next conjugate direction; ``d_old`` must already be transported.

    FR: beta = |eta+|^2 / |eta-|^2.  PR: beta = max(0, Re{eta+^H (eta+ - eta-)} / |eta-|^2),
    where the difference uses ``eta_old_moved`` (the transported old gradient)
    when given.  Falls back to steepest descent when the result is not a
    descent direction.
    """
    eta_new = np.asarray(eta_new, dtype=complex)
    if rule not in DIRECTION_RULES:
        raise ValueError(f"unknown direction rule {rule!r}")
    if rule == "plain" or eta_old is None or d_old is None:
        return -eta_new
    denom = _real_inner(eta_old, eta_old)
    if denom == 0:
        return -eta_new
    if rule == "FR":
        beta = _real_inner(eta_new, eta_new) / denom
    else:
        prev = eta_old if eta_old_moved is None else eta_old_moved
        beta = max(0.0, _real_inner(eta_new, eta_new - prev) / denom)
    d = -eta_new + beta * np.asarray(d_old, dtype=complex)
    if _real_inner(d, eta_new) >= 0:
        return -eta_new
    return d


@dataclass(frozen=True)
class LineSearchResult:
    step: float
    objective: float
    point: np.ndarray
    accepted: bool
    trials: int


def armijo_search(w, eta, d, objective, config: SmgdConfig, B0, power: float = 1.0,
                  f0: float | None = None, initial_step: float | None = None) -> LineSearchResult:
    """Backtracking until ``F(retr(w + v d)) <= F(w) + c v Re{eta^H d}``.

    If no trial step is accepted the fallback step is returned (with
    ``accepted=False``).
    """
    f0 = objective(w) if f0 is None else f0
    slope = _real_inner(eta, d)
    step = config.initial_step if initial_step is None else initial_step
    if slope < 0:
        for k in range(config.armijo_max_iter):
            x = retract(w, d, step, B0, power)
            try:
                fx = objective(x)
            except np.linalg.LinAlgError:
                fx = np.inf
            if fx <= f0 + config.armijo_c * step * slope:
                return LineSearchResult(step, fx, x, True, k + 1)
            step *= config.armijo_tau
    step = config.fallback_step
    x = retract(w, d, step, B0, power)
    return LineSearchResult(step, objective(x), x, False, config.armijo_max_iter)


# ---------------------------------------------------------------------------


def random_start(n: int, rng_seed=None) -> np.ndarray:
    rng = np.random.default_rng(rng_seed)
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)


def smgd(problem: Problem, config: SmgdConfig | None = None, w0=None, rng_seed=None) -> SmgdResult:
    """Minimize Tr{CRB} over the power ellipsoid with Riemannian conjugate gradients.

    Parameters
    ----------
    problem
        Anything exposing ``B0``, ``power_budget``, ``objective`` and
        ``objective_and_gradient`` (e.g. :class:`~capa_crb.fisher.CrbProblem`).
    w0
        Starting weights, retracted onto the constraint.  A seeded complex
        normal draw when omitted.

    Returns
    -------
    SmgdResult
        Best-seen feasible ``w`` with its physical objective and the trace.
    """
    cfg = config or SmgdConfig()
    B0 = np.asarray(problem.B0)
    power = float(problem.power_budget)
    root_p = np.sqrt(power)
    n = B0.shape[0]
    u = random_start(n, rng_seed) if w0 is None else np.asarray(w0, dtype=complex)
    if u.shape != (n,):
        raise ValueError(f"w0 must have shape ({n},)")
    u = retract(u, 0, 0.0, B0, 1.0)

    f_phys0 = problem.objective(root_p * u)
    scale = f_phys0

    def phi(x):
        return problem.objective(root_p * x) / scale

    def phi_grad(x):
        f, g = problem.objective_and_gradient(root_p * x)
        return f / scale, g * (root_p / scale)

    trace = SmgdTrace()
    fu, gu = phi_grad(u)
    eta = riemannian_grad(u, gu, B0)
    d = -eta
    gnorm = float(np.linalg.norm(eta))
    trace.append(TraceRecord(0, fu * scale, gnorm * scale / root_p, 0.0))
    best_u, best_f = u, fu
    step_guess = cfg.initial_step
    reason = "max_iter"
    it = 0

    for it in range(1, cfg.max_iter + 1):
        if gnorm < cfg.grad_tol:
            reason = "grad_tol"
            it -= 1
            break
        ls = armijo_search(u, eta, d, phi, cfg, B0, 1.0, f0=fu, initial_step=step_guess)
        u_new = ls.point
        fu_new, gu_new = phi_grad(u_new)
        eta_new = riemannian_grad(u_new, gu_new, B0)
        d_moved = transport(u, u_new, d, B0)
        d_new = search_direction(eta_new, eta, d_moved, cfg.direction_rule,
                                 eta_old_moved=transport(u, u_new, eta, B0))
        change = float(np.linalg.norm(d_new - d))

        u, fu, eta, d = u_new, fu_new, eta_new, d_new
        gnorm = float(np.linalg.norm(eta))
        trace.append(TraceRecord(it, fu * scale, gnorm * scale / root_p, ls.step, not ls.accepted))
        if fu < best_f:
            best_u, best_f = u, fu
        step_guess = 2.0 * ls.step if ls.accepted else cfg.initial_step
        if change < cfg.tolerance_delta:
            reason = "direction_change"
            break
    w_best = retract(best_u, 0, 0.0, B0, power)
    return SmgdResult(w_best, best_f * scale, trace, it, reason)


def write_weights_csv(path, w) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["re", "im"])
        for z in np.asarray(w, dtype=complex):
            wr.writerow([f"{z.real:.17e}", f"{z.imag:.17e}"])


def read_weights_csv(path) -> np.ndarray:
    rows = list(csv.reader(Path(path).read_text().splitlines()))
    body = [r for r in rows[1:] if r and not r[0].startswith("#")]
    return np.array([complex(float(a), float(b)) for a, b in body])

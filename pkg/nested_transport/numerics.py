"""Finite differences, gauge-fixed Newton steps and bracketed scalar roots."""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from nested_transport.constants import DEFAULTS

logger = logging.getLogger(__name__)

EPS_CBRT = float(np.finfo(float).eps) ** (1.0 / 3.0)

ResidualFn = Callable[[np.ndarray], np.ndarray]
# A scalar function returning None (or NaN) where it is infeasible.
ScalarFn = Callable[[float], Optional[float]]


class NumericsError(RuntimeError):
    """A numerical kernel could not produce a trustworthy result."""


class LinearStepConfig(BaseModel):
    """Finite-difference step rule h_i = relative_step * (1 + |v_i|)."""
    relative_step: float = Field(default=EPS_CBRT, gt=0)
    condition_cutoff: float = Field(default=DEFAULTS["condition_cutoff"], gt=1)

    def step(self, v: np.ndarray) -> np.ndarray:
        return self.relative_step * (1.0 + np.abs(v))


class ScalarRootConfig(BaseModel):
    bracket: Tuple[float, float]
    tol_x: float = Field(default=DEFAULTS["scalar_tol_x"], gt=0)
    tol_f: float = Field(default=0.0, ge=0)
    max_iter: int = Field(default=200, ge=1)
    mode: Literal["bisection", "safeguarded_newton"] = "bisection"
    infeasible_policy: Literal["negative", "halve"] = "negative"
    x0: Optional[float] = None

    @model_validator(mode="after")
    def _check_bracket(self):
        a, b = self.bracket
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise ValueError(f"Scalar bracket must be finite and nonempty, got {self.bracket}")
        return self


@dataclass
class ScalarRootResult:
    root: float
    value: Optional[float]
    evaluations: int
    iterations: int
    converged: bool
    bracket: Tuple[float, float]


def fd_jacobian(residual_fn: ResidualFn, v: np.ndarray,
                step_rule: Optional[LinearStepConfig] = None, executor=None) -> np.ndarray:
    """Centered finite-difference Jacobian, one column per coordinate.

    With an ``executor`` the 2N residual evaluations are mapped over it.
    """
    step_rule = step_rule or LinearStepConfig()
    v = np.asarray(v, dtype=float)
    n = v.size
    h = step_rule.step(v)

    def column(i):
        e = np.zeros(n)
        e[i] = h[i]
        plus = np.asarray(residual_fn(v + e), dtype=float)
        minus = np.asarray(residual_fn(v - e), dtype=float)
        return (plus - minus) / (2.0 * h[i])

    cols = list(executor.map(column, range(n))) if executor is not None else [column(i) for i in range(n)]
    J = np.column_stack(cols) if cols else np.zeros((0, 0))
    if not np.all(np.isfinite(J)):
        raise NumericsError("Non-finite residual while building the finite-difference Jacobian")
    return J


def restricted_solve(J: np.ndarray, rhs: np.ndarray, condition_cutoff: float = DEFAULTS["condition_cutoff"]) -> np.ndarray:
    """Least-squares solution of J s = rhs with s orthogonal to the all-ones vector.

    Solves the system augmented by the row 1^T s = 0 and projects the result
    onto 1-perp. Any rank deficiency beyond the all-ones kernel is an error.
    """
    J = np.asarray(J, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.size
    if J.shape != (n, n):
        raise ValueError(f"Jacobian shape {J.shape} does not match right-hand side of length {n}")
    if n == 1:
        return np.zeros(1)
    A = np.vstack([J, np.ones((1, n))])
    b = np.concatenate([rhs, [0.0]])
    s, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if rank < n or cond > condition_cutoff:
        raise NumericsError(f"Jacobian is rank deficient beyond the constant kernel (condition {cond:.3g})")
    return s - s.mean()


def _sign(value: Optional[float], policy: str) -> int:
    if value is None or not np.isfinite(value):
        return -1 if policy == "negative" else 0
    return 1 if value > 0 else (-1 if value < 0 else 0)


def scalar_root(f: ScalarFn, config: ScalarRootConfig) -> ScalarRootResult:
    """Bracketed root of a monotone (possibly infeasible-on-one-side) scalar function.

    Infeasible evaluations (None/NaN) count as negative under the
    ``"negative"`` policy. In safeguarded-Newton mode a Newton trial that
    leaves the bracket, or lands on an infeasible point under the
    ``"halve"`` policy, is replaced by a bisection step.
    """
    a, b = config.bracket
    evaluations = 0

    def call(x):
        nonlocal evaluations
        evaluations += 1
        value = f(x)
        return None if value is None or not np.isfinite(value) else float(value)

    fa, fb = call(a), call(b)
    sa, sb = _sign(fa, "negative"), _sign(fb, "negative")
    if sa == 0:
        return ScalarRootResult(a, fa, evaluations, 0, True, (a, b))
    if sb == 0:
        return ScalarRootResult(b, fb, evaluations, 0, True, (a, b))
    if sa == sb:
        raise NumericsError(f"No sign change on [{a:.6g}, {b:.6g}] (f = {fa}, {fb})")

    x = config.x0 if config.x0 is not None and a < config.x0 < b else None
    fx = call(x) if x is not None else None
    best = (a, fa) if fa is not None and (fb is None or abs(fa) <= abs(fb)) else (b, fb)
    iterations = 0

    while iterations < config.max_iter and b - a > config.tol_x:
        iterations += 1
        trial = None
        if config.mode == "safeguarded_newton" and x is not None and fx is not None:
            h = EPS_CBRT * (1.0 + abs(x))
            fp, fm = call(x + h), call(x - h)
            if fp is not None and fm is not None and fp != fm:
                candidate = x - fx * 2.0 * h / (fp - fm)
                if a < candidate < b:
                    trial = candidate
        newton_step = trial is not None
        if trial is None:
            trial = 0.5 * (a + b)
        ft = call(trial)
        if ft is None and config.infeasible_policy == "halve" and x is not None:
            step = trial - x
            for _ in range(60):
                step *= 0.5
                trial = x + step
                ft = call(trial)
                if ft is not None:
                    break
        st = _sign(ft, "negative")
        if ft is not None and (best[1] is None or abs(ft) < abs(best[1])):
            best = (trial, ft)
        if st == 0 or (ft is not None and abs(ft) <= config.tol_f):
            return ScalarRootResult(trial, ft, evaluations, iterations, True, (a, b))
        if newton_step and ft is not None and abs(trial - x) <= config.tol_x:
            return ScalarRootResult(trial, ft, evaluations, iterations, True, (a, b))
        if st == sa:
            a = trial
        else:
            b = trial
        x, fx = trial, ft

    root = best[0] if best[1] is not None and abs(best[1]) <= config.tol_f else 0.5 * (a + b)
    value = best[1] if root == best[0] else call(root)
    return ScalarRootResult(root, value, evaluations, iterations, b - a <= config.tol_x or
                            (value is not None and abs(value) <= config.tol_f), (a, b))


@dataclass
class NewtonOutcome:
    v: np.ndarray
    residual: np.ndarray
    iterations: int
    damping_steps: int
    converged: bool
    rejected: bool = False
    message: str = ""
    history: List[float] = field(default_factory=list)


def restricted_newton(residual_fn: ResidualFn, v0: np.ndarray, tol: float, maxit: int,
                      accept: Optional[Callable[[np.ndarray], bool]] = None,
                      damping_cap: int = DEFAULTS["damping_cap"],
                      step_rule: Optional[LinearStepConfig] = None, executor=None,
                      label: str = "Newton") -> NewtonOutcome:
    """Newton iteration v <- v - J^+ R(v) on the complement of the all-ones kernel.

    ``accept`` turns on damping: the step is halved until the trial iterate
    is accepted, at most ``damping_cap`` times.
    """
    step_rule = step_rule or LinearStepConfig()
    v = np.asarray(v0, dtype=float).copy()
    r = np.asarray(residual_fn(v), dtype=float)
    history = [float(np.max(np.abs(r)))] if r.size else [0.0]
    damping = 0
    if not np.all(np.isfinite(r)):
        return NewtonOutcome(v, r, 0, 0, False, message="Non-finite residual at the initial iterate", history=history)
    if history[-1] <= tol:
        return NewtonOutcome(v, r, 0, 0, True, history=history)

    for it in range(1, maxit + 1):
        try:
            J = fd_jacobian(residual_fn, v, step_rule, executor=executor)
            s = restricted_solve(J, -r, step_rule.condition_cutoff)
        except NumericsError as e:
            logger.debug(f"[{label}] iteration {it}: {e}")
            return NewtonOutcome(v, r, it, damping, False, message=str(e), history=history)

        trial = v + s
        if accept is not None:
            halvings = 0
            while not accept(trial):
                halvings += 1
                if halvings > damping_cap:
                    damping += halvings - 1
                    return NewtonOutcome(v, r, it, damping, False, rejected=True,
                                         message=f"Damping cap {damping_cap} reached without an accepted iterate",
                                         history=history)
                s = 0.5 * s
                trial = v + s
            damping += halvings

        v = trial
        r = np.asarray(residual_fn(v), dtype=float)
        if not np.all(np.isfinite(r)):
            return NewtonOutcome(v, r, it, damping, False, message="Non-finite residual", history=history)
        history.append(float(np.max(np.abs(r))))
        logger.debug(f"[{label}] iteration {it}: |R|_inf = {history[-1]:.3e}")
        if history[-1] <= tol:
            return NewtonOutcome(v, r, it, damping, True, history=history)

    return NewtonOutcome(v, r, maxit, damping, False, message=f"No convergence in {maxit} iterations",
                         history=history)

"""Fixed-step discretizations: implicit Euler, explicit Euler and RK4.

The implicit Euler step ``x+ = x + Ts f(x+, u)`` is solved numerically with
a damped Newton iteration.  No closed-form expression of the resulting
map ``x+ = f~(x, u)`` is ever built; the step itself plays that role.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ContinuousSystem, eval_dynamics, jacobian_fd
from .errors import NumericError, StepFailure


@dataclass(frozen=True)
class NewtonReport:
    iterations: int
    final_residual: float
    converged: bool


@dataclass(frozen=True)
class ImplicitStepSettings:
    """Sampling time and Newton controls for :func:`implicit_step`."""

    Ts: float
    newton_tol: float = 1e-12
    max_iters: int = 50
    damping: float = 0.5

    def __post_init__(self):
        if not self.Ts > 0:
            raise ValueError("Ts must be positive")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")


def newton_solve(residual, x0, jacobian=None, *, tol=1e-12, max_iters=50,
                 damping=0.5, min_lambda=1e-6):
    """Damped Newton iteration for a square system ``residual(x) = 0``.

    A full step is tried first; it is shortened by ``damping`` only while it
    fails to decrease the residual norm (non-finite trial values count as an
    increase).  Never raises: the caller inspects the returned
    :class:`NewtonReport` and decides what a failure means.

    Returns
    -------
    x : ndarray
        Last iterate.
    report : NewtonReport
    """
    x = np.array(x0, dtype=float).reshape(-1)
    with np.errstate(all="ignore"):
        r = np.asarray(residual(x), dtype=float).reshape(-1)
    nr = float(np.linalg.norm(r))
    if not math.isfinite(nr):
        return x, NewtonReport(0, nr, False)
    for it in range(max_iters + 1):
        if nr <= tol:
            return x, NewtonReport(it, nr, True)
        if it == max_iters:
            break
        try:
            with np.errstate(all="ignore"):
                J = jacobian(x) if jacobian is not None else jacobian_fd(residual, x)
            dx = np.linalg.solve(J, -r)
        except (np.linalg.LinAlgError, NumericError):
            return x, NewtonReport(it, nr, False)
        if not np.all(np.isfinite(dx)):
            return x, NewtonReport(it, nr, False)
        lam = 1.0
        while True:
            xt = x + lam * dx
            with np.errstate(all="ignore"):
                rt = np.asarray(residual(xt), dtype=float).reshape(-1)
            nt = float(np.linalg.norm(rt))
            if math.isfinite(nt) and nt < nr:
                break
            lam *= damping
            if lam < min_lambda:
                return x, NewtonReport(it, nr, False)
        x, r, nr = xt, rt, nt
    return x, NewtonReport(max_iters, nr, False)


def explicit_step(sys: ContinuousSystem, x, u, Ts) -> np.ndarray:
    """One explicit Euler step ``x + Ts f(x, u)``."""
    x = np.asarray(x, dtype=float)
    return x + Ts * eval_dynamics(sys, x, u)


def implicit_step(sys: ContinuousSystem, x, u, settings, guess=None):
    """One implicit Euler step: solve ``x+ = x + Ts f(x+, u)`` for ``x+``.

    ``settings`` is an :class:`ImplicitStepSettings` or a bare ``Ts``.
    The default initial guess is the explicit Euler predictor.  The
    Newton matrix is ``I - Ts df/dx(x+, u)`` from the model's analytic
    Jacobian if it has one, otherwise from central differences.

    Raises
    ------
    StepFailure
        If Newton does not reach ``newton_tol``; the report is attached.
    """
    if not isinstance(settings, ImplicitStepSettings):
        settings = ImplicitStepSettings(float(settings))
    Ts = settings.Ts
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.size != sys.n or u.size != sys.m:
        raise ValueError("state or input dimension mismatch")
    f = sys.dynamics
    eye = np.eye(sys.n)

    def residual(xp):
        return xp - x - Ts * np.asarray(f(xp, u), dtype=float)

    if sys.jacobian_x is not None:
        def jac(xp):
            return eye - Ts * np.asarray(sys.jacobian_x(xp, u), dtype=float)
    else:
        jac = None

    x0 = x + Ts * eval_dynamics(sys, x, u) if guess is None else np.asarray(guess, float)
    xp, report = newton_solve(residual, x0, jac, tol=settings.newton_tol,
                              max_iters=settings.max_iters, damping=settings.damping)
    if not report.converged:
        raise StepFailure(
            f"implicit Euler step did not converge after {report.iterations} iterations "
            f"(residual {report.final_residual:.3e}); Ts={Ts} may be too large", report)
    return xp, report


def rk4_integrate(sys: ContinuousSystem, x0, u_hold, Tn, duration, *, t0=0.0,
                  return_trajectory=True):
    """Classical RK4 with the input held constant (zero-order hold).

    ``duration`` must be an integer multiple of ``Tn``.  Returns the final
    state and, if requested, the ``(steps + 1, n)`` trajectory sampled at
    every ``Tn`` (first row is ``x0``).
    """
    if not Tn > 0:
        raise ValueError("Tn must be positive")
    steps = int(round(duration / Tn))
    if steps < 0 or abs(steps * Tn - duration) > 1e-9 * max(1.0, abs(duration)):
        raise ValueError(f"duration {duration} is not an integer multiple of Tn={Tn}")
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    u = np.asarray(u_hold, dtype=float).reshape(-1)
    eval_dynamics(sys, x, u)
    f = sys.dynamics
    h = Tn
    traj = np.empty((steps + 1, x.size)) if return_trajectory else None
    if traj is not None:
        traj[0] = x
    for i in range(steps):
        k1 = f(x, u)
        k2 = f(x + 0.5 * h * k1, u)
        k3 = f(x + 0.5 * h * k2, u)
        k4 = f(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            t = t0 + (i + 1) * h
            raise NumericError(f"state became non-finite at t={t:.6g}", time=t)
        if traj is not None:
            traj[i + 1] = x
    return x, traj


# single-step adaptors with a common signature stepper(sys, x, u, h)

def implicit_euler_stepper(sys, x, u, h):
    return implicit_step(sys, x, u, ImplicitStepSettings(h))[0]


def explicit_euler_stepper(sys, x, u, h):
    return explicit_step(sys, x, u, h)


def rk4_stepper(sys, x, u, h):
    return rk4_integrate(sys, x, u, h, h, return_trajectory=False)[0]


STEPPERS = {
    "implicit": implicit_euler_stepper,
    "explicit": explicit_euler_stepper,
    "rk4": rk4_stepper,
}


def observed_order(stepper, sys, scenario, steps, reference_Tn=None):
    """Least-squares convergence order of a one-step method.

    Parameters
    ----------
    stepper : callable or str
        ``stepper(sys, x, u, h) -> x_next`` or a key of :data:`STEPPERS`.
    scenario : tuple
        ``(x0, u, T)``: initial state, held input, horizon.
    steps : sequence of float
        At least three step sizes in geometric progression, each dividing T.
    reference_Tn : float, optional
        Step of the RK4 reference; defaults to ``min(steps) / 16``.

    Returns
    -------
    float
        Slope of ``log(error)`` against ``log(h)``.
    """
    if isinstance(stepper, str):
        stepper = STEPPERS[stepper]
    hs = np.sort(np.asarray(steps, dtype=float))[::-1]
    if hs.size < 3:
        raise ValueError("need at least three step sizes")
    ratios = hs[:-1] / hs[1:]
    if np.ptp(ratios) > 1e-9 * ratios.max():
        raise ValueError("step sizes must form a geometric progression")
    x0, u, T = scenario
    if reference_Tn is None:
        reference_Tn = hs.min() / 16.0
    x_ref, _ = rk4_integrate(sys, x0, u, reference_Tn, T, return_trajectory=False)
    errs = []
    for h in hs:
        n = int(round(T / h))
        if abs(n * h - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"step {h} does not divide the horizon {T}")
        x = np.asarray(x0, dtype=float)
        for _ in range(n):
            x = stepper(sys, x, u, h)
        errs.append(np.linalg.norm(x - x_ref))
    errs = np.asarray(errs)
    if np.any(errs <= 0):
        raise ValueError("zero error at some step size; choose a harder scenario")
    slope, _ = np.polyfit(np.log(hs), np.log(errs), 1)
    return float(slope)

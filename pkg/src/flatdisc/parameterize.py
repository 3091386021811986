"""Discrete-time parameterizing maps of Euler-discretized triangular forms.

Given flat-output samples ``y(k)`` over a window of shifts, the state and
(transformed) input at shift 0 are obtained by solving the discretized
block equations from the top block down.  Each level solves a square
system for ``(xhat_k, u_k)``: Newton by default, or a closed-form solver
registered per block.

With the implicit scheme the level equations are solved for the *shifted*
``xhat_k+``, so every level costs one backward shift; with the explicit
scheme every level costs one forward shift instead.  The required window
``[-R1, R2]`` is found by running the same recursion on masks only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .core import (CoordinateChange, ShiftWindow, TriangularForm,
                   check_rank_conditions)
from .discretize import ImplicitStepSettings, explicit_step, implicit_step, newton_solve
from .errors import ParameterizationError, RankConditionError

SCHEMES = ("implicit", "explicit")


@dataclass(frozen=True)
class DiscreteTriangularSystem:
    """Euler discretization of a triangular form.

    ``reference`` is the ``(x, u)`` point at which the rank conditions are
    checked on construction.  It also seeds the Newton block solves.
    """

    tf: TriangularForm
    scheme: str
    Ts: float
    reference: Optional[tuple] = None
    rank_report: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not self.Ts > 0:
            raise ValueError("Ts must be positive")
        if self.reference is None:
            ref = (np.zeros(self.tf.n), np.zeros(self.tf.m))
        else:
            ref = (np.asarray(self.reference[0], float).reshape(-1),
                   np.asarray(self.reference[1], float).reshape(-1))
        object.__setattr__(self, "reference", ref)
        report = check_rank_conditions(self.tf, ref, self.scheme, Ts=self.Ts)
        object.__setattr__(self, "rank_report", report)
        if not report.passed:
            bad = report.failing()
            raise RankConditionError(
                f"rank condition fails for block {bad[0]} at the reference point",
                block=bad[0], report=report)

    @property
    def system(self):
        return self.tf.system()

    def step(self, x, u, settings=None):
        """Advance the discrete system by one sample."""
        if self.scheme == "explicit":
            return explicit_step(self.system, x, u, self.Ts)
        settings = settings or ImplicitStepSettings(self.Ts)
        return implicit_step(self.system, x, u, settings)[0]

    def residual(self, x, x_next, u):
        x = np.asarray(x, float)
        x_next = np.asarray(x_next, float)
        at = x_next if self.scheme == "implicit" else x
        return x_next - x - self.Ts * self.tf.dynamics(at, u)


# ---------------------------------------------------------------------------
# block recursion


def _level_plan(tf, i):
    """Index sets that level ``i`` needs known, and the ones it solves for."""
    xs_unk, us_unk = tf.unknown_indices(i)
    blk = tf.state_indices(i)
    upper = np.arange(0, tf.state_slices[i].stop)
    if i + 1 < tf.p:
        upper = np.concatenate([upper, tf.flat_indices(i + 1)])
    prev_inputs = np.arange(0, tf.input_slices[i].start)
    return blk, upper, prev_inputs, xs_unk, us_unk


def _run_recursion(tf, scheme, Ts, ys, reference, solvers=None, dry=False,
                   tol=1e-12, first=0, label=None):
    """Fill state/input arrays over a window of flat-output samples.

    ``ys`` has shape ``(L, m)``.  Returns ``(X, U)`` of shapes ``(L, n)`` and
    ``(L, m)`` with ``nan`` wherever the window is too short.  With
    ``dry=True`` nothing is solved; known entries are just marked.
    """
    L = ys.shape[0]
    X = np.full((L, tf.n), np.nan)
    U = np.full((L, tf.m), np.nan)
    X[:, tf.flat_output_indices] = 0.0 if dry else ys
    xref, uref = reference
    solvers = solvers or {}
    implicit = scheme == "implicit"

    for i in range(tf.p):
        blk, upper, prev_u, xs_unk, us_unk = _level_plan(tf, i)
        guess = np.concatenate([xref[xs_unk], uref[us_unk]])
        for t in range(L - 1):
            # implicit: f evaluated at (X[t+1], U[t]); explicit: at (X[t], U[t])
            t_eval = t + 1 if implicit else t
            t_other = t if implicit else t + 1
            if np.isnan(X[t_other, blk]).any() or np.isnan(X[t_eval, upper]).any() \
                    or np.isnan(U[t, prev_u]).any():
                continue
            if dry:
                X[t_eval, xs_unk] = 0.0
                U[t, us_unk] = 0.0
                continue

            x_eval = np.nan_to_num(X[t_eval])
            u_t = np.nan_to_num(U[t])
            x_other = X[t_other]
            nx = xs_unk.size

            def residual(z, x_eval=x_eval, u_t=u_t, x_other=x_other, t_eval=t_eval):
                xe = x_eval.copy()
                ue = u_t.copy()
                xe[xs_unk] = z[:nx]
                ue[us_unk] = z[nx:]
                f = tf.block_dynamics(i, xe, ue)
                if implicit:
                    return xe[blk] - x_other[blk] - Ts * f
                return x_other[blk] - xe[blk] - Ts * f

            shift = t_eval + first if label is None else label(t_eval)
            if i in solvers:
                x_now = x_other if implicit else x_eval
                x_next = x_eval if implicit else x_other
                try:
                    with np.errstate(all="ignore"):
                        z = np.asarray(solvers[i](np.nan_to_num(x_now), np.nan_to_num(x_next),
                                                  u_t, Ts, scheme), dtype=float)
                except ParameterizationError:
                    raise
                except (ArithmeticError, ValueError) as exc:
                    raise ParameterizationError(
                        f"closed-form solver of block {tf.label(i)} failed at shift {shift}: {exc}",
                        block=tf.label(i), shift=shift) from exc
                check = getattr(solvers[i], "residual", None)
                with np.errstate(all="ignore"):
                    if check is not None:
                        # solver-supplied residual, regular where the block form is not
                        r = check(np.nan_to_num(x_now), np.nan_to_num(x_next), z, Ts, scheme)
                    else:
                        r = residual(z)
                    res = float(np.linalg.norm(r))
                scale = 1.0 + float(np.linalg.norm(x_other[blk]))
                if not np.isfinite(res) or res > 1e-9 * scale:
                    raise ParameterizationError(
                        f"closed-form solver of block {tf.label(i)} leaves residual {res:.2e} "
                        f"at shift {shift}", block=tf.label(i), shift=shift)
            else:
                z, rep = newton_solve(residual, guess, tol=tol)
                if not rep.converged:
                    raise ParameterizationError(
                        f"Newton solve of block {tf.label(i)} failed at shift {shift} "
                        f"(residual {rep.final_residual:.2e} after {rep.iterations} iterations)",
                        block=tf.label(i), shift=shift)
                guess = z
            X[t_eval, xs_unk] = z[:nx]
            U[t, us_unk] = z[nx:]
    return X, U


def _shift_requirements(tf, scheme, Ts, reference):
    """Backward/forward shift depth of the state, the input and the pair."""
    N = 2 * tf.p + 4
    ys = np.zeros((2 * N + 1, tf.m))
    X, U = _run_recursion(tf, scheme, Ts, ys, reference, dry=True)
    xk = np.flatnonzero(~np.isnan(X).any(axis=1)) - N
    uk = np.flatnonzero(~np.isnan(U).any(axis=1)) - N
    if xk.size == 0 or uk.size == 0:
        raise ValueError("the block recursion never determines the full state and input")
    A, B = xk[0] + N, N - xk[-1]
    C, D = uk[0] + N, N - uk[-1]
    # recovering the original input needs x(+1) as well
    D_orig = max(D, B + 1)
    return int(A), int(B), int(C), int(D_orig)


@dataclass(frozen=True)
class ParameterizingMap:
    """``(xbar, ubar) = F(y_[-R1], ..., y_[R2])`` for a discrete triangular system.

    ``R1`` and ``R2`` are per-component multi-indices.  ``origin`` is the
    offset between this map's shift labels and the engine's; it is nonzero
    only after :func:`redefine_shift_origin`.
    """

    dts: DiscreteTriangularSystem
    R1: tuple
    R2: tuple
    state_R2: int
    block_solvers: dict = field(default_factory=dict)
    input_recovery: Optional[Callable] = None
    change: Optional[CoordinateChange] = None
    origin: int = 0
    newton_tol: float = 1e-12

    @property
    def scheme(self):
        return self.dts.scheme

    @property
    def Ts(self):
        return self.dts.Ts

    @property
    def m(self):
        return self.dts.tf.m

    @property
    def r1(self):
        return max(self.R1)

    @property
    def r2(self):
        return max(self.R2)

    @property
    def R(self):
        return tuple(a + b for a, b in zip(self.R1, self.R2))

    @property
    def discretization(self):
        return {"scheme": self.scheme, "Ts": self.Ts}

    def _solve(self, window, lo, hi):
        if not isinstance(window, ShiftWindow):
            window = ShiftWindow(np.asarray(window, float), -self.r1)
        if window.m != self.m:
            raise ValueError(f"window has {window.m} components, expected {self.m}")
        if not window.covers(lo, hi):
            raise KeyError(f"window [{window.first}, {window.last}] does not cover [{lo}, {hi}]")
        w = window.restrict(lo, hi)
        first = w.first - self.origin
        X, U = _run_recursion(self.dts.tf, self.scheme, self.Ts, w.samples,
                              self.dts.reference, self.block_solvers,
                              tol=self.newton_tol, first=first,
                              label=lambda t: t + w.first)
        return X, U, -first


def build_parameterizer(dts: DiscreteTriangularSystem, block_solvers=None,
                        input_recovery=None, change=None) -> ParameterizingMap:
    """Construct the parameterizing map of ``dts``.

    ``block_solvers`` maps block positions (0 = top) to closed-form solvers
    ``solver(x, x_next, u, Ts, scheme) -> (xhat_k, u_k)``; every other
    block is solved with Newton.  A solver may carry a ``residual(x,
    x_next, z, Ts, scheme)`` attribute used to verify its answer in place
    of the block equation.  ``input_recovery(x, x_next, ubar, Ts,
    scheme) -> u`` overrides the generic recovery of the original input
    through ``change``.
    """
    A, B, C, D = _shift_requirements(dts.tf, dts.scheme, dts.Ts, dts.reference)
    r1 = max(A, C)
    r2 = max(B, D)
    m = dts.tf.m
    return ParameterizingMap(dts, (r1,) * m, (r2,) * m, state_R2=B,
                             block_solvers=dict(block_solvers or {}),
                             input_recovery=input_recovery, change=change)


def evaluate(pmap: ParameterizingMap, window):
    """State and transformed input at shift 0 of ``window``.

    Raises :class:`ParameterizationError` naming the block and shift if a
    block solve fails, e.g. near a rank-degenerate point.
    """
    X, U, z = pmap._solve(window, -pmap.r1, pmap.r2)
    return X[z].copy(), U[z].copy()


def evaluate_state(pmap: ParameterizingMap, window):
    """State part of the map; needs no samples beyond ``state_R2``."""
    X, _, z = pmap._solve(window, -pmap.r1, pmap.state_R2)
    return X[z].copy()


def _recover(pmap, X, U, z, change):
    ubar = U[z]
    x_now, x_next = X[z], X[z + 1]
    if pmap.input_recovery is not None:
        return np.asarray(pmap.input_recovery(x_now, x_next, ubar, pmap.Ts, pmap.scheme),
                          dtype=float)
    change = change or pmap.change
    if change is None or change.input_inv_shifted is None:
        return ubar.copy()
    at = x_next if pmap.scheme == "implicit" else x_now
    return np.asarray(change.input_inv_shifted(at, ubar), dtype=float)


def evaluate_original(pmap: ParameterizingMap, window, change=None):
    """``(xbar, u)``: the state together with the original input."""
    X, U, z = pmap._solve(window, -pmap.r1, pmap.r2)
    return X[z].copy(), _recover(pmap, X, U, z, change)


def recover_original_input(pmap: ParameterizingMap, window, change=None, *, check=True):
    """Original input ``u`` from ``u = Phi_u^-1(xbar+, ubar)``.

    With ``check`` the result is verified by re-applying the input
    transformation at the shifted state.
    """
    X, U, z = pmap._solve(window, -pmap.r1, pmap.r2)
    u = _recover(pmap, X, U, z, change)
    change = change or pmap.change
    if check and change is not None and change.input_fwd is not None:
        x_at = X[z + 1] if pmap.scheme == "implicit" else X[z]
        ubar = np.asarray(change.input_fwd(change.state_inv(x_at), u), dtype=float)
        err = float(np.max(np.abs(ubar - U[z])))
        if not err <= 1e-9 * (1.0 + float(np.max(np.abs(U[z])))):
            raise ParameterizationError(
                f"recovered input does not reproduce the transformed input (error {err:.2e})")
    return u


def redefine_shift_origin(pmap: ParameterizingMap) -> ParameterizingMap:
    """Relabel the flat output as its ``R1``-th backward shift.

    The returned map reads ``F(y, ..., y_[R])`` with ``R = R1 + R2``.
    """
    if pmap.r1 == 0:
        return pmap
    return replace(pmap, R1=(0,) * pmap.m, R2=pmap.R,
                   state_R2=pmap.state_R2 + pmap.r1, origin=pmap.origin + pmap.r1)


def windows_from_samples(ys, lo, hi):
    """Yield ``(k, window)`` for each index of ``ys`` with shifts ``[lo, hi]`` inside."""
    ys = np.asarray(ys, float)
    if ys.ndim == 1:
        ys = ys[:, None]
    for k in range(-lo, ys.shape[0] - hi):
        yield k, ShiftWindow(ys[k + lo:k + hi + 1], lo)


def roundtrip_validate(pmap: ParameterizingMap, dts: DiscreteTriangularSystem, ys):
    """Largest one-step mismatch of the map along a flat-output sequence.

    For each sample ``k`` with enough neighbours, ``(x(k), u(k))`` and
    ``x(k+1)`` come from the map and ``x(k+1)`` is compared with one step of
    the discrete system from ``(x(k), u(k))``.
    """
    ys = np.asarray(ys, float)
    if ys.ndim == 1:
        ys = ys[:, None]
    lo, hi = -pmap.r1, pmap.r2
    vals = dict()
    for k, w in windows_from_samples(ys, lo, hi):
        vals[k] = evaluate(pmap, w)
    worst = 0.0
    if len(vals) < 2:
        raise ValueError("sequence too short to cover two parameterized samples")
    for k in sorted(vals):
        if k + 1 not in vals:
            continue
        x, u = vals[k]
        x_next = dts.step(x, u)
        worst = max(worst, float(np.linalg.norm(vals[k + 1][0] - x_next)))
    return worst

"""Discrete-time flatness-based tracking control by dynamic feedback.

With the flat output relabelled so that the map reads ``F(y, ..., y_[R])``,
the state part ``F_xbar`` is extended by a selection ``z = F_z(...)`` of
window entries to an invertible map ``F_xz``.  Its inverse recovers the
window ``(y, ..., y_[R-1])`` from ``(xbar, z)``; appending ``y_[R] = v``
gives the input and the next controller state, so that the closed loop
obeys ``y_[R] = v``.  An outer linear feedback on ``v`` then places the
poles of the tracking error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import ShiftWindow, jacobian_fd
from .discretize import newton_solve
from .errors import ControllerFault, FlatnessError, RankConditionError
from .parameterize import (ParameterizingMap, evaluate_original, evaluate_state,
                           redefine_shift_origin)

JACOBIAN_TOL = 1e-8


@dataclass(frozen=True)
class GainSpec:
    """Desired discrete-time poles, one list per flat-output component."""

    poles: tuple

    def __post_init__(self):
        poles = tuple(tuple(complex(p) for p in ps) for ps in self.poles)
        for j, ps in enumerate(poles):
            if any(abs(p) >= 1 for p in ps):
                raise ValueError(f"output {j}: poles must lie strictly inside the unit circle")
            re = sorted((p for p in ps if abs(p.imag) > 1e-12), key=lambda p: (p.real, p.imag))
            conj = sorted((p.conjugate() for p in re), key=lambda p: (p.real, p.imag))
            if not np.allclose(re, conj, atol=1e-12):
                raise ValueError(f"output {j}: complex poles must come in conjugate pairs")
        object.__setattr__(self, "poles", poles)

    @classmethod
    def repeated(cls, pole, orders):
        return cls(tuple((pole,) * r for r in orders))

    @property
    def orders(self):
        return tuple(len(ps) for ps in self.poles)


def pole_gains(spec: GainSpec):
    """Coefficients ``a^j`` with ``prod(z - p) = z^r + a_{r-1} z^{r-1} + ... + a_0``.

    Returned per output as an array ordered ``(a_0, ..., a_{r-1})``.
    """
    out = []
    for ps in spec.poles:
        c = np.poly(np.array(ps, dtype=complex)) if ps else np.ones(1)
        out.append(np.real_if_close(c[1:][::-1], tol=1000).astype(float))
    return out


@dataclass(frozen=True)
class DiffeoReport:
    sigma_min: float
    sigma_max: float
    accepted: bool


def _window_array(window, rows, m):
    if isinstance(window, ShiftWindow):
        return window.restrict(0, rows - 1).samples
    arr = np.asarray(window, dtype=float)
    return arr.reshape(rows, m)


def extend_to_diffeo(param: ParameterizingMap, z_select, probe):
    """Combine ``F_xbar`` with the entries picked by ``z_select``.

    ``z_select`` is a sequence of ``(component, shift)`` pairs with shifts in
    ``0..R-1`` of the relabelled map.  Returns ``(F_xz, report)``, where
    ``F_xz`` maps a ``(R, m)`` window to the stacked ``(xbar, z)``.

    Raises
    ------
    RankConditionError
        If the dimensions do not add up or the Jacobian at ``probe`` is
        singular (smallest singular value at most 1e-8).
    """
    param = redefine_shift_origin(param)
    R, m = param.r2, param.m
    n = param.dts.tf.n
    z_select = tuple((int(c), int(s)) for c, s in z_select)
    for c, s in z_select:
        if not (0 <= c < m and 0 <= s <= R - 1):
            raise ValueError(f"z entry ({c}, {s}) outside components 0..{m - 1}, shifts 0..{R - 1}")
    if n + len(z_select) != R * m:
        raise RankConditionError(
            f"dim(xbar) + dim(z) = {n + len(z_select)} but the window has {R * m} entries")

    def F_xz(window):
        w = _window_array(window, R, m)
        xb = evaluate_state(param, ShiftWindow(w, 0))
        return np.concatenate([xb, [w[s, c] for c, s in z_select]])

    probe = _window_array(probe, R, m) if np.size(probe) >= R * m else probe
    jac = jacobian_fd(lambda v: F_xz(v.reshape(R, m)), np.asarray(probe, float).reshape(-1))
    sv = np.linalg.svd(jac, compute_uv=False)
    report = DiffeoReport(float(sv.min()), float(sv.max()), bool(sv.min() > JACOBIAN_TOL))
    if not report.accepted:
        raise RankConditionError(
            f"F_xz is singular at the probe window (smallest singular value {sv.min():.2e})",
            report=report)
    return F_xz, report


class FlatnessController:
    """Dynamic feedback tracking controller for one discretized flat system.

    Parameters
    ----------
    param : ParameterizingMap
        Parameterization of the discretized system; relabelled internally
        so that it has no backward shifts.
    z_select : sequence of (component, shift)
        Window entries forming the controller state ``z``.
    gains : GainSpec or sequence of arrays
        Pole specification or ready-made coefficients ``a^j``.
    change : CoordinateChange, optional
        Maps measured states into ``xbar``; defaults to ``param.change``.
    psi_hat : callable, optional
        Closed-form ``(xbar, z) -> window``; Newton is used when absent.
    probe : array, optional
        Window at which invertibility of ``F_xz`` is checked.

    A controller instance owns its state ``z`` and warm-start window; do
    not share one between simulations.
    """

    def __init__(self, param, z_select, gains, change=None, psi_hat: Optional[Callable] = None,
                 probe=None, newton_tol=1e-11):
        self.source_r1 = param.r1
        self.param = redefine_shift_origin(param)
        self.R = self.param.r2
        self.m = self.param.m
        self.n = self.param.dts.tf.n
        self.change = change if change is not None else param.change
        self.z_select = tuple((int(c), int(s)) for c, s in z_select)
        if isinstance(gains, GainSpec):
            if any(r != self.R for r in gains.orders):
                raise ValueError(f"need {self.R} poles per output, got {gains.orders}")
            gains = pole_gains(gains)
        self.gains = [np.asarray(a, dtype=float) for a in gains]
        if len(self.gains) != self.m or any(a.size != self.R for a in self.gains):
            raise ValueError("one coefficient vector of length R per output is required")
        self.psi_hat = psi_hat
        self.newton_tol = newton_tol
        if probe is None:
            probe = self._default_probe()
        self.F_xz, self.diffeo_report = extend_to_diffeo(self.param, self.z_select, probe)
        self.z = None
        self._guess = None
        self.last_window = None
        self.last_v = None

    def _default_probe(self):
        xr = self.param.dts.reference[0]
        y0 = xr[self.param.dts.tf.flat_output_indices]
        rng = np.random.default_rng(0)
        return y0 + 0.1 * rng.standard_normal((self.R, self.m)).cumsum(axis=0)

    # -- component maps ---------------------------------------------------

    def F_xbar(self, window):
        return evaluate_state(self.param, ShiftWindow(_window_array(window, self.R, self.m), 0))

    def F_z(self, window):
        w = np.asarray(window, dtype=float)
        return np.array([w[s, c] for c, s in self.z_select])

    def F_u(self, full_window):
        w = np.asarray(full_window, dtype=float).reshape(self.R + 1, self.m)
        return evaluate_original(self.param, ShiftWindow(w, 0), self.change)[1]

    # -- the five stages --------------------------------------------------

    def invert_psi(self, xbar, z, guess=None):
        """Window ``(y, ..., y_[R-1])`` with ``F_xz(window) = (xbar, z)``."""
        xbar = np.asarray(xbar, dtype=float)
        z = np.asarray(z, dtype=float).reshape(-1)
        if self.psi_hat is not None:
            try:
                return np.asarray(self.psi_hat(xbar, z), dtype=float).reshape(self.R, self.m)
            except (FlatnessError, ArithmeticError, ValueError) as exc:
                raise ControllerFault(f"closed-form inverse failed: {exc}", "psi_hat") from exc
        target = np.concatenate([xbar, z])
        if guess is None:
            guess = self._guess if self._guess is not None else self._default_probe()
        guess = np.asarray(guess, dtype=float).reshape(-1)

        def residual(v):
            try:
                return self.F_xz(v.reshape(self.R, self.m)) - target
            except FlatnessError:
                return np.full(target.size, np.nan)

        w, rep = newton_solve(residual, guess, tol=self.newton_tol)
        # the stopping tolerance sits below the acceptance bound; a stall near it is fine
        if not rep.final_residual <= 1e-10:
            raise ControllerFault(
                f"Newton inversion of F_xz failed (residual {rep.final_residual:.2e})", "psi_hat")
        return w.reshape(self.R, self.m)

    def stabilizing_v(self, window_est, ref_window):
        """``v^j = y_d[r]^j - sum_i a_i^j (y[i]^j - y_d[i]^j)``."""
        est = np.asarray(window_est, dtype=float).reshape(-1, self.m)
        ref = ref_window.samples if isinstance(ref_window, ShiftWindow) else np.asarray(ref_window, float)
        ref = ref.reshape(-1, self.m)
        if ref.shape[0] < self.R + 1:
            raise ValueError(f"reference must supply shifts 0..{self.R}")
        err = est[:self.R] - ref[:self.R]
        return np.array([ref[self.R, j] - self.gains[j] @ err[:, j] for j in range(self.m)])

    def dynamic_feedback_step(self, xbar, v, window=None):
        """Input and next controller state for the linearizing feedback."""
        if window is None:
            window = self.invert_psi(xbar, self.z)
        full = np.vstack([window, np.asarray(v, dtype=float).reshape(1, self.m)])
        try:
            u = self.F_u(full)
        except (FlatnessError, ArithmeticError, ValueError) as exc:
            raise ControllerFault(f"input map failed: {exc}", "input") from exc
        if not np.all(np.isfinite(u)):
            raise ControllerFault("input map returned non-finite values", "input")
        return u, self.F_z(full[1:])

    def init_state(self, ref_window):
        """Start ``z`` on the reference: ``z0 = F_z(reference window)``."""
        ref = ref_window.samples if isinstance(ref_window, ShiftWindow) else np.asarray(ref_window, float)
        ref = ref.reshape(-1, self.m)
        if ref.shape[0] < self.R:
            raise ValueError(f"reference must supply shifts 0..{self.R - 1}")
        self.z = self.F_z(ref[:self.R])
        self._guess = ref[:self.R].copy()
        return self.z.copy()

    def control_step(self, x_measured, ref_window):
        """One sample of the digital control law; updates ``z``.

        Raises :class:`ControllerFault` tagged with the failing stage; ``z``
        is left untouched in that case.
        """
        if self.z is None:
            self.init_state(ref_window)
        try:
            xbar = np.asarray(self.change.state_fwd(x_measured), dtype=float)
        except (ArithmeticError, ValueError) as exc:
            raise ControllerFault(f"state transformation failed: {exc}", "transform") from exc
        window = self.invert_psi(xbar, self.z)
        try:
            v = self.stabilizing_v(window, ref_window)
        except ValueError as exc:
            raise ControllerFault(str(exc), "feedback") from exc
        u, z_next = self.dynamic_feedback_step(xbar, v, window)
        self.last_window = window
        self.last_v = v
        self.z = z_next
        self._guess = np.vstack([window[1:], v[None, :]])
        return u

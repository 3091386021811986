"""Planar VTOL aircraft: model, triangular-form coordinates, closed forms.

States ``x = (q_x, q_z, q_theta, v_x, v_z, omega)`` and inputs
``u = (F1, F2)``.  The transformed state is ordered block-wise as

    xbar = (xbar4^1, xbar4^2, xbar3^1, xbar3^2, xbar2^1, xbar1^1)

where ``xbar4`` is the flat output, ``xbar2^1`` the pitch and ``xbar1^1``
the pitch rate.  The transformed input is ``ubar = (ubar2^1, ubar0^1)``.

Two singular loci matter in practice:

* the triangular equation ``xbar3^2' = ubar2^1 / tan(xbar2^1) - g`` and the
  input relation are singular at zero pitch, and the block-3 rank
  condition degenerates whenever ``ubar2^1 = 0`` (hover);
* the closed forms below work in terms of the thrust direction instead and
  stay regular at hover; they only fail in free fall, where the vertical
  velocity increment cancels gravity exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (Block, ContinuousSystem, CoordinateChange, ShiftWindow,
                   TriangularForm)
from .errors import SingularityError

FREE_FALL_TOL = 1e-12
INPUT_DET_TOL = 1e-10


@dataclass(frozen=True)
class VtolParams:
    """Physical constants.  The defaults are demo values, not measured ones."""

    m: float = 1.0
    J: float = 0.1
    l: float = 0.2
    h: float = 0.05
    alpha: float = 0.3
    g: float = 9.81

    def __post_init__(self):
        if self.m <= 0 or self.J <= 0:
            raise ValueError("mass and inertia must be positive")
        if abs(self.arm) < 1e-12:
            raise ValueError("l cos(alpha) + h sin(alpha) must be nonzero")

    @property
    def arm(self):
        return self.l * math.cos(self.alpha) + self.h * math.sin(self.alpha)

    @property
    def eps(self):
        return self.J * math.sin(self.alpha) / (self.m * self.arm)

    @property
    def hover_thrust(self):
        """Per-rotor thrust that balances gravity at zero pitch."""
        return self.m * self.g / (2.0 * math.cos(self.alpha))


# ---------------------------------------------------------------------------
# physical model


def vtol_dynamics(p: VtolParams, x, u):
    _, _, th, vx, vz, om = x
    u1, u2 = u
    ca, sa = math.cos(p.alpha), math.sin(p.alpha)
    s, c = math.sin(th), math.cos(th)
    return np.array([
        vx,
        vz,
        om,
        (u1 + u2) / p.m * ca * s + (u1 - u2) / p.m * sa * c,
        (u1 + u2) / p.m * ca * c + (u2 - u1) / p.m * sa * s - p.g,
        (u2 - u1) / p.J * p.arm,
    ])


def vtol_jacobian_x(p: VtolParams, x, u):
    th = x[2]
    u1, u2 = u
    ca, sa = math.cos(p.alpha), math.sin(p.alpha)
    s, c = math.sin(th), math.cos(th)
    J = np.zeros((6, 6))
    J[0, 3] = J[1, 4] = J[2, 5] = 1.0
    J[3, 2] = (u1 + u2) / p.m * ca * c - (u1 - u2) / p.m * sa * s
    J[4, 2] = -(u1 + u2) / p.m * ca * s + (u2 - u1) / p.m * sa * c
    return J


def vtol_system(p: VtolParams = VtolParams()) -> ContinuousSystem:
    """The physical model with its hover equilibrium."""
    eq = (np.zeros(6), np.full(2, p.hover_thrust))
    return ContinuousSystem(6, 2, lambda x, u: vtol_dynamics(p, x, u), equilibrium=eq,
                            jacobian_x=lambda x, u: vtol_jacobian_x(p, x, u), name="vtol")


def flat_output(p: VtolParams, x):
    return np.array([x[0] + p.eps * math.sin(x[2]), x[1] + p.eps * math.cos(x[2])])


# ---------------------------------------------------------------------------
# coordinate change


def _state_fwd(p, x):
    q1, q2, th, vx, vz, om = x
    e, s, c = p.eps, math.sin(th), math.cos(th)
    return np.array([q1 + e * s, q2 + e * c, vx + e * om * c, vz - e * om * s, th, om])


def _state_inv(p, xb):
    y1, y2, w1, w2, th, om = xb
    e, s, c = p.eps, math.sin(th), math.cos(th)
    return np.array([y1 - e * s, y2 - e * c, th, w1 - e * om * c, w2 + e * om * s, om])


def _state_jac(p, x):
    th, om = x[2], x[5]
    e, s, c = p.eps, math.sin(th), math.cos(th)
    J = np.zeros((6, 6))
    J[0, 0] = J[1, 1] = J[2, 3] = J[3, 4] = J[4, 2] = J[5, 5] = 1.0
    J[0, 2] = e * c
    J[1, 2] = -e * s
    J[2, 2] = -e * om * s
    J[2, 5] = e * c
    J[3, 2] = -e * om * c
    J[3, 5] = -e * s
    return J


def _thrust(p, u1, u2, om):
    """Magnitude of the specific force along the thrust direction."""
    return (u1 + u2) * math.cos(p.alpha) / p.m - p.eps * om * om


def _input_fwd(p, x, u):
    th, om = x[2], x[5]
    u1, u2 = u
    return np.array([_thrust(p, u1, u2, om) * math.sin(th), (u2 - u1) * p.arm / p.J])


def _input_inv(p, xb, ub):
    th, om = xb[4], xb[5]
    s = math.sin(th)
    ca = math.cos(p.alpha)
    k = ca * s / p.m
    det = 2.0 * k * p.arm / p.J
    if abs(det) <= INPUT_DET_TOL:
        raise SingularityError(f"input relation is singular at pitch {th:.3g} (det {det:.2e})")
    total = (ub[0] + p.eps * om * om * s) / k
    diff = ub[1] * p.J / p.arm
    return np.array([(total - diff) / 2.0, (total + diff) / 2.0])


def vtol_transforms(p: VtolParams = VtolParams()) -> CoordinateChange:
    """State transformation to triangular coordinates and the input relation."""
    return CoordinateChange(
        state_fwd=lambda x: _state_fwd(p, x),
        state_inv=lambda xb: _state_inv(p, xb),
        input_fwd=lambda x, u: _input_fwd(p, x, u),
        input_inv_shifted=lambda xb, ub: _input_inv(p, xb, ub),
        state_jacobian=lambda x: _state_jac(p, x),
    )


def state_only_dynamics(p: VtolParams, xb, u):
    """``xbar' = fbar(xbar, u)``: transformed state, original input."""
    th, om = xb[4], xb[5]
    w = _thrust(p, u[0], u[1], om)
    return np.array([xb[2], xb[3], w * math.sin(th), w * math.cos(th) - p.g,
                     om, (u[1] - u[0]) * p.arm / p.J])


def _state_only_jac(p, xb, u):
    th, om = xb[4], xb[5]
    w = _thrust(p, u[0], u[1], om)
    s, c = math.sin(th), math.cos(th)
    J = np.zeros((6, 6))
    J[0, 2] = J[1, 3] = J[4, 5] = 1.0
    J[2, 4], J[3, 4] = w * c, -w * s
    J[2, 5], J[3, 5] = -2 * p.eps * om * s, -2 * p.eps * om * c
    return J


def state_only_system(p: VtolParams = VtolParams()) -> ContinuousSystem:
    eq = (_state_fwd(p, np.zeros(6)), np.full(2, p.hover_thrust))
    return ContinuousSystem(6, 2, lambda xb, u: state_only_dynamics(p, xb, u), equilibrium=eq,
                            jacobian_x=lambda xb, u: _state_only_jac(p, xb, u),
                            name="vtol[state-only]")


def vtol_triangular_form(p: VtolParams = VtolParams()) -> TriangularForm:
    """Triangular form after state and input transformation (4 blocks)."""
    g = p.g
    blocks = (
        Block(2, 0, lambda x, u: x[2:4], flat=(0, 1), name="f_4"),
        Block(2, 1, lambda x, u: np.array([u[0], u[0] / math.tan(x[4]) - g]), name="f_3"),
        Block(1, 0, lambda x, u: x[5:6], name="f_2"),
        Block(1, 1, lambda x, u: u[1:2], name="f_1"),
    )
    return TriangularForm(blocks, name="vtol-triangular")


# ---------------------------------------------------------------------------
# closed forms


def _pitch_from_increment(d1, d2, Ts, g):
    den = d2 + Ts * g
    if abs(den) <= FREE_FALL_TOL:
        raise SingularityError("free fall: vertical increment cancels gravity")
    # upright chart: pitch in (-pi/2, pi/2), the thrust sign is left free
    return math.atan(d1 / den)


def block3_solver(p: VtolParams):
    """Closed-form solve of the pitch block for the generic engine.

    Returns ``(pitch, ubar2^1)`` from the increment of ``xbar3``; valid for
    both Euler schemes and regular at hover.
    """
    def solve(x_now, x_next, u, Ts, scheme):
        d1 = x_next[2] - x_now[2]
        d2 = x_next[3] - x_now[3]
        return np.array([_pitch_from_increment(d1, d2, Ts, p.g), d1 / Ts])

    def residual(x_now, x_next, z, Ts, scheme):
        # thrust direction parallel to the increment; no division by tan
        d1 = x_next[2] - x_now[2]
        d2 = x_next[3] - x_now[3] + Ts * p.g
        th = z[0]
        return np.array([d1 * math.cos(th) - d2 * math.sin(th), d1 - Ts * z[1]])

    solve.residual = residual
    return solve


def input_recovery(p: VtolParams):
    """Original input from consecutive transformed states, regular at hover.

    The thrust magnitude is read off the ``xbar3`` increment projected on
    the thrust direction instead of dividing ``ubar2^1`` by the sine of
    the pitch.
    """
    ca = math.cos(p.alpha)

    def recover(x_now, x_next, ubar, Ts, scheme):
        at = x_next if scheme == "implicit" else x_now
        th, om = at[4], at[5]
        a1 = ubar[0]
        a2 = (x_next[3] - x_now[3]) / Ts + p.g
        w = a1 * math.sin(th) + a2 * math.cos(th)
        total = (w + p.eps * om * om) * p.m / ca
        diff = ubar[1] * p.J / p.arm
        return np.array([(total - diff) / 2.0, (total + diff) / 2.0])
    return recover


def _pitch_sequence(xb3, Ts, g):
    """Pitch at each increment of a sequence of ``xbar3`` values."""
    th = [_pitch_from_increment(b[0] - a[0], b[1] - a[1], Ts, g)
          for a, b in zip(xb3[:-1], xb3[1:])]
    return np.unwrap(np.array(th))


def _window_samples(window, lo, hi):
    if isinstance(window, ShiftWindow):
        return window.restrict(lo, hi).samples
    arr = np.asarray(window, dtype=float)
    if arr.shape != (hi - lo + 1, 2):
        raise ValueError(f"expected a ({hi - lo + 1}, 2) window")
    return arr


def vtol_closed_form_param(window, Ts, p: VtolParams = VtolParams(), scheme="implicit"):
    """``(xbar, ubar)`` at shift 0 by explicit stage formulas.

    Implicit scheme: the window spans shifts ``-3..1``; explicit: ``0..4``.
    """
    if scheme == "implicit":
        y = _window_samples(window, -3, 1)
        xb3 = np.diff(y, axis=0) / Ts              # shifts -2..1
        th = _pitch_sequence(xb3, Ts, p.g)         # shifts -1..1
        om = np.diff(th) / Ts                      # shifts 0..1
        i0 = 3
        x = np.array([*y[i0], *xb3[2], th[1], om[0]])
        ubar = np.array([(xb3[3, 0] - xb3[2, 0]) / Ts, (om[1] - om[0]) / Ts])
    elif scheme == "explicit":
        y = _window_samples(window, 0, 4)
        xb3 = np.diff(y, axis=0) / Ts              # shifts 0..3
        th = _pitch_sequence(xb3, Ts, p.g)         # shifts 0..2
        om = np.diff(th) / Ts                      # shifts 0..1
        x = np.array([*y[0], *xb3[0], th[0], om[0]])
        ubar = np.array([(xb3[1, 0] - xb3[0, 0]) / Ts, (om[1] - om[0]) / Ts])
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return x, ubar


def vtol_closed_form_original(window, Ts, p: VtolParams = VtolParams(), scheme="implicit"):
    """``(xbar, u)`` at shift 0 with the physical rotor thrusts."""
    lo, hi = (-3, 1) if scheme == "implicit" else (0, 4)
    y = _window_samples(window, lo, hi)
    x0, ubar = vtol_closed_form_param(y, Ts, p, scheme)
    x_next = _state_from_old_window(y[1:5], Ts, p, scheme)
    return x0, input_recovery(p)(x0, x_next, ubar, Ts, scheme)


def vtol_continuous_param(derivs, p: VtolParams = VtolParams()):
    """Continuous-time ``(xbar, ubar)`` from ``y`` and four derivatives.

    ``derivs`` has shape ``(5, 2)``: rows are ``y, y', y'', y''', y''''``.
    """
    d = np.asarray(derivs, dtype=float)
    a, b = d[2, 0], d[2, 1] + p.g
    a1, b1 = d[3]
    a2, b2 = d[4]
    th = math.atan2(a, b)
    num = a1 * b - a * b1
    den = a * a + b * b
    om = num / den
    dnum = a2 * b - a * b2
    dden = 2.0 * (a * a1 + b * b1)
    alpha = (dnum * den - num * dden) / den ** 2
    return np.array([*d[0], *d[1], th, om]), np.array([a, alpha])


def _state_from_old_window(Y, Ts, p, scheme):
    """Closed-form state for a window of shifts 0..3 in the relabelled frame."""
    if scheme == "implicit":
        xb3 = np.diff(Y, axis=0) / Ts              # at 1..3
        th = _pitch_sequence(xb3, Ts, p.g)         # at 2..3
        return np.array([*Y[3], *xb3[2], th[1], (th[1] - th[0]) / Ts])
    xb3 = np.diff(Y, axis=0) / Ts                  # at 0..2
    th = _pitch_sequence(xb3, Ts, p.g)             # at 0..1
    return np.array([*Y[0], *xb3[0], th[0], (th[1] - th[0]) / Ts])


def vtol_psi_hat(xbar, z, Ts, p: VtolParams = VtolParams(), scheme="implicit", *, tol=1e-10):
    """Closed-form inverse of ``(xbar, z) = F_xz(y, ..., y_[3])``.

    ``z`` is ``(y^2, y^2_[1])`` for the implicit scheme and
    ``(y^2_[2], y^2_[3])`` for the explicit one.  Returns the ``(4, 2)``
    window.  A forward evaluation guards against inconsistent arguments.
    """
    xb = np.asarray(xbar, dtype=float)
    z = np.asarray(z, dtype=float)
    g = p.g
    Y = np.empty((4, 2))
    th, om = xb[4], xb[5]
    if scheme == "implicit":
        Y[3] = xb[0:2]
        Y[2] = Y[3] - Ts * xb[2:4]
        Y[0, 1], Y[1, 1] = z
        th_prev = th - Ts * om
        # pitch at shift 3 from the xbar3 increment 2 -> 3
        v2_2 = (Y[2, 1] - Y[1, 1]) / Ts
        d2 = xb[3] - v2_2
        v1_2 = xb[2] - math.tan(th) * (d2 + Ts * g)
        Y[1, 0] = Y[2, 0] - Ts * v1_2
        # pitch at shift 2 from the increment 1 -> 2
        v2_1 = (Y[1, 1] - Y[0, 1]) / Ts
        d2 = v2_2 - v2_1
        v1_1 = v1_2 - math.tan(th_prev) * (d2 + Ts * g)
        Y[0, 0] = Y[1, 0] - Ts * v1_1
    elif scheme == "explicit":
        Y[0] = xb[0:2]
        Y[1] = Y[0] + Ts * xb[2:4]
        Y[2, 1], Y[3, 1] = z
        th_next = th + Ts * om
        v2_1 = (Y[2, 1] - Y[1, 1]) / Ts
        d2 = v2_1 - xb[3]
        v1_1 = xb[2] + math.tan(th) * (d2 + Ts * g)
        Y[2, 0] = Y[1, 0] + Ts * v1_1
        v2_2 = (Y[3, 1] - Y[2, 1]) / Ts
        d2 = v2_2 - v2_1
        v1_2 = v1_1 + math.tan(th_next) * (d2 + Ts * g)
        Y[3, 0] = Y[2, 0] + Ts * v1_2
    else:
        raise ValueError(f"unknown scheme {scheme!r}")

    back = _state_from_old_window(Y, Ts, p, scheme)
    zz = np.array([Y[0, 1], Y[1, 1]]) if scheme == "implicit" else np.array([Y[2, 1], Y[3, 1]])
    err = max(np.max(np.abs(back - xb)), np.max(np.abs(zz - z)))
    if not err <= tol * (1.0 + np.max(np.abs(xb))):
        raise SingularityError(f"(xbar, z) is not in the image of F_xz (mismatch {err:.2e})")
    return Y


# ---------------------------------------------------------------------------
# model bundle


def default_z_select(scheme):
    """``F_z`` choice: ``y^2, y^2_[1]`` (implicit) or ``y^2_[2], y^2_[3]`` (explicit)."""
    return ((1, 0), (1, 1)) if scheme == "implicit" else ((1, 2), (1, 3))


@dataclass(frozen=True)
class VtolModel:
    """Everything the controller and the simulator need about the VTOL."""

    params: VtolParams = field(default_factory=VtolParams)
    name = "vtol"
    # (name, unit) pairs for recorded columns
    state_labels = (("q_x", "m"), ("q_z", "m"), ("theta", "rad"),
                    ("v_x", "m/s"), ("v_z", "m/s"), ("omega", "rad/s"))
    xbar_labels = (("xb4_1", "m"), ("xb4_2", "m"), ("xb3_1", "m/s"),
                   ("xb3_2", "m/s"), ("xb2_1", "rad"), ("xb1_1", "rad/s"))
    input_labels = (("F1", "N"), ("F2", "N"))
    output_labels = (("y1", "m"), ("y2", "m"))
    position_indices = (0, 1)

    @property
    def system(self):
        return vtol_system(self.params)

    @property
    def change(self):
        return vtol_transforms(self.params)

    @property
    def triangular_form(self):
        return vtol_triangular_form(self.params)

    @property
    def state_only(self):
        return state_only_system(self.params)

    def reference_point(self):
        """A point away from both singular loci, used to seed Newton."""
        xb = np.array([0.0, 0.0, 0.0, 0.0, 0.3, 0.0])
        return xb, np.array([self.params.g * math.tan(0.3), 0.0])

    def discrete_system(self, scheme, Ts):
        from .parameterize import DiscreteTriangularSystem
        return DiscreteTriangularSystem(self.triangular_form, scheme, Ts, self.reference_point())

    def parameterizer(self, scheme, Ts, closed_form=True):
        """Parameterizing map; closed-form pitch block and input recovery by default."""
        from .parameterize import build_parameterizer
        dts = self.discrete_system(scheme, Ts)
        if closed_form:
            return build_parameterizer(dts, block_solvers={1: block3_solver(self.params)},
                                       input_recovery=input_recovery(self.params),
                                       change=self.change)
        return build_parameterizer(dts, change=self.change)

    def psi_hat(self, scheme, Ts):
        def inv(xbar, z):
            return vtol_psi_hat(xbar, z, Ts, self.params, scheme)
        return inv

    def flat_output(self, x):
        return flat_output(self.params, x)

    def hover_input(self):
        return np.full(2, self.params.hover_thrust)

    def state_on_reference(self, traj, t):
        """Original-coordinate state that follows ``traj`` exactly at time ``t``."""
        xb, _ = vtol_continuous_param(traj.derivatives(t, 4), self.params)
        return _state_inv(self.params, xb)

    def override(self, **kw):
        unknown = set(kw) - set(VtolParams.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown VTOL parameters {sorted(unknown)}; "
                             f"valid: {sorted(VtolParams.__dataclass_fields__)}")
        return VtolModel(VtolParams(**{**self.params.__dict__, **kw}))


MODELS = {"vtol": VtolModel}

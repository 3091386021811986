"""Identity and property suites for the VTOL discretizations and controller.

Each ``check_*`` function runs one property at full size and returns a
:class:`CheckResult`.  The ``validate`` CLI command and the acceptance
tests both run :data:`SUITES`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .controller import FlatnessController, GainSpec, pole_gains
from .core import ShiftWindow, block_jacobian, check_rank_conditions
from .discretize import ImplicitStepSettings, implicit_step, observed_order
from .parameterize import evaluate, roundtrip_validate
from .sim import SimConfig, compare_schemes, run_closed_loop
from .vtol import VtolModel, default_z_select, vtol_closed_form_param

SCHEMES = ("implicit", "explicit")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    limit: float
    detail: str = ""
    seconds: float = 0.0

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.measured:.3g} (limit {self.limit:.3g}) {self.detail}".rstrip()


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        return CheckResult(res.name, res.passed, res.measured, res.limit, res.detail,
                           time.perf_counter() - t0)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def random_flat_samples(rng, count, Ts, first=0):
    """Samples of a random cubic flat output with a clearly tilted thrust.

    ``y1'' >= 1.2`` keeps the pitch away from zero, where the triangular
    form itself is singular, and ``|y2''| <= 3`` stays far from free fall.
    """
    t = (first + np.arange(count)) * Ts
    a2 = rng.uniform(1.5, 3.0) * rng.choice([-1.0, 1.0])
    a3 = rng.uniform(-0.02, 0.02)
    y1 = rng.uniform(-2, 2) + rng.uniform(-1, 1) * t + a2 * t ** 2 + a3 * t ** 3
    b2 = rng.uniform(-1.0, 1.0)
    b3 = rng.uniform(-0.02, 0.02)
    y2 = rng.uniform(-2, 2) + rng.uniform(-1, 1) * t + b2 * t ** 2 + b3 * t ** 3
    return np.stack([y1, y2], axis=1)


# -- 1 ----------------------------------------------------------------------

@_timed
def check_implicit_step(n=1000, seed=0, tol=1e-10, budget=5.0):
    """Newton solves the implicit step to ``tol`` at random points."""
    rng = np.random.default_rng(seed)
    sys = VtolModel().system
    lo = np.array([-2, -2, -0.8, -2, -2, -2])
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(n):
        x = rng.uniform(lo, -lo)
        u = rng.uniform(0.0, 10.0, 2)
        Ts = rng.uniform(1e-3, 0.1)
        xp, _ = implicit_step(sys, x, u, ImplicitStepSettings(Ts))
        worst = max(worst, float(np.linalg.norm(xp - x - Ts * sys(xp, u))))
    dt = time.perf_counter() - t0
    return CheckResult("1 implicit-step contract", worst <= tol and dt < budget, worst, tol,
                       f"{n} points in {dt:.2f} s (budget {budget} s)")


# -- 2 ----------------------------------------------------------------------

@_timed
def check_shift_structure(Ts=0.1):
    """Implicit map reads y[-3..1], explicit y[0..4]."""
    M = VtolModel()
    pi = M.parameterizer("implicit", Ts)
    pe = M.parameterizer("explicit", Ts)
    ok = pi.R1 == (3, 3) and pi.R2 == (1, 1) and pe.R1 == (0, 0)
    return CheckResult("2 shift structure", ok, float(not ok), 0.0,
                       f"implicit R1={pi.R1} R2={pi.R2}; explicit R1={pe.R1} R2={pe.R2}")


# -- 3 ----------------------------------------------------------------------

@_timed
def check_roundtrip(windows=20, steps=50, Ts=0.1, seed=1, tol=1e-8):
    """The map reproduces the discrete dynamics along random flat outputs."""
    rng = np.random.default_rng(seed)
    M = VtolModel()
    worst = 0.0
    for scheme in SCHEMES:
        pm = M.parameterizer(scheme, Ts)
        for _ in range(windows):
            ys = random_flat_samples(rng, steps + pm.r1 + pm.r2 + 1, Ts)
            worst = max(worst, roundtrip_validate(pm, pm.dts, ys))
    return CheckResult("3 round-trip identity", worst <= tol, worst, tol,
                       f"{windows} sequences x {steps} steps, both schemes")


# -- 4 ----------------------------------------------------------------------

@_timed
def check_input_relation(steps=100, Ts=0.05, seed=2, tol=1e-9):
    """Implicit Euler commutes with the input transformation.

    The triangular form driven by ``ubar`` and the state-only model driven
    by ``u = Phi_u^-1(xbar+, ubar)`` follow the same trajectory.
    """
    rng = np.random.default_rng(seed)
    M = VtolModel()
    g = M.params.g
    tri = M.triangular_form.system()
    so = M.state_only
    inv = M.change.input_inv_shifted
    xa = np.array([0.0, 0.0, 0.5, -0.2, 0.3, 0.0])
    xb = xa.copy()
    worst = 0.0
    for _ in range(steps):
        th, om = xa[4], xa[5]
        # keep the pitch near 0.3 so that the triangular form stays regular
        ubar = np.array([g * math.tan(0.3) + rng.uniform(-0.5, 0.5),
                         -30.0 * (th - 0.3) - 10.0 * om + rng.uniform(-1, 1)])
        xa_next, _ = implicit_step(tri, xa, ubar, Ts)
        u = inv(xa_next, ubar)
        xb_next, _ = implicit_step(so, xb, u, Ts)
        worst = max(worst, float(np.max(np.abs(xa_next - xb_next))))
        xa, xb = xa_next, xb_next
    return CheckResult("4 input relation under implicit Euler", worst <= tol, worst, tol,
                       f"{steps} steps")


# -- 5 ----------------------------------------------------------------------

def _discrete_plant(model, scheme, Ts):
    so = model.state_only
    settings = ImplicitStepSettings(Ts)
    if scheme == "implicit":
        return lambda xb, u: implicit_step(so, xb, u, settings)[0]
    return lambda xb, u: xb + Ts * so(xb, u)


def _controller(model, scheme, Ts, poles=0.0, newton=False):
    pm = model.parameterizer(scheme, Ts)
    R = pm.r1 + pm.r2
    psi = None if newton else model.psi_hat(scheme, Ts)
    return FlatnessController(pm, default_z_select(scheme), GainSpec.repeated(poles, (R, R)),
                              psi_hat=psi)


@_timed
def check_exact_linearization(steps=50, Ts=0.1, seed=3, tol=1e-8, amplitude=0.02):
    """``y_[R] = v`` on the discrete model for random bounded ``v``."""
    rng = np.random.default_rng(seed)
    M = VtolModel()
    worst = 0.0
    for scheme in SCHEMES:
        ctrl = _controller(M, scheme, Ts)
        R, r1 = ctrl.R, ctrl.source_r1
        base = random_flat_samples(rng, steps + R + 1, Ts)
        xb = ctrl.F_xbar(base[:R])
        ctrl.z = ctrl.F_z(base[:R])
        plant = _discrete_plant(M, scheme, Ts)
        ys, vs = [xb[:2]], []
        for k in range(steps):
            window = ctrl.invert_psi(xb, ctrl.z)
            v = base[k + R] + rng.uniform(-amplitude, amplitude, 2)
            u, ctrl.z = ctrl.dynamic_feedback_step(xb, v, window)
            xb = plant(xb, u)
            ys.append(xb[:2])
            vs.append(v)
        ys = np.array(ys)
        # relabelled shift R at step k is plant sample k - r1 + R
        lag = R - r1
        for k in range(steps - lag + 1):
            worst = max(worst, float(np.max(np.abs(ys[k + lag] - vs[k]))))
    return CheckResult("5 exact linearization y[R] = v", worst <= tol, worst, tol,
                       f"{steps} steps, both schemes")


# -- 6 ----------------------------------------------------------------------

def _discrete_run(scheme, poles, **kw):
    return run_closed_loop(SimConfig(scheme=scheme, poles=poles, plant="discrete", **kw))


@_timed
def check_linear_error_dynamics(pole=0.6, tol=1e-7, leak_tol=1e-8):
    """Error recursion with the placed polynomial, and no cross-channel leakage.

    The first ``R`` samples are skipped: there the window still holds the
    controller memory seeded from the reference.
    """
    worst = leak = 0.0
    for scheme in SCHEMES:
        rec = _discrete_run(scheme, pole)
        a = pole_gains(GainSpec.repeated(pole, (4, 4)))
        e = rec.block("e_y")
        R = rec.meta["R"]
        for j in range(2):
            for k in range(R, e.shape[0] - R):
                r = e[k + R, j] + a[j] @ e[k:k + R, j]
                worst = max(worst, abs(r))
        # change only the y1 target; the y2 error must not move
        alt = _discrete_run(scheme, pole, maneuver={
            "kind": "rest_to_rest", "start": [0.0, 0.0], "end": [-3.0, 2.0],
            "duration": 5.0, "smoothness": 5, "t0": 0.0})
        leak = max(leak, float(np.max(np.abs(alt.block("e_y")[:, 1] - e[:, 1]))))
    ok = worst <= tol and leak <= leak_tol
    return CheckResult("6 linear decoupled error dynamics", ok, worst, tol,
                       f"leakage {leak:.2e} (limit {leak_tol:.0e})")


# -- 7 ----------------------------------------------------------------------

@_timed
def check_deadbeat(tol=1e-7):
    """All-zero poles null the design-level error after exactly R samples."""
    worst = 0.0
    exact = True
    for scheme in SCHEMES:
        rec = _discrete_run(scheme, 0.0)
        ed = np.max(np.abs(rec.block("ed_")), axis=1)
        R = rec.meta["R"]
        worst = max(worst, float(np.max(ed[R:])))
        exact &= bool(ed[R - 1] > tol)
    ok = worst <= tol and exact
    return CheckResult("7 deadbeat in R=4 samples", ok, worst, tol,
                       "error still visible at sample R-1" if exact else "settled before R")


# -- 8 ----------------------------------------------------------------------

@_timed
def check_orders(budget=10.0):
    """Observed orders on a tumbling VTOL scenario."""
    M = VtolModel()
    x0 = np.array([0.0, 0.0, 0.2, 0.5, -0.3, 0.8])
    scen = (x0, np.array([6.0, 4.0]), 1.0)
    t0 = time.perf_counter()
    oi = observed_order("implicit", M.system, scen, [0.02, 0.01, 0.005])
    oe = observed_order("explicit", M.system, scen, [0.02, 0.01, 0.005])
    ork = observed_order("rk4", M.system, scen, [0.1, 0.05, 0.025])
    dt = time.perf_counter() - t0
    ok = 0.8 <= oi <= 1.2 and 0.8 <= oe <= 1.2 and 3.5 <= ork <= 4.5 and dt < budget
    return CheckResult("8 convergence orders", ok, oi, 1.0,
                       f"implicit {oi:.3f}, explicit {oe:.3f}, rk4 {ork:.3f}; {dt:.2f} s")


# -- 9 ----------------------------------------------------------------------

@_timed
def check_rank_detection(Ts=0.1):
    """Block f_3 fails at hover, passes at pitch 0.3, det sign follows ubar."""
    M = VtolModel()
    tf = M.triangular_form
    g = M.params.g
    hover = (np.zeros(6), np.zeros(2))
    pitch = np.array([0.0, 0.0, 0.0, 0.0, 0.3, 0.0])
    tilted = (pitch, np.array([g * math.tan(0.3), 0.0]))
    zero_u = (pitch, np.zeros(2))
    neg = (pitch, np.array([-g * math.tan(0.3), 0.0]))
    i3 = [tf.label(i) for i in range(tf.p)].index("f_3")
    ok = True
    notes = []
    for scheme in ("continuous", "implicit", "explicit"):
        r_h = check_rank_conditions(tf, hover, scheme, Ts=Ts)
        r_t = check_rank_conditions(tf, tilted, scheme, Ts=Ts)
        r_z = check_rank_conditions(tf, zero_u, scheme, Ts=Ts)
        ok &= "f_3" in r_h.failing() and r_t.passed and "f_3" in r_z.failing()
    d_pos = float(np.linalg.det(block_jacobian(tf, i3, tilted)))
    d_neg = float(np.linalg.det(block_jacobian(tf, i3, neg)))
    d_zero = float(np.linalg.det(block_jacobian(tf, i3, zero_u)))
    expect = g * math.tan(0.3) / math.sin(0.3) ** 2
    ok &= d_pos > 0 > d_neg and abs(d_zero) < 1e-8
    err = abs(d_pos - expect) / expect
    ok &= err < 1e-6
    notes.append(f"det {d_pos:.4g} / {d_zero:.1e} / {d_neg:.4g} at ubar +,0,-")
    return CheckResult("9 rank degeneracy detection", bool(ok), err, 1e-6, "; ".join(notes))


# -- 10 ---------------------------------------------------------------------

@_timed
def check_sampled_data(budget=60.0):
    """Both loops bounded and inside the 2% band on the continuous plant."""
    t0 = time.perf_counter()
    cmp_ = compare_schemes(SimConfig())
    dt = time.perf_counter() - t0
    ok = dt < budget
    worst = 0.0
    notes = []
    for scheme, m in cmp_.metrics.items():
        ok &= m["finite"] and m["faults"] == 0 and m["settling_index"] is not None
        ok &= m["status"] == "completed"
        worst = max(worst, m["max_flat"])
        notes.append(f"{scheme} settles at k={m['settling_index']}")
    return CheckResult("10 sampled-data demo at Ts=0.1, Tn=1e-4", bool(ok), dt, budget,
                       f"seconds; {', '.join(notes)}; max error {worst:.3f} m")


# -- 11 ---------------------------------------------------------------------

@_timed
def check_dual_path(points=100, Ts=0.1, seed=4, tol=1e-8):
    """Closed forms agree with the generic Newton engine."""
    rng = np.random.default_rng(seed)
    M = VtolModel()
    worst_map = worst_psi = 0.0
    for scheme in SCHEMES:
        generic = M.parameterizer(scheme, Ts, closed_form=False)
        ctrl_closed = _controller(M, scheme, Ts)
        ctrl_newton = _controller(M, scheme, Ts, newton=True)
        lo, hi = -generic.r1, generic.r2
        for _ in range(points // len(SCHEMES)):
            ys = random_flat_samples(rng, hi - lo + 1, Ts, first=lo)
            w = ShiftWindow(ys, lo)
            xg, ug = evaluate(generic, w)
            xc, uc = vtol_closed_form_param(w, Ts, M.params, scheme)
            worst_map = max(worst_map, float(np.max(np.abs(np.r_[xg - xc, ug - uc]))))
            # inverse of F_xz on the relabelled window
            W = ys[:ctrl_closed.R]
            xbar, z = ctrl_closed.F_xbar(W), ctrl_closed.F_z(W)
            guess = W + rng.uniform(-1e-3, 1e-3, W.shape)
            Wn = ctrl_newton.invert_psi(xbar, z, guess=guess)
            Wc = ctrl_closed.invert_psi(xbar, z)
            worst_psi = max(worst_psi, float(np.max(np.abs(Wn - Wc))), float(np.max(np.abs(Wc - W))))
    worst = max(worst_map, worst_psi)
    return CheckResult("11 closed form vs Newton", worst <= tol, worst, tol,
                       f"map {worst_map:.1e}, inverse {worst_psi:.1e}; {points} points")


SUITES = (
    check_implicit_step,
    check_shift_structure,
    check_roundtrip,
    check_input_relation,
    check_exact_linearization,
    check_linear_error_dynamics,
    check_deadbeat,
    check_orders,
    check_rank_detection,
    check_sampled_data,
    check_dual_path,
)


def run_all(suites=SUITES):
    return [fn() for fn in suites]

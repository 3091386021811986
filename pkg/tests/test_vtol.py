import math

import numpy as np
import pytest

from flatdisc.core import ShiftWindow, jacobian_fd
from flatdisc.errors import SingularityError
from flatdisc.parameterize import evaluate, evaluate_original, evaluate_state, redefine_shift_origin
from flatdisc.validation import random_flat_samples
from flatdisc.vtol import (VtolModel, VtolParams, block3_solver, default_z_select,
                           flat_output, state_only_dynamics, vtol_closed_form_original,
                           vtol_closed_form_param, vtol_continuous_param, vtol_dynamics,
                           vtol_psi_hat)


def _rotor_forces(p, x, u):
    """Independent transcription: sum the two tilted rotor forces in the world frame."""
    th = x[2]
    # body frame: rotor 1 tilted by +alpha, rotor 2 by -alpha
    f1 = u[0] * np.array([math.sin(p.alpha), math.cos(p.alpha)])
    f2 = u[1] * np.array([-math.sin(p.alpha), math.cos(p.alpha)])
    fx, fz = _world(th, f1 + f2)
    torque = (u[1] - u[0]) * p.arm
    return np.array([x[3], x[4], x[5], fx / p.m, fz / p.m - p.g, torque / p.J])


def _world(th, f):
    # body x/z to world: x_w = f_x cos + f_z sin, z_w = -f_x sin + f_z cos
    c, s = math.cos(th), math.sin(th)
    return f[0] * c + f[1] * s, -f[0] * s + f[1] * c


def test_dynamics_match_second_transcription(rng):
    p = VtolParams()
    for _ in range(20):
        x = rng.uniform(-2, 2, 6)
        u = rng.uniform(0, 10, 2)
        assert np.allclose(vtol_dynamics(p, x, u), _rotor_forces(p, x, u), atol=1e-12)


def test_analytic_jacobian(vtol, rng):
    sys = vtol.system
    for _ in range(5):
        x, u = rng.uniform(-2, 2, 6), rng.uniform(0, 10, 2)
        assert np.allclose(sys.jacobian_x(x, u), jacobian_fd(lambda v: sys(v, u), x), atol=1e-6)


def test_state_only_jacobian(vtol, rng):
    sys = vtol.state_only
    for _ in range(5):
        xb, u = rng.uniform(-2, 2, 6), rng.uniform(0, 10, 2)
        assert np.allclose(sys.jacobian_x(xb, u), jacobian_fd(lambda v: sys(v, u), xb), atol=1e-6)


def test_hover_equilibrium(vtol):
    x, u = vtol.system.equilibrium
    assert np.allclose(vtol.system(x, u), 0.0, atol=1e-12)
    assert np.allclose(u, 9.81 / (2 * math.cos(0.3)))


def test_eps_and_flat_output():
    p = VtolParams(m=2.0, J=0.3, l=0.25, h=0.1, alpha=0.4)
    arm = 0.25 * math.cos(0.4) + 0.1 * math.sin(0.4)
    assert math.isclose(p.eps, 0.3 * math.sin(0.4) / (2.0 * arm))
    x = np.array([1.0, 2.0, 0.5, 0, 0, 0])
    assert np.allclose(flat_output(p, x), [1 + p.eps * math.sin(0.5), 2 + p.eps * math.cos(0.5)])


def test_params_validation():
    with pytest.raises(ValueError):
        VtolParams(m=0.0)
    with pytest.raises(ValueError):
        VtolModel().override(mass=2.0)
    assert VtolModel().override(m=2.0).params.m == 2.0


def test_state_change_round_trip(vtol, rng):
    ch = vtol.change
    for _ in range(10):
        x = rng.uniform(-2, 2, 6)
        assert np.allclose(ch.state_inv(ch.state_fwd(x)), x, atol=1e-14)
        assert np.allclose(ch.state_jacobian(x), jacobian_fd(ch.state_fwd, x), atol=1e-7)


def test_input_relation_round_trip(vtol, rng):
    ch = vtol.change
    for _ in range(10):
        x = rng.uniform(-1, 1, 6)
        x[2] = rng.uniform(0.2, 1.2)
        u = rng.uniform(0, 10, 2)
        ub = ch.input_fwd(x, u)
        assert np.allclose(ch.input_inv_shifted(ch.state_fwd(x), ub), u, atol=1e-10)


def test_input_relation_singular_at_zero_pitch(vtol):
    with pytest.raises(SingularityError):
        vtol.change.input_inv_shifted(np.zeros(6), np.zeros(2))


def test_triangular_form_matches_state_only(vtol, rng):
    tf, ch = vtol.triangular_form, vtol.change
    for _ in range(10):
        xb = rng.uniform(-1, 1, 6)
        xb[4] = rng.uniform(0.2, 1.2)
        u = rng.uniform(0, 10, 2)
        ub = ch.input_fwd(ch.state_inv(xb), u)
        assert np.allclose(tf.dynamics(xb, ub), state_only_dynamics(vtol.params, xb, u), atol=1e-10)


def test_free_fall_is_singular():
    solve = block3_solver(VtolParams())
    Ts, g = 0.1, 9.81
    x_now = np.zeros(6)
    x_next = np.zeros(6)
    x_next[3] = -Ts * g
    with pytest.raises(SingularityError):
        solve(x_now, x_next, None, Ts, "implicit")


def test_block3_residual_is_regular_at_hover():
    solve = block3_solver(VtolParams())
    z = solve(np.zeros(6), np.zeros(6), None, 0.1, "implicit")
    assert np.allclose(z, 0.0)
    assert np.allclose(solve.residual(np.zeros(6), np.zeros(6), z, 0.1, "implicit"), 0.0)


@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_closed_form_matches_generic(vtol, scheme, rng):
    Ts = 0.1
    pm = vtol.parameterizer(scheme, Ts, closed_form=False)
    for _ in range(5):
        ys = random_flat_samples(rng, 5, Ts, first=-pm.r1)
        x, ub = evaluate(pm, ys)
        xc, ubc = vtol_closed_form_param(ys, Ts, vtol.params, scheme)
        assert np.allclose(x, xc, atol=1e-9) and np.allclose(ub, ubc, atol=1e-8)
        _, u = evaluate_original(pm, ys)
        assert np.allclose(vtol_closed_form_original(ys, Ts, vtol.params, scheme)[1], u, atol=1e-8)


def test_closed_form_rejects_bad_scheme():
    with pytest.raises(ValueError):
        vtol_closed_form_param(np.zeros((5, 2)), 0.1, scheme="midpoint")


def test_continuous_param_reproduces_dynamics(vtol):
    # constant acceleration with a slow pitch-up: compare with the triangular form
    derivs = np.array([[0.0, 0.0], [1.0, 0.5], [2.0, 0.3], [0.4, -0.2], [0.1, 0.05]])
    xb, ub = vtol_continuous_param(derivs, vtol.params)
    assert np.allclose(vtol.triangular_form.dynamics(xb, ub)[2:4], derivs[2], atol=1e-12)
    # pitch rate by finite differences of the pitch formula
    h = 1e-6
    d_plus = derivs.copy()
    d_plus[2] += h * derivs[3]
    d_plus[3] += h * derivs[4]
    th_rate = (vtol_continuous_param(d_plus, vtol.params)[0][4] - xb[4]) / h
    assert abs(th_rate - xb[5]) < 1e-5


@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_psi_hat_inverts_F_xz(vtol, scheme, rng):
    Ts = 0.1
    rel = redefine_shift_origin(vtol.parameterizer(scheme, Ts))
    sel = default_z_select(scheme)
    for _ in range(5):
        ys = random_flat_samples(rng, 4, Ts)
        xb = evaluate_state(rel, ShiftWindow(ys, 0))
        z = np.array([ys[s, c] for c, s in sel])
        assert np.allclose(vtol_psi_hat(xb, z, Ts, vtol.params, scheme), ys, atol=1e-10)


def test_psi_hat_rejects_points_outside_the_image(vtol):
    # an inverted pitch lies outside the upright chart the forward map uses
    xb = np.array([0.0, 0.0, 0.0, 0.0, 2.0, 0.0])
    with pytest.raises(SingularityError):
        vtol_psi_hat(xb, np.zeros(2), 0.1, vtol.params, "implicit")

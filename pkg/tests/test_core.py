import math

import numpy as np
import pytest

from flatdisc.core import (Block, ContinuousSystem, CoordinateChange, ShiftWindow,
                           TriangularForm, check_rank_conditions, eval_dynamics,
                           jacobian_fd, transform_system)
from flatdisc.discretize import rk4_integrate
from flatdisc.errors import NumericError


# -- continuous systems ------------------------------------------------------

def test_equilibrium_must_be_a_rest_point():
    with pytest.raises(ValueError, match="rest point"):
        ContinuousSystem(1, 1, lambda x, u: x + u, equilibrium=(np.ones(1), np.zeros(1)))


def test_dimension_mismatch_is_rejected(linear_system):
    sys, _, _ = linear_system
    with pytest.raises(ValueError, match="state"):
        eval_dynamics(sys, np.zeros(3), np.zeros(1))
    with pytest.raises(ValueError, match="input"):
        sys(np.zeros(2), np.zeros(2))


def test_jacobian_fd_matches_linear_map(linear_system):
    sys, A, _ = linear_system
    J = jacobian_fd(lambda x: sys(x, np.zeros(1)), np.array([0.3, -1.2]))
    assert np.allclose(J, A, atol=1e-9)


def test_jacobian_fd_flags_non_finite_values():
    with pytest.raises(NumericError), np.errstate(all="ignore"):
        jacobian_fd(lambda x: np.array([1.0 / x[0]]), np.array([0.0]))


# -- triangular forms --------------------------------------------------------

def test_double_integrator_bookkeeping(double_integrator):
    tf = double_integrator
    assert (tf.p, tf.n, tf.m, tf.n_flat) == (2, 2, 1, 1)
    assert list(tf.flat_output_indices) == [0]
    xs, us = tf.unknown_indices(0)
    assert list(xs) == [1] and list(us) == []
    xs, us = tf.unknown_indices(1)
    assert list(xs) == [] and list(us) == [0]
    assert tf.label(0) == "f_2"


def test_top_block_must_be_flat():
    with pytest.raises(ValueError, match="top block"):
        TriangularForm((Block(1, 0, lambda x, u: x[1:2]), Block(1, 1, lambda x, u: u)))


def test_flat_count_must_match_inputs():
    with pytest.raises(ValueError, match="inputs"):
        TriangularForm((Block(1, 0, lambda x, u: x[1:2], flat=(0,)),
                        Block(1, 2, lambda x, u: u[:1])))


def test_non_square_level_is_rejected():
    # f_2 has one equation but two unknowns below it
    with pytest.raises(ValueError, match="square"):
        TriangularForm((Block(1, 0, lambda x, u: x[1:2], flat=(0,)),
                        Block(2, 1, lambda x, u: np.r_[x[2], u[0]])))


def test_structure_audit_catches_hidden_dependency():
    good = TriangularForm((
        Block(1, 0, lambda x, u: x[1:2], flat=(0,)),
        Block(1, 1, lambda x, u: u[0:1]),
    ))
    pts = [(np.array([0.1, 0.2]), np.array([0.3]))]
    assert good.audit_structure(pts) <= 1e-8
    # the top block may not see the input
    bad = TriangularForm((
        Block(1, 0, lambda x, u: x[1:2] + 0.5 * u[0:1], flat=(0,)),
        Block(1, 1, lambda x, u: u[0:1]),
    ))
    with pytest.raises(ValueError, match="f_2"):
        bad.audit_structure(pts)


def test_vtol_triangular_structure(vtol, rng):
    tf = vtol.triangular_form
    pts = []
    for _ in range(5):
        x = rng.uniform(-1, 1, 6)
        x[4] = rng.uniform(0.2, 1.0)
        pts.append((x, rng.uniform(-2, 2, 2)))
    assert tf.audit_structure(pts) <= 1e-8


# -- rank conditions -----------------------------------------------------------

def test_rank_check_on_double_integrator(double_integrator):
    rep = check_rank_conditions(double_integrator, (np.zeros(2), np.zeros(1)))
    assert rep.passed
    rep = check_rank_conditions(double_integrator, (np.zeros(2), np.zeros(1)), "implicit", Ts=0.1)
    assert rep.passed


def test_rank_verdict_is_scale_invariant():
    def make(scale):
        return TriangularForm((
            Block(1, 0, lambda x, u: scale * x[1:2], flat=(0,)),
            Block(1, 1, lambda x, u: scale * u[0:1]),
        ))
    for scale in (1e-6, 1.0, 1e6):
        assert check_rank_conditions(make(scale), (np.zeros(2), np.zeros(1))).passed


def test_rank_check_reports_instead_of_raising(vtol):
    rep = check_rank_conditions(vtol.triangular_form, (np.zeros(6), np.zeros(2)))
    assert not rep.passed
    assert rep.failing() == ["f_3"]


# -- coordinate changes ------------------------------------------------------

def test_identity_change_leaves_system_alone(linear_system):
    sys, _, _ = linear_system
    out = transform_system(sys, CoordinateChange.identity())
    x, u = np.array([0.2, -0.7]), np.array([1.5])
    assert np.allclose(out(x, u), sys(x, u))
    assert np.allclose(out.equilibrium[0], 0.0)


def test_singular_state_change_rejected(linear_system):
    sys, _, _ = linear_system
    squash = CoordinateChange(lambda x: np.array([x[0], x[0]]), lambda xb: xb)
    with pytest.raises(ValueError, match="not invertible"):
        transform_system(sys, squash)


def test_pushforward_consistency(vtol):
    """d/dt Phi_x(x(t)) along RK4 solutions equals fbar(Phi_x(x), u)."""
    ch = vtol.change
    fbar = transform_system(vtol.system, ch)
    x0 = np.array([0.3, -0.2, 0.4, 1.0, -0.5, 0.7])
    u = np.array([6.0, 4.0])
    h = 1e-4
    _, traj = rk4_integrate(vtol.system, x0, u, 1e-5, 2 * h)
    xm, xc, xp = traj[0], traj[10], traj[20]
    rate = (ch.state_fwd(xp) - ch.state_fwd(xm)) / (2 * h)
    assert np.allclose(rate, fbar(ch.state_fwd(xc), u), atol=1e-6)


def test_state_and_input_mode_has_no_equilibrium_for_vtol(vtol):
    # the input relation degenerates at zero pitch, which is where hover sits
    out = transform_system(vtol.system, vtol.change, mode="state-and-input")
    assert out.equilibrium is None
    xb = vtol.change.state_fwd(np.array([0, 0, 0.3, 0, 0, 0]))
    ub = np.array([vtol.params.g * math.tan(0.3), 0.0])
    assert np.allclose(out(xb, ub), vtol.triangular_form.dynamics(xb, ub), atol=1e-10)


# -- shift windows -----------------------------------------------------------

def test_shift_window_indexing():
    w = ShiftWindow(np.arange(10.0).reshape(5, 2), first=-3)
    assert w.last == 1 and list(w.shifts) == [-3, -2, -1, 0, 1]
    assert w.R1 == (3, 3) and w.R2 == (1, 1)
    assert np.array_equal(w[0], [6.0, 7.0])
    with pytest.raises(KeyError):
        w[2]
    assert w.relabel(3).first == 0
    assert np.array_equal(w.restrict(-1, 0).samples, [[4.0, 5.0], [6.0, 7.0]])


def test_shift_window_from_mapping_requires_contiguous_shifts():
    w = ShiftWindow.from_mapping({0: 1.0, 1: 2.0, -1: 0.0})
    assert w.first == -1 and w.m == 1
    with pytest.raises(ValueError):
        ShiftWindow.from_mapping({0: 1.0, 2: 2.0})


def test_shift_window_is_read_only():
    w = ShiftWindow(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        w.samples[0, 0] = 1.0

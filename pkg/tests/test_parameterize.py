import numpy as np
import pytest

from flatdisc.core import ShiftWindow
from flatdisc.errors import ParameterizationError, RankConditionError
from flatdisc.parameterize import (DiscreteTriangularSystem, build_parameterizer, evaluate,
                                   evaluate_original, evaluate_state, recover_original_input,
                                   redefine_shift_origin, roundtrip_validate,
                                   windows_from_samples)
from flatdisc.validation import random_flat_samples


def _dts(tf, scheme, Ts=1.0):
    return DiscreteTriangularSystem(tf, scheme, Ts)


@pytest.mark.parametrize("scheme,r1,r2", [("implicit", 1, 1), ("explicit", 0, 2)])
def test_double_integrator_shift_window(double_integrator, scheme, r1, r2):
    pm = build_parameterizer(_dts(double_integrator, scheme))
    assert (pm.r1, pm.r2) == (r1, r2)
    assert pm.R == (r1 + r2,)


@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_ramp_gives_unit_velocity_and_zero_input(double_integrator, scheme):
    pm = build_parameterizer(_dts(double_integrator, scheme))
    window = ShiftWindow(np.arange(-pm.r1, pm.r2 + 1, dtype=float)[:, None] + 7.0, -pm.r1)
    x, u = evaluate(pm, window)
    assert np.allclose(x, [7.0, 1.0], atol=1e-12)
    assert np.allclose(u, [0.0], atol=1e-12)


def test_double_integrator_second_difference(double_integrator):
    # implicit Euler: u(k) = (y(k+1) - 2 y(k) + y(k-1)) / Ts^2
    Ts = 0.1
    pm = build_parameterizer(_dts(double_integrator, "implicit", Ts))
    y = np.array([0.3, -0.2, 0.5])
    _, u = evaluate(pm, ShiftWindow(y[:, None], -1))
    assert abs(u[0] - (y[2] - 2 * y[1] + y[0]) / Ts ** 2) < 1e-9


def test_state_part_needs_fewer_forward_shifts(double_integrator):
    pm = build_parameterizer(_dts(double_integrator, "implicit"))
    assert pm.state_R2 == 0
    x = evaluate_state(pm, ShiftWindow(np.array([[1.0], [3.0]]), -1))
    assert np.allclose(x, [3.0, 2.0])


def test_window_must_cover_the_shift_range(double_integrator):
    pm = build_parameterizer(_dts(double_integrator, "implicit"))
    with pytest.raises(KeyError):
        evaluate(pm, ShiftWindow(np.zeros((2, 1)), 0))


def test_redefine_shift_origin(double_integrator):
    pm = build_parameterizer(_dts(double_integrator, "implicit"))
    rel = redefine_shift_origin(pm)
    assert (rel.r1, rel.r2) == (0, 2)
    y = np.array([[1.0], [2.5], [3.0]])
    assert np.allclose(evaluate(rel, ShiftWindow(y, 0))[0], evaluate(pm, ShiftWindow(y, -1))[0])
    # a map without backward shifts is returned unchanged
    ex = build_parameterizer(_dts(double_integrator, "explicit"))
    assert redefine_shift_origin(ex) is ex


@pytest.mark.parametrize("scheme,r1,r2", [("implicit", 3, 1), ("explicit", 0, 4)])
def test_vtol_shift_structure(vtol, scheme, r1, r2):
    pm = vtol.parameterizer(scheme, 0.1)
    assert (pm.r1, pm.r2) == (r1, r2)
    assert redefine_shift_origin(pm).r2 == 4


@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_generic_and_closed_form_agree(vtol, scheme, rng):
    Ts = 0.1
    a = vtol.parameterizer(scheme, Ts)
    b = vtol.parameterizer(scheme, Ts, closed_form=False)
    ys = random_flat_samples(rng, 5, Ts, first=-a.r1)
    xa, ua = evaluate(a, ys)
    xb, ub = evaluate(b, ys)
    assert np.allclose(xa, xb, atol=1e-9) and np.allclose(ua, ub, atol=1e-8)


@pytest.mark.parametrize("scheme", ["implicit", "explicit"])
def test_vtol_roundtrip(vtol, scheme, rng):
    Ts = 0.1
    pm = vtol.parameterizer(scheme, Ts)
    ys = random_flat_samples(rng, 20, Ts)
    assert roundtrip_validate(pm, vtol.discrete_system(scheme, Ts), ys) <= 1e-8


def test_newton_failure_names_the_block(vtol):
    # a constant output means hover, where block f_3 has no regular solution
    pm = vtol.parameterizer("implicit", 0.1, closed_form=False)
    with pytest.raises(ParameterizationError) as info:
        evaluate(pm, ShiftWindow(np.zeros((5, 2)), -3))
    assert info.value.block == "f_3"
    assert info.value.shift is not None


def test_closed_form_handles_hover(vtol):
    pm = vtol.parameterizer("implicit", 0.1)
    x, u = evaluate_original(pm, ShiftWindow(np.zeros((5, 2)), -3))
    assert np.allclose(x, 0.0, atol=1e-12)
    assert np.allclose(u, vtol.hover_input(), atol=1e-9)


def test_recover_original_input_is_checked(vtol, rng):
    Ts = 0.1
    pm = vtol.parameterizer("implicit", Ts, closed_form=False)
    ys = random_flat_samples(rng, 5, Ts, first=-3)
    u = recover_original_input(pm, ys)
    x, ubar = evaluate(pm, ys)
    X, _, z = pm._solve(ys, -3, 1)
    back = vtol.change.input_fwd(vtol.change.state_inv(X[z + 1]), u)
    assert np.allclose(back, ubar, atol=1e-9)


def test_rank_failure_at_reference_is_raised(vtol):
    with pytest.raises(RankConditionError) as info:
        DiscreteTriangularSystem(vtol.triangular_form, "implicit", 0.1,
                                 (np.zeros(6), np.zeros(2)))
    assert info.value.block == "f_3"


def test_discrete_system_validation(double_integrator):
    with pytest.raises(ValueError):
        DiscreteTriangularSystem(double_integrator, "trapezoid", 0.1)
    with pytest.raises(ValueError):
        DiscreteTriangularSystem(double_integrator, "implicit", 0.0)


def test_windows_from_samples():
    ys = np.arange(6.0)
    ks = [k for k, _ in windows_from_samples(ys, -1, 2)]
    assert ks == [1, 2, 3]
    _, w = next(windows_from_samples(ys, -1, 2))
    assert w.first == -1 and np.array_equal(w.samples[:, 0], [0, 1, 2, 3])

import numpy as np
import pytest

from flatdisc.trajgen import (ReferenceTrajectory, chain, constant, rest_to_rest,
                              sample_reference)


@pytest.mark.parametrize("s", [1, 2, 5])
def test_rest_to_rest_boundary_conditions(s):
    T = 2.0
    tr = rest_to_rest([0.0, 1.0], [4.0, -1.0], T, s=s)
    assert np.allclose(tr(0.0), [0.0, 1.0]) and np.allclose(tr(T), [4.0, -1.0])
    for k in range(1, s + 1):
        assert np.allclose(tr(0.0, k), 0.0, atol=1e-10)
        assert np.allclose(tr(T, k), 0.0, atol=1e-9)
    assert tr.coeffs.shape[2] == 2 * s + 2


def test_rest_to_rest_is_symmetric_about_midpoint():
    tr = rest_to_rest([0.0], [2.0], 3.0)
    assert np.allclose(tr(1.5), [1.0])
    assert np.allclose(tr(1.0) + tr(2.0), [2.0])


def test_quintic_matches_vandermonde_solve():
    # s = 2: degree 5 with position, velocity and acceleration fixed at both ends
    T = 1.5
    rows, rhs = [], []
    for t, vals in ((0.0, (0.0, 0.0, 0.0)), (T, (3.0, 0.0, 0.0))):
        for order, val in enumerate(vals):
            row = [0.0] * 6
            for p in range(order, 6):
                row[p] = np.prod(range(p - order + 1, p + 1)) * t ** (p - order)
            rows.append(row)
            rhs.append(val)
    c = np.linalg.solve(np.array(rows), np.array(rhs))
    tr = rest_to_rest([0.0], [3.0], T, s=2)
    assert np.allclose(tr.coeffs[0, 0], c, atol=1e-12)


def test_chain_is_smooth_at_joins():
    tr = chain([[0, 0], [1, 2], [3, 2]], [1.0, 2.0], s=3, t0=0.5)
    assert tr.t_start == 0.5 and tr.t_end == 3.5
    for k in range(4):
        assert np.allclose(tr._segment(0, 1.5, k), tr._segment(1, 1.5, k), atol=1e-9)


def test_joins_are_checked():
    with pytest.raises(ValueError, match="jumps"):
        ReferenceTrajectory(np.array([0.0, 1.0, 2.0]),
                            np.array([[[0.0, 1.0]], [[5.0, 0.0]]]), smoothness=0)
    with pytest.raises(ValueError):
        chain([[0.0], [1.0]], [1.0, 2.0])


def test_held_constant_outside_breaks():
    tr = rest_to_rest([1.0], [3.0], 2.0)
    assert np.allclose(tr(-1.0), [1.0]) and np.allclose(tr(-1.0, 2), [0.0])
    # past the end the value is the end point, not the start
    assert np.allclose(tr(10.0), [3.0]) and np.allclose(tr(10.0, 1), [0.0])


def test_constant():
    tr = constant([1.0, -2.0])
    assert np.allclose(tr(7.3), [1.0, -2.0]) and np.allclose(tr(0.4, 1), 0.0)


def test_sample_reference_spacing_and_offset():
    tr = rest_to_rest([0.0], [1.0], 1.0)
    w = sample_reference(tr, 3, 0.1, 4, offset=-3)
    assert w.first == 0 and w.samples.shape == (5, 1)
    assert np.allclose(w.samples[:, 0], [tr(0.1 * i)[0] for i in range(5)])


def test_sample_reference_domain():
    tr = rest_to_rest([0.0], [1.0], 1.0).with_domain(0.0, 1.0)
    with pytest.raises(ValueError, match="domain"):
        sample_reference(tr, 8, 0.1, 4)
    sample_reference(tr, 6, 0.1, 4)

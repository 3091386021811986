"""Flat-output reference trajectories and their sampling into shift windows."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from numpy.polynomial import polynomial as P

from .core import ShiftWindow

JOIN_TOL = 1e-10


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Piecewise polynomial ``y_d(t)``, held constant outside its breaks.

    ``coeffs[s, j]`` holds the increasing-power coefficients of component
    ``j`` on segment ``s`` in the local time ``t - breaks[s]``.  Sampling
    outside ``domain`` is an error.
    """

    breaks: np.ndarray
    coeffs: np.ndarray
    smoothness: int = 0
    domain: tuple = (-np.inf, np.inf)

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 3 or c.shape[0] != b.size - 1:
            raise ValueError("coeffs must have shape (segments, m, degree + 1)")
        if np.any(np.diff(b) <= 0):
            raise ValueError("breaks must be strictly increasing")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "coeffs", c)
        scale = 1.0 + float(np.max(np.abs(c[:, :, 0])))
        for s in range(1, b.size - 1):
            for order in range(self.smoothness + 1):
                left = self._segment(s - 1, b[s], order)
                right = self._segment(s, b[s], order)
                if np.max(np.abs(left - right)) > JOIN_TOL * scale:
                    raise ValueError(f"derivative {order} jumps at t={b[s]}")

    @property
    def m(self):
        return self.coeffs.shape[1]

    @property
    def t_start(self):
        return float(self.breaks[0])

    @property
    def t_end(self):
        return float(self.breaks[-1])

    def _segment(self, s, t, order):
        tau = t - self.breaks[s]
        out = np.empty(self.m)
        for j in range(self.m):
            c = P.polyder(self.coeffs[s, j], order) if order else self.coeffs[s, j]
            out[j] = P.polyval(tau, c)
        return out

    def __call__(self, t, order=0):
        """Value (or ``order``-th derivative) at time ``t``."""
        if t < self.breaks[0]:
            return self._segment(0, self.breaks[0], 0) if order == 0 else np.zeros(self.m)
        if t > self.breaks[-1]:
            return self._segment(self.coeffs.shape[0] - 1, self.breaks[-1], 0) if order == 0 \
                else np.zeros(self.m)
        s = min(np.searchsorted(self.breaks, t, side="right") - 1, self.breaks.size - 2)
        return self._segment(s, t, order)

    def derivatives(self, t, upto):
        """Rows ``y_d(t), y_d'(t), ...`` up to order ``upto``."""
        return np.array([self(t, k) for k in range(upto + 1)])

    def with_domain(self, lo, hi):
        return ReferenceTrajectory(self.breaks, self.coeffs, self.smoothness, (lo, hi))


def _smoothstep(s):
    """Coefficients of the degree ``2s+1`` rest-to-rest blend on [0, 1]."""
    one_minus = np.array([1.0, -1.0])
    acc = np.zeros(1)
    for k in range(s + 1):
        acc = P.polyadd(acc, comb(s + k, k) * P.polypow(one_minus, k))
    return P.polymul(np.r_[np.zeros(s + 1), 1.0], acc)


def _rest_to_rest_coeffs(y_a, y_b, T, s):
    phi = _smoothstep(s)
    local = phi / T ** np.arange(phi.size)
    y_a = np.atleast_1d(np.asarray(y_a, float))
    y_b = np.atleast_1d(np.asarray(y_b, float))
    c = np.outer(y_b - y_a, local)
    c[:, 0] += y_a
    return c


def rest_to_rest(y_a, y_b, T, s=5):
    """Minimal-degree polynomial from rest at ``y_a`` to rest at ``y_b``.

    Derivatives 1 to ``s`` vanish at both ends; the degree is ``2s + 1``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if s < 1:
        raise ValueError("smoothness must be at least 1")
    c = _rest_to_rest_coeffs(y_a, y_b, T, s)
    return ReferenceTrajectory(np.array([0.0, T]), c[None], smoothness=s)


def chain(waypoints, durations, s=5, t0=0.0):
    """Rest-to-rest segments through ``waypoints`` (C^s at every join)."""
    wps = np.atleast_2d(np.asarray(waypoints, float))
    if len(durations) != wps.shape[0] - 1:
        raise ValueError("need one duration per segment")
    coeffs = [_rest_to_rest_coeffs(a, b, T, s) for a, b, T in zip(wps[:-1], wps[1:], durations)]
    breaks = t0 + np.concatenate([[0.0], np.cumsum(durations)])
    return ReferenceTrajectory(breaks, np.array(coeffs), smoothness=s)


def constant(y):
    y = np.atleast_1d(np.asarray(y, float))
    return ReferenceTrajectory(np.array([0.0, 1.0]), y[None, :, None], smoothness=0)


def sample_reference(traj: ReferenceTrajectory, k, Ts, R, offset=0) -> ShiftWindow:
    """Reference window ``y_d((k + offset + i) Ts)`` for ``i = 0..R``."""
    lo, hi = traj.domain
    times = (k + offset + np.arange(R + 1)) * Ts
    if times[0] < lo - 1e-12 or times[-1] > hi + 1e-12:
        raise ValueError(f"reference requested on [{times[0]:.4g}, {times[-1]:.4g}] "
                         f"outside its domain [{lo}, {hi}]")
    return ShiftWindow(np.array([traj(t) for t in times]), 0)

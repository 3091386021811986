"""Core model types: continuous systems, triangular forms, coordinate changes.

Everything in here is immutable once built. Functions are pure, so the
objects can be shared between threads and between controllers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NumericError

RANK_THRESHOLD = 1e-8
EQUILIBRIUM_TOL = 1e-12


def _as_vector(v, dim, what):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size != dim:
        raise ValueError(f"{what} has dimension {arr.size}, expected {dim}")
    return arr


@dataclass(frozen=True)
class ContinuousSystem:
    """A time-invariant system ``xdot = f(x, u)``.

    Parameters
    ----------
    n, m : int
        State and input dimension.
    dynamics : callable
        ``dynamics(x, u) -> xdot``.
    equilibrium : tuple of arrays, optional
        ``(x_s, u_s)`` with ``dynamics(x_s, u_s) = 0``.  ``None`` when the
        representation has no regular equilibrium point.
    jacobian_x : callable, optional
        Analytic ``df/dx(x, u)``; finite differences are used when absent.
    """

    n: int
    m: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    equilibrium: Optional[tuple] = None
    jacobian_x: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if self.equilibrium is None:
            return
        xs = _as_vector(self.equilibrium[0], self.n, "equilibrium state")
        us = _as_vector(self.equilibrium[1], self.m, "equilibrium input")
        object.__setattr__(self, "equilibrium", (xs, us))
        f = eval_dynamics(self, xs, us)
        if np.linalg.norm(f) > EQUILIBRIUM_TOL:
            raise ValueError(
                f"equilibrium is not a rest point: |f(x_s, u_s)| = {np.linalg.norm(f):.3e}")

    def __call__(self, x, u):
        return eval_dynamics(self, x, u)


def eval_dynamics(sys: ContinuousSystem, x, u) -> np.ndarray:
    """Evaluate ``f(x, u)`` with dimension checks."""
    x = _as_vector(x, sys.n, "state")
    u = _as_vector(u, sys.m, "input")
    out = np.asarray(sys.dynamics(x, u), dtype=float).reshape(-1)
    if out.size != sys.n:
        raise ValueError(f"dynamics returned {out.size} values, expected {sys.n}")
    return out


def jacobian_fd(fn, point, eps=None) -> np.ndarray:
    """Central finite-difference Jacobian of ``fn`` at ``point``.

    The default step is ``1e-6 * max(1, |point|)``.  Raises
    :class:`NumericError` if ``fn`` returns non-finite values anywhere in
    the stencil.
    """
    x0 = np.asarray(point, dtype=float).reshape(-1)
    if eps is None:
        eps = 1e-6 * max(1.0, float(np.linalg.norm(x0)))
    if eps <= 0:
        raise ValueError("eps must be positive")
    f0 = np.atleast_1d(np.asarray(fn(x0), dtype=float))
    if not np.all(np.isfinite(f0)):
        raise NumericError("non-finite function value at the expansion point")
    jac = np.empty((f0.size, x0.size))
    for i in range(x0.size):
        dx = np.zeros_like(x0)
        dx[i] = eps
        fp = np.atleast_1d(np.asarray(fn(x0 + dx), dtype=float))
        fm = np.atleast_1d(np.asarray(fn(x0 - dx), dtype=float))
        col = (fp - fm) / (2.0 * eps)
        if not np.all(np.isfinite(col)):
            raise NumericError(f"non-finite difference quotient in column {i}")
        jac[:, i] = col
    return jac


# ---------------------------------------------------------------------------
# triangular forms


@dataclass(frozen=True)
class Block:
    """One subsystem ``xdot_k = f_k(...)`` of a triangular form.

    ``flat`` lists the positions (within the block) of the components that
    belong to the flat output; the remaining positions form ``xhat_k``.
    ``dim_u`` is the dimension of the input ``u_{k-1}`` that enters first
    in this block.  ``dynamics(x, u)`` receives the *full* state and input
    vectors and returns the ``dim_x`` block rates.
    """

    dim_x: int
    dim_u: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    flat: tuple = ()
    name: str = ""


@dataclass(frozen=True)
class TriangularForm:
    """Structurally flat triangular form with blocks ordered ``k = p, ..., 1``.

    The state vector is the concatenation of the block states in the given
    order and the input vector is ``(u_{p-1}, ..., u_0)``.  The flat output
    is the concatenation of the flat components of all blocks.
    """

    blocks: tuple
    equilibrium: Optional[tuple] = None
    name: str = ""
    state_slices: tuple = field(init=False, repr=False)
    input_slices: tuple = field(init=False, repr=False)

    def __post_init__(self):
        blocks = tuple(self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if not blocks:
            raise ValueError("a triangular form needs at least one block")
        s_sl, u_sl = [], []
        xo = uo = 0
        for b in blocks:
            if b.dim_x < 1:
                raise ValueError(f"block {b.name!r} has no states")
            s_sl.append(slice(xo, xo + b.dim_x))
            u_sl.append(slice(uo, uo + b.dim_u))
            xo += b.dim_x
            uo += b.dim_u
            if any(not 0 <= j < b.dim_x for j in b.flat):
                raise ValueError(f"block {b.name!r}: flat index out of range")
        object.__setattr__(self, "state_slices", tuple(s_sl))
        object.__setattr__(self, "input_slices", tuple(u_sl))

        top = blocks[0]
        if len(top.flat) != top.dim_x:
            raise ValueError("the top block must consist of flat-output components only")
        if self.n_flat != self.m:
            raise ValueError(f"{self.n_flat} flat-output components but {self.m} inputs")
        for i in range(self.p - 1):
            need = len(self.xhat_indices(i + 1)) + blocks[i].dim_u
            if blocks[i].dim_x != need:
                raise ValueError(
                    f"block {self.label(i)} is not square: dim f = {blocks[i].dim_x}, "
                    f"dim(xhat, u) of the next level = {need}")
        if blocks[-1].dim_x != blocks[-1].dim_u:
            raise ValueError("bottom block: dim f_1 must equal dim u_0")

    # -- dimensions and index bookkeeping ---------------------------------

    @property
    def p(self):
        return len(self.blocks)

    @property
    def n(self):
        return sum(b.dim_x for b in self.blocks)

    @property
    def m(self):
        return sum(b.dim_u for b in self.blocks)

    @property
    def n_flat(self):
        return sum(len(b.flat) for b in self.blocks)

    def label(self, i):
        """Block name, ``f_k`` with ``k`` counted from the bottom, for position ``i``."""
        return self.blocks[i].name or f"f_{self.p - i}"

    def state_indices(self, i):
        return np.arange(self.n)[self.state_slices[i]]

    def input_indices(self, i):
        return np.arange(self.m)[self.input_slices[i]]

    def flat_indices(self, i):
        start = self.state_slices[i].start
        return np.array([start + j for j in self.blocks[i].flat], dtype=int)

    def xhat_indices(self, i):
        b = self.blocks[i]
        start = self.state_slices[i].start
        return np.array([start + j for j in range(b.dim_x) if j not in b.flat], dtype=int)

    @property
    def flat_output_indices(self):
        """State indices of the flat output ``y = (y_p, ..., y_1)``."""
        return np.concatenate([self.flat_indices(i) for i in range(self.p)])

    def unknown_indices(self, i):
        """(state, input) indices solved from the equations of block ``i``."""
        xs = self.xhat_indices(i + 1) if i + 1 < self.p else np.array([], dtype=int)
        return xs, self.input_indices(i)

    def allowed_indices(self, i):
        """Variables block ``i`` may depend on in the triangular pattern."""
        last = min(i + 1, self.p - 1)
        xs = np.arange(0, self.state_slices[last].stop)
        us = np.arange(0, self.input_slices[i].stop)
        return xs, us

    # -- evaluation ---------------------------------------------------------

    def block_dynamics(self, i, x, u):
        out = np.asarray(self.blocks[i].dynamics(x, u), dtype=float).reshape(-1)
        if out.size != self.blocks[i].dim_x:
            raise ValueError(f"block {self.label(i)} returned {out.size} values")
        return out

    def dynamics(self, x, u):
        return np.concatenate([self.block_dynamics(i, x, u) for i in range(self.p)])

    def system(self) -> ContinuousSystem:
        return ContinuousSystem(self.n, self.m, self.dynamics,
                                equilibrium=self.equilibrium, name=self.name)

    def audit_structure(self, points, tol=1e-8):
        """Probe that no block depends on variables outside its pattern.

        ``points`` is an iterable of ``(x, u)`` pairs.  Returns the largest
        excluded partial derivative found; raises ``ValueError`` naming the
        block if it exceeds ``tol``.
        """
        worst = 0.0
        for x, u in points:
            z0 = np.concatenate([np.asarray(x, float), np.asarray(u, float)])
            for i in range(self.p):
                def fi(z, i=i):
                    return self.block_dynamics(i, z[:self.n], z[self.n:])
                jac = jacobian_fd(fi, z0)
                xs, us = self.allowed_indices(i)
                mask = np.ones(self.n + self.m, dtype=bool)
                mask[xs] = False
                mask[self.n + us] = False
                if mask.any():
                    excess = float(np.max(np.abs(jac[:, mask])))
                    worst = max(worst, excess)
                    if excess > tol:
                        raise ValueError(
                            f"block {self.label(i)} depends on excluded variables "
                            f"(partial {excess:.2e})")
        return worst


# ---------------------------------------------------------------------------
# rank conditions


@dataclass(frozen=True)
class BlockRank:
    block: str
    sigma_min: float
    sigma_max: float
    scaled_sigma_min: float
    passed: bool


@dataclass(frozen=True)
class RankReport:
    scheme: str
    blocks: tuple
    threshold: float

    @property
    def passed(self):
        return all(b.passed for b in self.blocks)

    def failing(self):
        return [b.block for b in self.blocks if not b.passed]


def block_jacobian(tf: TriangularForm, i, point):
    """Jacobian of block ``i`` with respect to its unknowns ``(xhat, u)``."""
    x = np.asarray(point[0], dtype=float).reshape(-1)
    u = np.asarray(point[1], dtype=float).reshape(-1)
    xs, us = tf.unknown_indices(i)

    def fi(z):
        xx, uu = x.copy(), u.copy()
        xx[xs] = z[:xs.size]
        uu[us] = z[xs.size:]
        return tf.block_dynamics(i, xx, uu)

    return jacobian_fd(fi, np.concatenate([x[xs], u[us]]))


def check_rank_conditions(tf: TriangularForm, point, scheme="continuous", *,
                          Ts=1.0, threshold=RANK_THRESHOLD) -> RankReport:
    """Evaluate the solvability conditions of every block at ``point``.

    For block ``k+1`` the Jacobian with respect to ``(xhat_k, u_k)`` must be
    square and regular (for the bottom block: with respect to ``u_0``).
    With ``scheme="implicit"`` the point is read as ``(x+, u)`` and the
    derivative is taken of the residual ``x+ - x - Ts f(x+, u)``.  Pass/fail
    uses ``sigma_min / sigma_max`` so rescaling a block never changes the
    verdict.  Degenerate points are reported, never raised.
    """
    if scheme not in ("continuous", "implicit", "explicit"):
        raise ValueError(f"unknown scheme {scheme!r}")
    factor = -Ts if scheme == "implicit" else 1.0
    rows = []
    for i in range(tf.p):
        with np.errstate(all="ignore"):
            try:
                jac = factor * block_jacobian(tf, i, point)
                sv = np.linalg.svd(jac, compute_uv=False)
                smin, smax = float(sv.min()), float(sv.max())
            except (NumericError, np.linalg.LinAlgError):
                smin = smax = float("nan")
        ratio = smin / smax if np.isfinite(smax) and smax > 0 else float("nan")
        rows.append(BlockRank(tf.label(i), smin, smax, ratio,
                              bool(np.isfinite(ratio) and ratio > threshold)))
    return RankReport(scheme, tuple(rows), threshold)


# ---------------------------------------------------------------------------
# coordinate changes


@dataclass(frozen=True)
class CoordinateChange:
    """State transformation ``xbar = Phi_x(x)`` plus an input relation.

    ``input_fwd(x, u) -> ubar`` is the input transformation in original
    coordinates.  ``input_inv_shifted(xbar, ubar) -> u`` inverts it; after an
    implicit Euler discretization it is evaluated at the *shifted* state
    ``xbar+``, which is where the name comes from.
    """

    state_fwd: Callable
    state_inv: Callable
    input_fwd: Optional[Callable] = None
    input_inv_shifted: Optional[Callable] = None
    state_jacobian: Optional[Callable] = None

    @classmethod
    def identity(cls, n=None, m=None):
        return cls(
            state_fwd=lambda x: np.array(x, dtype=float),
            state_inv=lambda xb: np.array(xb, dtype=float),
            input_fwd=lambda x, u: np.array(u, dtype=float),
            input_inv_shifted=lambda xb, ub: np.array(ub, dtype=float),
            state_jacobian=lambda x: np.eye(np.asarray(x).size),
        )

    @property
    def has_input_change(self):
        return self.input_fwd is not None and self.input_inv_shifted is not None

    def jacobian(self, x):
        if self.state_jacobian is not None:
            return np.asarray(self.state_jacobian(x), dtype=float)
        return jacobian_fd(self.state_fwd, x)


def transform_system(sys: ContinuousSystem, change: CoordinateChange,
                     mode="state-only") -> ContinuousSystem:
    """Push ``sys`` forward through ``change``.

    ``mode="state-only"`` yields ``xbar_dot = fbar(xbar, u)``;
    ``mode="state-and-input"`` yields ``xbar_dot = fbar(xbar, ubar)``.

    The state change must be regular at the equilibrium.  If the input
    relation is singular there, the returned system carries no equilibrium
    (the transformed dynamics are not defined at that point).
    """
    if mode not in ("state-only", "state-and-input"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "state-and-input" and not change.has_input_change:
        raise ValueError("change has no input transformation")

    def fbar(xb, w):
        x = np.asarray(change.state_inv(xb), dtype=float)
        u = w if mode == "state-only" else change.input_inv_shifted(xb, w)
        return change.jacobian(x) @ eval_dynamics(sys, x, u)

    eq = None
    if sys.equilibrium is not None:
        xs, us = sys.equilibrium
        sv = np.linalg.svd(change.jacobian(xs), compute_uv=False)
        if sv.min() <= 1e-10 * max(1.0, sv.max()):
            raise ValueError("state transformation is not invertible at the equilibrium")
        xbs = np.asarray(change.state_fwd(xs), dtype=float)
        if mode == "state-only":
            eq = (xbs, us)
        else:
            ju = jacobian_fd(lambda uu: change.input_fwd(xs, uu), us)
            if np.linalg.svd(ju, compute_uv=False).min() > 1e-10:
                eq = (xbs, np.asarray(change.input_fwd(xs, us), dtype=float))

    return ContinuousSystem(sys.n, sys.m, fbar, equilibrium=eq,
                            name=f"{sys.name}[{mode}]")


# ---------------------------------------------------------------------------
# shift windows


@dataclass(frozen=True)
class ShiftWindow:
    """Flat-output samples ``y_[j]`` for consecutive shifts ``j``.

    ``samples[i]`` is the value at shift ``first + i``; every component is
    scalar, so each sample has length ``m``.
    """

    samples: np.ndarray
    first: int = 0

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("samples must be a non-empty (shifts, m) array")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "first", int(self.first))

    @classmethod
    def from_mapping(cls, mapping):
        keys = sorted(mapping)
        if keys != list(range(keys[0], keys[-1] + 1)):
            raise ValueError("shifts must be contiguous")
        return cls(np.array([np.atleast_1d(mapping[k]) for k in keys]), keys[0])

    @property
    def m(self):
        return self.samples.shape[1]

    @property
    def last(self):
        return self.first + self.samples.shape[0] - 1

    @property
    def shifts(self):
        return range(self.first, self.last + 1)

    @property
    def R1(self):
        return (max(0, -self.first),) * self.m

    @property
    def R2(self):
        return (max(0, self.last),) * self.m

    def __getitem__(self, shift):
        if not self.first <= shift <= self.last:
            raise KeyError(f"shift {shift} outside [{self.first}, {self.last}]")
        return self.samples[shift - self.first]

    def covers(self, lo, hi):
        return self.first <= lo and self.last >= hi

    def relabel(self, offset):
        """Same samples, shifts renumbered by ``offset``."""
        return ShiftWindow(self.samples, self.first + offset)

    def restrict(self, lo, hi):
        if not self.covers(lo, hi):
            raise KeyError(f"window [{self.first}, {self.last}] does not cover [{lo}, {hi}]")
        return ShiftWindow(self.samples[lo - self.first:hi - self.first + 1], lo)

    def flat(self):
        return self.samples.reshape(-1).copy()

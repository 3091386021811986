"""Sampled-data closed-loop simulation, scheme comparison and CSV export.

The discrete controller runs every ``Ts``; its input is held constant over
the sampling interval while the continuous plant is integrated with RK4 at
the finer step ``Tn``.  A ``plant = "discrete"`` setting swaps the plant for
the Euler-discretized model the controller was designed for, which is the
hook used to check the exact-linearization properties.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .controller import FlatnessController, GainSpec
from .discretize import ImplicitStepSettings, explicit_step, implicit_step, rk4_integrate
from .errors import ControllerFault, FlatnessError, NumericError
from .trajgen import chain, constant, sample_reference
from .vtol import MODELS, default_z_select

log = logging.getLogger(__name__)

SCHEMES = ("implicit", "explicit")
PLANTS = ("continuous", "discrete")
DIVIDE_TOL = 1e-9
SETTLING_FRACTION = 0.02


def _divides(small, big):
    q = big / small
    return abs(q - round(q)) <= DIVIDE_TOL * max(1.0, q)


@dataclass
class SimConfig:
    """One closed-loop run.

    ``poles`` is a single pole used for every output, one pole per output,
    or one full list per output.  ``initial_state`` (original coordinates)
    wins over ``perturbation``, which is added to the state that sits on
    the reference at ``t = 0`` (``[dq_x, dq_z, dq_theta]`` for the VTOL).
    ``maneuver`` is ``{"kind": "rest_to_rest", "start", "end", "duration",
    "smoothness", "t0"}`` or ``{"kind": "hold", "at"}``.
    """

    model: str = "vtol"
    params: dict = field(default_factory=dict)
    Ts: float = 0.1
    Tn: float = 1e-4
    duration: float = 10.0
    scheme: str = "implicit"
    poles: object = 0.6
    initial_state: Optional[list] = None
    perturbation: list = field(default_factory=lambda: [0.2, 0.0, 0.1])
    maneuver: dict = field(default_factory=lambda: {
        "kind": "rest_to_rest", "start": [0.0, 0.0], "end": [5.0, 2.0],
        "duration": 5.0, "smoothness": 5, "t0": 0.0})
    out: Optional[str] = None
    seed: int = 0
    plant: str = "continuous"
    inverse: str = "closed-form"

    def __post_init__(self):
        self.validate()

    @classmethod
    def keys(cls):
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        unknown = sorted(set(data) - set(cls.keys()))
        if unknown:
            raise ValueError(f"unknown config keys {unknown}; valid keys: {list(cls.keys())}")
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **kw):
        return SimConfig.from_dict({**self.to_dict(), **kw})

    def validate(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; available: {sorted(MODELS)}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.plant not in PLANTS:
            raise ValueError(f"plant must be one of {PLANTS}")
        if self.inverse not in ("closed-form", "newton"):
            raise ValueError("inverse must be 'closed-form' or 'newton'")
        for name in ("Ts", "Tn", "duration"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be positive")
        if self.Tn > self.Ts:
            raise ValueError("Tn must not exceed Ts")
        if not _divides(self.Ts, self.duration):
            raise ValueError(f"Ts={self.Ts} does not divide duration={self.duration}")
        if not _divides(self.Tn, self.Ts):
            raise ValueError(f"Tn={self.Tn} does not divide Ts={self.Ts}")
        if np.any(np.abs(np.asarray(_flatten(self.poles), dtype=complex)) >= 1):
            raise ValueError("pole moduli must be < 1")
        kind = self.maneuver.get("kind", "rest_to_rest")
        if kind not in ("rest_to_rest", "hold"):
            raise ValueError(f"unknown maneuver kind {kind!r}")

    @property
    def steps(self):
        return int(round(self.duration / self.Ts))


def _flatten(poles):
    if np.isscalar(poles):
        return [poles]
    out = []
    for p in poles:
        out.extend(_flatten(p))
    return out


def gain_spec(poles, m, R):
    """Expand the config ``poles`` entry into a :class:`GainSpec`."""
    if np.isscalar(poles):
        return GainSpec.repeated(poles, (R,) * m)
    poles = list(poles)
    if len(poles) != m:
        raise ValueError(f"need poles for {m} outputs")
    return GainSpec(tuple((p,) * R if np.isscalar(p) else tuple(p) for p in poles))


def reference_from(cfg: SimConfig):
    man = dict(cfg.maneuver)
    if man.get("kind", "rest_to_rest") == "hold":
        return constant(man["at"])
    return chain([man["start"], man["end"]], [man["duration"]], s=man.get("smoothness", 5),
                 t0=man.get("t0", 0.0))


def maneuver_amplitude(cfg: SimConfig):
    man = cfg.maneuver
    if man.get("kind", "rest_to_rest") == "hold":
        return 0.0
    return float(np.linalg.norm(np.subtract(man["end"], man["start"])))


def build_model(cfg: SimConfig):
    model = MODELS[cfg.model]()
    return model.override(**cfg.params) if cfg.params else model


def build_controller(cfg: SimConfig, model=None):
    model = model or build_model(cfg)
    pmap = model.parameterizer(cfg.scheme, cfg.Ts)
    psi = model.psi_hat(cfg.scheme, cfg.Ts) if cfg.inverse == "closed-form" else None
    R = pmap.r1 + pmap.r2
    return FlatnessController(pmap, default_z_select(cfg.scheme),
                              gain_spec(cfg.poles, pmap.m, R), psi_hat=psi)


def initial_state(cfg: SimConfig, model, traj):
    if cfg.initial_state is not None:
        x0 = np.asarray(cfg.initial_state, dtype=float)
        if x0.size != model.system.n:
            raise ValueError(f"initial_state needs {model.system.n} entries")
        return x0
    x0 = model.state_on_reference(traj, 0.0)
    dq = np.asarray(cfg.perturbation, dtype=float)
    x0[:dq.size] += dq
    return x0


@dataclass
class SimRecord:
    """Per-sample log of one run plus its metadata.

    ``e`` is the flat-output error ``y(kTs) - y_d(kTs)`` and ``e_pos`` the
    position error against the state that follows the reference exactly.
    ``e_design`` is the error the controller acts on: estimated window head
    minus reference head, i.e. ``e`` delayed by the backward shift count of
    the scheme.
    """

    columns: list
    units: list
    data: np.ndarray
    meta: dict

    def column(self, name):
        return self.data[:, self.columns.index(name)]

    def block(self, prefix):
        idx = [i for i, c in enumerate(self.columns) if c.startswith(prefix)]
        return self.data[:, idx]

    @property
    def t(self):
        return self.column("t")

    @property
    def n_rows(self):
        return self.data.shape[0]


def _schema(model, nz):
    cols = [("t", "s"), ("k", "-")]
    cols += list(model.state_labels)
    cols += list(model.xbar_labels)
    cols += [(f"z{i + 1}", "m") for i in range(nz)]
    cols += list(model.input_labels)
    out = model.output_labels
    cols += [(f"{n}_d", u) for n, u in out]
    cols += list(out)
    cols += [(f"e_{n}", u) for n, u in out]
    cols += [(f"ed_{n}", u) for n, u in out]
    names = [model.state_labels[i][0] for i in model.position_indices]
    cols += [(f"ep_{n}", "m") for n in names]
    cols += [("fault", "-"), ("faulted", "-")]
    return [c for c, _ in cols], [u for _, u in cols]


_STAGE_CODES = {None: 1, "transform": 1, "psi_hat": 2, "feedback": 3, "input": 4}


def run_closed_loop(cfg: SimConfig, model=None, controller=None) -> SimRecord:
    """Simulate the sampled-data loop described by ``cfg``.

    Construction problems raise before the loop starts.  Controller faults
    inside the loop hold the previous input and are flagged in the record;
    a numeric blow-up of the plant ends the run early and is noted in
    ``meta["status"]``.
    """
    model = model or build_model(cfg)
    ctrl = controller or build_controller(cfg, model)
    traj = reference_from(cfg)
    sys = model.system
    change = model.change
    x = initial_state(cfg, model, traj)
    Ts, N = cfg.Ts, cfg.steps
    offset = -ctrl.source_r1
    columns, units = _schema(model, len(ctrl.z_select))
    rows = []
    u_prev = model.hover_input()
    faulted = 0
    n_faults = 0
    status = "completed"
    settings = ImplicitStepSettings(Ts)
    ctrl.init_state(sample_reference(traj, 0, Ts, ctrl.R, offset))
    pos = list(model.position_indices)

    for k in range(N + 1):
        t = k * Ts
        ref = sample_reference(traj, k, Ts, ctrl.R, offset)
        fault = 0
        try:
            u = ctrl.control_step(x, ref)
            if not np.all(np.isfinite(u)):
                raise ControllerFault("non-finite input", "input")
        except ControllerFault as exc:
            fault = _STAGE_CODES.get(exc.stage, 1)
            n_faults += 1
            faulted = 1
            u = u_prev
            log.warning("controller fault at k=%d (%s): %s", k, exc.stage, exc)
        xb = change.state_fwd(x)
        y = model.flat_output(x)
        y_d = traj(t)
        if fault or ctrl.last_window is None:
            e_design = np.full(ctrl.m, np.nan)
        else:
            e_design = ctrl.last_window[0] - ref[0]
        x_d = model.state_on_reference(traj, t)
        rows.append(np.concatenate([[t, k], x, xb, ctrl.z, u, y_d, y, y - y_d, e_design,
                                    x[pos] - x_d[pos], [fault, faulted]]))
        u_prev = u
        if k == N:
            break
        try:
            if cfg.plant == "continuous":
                x, _ = rk4_integrate(sys, x, u, cfg.Tn, Ts, t0=t, return_trajectory=False)
            else:
                step = implicit_step(model.state_only, xb, u, settings)[0] \
                    if cfg.scheme == "implicit" else explicit_step(model.state_only, xb, u, Ts)
                x = change.state_inv(step)
                if not np.all(np.isfinite(x)):
                    raise NumericError(f"state became non-finite at t={t + Ts:.6g}", time=t + Ts)
        except FlatnessError as exc:
            status = f"plant failure: {exc}"
            log.error("run stopped at t=%.6g: %s", t, exc)
            break

    meta = {
        "config": cfg.to_dict(),
        "status": status,
        "faults": n_faults,
        "R1": int(ctrl.source_r1),
        "R": int(ctrl.R),
        "gains": [a.tolist() for a in ctrl.gains],
        "versions": {"flatdisc": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    return SimRecord(columns, units, np.array(rows), meta)


def settling_index(err_norm, band):
    """First sample from which ``err_norm`` stays within ``band``; None if never."""
    err_norm = np.asarray(err_norm, dtype=float)
    outside = np.flatnonzero(~(err_norm <= band))
    if outside.size == 0:
        return 0
    k = int(outside[-1]) + 1
    return k if k < err_norm.size else None


def metrics(record: SimRecord, amplitude):
    """RMS/max flat-output and position errors, 2% settling index, faults.

    The band is ``0.02 * amplitude`` (1 m when the maneuver has zero size).
    """
    e = np.linalg.norm(record.block("e_y"), axis=1)
    ep = np.linalg.norm(record.block("ep_"), axis=1)
    band = SETTLING_FRACTION * (amplitude if amplitude > 0 else 1.0)
    finite = bool(np.all(np.isfinite(record.data[:, :-2])))
    return {
        "rms_flat": float(np.sqrt(np.mean(e ** 2))),
        "max_flat": float(np.max(e)),
        "rms_pos": float(np.sqrt(np.mean(ep ** 2))),
        "max_pos": float(np.max(ep)),
        "settling_index": settling_index(e, band),
        "band": band,
        "faults": int(record.meta["faults"]),
        "finite": finite,
        "rows": record.n_rows,
        "status": record.meta["status"],
    }


@dataclass
class Comparison:
    records: dict
    metrics: dict

    def table(self):
        keys = ("rms_flat", "max_flat", "rms_pos", "max_pos", "settling_index", "faults")
        lines = [f"{'scheme':<10}" + "".join(f"{k:>16}" for k in keys)]
        for scheme, mt in self.metrics.items():
            cells = []
            for k in keys:
                v = mt[k]
                cells.append(f"{v:>16.6g}" if isinstance(v, float) else f"{str(v):>16}")
            lines.append(f"{scheme:<10}" + "".join(cells))
        return "\n".join(lines)


def compare_schemes(cfg: SimConfig) -> Comparison:
    """Run the implicit- and explicit-based controllers on the same plant."""
    records, mets = {}, {}
    amp = maneuver_amplitude(cfg)
    for scheme in SCHEMES:
        rec = run_closed_loop(cfg.replace(scheme=scheme))
        records[scheme] = rec
        mets[scheme] = metrics(rec, amp)
    return Comparison(records, mets)


def sweep(cfg: SimConfig, ts_values, schemes=SCHEMES):
    """Metrics over a grid of sampling times; returns a list of rows."""
    out = []
    amp = maneuver_amplitude(cfg)
    for Ts in ts_values:
        for scheme in schemes:
            rec = run_closed_loop(cfg.replace(Ts=float(Ts), scheme=scheme))
            out.append({"Ts": float(Ts), "scheme": scheme, **metrics(rec, amp)})
    return out


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def export_csv(record: SimRecord, path, extra_meta=None):
    """Write ``record`` as CSV plus a JSON metadata sidecar.

    The header holds ``name[unit]`` per column; values use 17 significant
    digits so that re-reading reproduces the record.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{c}[{u}]" for c, u in zip(record.columns, record.units)])
        for row in record.data:
            w.writerow([f"{v:.17g}" for v in row])
    meta = dict(record.meta)
    if extra_meta:
        meta.update(extra_meta)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, default=_json_default))
    return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def read_csv(path):
    """Parse a file written by :func:`export_csv` back into a :class:`SimRecord`."""
    path = Path(path)
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r])
    cols, units = [], []
    for h in header:
        name, unit = h[:-1].split("[", 1)
        cols.append(name)
        units.append(unit)
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return SimRecord(cols, units, data, meta)


def fit_poles(err, order, start=0, stop=None):
    """Poles of the linear recursion that best explains an error sequence.

    Fits ``e[k+r] = -sum_i a_i e[k+i]`` by least squares and returns the
    roots of ``z^r + a_{r-1} z^{r-1} + ... + a_0``.
    """
    e = np.asarray(err, dtype=float)[start:stop]
    rows = e.size - order
    if rows < order:
        raise ValueError("sequence too short for the requested order")
    A = np.array([e[k:k + order] for k in range(rows)])
    b = e[order:order + rows]
    a, *_ = np.linalg.lstsq(A, -b, rcond=None)
    return np.roots(np.r_[1.0, a[::-1]])

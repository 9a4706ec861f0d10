"""Fixed-step explicit Runge-Kutta integration and trajectory storage.

The stepper is duck-typed: states may be numpy arrays or autodiff ``Var``
handles, so the same code advances production runs and the unrolled
rollouts inside training losses.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var
from .errors import BlowupError, FormatError

BLOWUP_LIMIT = 1e12

_MAGIC = b"SGNT"
_VERSION = 1


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients of an s-stage explicit Runge-Kutta scheme."""

    name: str
    a: np.ndarray  # (s, s), strictly lower triangular
    b: np.ndarray  # (s,)
    c: np.ndarray  # (s,)

    @property
    def stages(self):
        return len(self.b)

    def validate(self, tol=1e-14):
        """Check explicitness and the consistency conditions."""
        s = self.stages
        if s < 1:
            raise ValueError("tableau needs at least one stage")
        if self.a.shape != (s, s) or self.c.shape != (s,):
            raise ValueError("tableau coefficient shapes disagree")
        if np.any(np.triu(self.a) != 0.0):
            raise ValueError(f"{self.name}: a is not strictly lower triangular")
        if abs(self.b.sum() - 1.0) > tol:
            raise ValueError(f"{self.name}: sum(b) = {self.b.sum()!r} != 1")
        row = self.a.sum(axis=1)
        if np.max(np.abs(row - self.c)) > 10 * tol:
            raise ValueError(f"{self.name}: c_i != sum_j a_ij")

    def active_stages(self):
        """Stages whose slope actually reaches the update (b_i or a chain)."""
        s = self.stages
        active = [False] * s
        for i in range(s - 1, -1, -1):
            used = self.b[i] != 0.0 or any(
                active[j] and self.a[j, i] != 0.0 for j in range(i + 1, s)
            )
            active[i] = used
        return active


def tableau_rk4():
    """Classical fourth-order scheme."""
    a = np.zeros((4, 4))
    a[1, 0] = 0.5
    a[2, 1] = 0.5
    a[3, 2] = 1.0
    b = np.array([1 / 6, 1 / 3, 1 / 3, 1 / 6])
    c = np.array([0.0, 0.5, 0.5, 1.0])
    tab = ButcherTableau("rk4", a, b, c)
    tab.validate()
    return tab


def tableau_tsit5():
    """Tsitouras' 7-stage fifth-order scheme (2011 coefficients).

    The seventh stage carries zero weight in the propagating solution (it
    belongs to the embedded pair) and is skipped by the stepper.
    """
    a = np.zeros((7, 7))
    a[1, 0] = 0.161
    a[2, 0] = -0.008480655492356989
    a[2, 1] = 0.335480655492357
    a[3, 0] = 2.8971530571054935
    a[3, 1] = -6.359448489975075
    a[3, 2] = 4.3622954328695815
    a[4, 0] = 5.325864828439257
    a[4, 1] = -11.748883564062828
    a[4, 2] = 7.4955393428898365
    a[4, 3] = -0.09249506636175525
    a[5, 0] = 5.86145544294642
    a[5, 1] = -12.92096931784711
    a[5, 2] = 8.159367898576159
    a[5, 3] = -0.071584973281401
    a[5, 4] = -0.028269050394068383
    b = np.array([
        0.09646076681806523,
        0.01,
        0.4798896504144996,
        1.379008574103742,
        -3.290069515436081,
        2.324710524099774,
        0.0,
    ])
    a[6, :] = b
    c = np.array([0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0])
    tab = ButcherTableau("tsit5", a, b, c)
    tab.validate()
    return tab


_TABLEAUS = {"rk4": tableau_rk4, "tsit5": tableau_tsit5}


def get_tableau(name):
    try:
        return _TABLEAUS[name]()
    except KeyError:
        raise ValueError(f"unknown tableau {name!r}; choose from {sorted(_TABLEAUS)}")


@dataclass(frozen=True)
class Rhs:
    """Right-hand side f(t, u) with a declared state dimension."""

    fn: object
    dim: int

    def __call__(self, t, u):
        return self.fn(t, u)


def _raw(u):
    return u.value if isinstance(u, Var) else u


def _check_stage(v, stage, t):
    m = float(np.max(np.abs(v)))
    if not (m <= BLOWUP_LIMIT):  # NaN fails the comparison too
        sample = None
        if np.ndim(v) == 2:  # batched rollout: name the offending row
            rows = np.max(np.abs(v), axis=-1)
            bad = ~(rows <= BLOWUP_LIMIT)
            sample = int(np.argmax(bad))
        raise BlowupError(
            f"non-finite or blown-up value at stage {stage} (t={t:.6g})"
            + (f", sample {sample}" if sample is not None else ""),
            stage=stage,
            time=t,
            sample=sample,
        )


def erk_step(tableau, rhs, t, u, dt):
    """One explicit RK step from (t, u) to t + dt.

    `u` may be a numpy array (any leading batch shape) or a tape Var;
    the arithmetic records itself in the latter case.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    a, b, c = tableau.a, tableau.b, tableau.c
    active = tableau.active_stages()
    ks = []
    for i in range(tableau.stages):
        if not active[i]:
            ks.append(None)
            continue
        ui = u
        for j in range(i):
            if a[i, j] != 0.0:
                ui = ui + (dt * a[i, j]) * ks[j]
        ki = rhs(t + c[i] * dt, ui)
        _check_stage(_raw(ki), i, t)
        ks.append(ki)
    out = u
    for i in range(tableau.stages):
        if b[i] != 0.0:
            out = out + (dt * b[i]) * ks[i]
    return out


@dataclass
class Trajectory:
    """Uniformly sampled time series of flat state vectors."""

    t0: float
    dt: float
    states: np.ndarray  # (n_steps + 1, d)
    meta: dict = field(default_factory=dict)

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.states.shape[0])

    @property
    def dim(self):
        return self.states.shape[1]

    def __len__(self):
        return self.states.shape[0]


def integrate(tableau, rhs, u0, t0, dt, n_steps, meta=None):
    """March n_steps fixed steps; returns all n_steps + 1 states."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    u0 = np.asarray(u0, dtype=np.float64)
    if isinstance(rhs, Rhs) and u0.shape[-1] != rhs.dim:
        raise ValueError(f"state dim {u0.shape[-1]} != rhs dim {rhs.dim}")
    states = np.empty((n_steps + 1, u0.size), dtype=np.float64)
    states[0] = u0.ravel()
    u = u0
    t = t0
    for n in range(n_steps):
        try:
            u = erk_step(tableau, rhs, t, u, dt)
        except BlowupError as e:
            e.step = n
            raise
        if not float(np.max(np.abs(u))) <= BLOWUP_LIMIT:
            raise BlowupError(
                f"state blew up after step {n} (t={t:.6g})", step=n, time=t
            )
        states[n + 1] = np.ravel(u)
        t = t0 + (n + 1) * dt
    return Trajectory(t0=t0, dt=dt, states=states, meta=dict(meta or {}))


def save_trajectory(traj, path):
    """Binary layout: magic, u32 version, u32 d, u64 count, f64 t0, f64 dt,
    count*d little-endian f64 states, u32-length-prefixed UTF-8 JSON meta."""
    states = np.ascontiguousarray(traj.states, dtype="<f8")
    count, d = states.shape
    blob = json.dumps(traj.meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIQdd", _VERSION, d, count, traj.t0, traj.dt))
        f.write(states.tobytes())
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def load_trajectory(path):
    with open(path, "rb") as f:
        head = f.read(4)
        if head != _MAGIC:
            raise FormatError(f"{path}: bad magic {head!r}, expected {_MAGIC!r}")
        fixed = f.read(struct.calcsize("<IIQdd"))
        if len(fixed) != struct.calcsize("<IIQdd"):
            raise FormatError(f"{path}: truncated header")
        version, d, count, t0, dt = struct.unpack("<IIQdd", fixed)
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        payload = f.read(count * d * 8)
        if len(payload) != count * d * 8:
            raise FormatError(f"{path}: truncated state block")
        states = np.frombuffer(payload, dtype="<f8").reshape(count, d).copy()
        lenb = f.read(4)
        if len(lenb) != 4:
            raise FormatError(f"{path}: missing metadata length")
        (blob_len,) = struct.unpack("<I", lenb)
        blob = f.read(blob_len)
        if len(blob) != blob_len:
            raise FormatError(f"{path}: truncated metadata")
        meta = json.loads(blob.decode("utf-8"))
    return Trajectory(t0=t0, dt=dt, states=states, meta=meta)

"""Error metrics, kinetic energy spectra, timestep sweeps, and CSV exports.

Spectrum convention, pinned by the sin(x) anchor: with U the unnormalized
N-point transform of the uniform samples, the per-side density is
E_side(k) = |U(k)|^2 / (2 N^2) and the reported spectrum folds the two
directions, E(k) = E_side(k) + E_side(-k) for k = 1 .. N/2-1.  For
u = sin(x) this yields E(1) = 1/4 and, for zero-mean Nyquist-free signals,
sum_k E(k) equals the discrete kinetic energy (1/2N) sum_i u_i^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dg
from .errors import BlowupError
from .mlp import forward_params
from .ode import get_tableau, integrate
from .training import predict_discrete

FLOAT_FMT = ".17g"


@dataclass
class ErrorReport:
    times: np.ndarray
    l2: np.ndarray       # broken-L2 error per shared time
    rel: np.ndarray      # l2 / ||ref||
    max_abs: np.ndarray  # max nodal |difference| per shared time

    @property
    def max_l2(self):
        return float(np.max(self.l2))

    @property
    def max_rel(self):
        return float(np.max(self.rel))


@dataclass
class Spectrum:
    k: np.ndarray  # wavenumbers 1 .. N/2-1
    e: np.ndarray  # folded energy density


def _align(pred, ref):
    """Shared (pred indices, ref indices) when one dt is an integer multiple
    of the other and start times coincide; no interpolation ever."""
    if abs(pred.t0 - ref.t0) > 1e-12 * max(1.0, abs(ref.t0)):
        raise ValueError(f"start times differ: {pred.t0} vs {ref.t0}")
    ratio = pred.dt / ref.dt
    if ratio >= 1.0:
        k = int(round(ratio))
        if abs(ratio - k) > 1e-9 * ratio:
            raise ValueError(f"incompatible timesteps {pred.dt} vs {ref.dt}")
        n = min(len(pred) - 1, (len(ref) - 1) // k)
        return np.arange(n + 1), np.arange(n + 1) * k
    k = int(round(1.0 / ratio))
    if abs(1.0 / ratio - k) > 1e-9 / ratio:
        raise ValueError(f"incompatible timesteps {pred.dt} vs {ref.dt}")
    n = min(len(ref) - 1, (len(pred) - 1) // k)
    return np.arange(n + 1) * k, np.arange(n + 1)


def compare_fields(pred, ref, mesh):
    """Broken-L2, relative, and max-nodal errors at every shared time."""
    ip, ir = _align(pred, ref)
    dstates = pred.states[ip] - ref.states[ir]
    l2 = dg.states_dg_norm(mesh, dstates)
    ref_norm = dg.states_dg_norm(mesh, ref.states[ir])
    rel = l2 / np.where(ref_norm > 0, ref_norm, 1.0)
    max_abs = np.max(np.abs(dstates), axis=1)
    times = ref.t0 + ref.dt * ir
    return ErrorReport(times=times, l2=l2, rel=rel, max_abs=max_abs)


def spectrum_of_samples(u):
    """Folded energy spectrum of one period of uniform samples."""
    u = np.asarray(u, dtype=np.float64)
    n = u.size
    if n < 4 or n & (n - 1):
        raise ValueError("need a power-of-two number of samples")
    side = np.abs(np.fft.fft(u)) ** 2 / (2.0 * n * n)
    ks = np.arange(1, n // 2)
    return Spectrum(k=ks, e=side[ks] + side[n - ks])


def energy_spectrum(field, n_pts):
    """Spectrum of a DG field sampled at n_pts uniform points."""
    return spectrum_of_samples(dg.eval_uniform(field, n_pts))


def log_spectrum_distance(spec_a, spec_b, k_lo=1, k_hi=None):
    """L2 distance between log energy spectra over a shared wavenumber band."""
    if spec_a.k.size != spec_b.k.size or np.any(spec_a.k != spec_b.k):
        raise ValueError("spectra live on different wavenumber grids")
    hi = int(spec_a.k[-1]) if k_hi is None else min(int(k_hi), int(spec_a.k[-1]))
    mask = (spec_a.k >= k_lo) & (spec_a.k <= hi)
    la = np.log(np.maximum(spec_a.e[mask], 1e-300))
    lb = np.log(np.maximum(spec_b.e[mask], 1e-300))
    return float(np.sqrt(np.sum((la - lb) ** 2)))


def timestep_sweep(pde_cfg, mesh_low, params_cont, params_disc, ref, dt_list, eval_times, tableau="rk4"):
    """Relative errors of the continuous and discrete corrections per dt.

    Returns rows (method, dt, time, rel_err); a blown-up run records
    float('inf') instead of aborting the sweep.
    """
    rhs_low = dg.rhs_semidiscrete(pde_cfg, mesh_low)
    tab = get_tableau(tableau) if isinstance(tableau, str) else tableau
    u0 = ref.states[0]
    horizon = max(eval_times)
    rows = []
    for dt in dt_list:
        n_steps = int(round(horizon / dt))
        for method, params in (("continuous", params_cont), ("discrete", params_disc)):
            try:
                if method == "continuous":
                    def fn(t, u, _p=params):
                        return rhs_low(t, u) + forward_params(_p, u)
                    traj = integrate(tab, fn, u0, ref.t0, dt, n_steps)
                else:
                    traj = predict_discrete(params, rhs_low, tab, u0, dt, n_steps, t0=ref.t0)
            except BlowupError:
                rows.extend((method, dt, t_eval, float("inf")) for t_eval in eval_times)
                continue
            rep = compare_fields(traj, ref, mesh_low)
            for t_eval in eval_times:
                j = int(np.argmin(np.abs(rep.times - t_eval)))
                if abs(rep.times[j] - t_eval) > 1e-9 + 1e-6 * dt:
                    rows.append((method, dt, t_eval, float("nan")))
                else:
                    rows.append((method, dt, t_eval, float(rep.rel[j])))
    return rows


def export_xt(traj, path, mesh=None):
    """Long-format CSV of (t, x, u), t-major then x; 17 significant digits.

    With a mesh, x is the physical nodal coordinate; without one, the
    component index.
    """
    if mesh is not None:
        xs = mesh.node_coords().reshape(-1)
    else:
        xs = np.arange(traj.dim, dtype=np.float64)
    times = traj.times
    with open(path, "w") as f:
        f.write("t,x,u\n")
        for i, t in enumerate(times):
            row = traj.states[i]
            for x, u in zip(xs, row):
                f.write(f"{t:{FLOAT_FMT}},{x:{FLOAT_FMT}},{u:{FLOAT_FMT}}\n")


def write_error_report(report, path):
    with open(path, "w") as f:
        f.write("t,l2_error,rel_error,max_abs\n")
        for t, a, b, c in zip(report.times, report.l2, report.rel, report.max_abs):
            f.write(f"{t:{FLOAT_FMT}},{a:{FLOAT_FMT}},{b:{FLOAT_FMT}},{c:{FLOAT_FMT}}\n")


def write_spectrum(spec, path):
    with open(path, "w") as f:
        f.write("k,E\n")
        for k, e in zip(spec.k, spec.e):
            f.write(f"{int(k)},{e:{FLOAT_FMT}}\n")


def write_sweep(rows, path):
    with open(path, "w") as f:
        f.write("method,dt,t,rel_error\n")
        for method, dt, t, err in rows:
            f.write(f"{method},{dt:{FLOAT_FMT}},{t:{FLOAT_FMT}},{err:{FLOAT_FMT}}\n")

"""Two-scale Lorenz 96 dynamics and the neural-source variant.

State layout is a flat vector [X_1..X_K, Y_flat] where the fast variables
form a single ring of length K*J in k-major blocks: Y_flat[k*J + j] holds
the j-th fast variable attached to slow component k, and the j+1 neighbour
of the last entry in block k is the first entry of block k+1 (cyclic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import mlp
from .errors import BlowupError
from .ode import Rhs, integrate, tableau_rk4


@dataclass(frozen=True)
class L96Config:
    K: int = 36       # slow components
    J: int = 10       # fast components per slow component
    c: float = 10.0   # time-scale separation
    h: float = 1.0    # coupling strength
    F: float = 10.0   # forcing
    source_scope: str = "global"  # whole-X source net; "per_component" shares
                                  # one scalar map across the ring

    def __post_init__(self):
        if self.K < 4:
            raise ValueError("K must be >= 4 (cyclic stencil needs 3 neighbours)")
        if self.J < 1 or self.c <= 0:
            raise ValueError("J must be >= 1 and c > 0")
        if self.source_scope not in ("per_component", "global"):
            raise ValueError(f"unknown source_scope {self.source_scope!r}")

    @property
    def dim(self):
        return self.K * (1 + self.J)

    @property
    def source_dims(self):
        """(d_in, d_out) of the source net under the configured scope."""
        return (1, 1) if self.source_scope == "per_component" else (self.K, self.K)


def _slow_tendency(cfg, x, coupling):
    adv = -ad.roll(x, 1, -1) * (ad.roll(x, 2, -1) - ad.roll(x, -1, -1))
    return adv - x + cfg.F + coupling


def _fast_tendency(cfg, x, y):
    adv = -cfg.J * ad.roll(y, -1, -1) * (ad.roll(y, -2, -1) - ad.roll(y, 1, -1))
    drive = (cfg.h / cfg.J) * ad.repeat_elems(x, cfg.J, -1)
    return cfg.c * (adv - y + drive)


def fast_block_mean(cfg, y):
    """Per-slow-component mean of the attached fast variables (numpy only)."""
    y = np.asarray(y)
    return y.reshape(y.shape[:-1] + (cfg.K, cfg.J)).mean(axis=-1)


def coupling_term(cfg, z):
    """The exact slow-equation coupling -h * mean_j Y_jk; z is (..., dim)."""
    y = np.asarray(z)[..., cfg.K:]
    return -cfg.h * fast_block_mean(cfg, y)


def rhs_coupled(cfg):
    """Full two-scale dynamics (truth model); numpy states only."""
    K = cfg.K

    def fn(t, z):
        x = z[..., :K]
        y = z[..., K:]
        dx = _slow_tendency(cfg, x, -cfg.h * fast_block_mean(cfg, y))
        dy = _fast_tendency(cfg, x, y)
        return np.concatenate([dx, dy], axis=-1)

    return Rhs(fn, cfg.dim)


def _source(cfg, weights, biases, x):
    if cfg.source_scope == "per_component":
        return mlp.forward_per_component(weights, biases, x)
    flat = x.ndim == 1
    x2 = ad.reshape(x, (1, -1)) if flat else x
    out = mlp.forward(weights, biases, x2)
    return ad.reshape(out, (-1,)) if flat else out


def rhs_slow_neural(cfg, params):
    """Slow equation alone with the trained source standing in for coupling."""
    mlp.require_dims(params, *cfg.source_dims)

    def fn(t, x):
        return _slow_tendency(cfg, x, _source(cfg, params.weights, params.biases, x))

    return Rhs(fn, cfg.K)


def rhs_coupled_neural(cfg, weights, biases):
    """Neural-source slow equation plus the unchanged fast equation.

    Generic over numpy arrays and tape Vars: used for training rollouts over
    the full state and for uncoupled-baseline comparisons.
    """
    K, J = cfg.K, cfg.J

    def fn(t, z):
        x = ad.narrow(z, -1, 0, K)
        y = ad.narrow(z, -1, K, K * J)
        dx = _slow_tendency(cfg, x, _source(cfg, weights, biases, x))
        dy = _fast_tendency(cfg, x, y)
        return ad.concatenate([dx, dy], axis=-1)

    return fn


def random_initial_state(cfg, rng):
    x = rng.uniform(-5.0, 5.0, size=cfg.K)
    y = rng.uniform(-0.5, 0.5, size=cfg.K * cfg.J)
    return np.concatenate([x, y])


def generate_truth(cfg, n_traj, dt, spinup_t, t_final, seed, tableau=None):
    """Spin up from random states, then record t_final/dt steps per trajectory."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    tab = tableau or tableau_rk4()
    rhs = rhs_coupled(cfg)
    n_spin = int(round(spinup_t / dt))
    n_keep = int(round(t_final / dt))
    out = []
    for i in range(n_traj):
        rng = np.random.Generator(np.random.PCG64(seed + i))
        z0 = random_initial_state(cfg, rng)
        try:
            if n_spin:
                z0 = integrate(tab, rhs, z0, 0.0, dt, n_spin).states[-1]
            traj = integrate(tab, rhs, z0, 0.0, dt, n_keep)
        except BlowupError as e:
            e.sample = i
            raise
        traj.meta = {
            "model": "l96",
            "K": str(cfg.K),
            "J": str(cfg.J),
            "c": repr(cfg.c),
            "h": repr(cfg.h),
            "F": repr(cfg.F),
            "spinup": repr(spinup_t),
            "seed": str(seed + i),
        }
        out.append(traj)
    return out

"""Ionic model package: TTP06 kernels with compiled/numpy backend selection.

The Rush-Larsen stepper is the hot loop of every tissue simulation; a
Cython build is used when present and the vectorized numpy twin
otherwise. `BACKEND` records which one was picked at import time.
"""

import numpy as np

from . import ttp06
from .ttp06 import (
    BASE_CONDUCTANCES,
    ConductanceSet,
    GREY_FACTORS,
    INITIAL_STATE,
    N_STATES,
    QUIESCENT_STATE,
    StepRejected,
    rhs,
    scale_conductances,
    scale_factors,
    u_from_v,
    v_from_u,
)

try:
    from . import _ttp06_cy

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on build environment
    _ttp06_cy = None
    BACKEND = "numpy"


def rush_larsen_step(y, dt_ms, factors, i_app=None, update_v=True, backend=None):
    """One ionic step over all nodes; dispatches to the selected backend.

    y: (19, N) C-contiguous state, updated in place. factors: the four
    (N,) conductance scale arrays. i_app in V/s (== mV/ms). Returns the
    reaction dV/dt (mV/ms) evaluated with the updated gates.
    """
    which = backend or BACKEND
    if which == "compiled" and _ttp06_cy is not None:
        n = y.shape[1]
        if i_app is None:
            i_app = np.zeros(n)
        dvdt = np.empty(n)
        fna, fcal, fkr, fks = (np.ascontiguousarray(f, dtype=float) for f in factors)
        bad = _ttp06_cy.step(y, dt_ms, fna, fcal, fkr, fks,
                             np.ascontiguousarray(i_app, dtype=float), dvdt, update_v)
        if bad:
            raise StepRejected("non-finite ionic current")
        return dvdt
    return ttp06.step_np(y, dt_ms, factors, i_app=i_app, update_v=update_v)


def make_state(n_nodes, resting=None):
    """Tile a resting state into a (19, N) array."""
    base = ttp06.INITIAL_STATE if resting is None else np.asarray(resting)
    return np.ascontiguousarray(np.repeat(base[:, None], n_nodes, axis=1))


def ionic_rhs(state, eta=1.0, i_app_V_per_s=0.0):
    """Time derivatives in the nondimensional tissue convention.

    state: (19,) or (19, N). Returns (du_dt [1/s], dgates_dt [1/s] for the
    13 gating rows, dconc_dt [mM/s]) matching the split of the state into
    u, gating vector and concentrations.
    """
    y = np.asarray(state, dtype=float)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    factors = scale_factors(np.full(y.shape[1], eta))
    ydot = rhs(y, factors, i_app=np.asarray(i_app_V_per_s))
    du_dt = ydot[0] * 1000.0 / ttp06.V_SCALE_MV
    gate_rows = ttp06.GATE_ROWS + [ttp06.RYR_ROW]
    dw_dt = ydot[gate_rows] * 1000.0
    dz_dt = ydot[ttp06.CONC_ROWS] * 1000.0
    if squeeze:
        return du_dt[0], dw_dt[:, 0], dz_dt[:, 0]
    return du_dt, dw_dt, dz_dt

"""Single-cell pacing driver and action-potential metrics."""

from dataclasses import dataclass

import numpy as np

from . import make_state, rush_larsen_step, scale_factors, ttp06


@dataclass
class CellTrace:
    t_s: np.ndarray
    v_mv: np.ndarray
    ca_i_mM: np.ndarray
    eta: float
    bcl_s: float
    # metrics of the final beat
    apd90_ms: float
    peak_v_mv: float
    rest_v_mv: float
    peak_ca_uM: float
    max_dvdt_mV_per_ms: float


def apd90(t_ms, v_mv):
    """APD90 of a single beat: max-upstroke time to 90%-repolarization."""
    v = np.asarray(v_mv)
    t = np.asarray(t_ms)
    dv = np.diff(v)
    i_act = int(np.argmax(dv))
    v_rest = v[0]
    v_peak = v.max()
    v90 = v_peak - 0.9 * (v_peak - v_rest)
    i_peak = int(np.argmax(v))
    below = np.flatnonzero(v[i_peak:] < v90)
    if below.size == 0:
        return float("nan")
    return float(t[i_peak + below[0]] - t[i_act])


def run_single_cell(eta, bcl_s, n_beats, dt_s=5e-5,
                    stim_amp_V_per_s=35.0, stim_dur_s=1e-3, stride=20):
    """Pace one cell at a fixed cycle length and report final-beat metrics.

    The stimulus is the tissue current amplitude but shortened to 1 ms so
    the recorded peak V is the intrinsic action-potential peak. Output is
    subsampled by `stride` steps.
    """
    if n_beats < 1:
        raise ValueError("n_beats must be >= 1")
    bcl_ms = bcl_s * 1000.0
    dt_ms = dt_s * 1000.0
    stim_ms = stim_dur_s * 1000.0
    y = make_state(1)
    factors = scale_factors(np.full(1, eta))
    stim = np.array([stim_amp_V_per_s])

    n_steps = int(round(n_beats * bcl_ms / dt_ms))
    last_start = (n_beats - 1) * bcl_ms
    ts, vs, cas = [], [], []
    for k in range(n_steps):
        t = k * dt_ms
        in_stim = (t % bcl_ms) < stim_ms
        rush_larsen_step(y, dt_ms, factors, i_app=stim if in_stim else None)
        if k % stride == 0:
            ts.append((t + dt_ms) / 1000.0)
            vs.append(y[0, 0])
            cas.append(y[13, 0])

    t_arr = np.array(ts)
    v_arr = np.array(vs)
    ca_arr = np.array(cas)
    final = t_arr >= last_start / 1000.0
    tf, vf = t_arr[final] * 1000.0, v_arr[final]
    dvdt_max = float(np.max(np.diff(vf)) / (dt_ms * stride))
    return CellTrace(
        t_s=t_arr,
        v_mv=v_arr,
        ca_i_mM=ca_arr,
        eta=float(eta),
        bcl_s=float(bcl_s),
        apd90_ms=apd90(tf, vf),
        peak_v_mv=float(vf.max()),
        rest_v_mv=float(vf[0]),
        peak_ca_uM=float(ca_arr[final].max() * 1000.0),
        max_dvdt_mV_per_ms=dvdt_max,
    )


def settle_with_bdf(eta=1.0, duration_s=10.0, y0=None, rtol=1e-8, atol=1e-10):
    """Independent stiff-integrator settle, used as a test oracle."""
    from scipy.integrate import solve_ivp

    factors = tuple(np.full(1, f) for f in scale_factors(eta))

    def f(_t, y):
        return ttp06.rhs(y[:, None], factors, 0.0)[:, 0]

    y0 = ttp06.INITIAL_STATE if y0 is None else y0
    sol = solve_ivp(f, (0.0, duration_s * 1000.0), y0, method="BDF",
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"BDF settle failed: {sol.message}")
    return sol.y[:, -1]

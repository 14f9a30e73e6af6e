"""Closed-loop 0D cardiovascular model and the 2-element Windkessel.

Clinical units throughout: mmHg, mL, s. Four time-varying-elastance
chambers, four RLC vascular compartments and diode-like valves; the LV
chamber law can be bypassed so the 3D model imposes p_LV. The afterload
Windkessel runs in SI units (Pa, m^3) like the tissue models.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

# c1 (differential) layout
IV_LA, IV_LV, IV_RA, IV_RV = 0, 1, 2, 3
IP_AR_SYS, IP_VEN_SYS, IP_AR_PUL, IP_VEN_PUL = 4, 5, 6, 7
IQ_AR_SYS, IQ_VEN_SYS, IQ_AR_PUL, IQ_VEN_PUL = 8, 9, 10, 11
C1_NAMES = [
    "V_LA", "V_LV", "V_RA", "V_RV",
    "p_AR_SYS", "p_VEN_SYS", "p_AR_PUL", "p_VEN_PUL",
    "Q_AR_SYS", "Q_VEN_SYS", "Q_AR_PUL", "Q_VEN_PUL",
]
# c2 (algebraic) layout
JP_LV, JP_LA, JP_RV, JP_RA = 0, 1, 2, 3
JQ_MV, JQ_AV, JQ_TV, JQ_PV = 4, 5, 6, 7
C2_NAMES = ["p_LV", "p_LA", "p_RV", "p_RA", "Q_MV", "Q_AV", "Q_TV", "Q_PV"]


@dataclass(frozen=True)
class ChamberTiming:
    """Cosine-ramp activation clock (inherited formulation, configurable)."""

    t_contract: float
    dur_contract: float
    dur_relax: float

    def activation(self, t, period):
        tau = (t - self.t_contract) % period
        if tau < self.dur_contract:
            return 0.5 * (1.0 - math.cos(math.pi * tau / self.dur_contract))
        tau -= self.dur_contract
        if tau < self.dur_relax:
            return 0.5 * (1.0 + math.cos(math.pi * tau / self.dur_relax))
        return 0.0


@dataclass(frozen=True)
class CirculationParams:
    # external circulation (mmHg s/mL, mL/mmHg, mmHg s^2/mL)
    R_AR_SYS: float = 0.64
    R_AR_PUL: float = 0.032116
    R_VEN_SYS: float = 0.035684
    R_VEN_PUL: float = 0.1625
    C_AR_SYS: float = 1.2
    C_AR_PUL: float = 10.0
    C_VEN_SYS: float = 60.0
    C_VEN_PUL: float = 16.0
    L_AR_SYS: float = 5e-3
    L_AR_PUL: float = 5e-4
    L_VEN_SYS: float = 5e-4
    L_VEN_PUL: float = 5e-4
    # cardiac chambers (mmHg/mL, mL)
    E_LA_pass: float = 0.09
    E_RA_pass: float = 0.07
    E_RV_pass: float = 0.05
    E_LA_act_max: float = 0.07
    E_RA_act_max: float = 0.06
    E_RV_act_max: float = 0.55
    V0_LA: float = 4.0
    V0_RA: float = 4.0
    V0_RV: float = 10.0
    # valves
    R_min: float = 0.0075
    R_max: float = 75006.2
    # heartbeat period
    T: float = 0.92
    # surrogate LV elastance for standalone runs (not from the tables:
    # the LV is the 3D model in the coupled setting)
    E_LV_pass: float = 0.08
    E_LV_act_max: float = 2.0
    V0_LV: float = 5.0
    # activation clocks (absolute seconds within the cycle)
    atrial_timing: ChamberTiming = field(
        default_factory=lambda: ChamberTiming(0.80, 0.17, 0.17))
    ventricular_timing: ChamberTiming = field(
        default_factory=lambda: ChamberTiming(0.0, 0.34, 0.17))

    def __post_init__(self):
        pos = [self.R_AR_SYS, self.R_AR_PUL, self.R_VEN_SYS, self.R_VEN_PUL,
               self.C_AR_SYS, self.C_AR_PUL, self.C_VEN_SYS, self.C_VEN_PUL,
               self.L_AR_SYS, self.L_AR_PUL, self.L_VEN_SYS, self.L_VEN_PUL,
               self.T]
        if min(pos) <= 0:
            raise ValueError("resistances, capacitances, inductances and T must be positive")
        if not self.R_min < self.R_max:
            raise ValueError("valve R_min must be smaller than R_max")

    def to_json(self):
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        for key in ("atrial_timing", "ventricular_timing"):
            if key in d and isinstance(d[key], dict):
                d[key] = ChamberTiming(**d[key])
        return cls(**d)


def load_preset(name):
    """Healthy or pathological parameter set (Appendix tables)."""
    if name == "healthy":
        return CirculationParams()
    if name == "pathological":
        return CirculationParams(
            R_AR_SYS=1.0,
            R_VEN_SYS=0.26,
            R_VEN_PUL=0.035684,
            C_AR_SYS=0.8,
            E_RV_pass=0.3,
            E_RV_act_max=0.4,
            E_LA_act_max=0.14,
            V0_LA=5.0,
        )
    raise ValueError(f"unknown circulation preset {name!r}")


DEFAULT_INITIAL_STATE = np.array(
    [65.0, 115.0, 65.0, 145.0, 80.0, 22.0, 13.0, 18.0, 0.0, 0.0, 0.0, 0.0]
)


def valve_flow(dp, params):
    r = params.R_min if dp >= 0.0 else params.R_max
    return dp / r


def algebraic_state(t, c1, params, p_lv_external=None):
    """c2 = W(t, c1): chamber pressures and valve flows."""
    act_a = params.atrial_timing.activation(t, params.T)
    act_v = params.ventricular_timing.activation(t, params.T)
    p_la = (params.E_LA_pass + params.E_LA_act_max * act_a) * (c1[IV_LA] - params.V0_LA)
    p_ra = (params.E_RA_pass + params.E_RA_act_max * act_a) * (c1[IV_RA] - params.V0_RA)
    p_rv = (params.E_RV_pass + params.E_RV_act_max * act_v) * (c1[IV_RV] - params.V0_RV)
    if p_lv_external is None:
        p_lv = (params.E_LV_pass + params.E_LV_act_max * act_v) * (c1[IV_LV] - params.V0_LV)
    else:
        p_lv = p_lv_external
    q_mv = valve_flow(p_la - p_lv, params)
    q_av = valve_flow(p_lv - c1[IP_AR_SYS], params)
    q_tv = valve_flow(p_ra - p_rv, params)
    q_pv = valve_flow(p_rv - c1[IP_AR_PUL], params)
    return np.array([p_lv, p_la, p_rv, p_ra, q_mv, q_av, q_tv, q_pv])


def circulation_rhs(t, c1, params, p_lv_external=None, v_lv_external=None):
    """Differential rates D(t, c1, c2) and algebraic c2.

    p_lv_external bypasses the LV elastance law (3D coupling). If
    v_lv_external = (V_LV, dV_LV/dt) is given, that volume overrides the
    state entry and its rate replaces the flow balance for V_LV.
    """
    c1 = np.asarray(c1, dtype=float)
    if v_lv_external is not None:
        c1 = c1.copy()
        c1[IV_LV] = v_lv_external[0]
    c2 = algebraic_state(t, c1, params, p_lv_external=p_lv_external)
    p_lv, p_la, p_rv, p_ra, q_mv, q_av, q_tv, q_pv = c2
    d = np.empty(12)
    d[IV_LA] = c1[IQ_VEN_PUL] - q_mv
    d[IV_LV] = q_mv - q_av if v_lv_external is None else v_lv_external[1]
    d[IV_RA] = c1[IQ_VEN_SYS] - q_tv
    d[IV_RV] = q_tv - q_pv
    d[IP_AR_SYS] = (q_av - c1[IQ_AR_SYS]) / params.C_AR_SYS
    d[IP_VEN_SYS] = (c1[IQ_AR_SYS] - c1[IQ_VEN_SYS]) / params.C_VEN_SYS
    d[IP_AR_PUL] = (q_pv - c1[IQ_AR_PUL]) / params.C_AR_PUL
    d[IP_VEN_PUL] = (c1[IQ_AR_PUL] - c1[IQ_VEN_PUL]) / params.C_VEN_PUL
    d[IQ_AR_SYS] = (c1[IP_AR_SYS] - c1[IP_VEN_SYS] - params.R_AR_SYS * c1[IQ_AR_SYS]) / params.L_AR_SYS
    d[IQ_VEN_SYS] = (c1[IP_VEN_SYS] - p_ra - params.R_VEN_SYS * c1[IQ_VEN_SYS]) / params.L_VEN_SYS
    d[IQ_AR_PUL] = (c1[IP_AR_PUL] - c1[IP_VEN_PUL] - params.R_AR_PUL * c1[IQ_AR_PUL]) / params.L_AR_PUL
    d[IQ_VEN_PUL] = (c1[IP_VEN_PUL] - p_la - params.R_VEN_PUL * c1[IQ_VEN_PUL]) / params.L_VEN_PUL
    return d, c2


@lru_cache(maxsize=16)
def _flatten_params(p):
    at, vt = p.atrial_timing, p.ventricular_timing
    return (
        p.E_LA_pass, p.E_LA_act_max, p.V0_LA,
        p.E_RA_pass, p.E_RA_act_max, p.V0_RA,
        p.E_RV_pass, p.E_RV_act_max, p.V0_RV,
        p.E_LV_pass, p.E_LV_act_max, p.V0_LV,
        p.R_min, p.R_max,
        p.C_AR_SYS, p.C_VEN_SYS, p.C_AR_PUL, p.C_VEN_PUL,
        p.R_AR_SYS, p.R_VEN_SYS, p.R_AR_PUL, p.R_VEN_PUL,
        p.L_AR_SYS, p.L_VEN_SYS, p.L_AR_PUL, p.L_VEN_PUL,
        p.T,
        at.t_contract, at.dur_contract, at.dur_relax,
        vt.t_contract, vt.dur_contract, vt.dur_relax,
    )


def _ramp(t, t0, dc, dr, T):
    tau = (t - t0) % T
    if tau < dc:
        return 0.5 * (1.0 - math.cos(math.pi * tau / dc))
    tau -= dc
    if tau < dr:
        return 0.5 * (1.0 + math.cos(math.pi * tau / dr))
    return 0.0


def _rhs_fast(t, y, fp, p_lv_external, v_lv_external):
    """Scalar-arithmetic twin of circulation_rhs (hot loop)."""
    (ela_p, ela_a, v0la, era_p, era_a, v0ra, erv_p, erv_a, v0rv,
     elv_p, elv_a, v0lv, rmin, rmax,
     c_ar_s, c_ven_s, c_ar_p, c_ven_p,
     r_ar_s, r_ven_s, r_ar_p, r_ven_p,
     l_ar_s, l_ven_s, l_ar_p, l_ven_p, T,
     a_t0, a_dc, a_dr, v_t0, v_dc, v_dr) = fp
    v_la, v_lv, v_ra, v_rv, p_ar_s, p_ven_s, p_ar_p, p_ven_p, \
        q_ar_s, q_ven_s, q_ar_p, q_ven_p = y
    if v_lv_external is not None:
        v_lv = v_lv_external[0]
    act_a = _ramp(t, a_t0, a_dc, a_dr, T)
    act_v = _ramp(t, v_t0, v_dc, v_dr, T)
    p_la = (ela_p + ela_a * act_a) * (v_la - v0la)
    p_ra = (era_p + era_a * act_a) * (v_ra - v0ra)
    p_rv = (erv_p + erv_a * act_v) * (v_rv - v0rv)
    if p_lv_external is None:
        p_lv = (elv_p + elv_a * act_v) * (v_lv - v0lv)
    else:
        p_lv = p_lv_external
    dp = p_la - p_lv
    q_mv = dp / (rmin if dp >= 0.0 else rmax)
    dp = p_lv - p_ar_s
    q_av = dp / (rmin if dp >= 0.0 else rmax)
    dp = p_ra - p_rv
    q_tv = dp / (rmin if dp >= 0.0 else rmax)
    dp = p_rv - p_ar_p
    q_pv = dp / (rmin if dp >= 0.0 else rmax)
    dv_lv = q_mv - q_av if v_lv_external is None else v_lv_external[1]
    return (
        q_ven_p - q_mv,
        dv_lv,
        q_ven_s - q_tv,
        q_tv - q_pv,
        (q_av - q_ar_s) / c_ar_s,
        (q_ar_s - q_ven_s) / c_ven_s,
        (q_pv - q_ar_p) / c_ar_p,
        (q_ar_p - q_ven_p) / c_ven_p,
        (p_ar_s - p_ven_s - r_ar_s * q_ar_s) / l_ar_s,
        (p_ven_s - p_ra - r_ven_s * q_ven_s) / l_ven_s,
        (p_ar_p - p_ven_p - r_ar_p * q_ar_p) / l_ar_p,
        (p_ven_p - p_la - r_ven_p * q_ven_p) / l_ven_p,
    )


def step_rk4(c1, params, dt, t, p_lv_external=None, v_lv_external=None):
    """Classical explicit Runge-Kutta step; c2 recomputed at every stage."""
    fp = _flatten_params(params)
    y1 = tuple(c1)
    k1 = _rhs_fast(t, y1, fp, p_lv_external, v_lv_external)
    h2 = 0.5 * dt
    y2 = tuple(a + h2 * b for a, b in zip(y1, k1))
    k2 = _rhs_fast(t + h2, y2, fp, p_lv_external, v_lv_external)
    y3 = tuple(a + h2 * b for a, b in zip(y1, k2))
    k3 = _rhs_fast(t + h2, y3, fp, p_lv_external, v_lv_external)
    y4 = tuple(a + dt * b for a, b in zip(y1, k3))
    k4 = _rhs_fast(t + dt, y4, fp, p_lv_external, v_lv_external)
    h6 = dt / 6.0
    out = np.array([a + h6 * (b + 2.0 * c + 2.0 * d + e)
                    for a, b, c, d, e in zip(y1, k1, k2, k3, k4)])
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite circulation state after RK4 step")
    return out


def total_blood_volume(c1, params):
    """Chamber volumes plus compartment stressed volumes C*p (mL)."""
    return float(
        c1[IV_LA] + c1[IV_LV] + c1[IV_RA] + c1[IV_RV]
        + params.C_AR_SYS * c1[IP_AR_SYS]
        + params.C_VEN_SYS * c1[IP_VEN_SYS]
        + params.C_AR_PUL * c1[IP_AR_PUL]
        + params.C_VEN_PUL * c1[IP_VEN_PUL]
    )


@dataclass
class ZeroDResult:
    t: np.ndarray
    c1: np.ndarray  # (T, 12)
    c2: np.ndarray  # (T, 8)
    beat_convergence: np.ndarray  # per-beat max relative change

    def column(self, name):
        if name in C1_NAMES:
            return self.c1[:, C1_NAMES.index(name)]
        return self.c2[:, C2_NAMES.index(name)]


def run_standalone(params, n_beats, dt=5e-5, c1_0=None, stride=20):
    """Pre-pace the closed loop with the surrogate LV elastance.

    stride=0 disables trace recording (fast pre-pacing mode); beat-end
    states still feed the convergence report.
    """
    c1 = DEFAULT_INITIAL_STATE.copy() if c1_0 is None else np.asarray(c1_0, dtype=float).copy()
    steps_per_beat = int(round(params.T / dt))
    ts, c1s, c2s = [], [], []
    conv = []
    prev_beat_state = c1.copy()
    t = 0.0
    for beat in range(n_beats):
        for k in range(steps_per_beat):
            c1 = step_rk4(c1, params, dt, t)
            t += dt
            if stride and k % stride == 0:
                ts.append(t)
                c1s.append(c1.copy())
                c2s.append(algebraic_state(t, c1, params))
        scale = np.maximum(np.abs(prev_beat_state), 1e-9)
        conv.append(float(np.max(np.abs(c1 - prev_beat_state) / scale)))
        prev_beat_state = c1.copy()
    return ZeroDResult(
        t=np.asarray(ts),
        c1=np.asarray(c1s) if c1s else np.empty((0, 12)),
        c2=np.asarray(c2s) if c2s else np.empty((0, 8)),
        beat_convergence=np.asarray(conv),
    )


# ----------------------- Windkessel afterload --------------------------
@dataclass
class WindkesselParams:
    R: float = 5.0e7   # Pa s / m^3
    C: float = 4.0e-10  # m^3 / Pa

    def __post_init__(self):
        if self.R <= 0 or self.C <= 0:
            raise ValueError("Windkessel R and C must be positive")


def windkessel_step(p_lv_pa, dv_dt_m3s, params, dt):
    """RK4 step of C dp/dt = -p/R - dV/dt (SI units)."""

    def f(p):
        return (-p / params.R - dv_dt_m3s) / params.C

    k1 = f(p_lv_pa)
    k2 = f(p_lv_pa + 0.5 * dt * k1)
    k3 = f(p_lv_pa + 0.5 * dt * k2)
    k4 = f(p_lv_pa + dt * k3)
    out = p_lv_pa + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not math.isfinite(out):
        raise FloatingPointError("non-finite Windkessel pressure")
    return out

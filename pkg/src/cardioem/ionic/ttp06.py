"""ten Tusscher-Panfilov 2006 human ventricular cell model, epicardial set.

Natural model units: V in mV, t in ms, concentrations in mM. The tissue
solver works with the dimensionless variable u = (V + 84)/85.7 and SI
time; conversion helpers live at the bottom.

State vector layout (19 rows):
  0  V      5  h      10 fCass   15 Ca_ss
  1  Xr1    6  j      11 s       16 R_prime
  2  Xr2    7  d      12 r       17 Na_i
  3  Xs     8  f      13 Ca_i    18 K_i
  4  m      9  f2     14 Ca_SR
"""

from dataclasses import dataclass, replace

import numpy as np

N_STATES = 19
GATE_ROWS = list(range(1, 13))      # the 12 (inf, tau) voltage/Ca gates
RYR_ROW = 16                        # R_prime, linear-rate gate
CONC_ROWS = [13, 14, 15, 17, 18]    # Ca_i, Ca_SR, Ca_ss, Na_i, K_i

# Physical constants and fixed TTP06 parameters (epicardium)
R_GAS = 8.314
T_K = 310.0
F_CONST = 96.485
CM = 185.0
V_C = 16404.0
V_SR = 1094.0
V_SS = 54.68
CA_O = 2.0
NA_O = 140.0
K_O = 5.4
G_K1 = 5.405
G_TO = 0.294
G_BNA = 0.00029
G_BCA = 0.000592
G_PCA = 0.1238
K_PCA = 0.0005
G_PK = 0.0146
P_NAK = 2.724
K_MK = 1.0
K_MNA = 40.0
K_NACA = 1000.0
GAMMA_NACA = 0.35
KM_NAI = 87.5
KM_CA = 1.38
K_SAT = 0.1
ALPHA_NACA = 2.5
P_KNA = 0.03
BUF_C = 0.2
K_BUF_C = 0.001
BUF_SR = 10.0
K_BUF_SR = 0.3
BUF_SS = 0.4
K_BUF_SS = 0.00025
V_LEAK = 0.00036
VMAX_UP = 0.006375
K_UP = 0.00025
V_XFER = 0.0038
V_REL = 0.102
K1_PRIME = 0.15
K2_PRIME = 0.045
K3_RYR = 0.06
K4_RYR = 0.005
MAX_SR = 2.5
MIN_SR = 1.0
EC_SR = 1.5

# Transmembrane-potential nondimensionalization used by the tissue model
V_SCALE_MV = 85.7
V_OFFSET_MV = -84.0

# Grey-zone endpoint factors for (G_Na, G_CaL, G_Kr, G_Ks)
GREY_FACTORS = (0.38, 0.31, 0.30, 0.20)


@dataclass(frozen=True)
class ConductanceSet:
    """The four ischemia-scaled channel conductances (TTP06 units)."""

    g_Na: float = 14.838
    g_CaL: float = 0.0398
    g_Kr: float = 0.153
    g_Ks: float = 0.392

    def as_tuple(self):
        return (self.g_Na, self.g_CaL, self.g_Kr, self.g_Ks)


BASE_CONDUCTANCES = ConductanceSet()

# Published TTP06 initial conditions (paced-diastolic): the default start
# for paced simulations.
INITIAL_STATE = np.array(
    [
        -85.23, 0.00621, 0.4712, 0.0095, 0.00172, 0.7444, 0.7045, 3.373e-05,
        0.7888, 0.9755, 0.9953, 0.999998, 2.42e-08, 0.000126, 3.64, 0.00036,
        0.9073, 8.604, 136.89,
    ]
)

# True quiescent equilibrium of the unpaced cell (eta = 1), settled with
# the production Rush-Larsen stepper until |dV/dt| < 2e-13 mV/ms. Used
# wherever exact equilibrium preservation matters (rest tests, scar
# freezing). Note the slow Na/SR rundown relative to the paced state.
QUIESCENT_STATE = np.array(
    [
        -8.68958305192984568e+01,
        1.66657286453146184e-04,
        4.88500262914084937e-01,
        2.87248205480881676e-03,
        1.20286360776921406e-03,
        7.87644267345049776e-01,
        7.87644267345117055e-01,
        2.70054712101367734e-05,
        9.99929268387454773e-01,
        9.99596272495339444e-01,
        9.99998662971877006e-01,
        9.99998452960797479e-01,
        1.83071934154639052e-08,
        2.59646476308027464e-05,
        1.89000100385001341e-01,
        7.46388809377114901e-05,
        9.98339135308437542e-01,
        3.41638641731102988e+00,
        1.43290254519789528e+02,
    ]
)


def scale_factors(eta):
    """Affine ischemia scaling factors for (G_Na, G_CaL, G_Kr, G_Ks).

    eta in [0.1, 1]: eta=1 -> 1.0 each, eta=0.1 -> the grey-zone endpoint
    reductions. eta=0 (scar) must never reach the ionic model.
    """
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0.1 - 1e-12) or np.any(eta > 1.0 + 1e-12):
        raise ValueError("eta must lie in [0.1, 1] for conductance scaling")
    out = []
    for c in GREY_FACTORS:
        out.append(c + (10.0 / 9.0) * (eta - 0.1) * (1.0 - c))
    return tuple(out)


def scale_conductances(base, eta):
    f_na, f_cal, f_kr, f_ks = scale_factors(eta)
    return replace(
        base,
        g_Na=base.g_Na * float(f_na),
        g_CaL=base.g_CaL * float(f_cal),
        g_Kr=base.g_Kr * float(f_kr),
        g_Ks=base.g_Ks * float(f_ks),
    )


def gate_rates(V, ca_ss):
    """Steady states and time constants of the 12 (inf, tau) gates.

    Returns (inf, tau) arrays of shape (12, N); tau in ms.
    """
    V = np.asarray(V, dtype=float)
    ca_ss = np.asarray(ca_ss, dtype=float)
    exp = np.exp
    inf = np.empty((12,) + V.shape)
    tau = np.empty((12,) + V.shape)

    a = 450.0 / (1.0 + exp((-45.0 - V) / 10.0))
    b = 6.0 / (1.0 + exp((V + 30.0) / 11.5))
    inf[0] = 1.0 / (1.0 + exp((-26.0 - V) / 7.0))
    tau[0] = a * b

    a = 3.0 / (1.0 + exp((-60.0 - V) / 20.0))
    b = 1.12 / (1.0 + exp((V - 60.0) / 20.0))
    inf[1] = 1.0 / (1.0 + exp((V + 88.0) / 24.0))
    tau[1] = a * b

    a = 1400.0 / np.sqrt(1.0 + exp((5.0 - V) / 6.0))
    b = 1.0 / (1.0 + exp((V - 35.0) / 15.0))
    inf[2] = 1.0 / (1.0 + exp((-5.0 - V) / 14.0))
    tau[2] = a * b + 80.0

    a = 1.0 / (1.0 + exp((-60.0 - V) / 5.0))
    b = 0.1 / (1.0 + exp((V + 35.0) / 5.0)) + 0.1 / (1.0 + exp((V - 50.0) / 200.0))
    inf[3] = 1.0 / (1.0 + exp((-56.86 - V) / 9.03)) ** 2
    tau[3] = a * b

    cold = V < -40.0
    a = np.where(cold, 0.057 * exp(-(V + 80.0) / 6.8), 0.0)
    b = np.where(
        cold,
        2.7 * exp(0.079 * V) + 310000.0 * exp(0.3485 * V),
        0.77 / (0.13 * (1.0 + exp((V + 10.66) / -11.1))),
    )
    inf[4] = 1.0 / (1.0 + exp((V + 71.55) / 7.43)) ** 2
    tau[4] = 1.0 / (a + b)

    a = np.where(
        cold,
        (-25428.0 * exp(0.2444 * V) - 6.948e-06 * exp(-0.04391 * V))
        * (V + 37.78)
        / (1.0 + exp(0.311 * (V + 79.23))),
        0.0,
    )
    b = np.where(
        cold,
        0.02424 * exp(-0.01052 * V) / (1.0 + exp(-0.1378 * (V + 40.14))),
        0.6 * exp(0.057 * V) / (1.0 + exp(-0.1 * (V + 32.0))),
    )
    inf[5] = inf[4]
    tau[5] = 1.0 / (a + b)

    a = 1.4 / (1.0 + exp((-35.0 - V) / 13.0)) + 0.25
    b = 1.4 / (1.0 + exp((V + 5.0) / 5.0))
    g = 1.0 / (1.0 + exp((50.0 - V) / 20.0))
    inf[6] = 1.0 / (1.0 + exp((-8.0 - V) / 7.5))
    tau[6] = a * b + g

    inf[7] = 1.0 / (1.0 + exp((V + 20.0) / 7.0))
    tau[7] = (
        1102.5 * exp(-((V + 27.0) ** 2) / 225.0)
        + 200.0 / (1.0 + exp((13.0 - V) / 10.0))
        + 180.0 / (1.0 + exp((V + 30.0) / 10.0))
        + 20.0
    )

    inf[8] = 0.67 / (1.0 + exp((V + 35.0) / 7.0)) + 0.33
    tau[8] = (
        562.0 * exp(-((V + 27.0) ** 2) / 240.0)
        + 31.0 / (1.0 + exp((25.0 - V) / 10.0))
        + 80.0 / (1.0 + exp((V + 30.0) / 10.0))
    )

    css2 = (ca_ss / 0.05) ** 2
    inf[9] = 0.6 / (1.0 + css2) + 0.4
    tau[9] = 80.0 / (1.0 + css2) + 2.0

    inf[10] = 1.0 / (1.0 + exp((V + 20.0) / 5.0))
    tau[10] = (
        85.0 * exp(-((V + 45.0) ** 2) / 320.0)
        + 5.0 / (1.0 + exp((V - 20.0) / 5.0))
        + 3.0
    )

    inf[11] = 1.0 / (1.0 + exp((20.0 - V) / 6.0))
    tau[11] = 9.5 * exp(-((V + 40.0) ** 2) / 1800.0) + 0.8

    return inf, tau


def _ical_driving(V, ca_ss):
    """Nonlinear driving term of i_CaL with the V=15 mV limit handled.

    With w = 2(V-15)F/RT the current reads 2F * w/(e^w - 1) *
    (0.25 Ca_ss e^w - Ca_o); near w=0 the ratio is replaced by its Taylor
    expansion.
    """
    w = 2.0 * (V - 15.0) * F_CONST / (R_GAS * T_K)
    small = np.abs(w) < 1e-8
    safe = np.where(small, 1.0, w)
    wover = np.where(small, 1.0 - 0.5 * w, safe / np.expm1(safe))
    return 2.0 * F_CONST * wover * (0.25 * ca_ss * np.exp(w) - CA_O)


def currents(y, factors):
    """All membrane currents (A/F) given state (19,N) and scale factors."""
    V = y[0]
    f_na, f_cal, f_kr, f_ks = factors
    exp = np.exp
    rt = R_GAS * T_K / F_CONST

    E_Ca = 0.5 * rt * np.log(CA_O / y[13])
    E_K = rt * np.log(K_O / y[18])
    E_Na = rt * np.log(NA_O / y[17])
    E_Ks = rt * np.log((K_O + P_KNA * NA_O) / (y[18] + P_KNA * y[17]))

    i_Na = BASE_CONDUCTANCES.g_Na * f_na * y[4] ** 3 * y[5] * y[6] * (V - E_Na)
    i_CaL = (
        BASE_CONDUCTANCES.g_CaL
        * f_cal
        * y[7] * y[8] * y[9] * y[10]
        * _ical_driving(V, y[15])
    )
    i_Kr = BASE_CONDUCTANCES.g_Kr * f_kr * np.sqrt(K_O / 5.4) * y[1] * y[2] * (V - E_K)
    i_Ks = BASE_CONDUCTANCES.g_Ks * f_ks * y[3] ** 2 * (V - E_Ks)
    i_to = G_TO * y[12] * y[11] * (V - E_K)

    a_K1 = 0.1 / (1.0 + exp(0.06 * (V - E_K - 200.0)))
    b_K1 = (
        3.0 * exp(0.0002 * (V - E_K + 100.0)) + exp(0.1 * (V - E_K - 10.0))
    ) / (1.0 + exp(-0.5 * (V - E_K)))
    i_K1 = G_K1 * a_K1 / (a_K1 + b_K1) * np.sqrt(K_O / 5.4) * (V - E_K)

    vfrt = V * F_CONST / (R_GAS * T_K)
    i_NaK = (
        P_NAK * K_O / (K_O + K_MK) * y[17] / (y[17] + K_MNA)
        / (1.0 + 0.1245 * exp(-0.1 * vfrt) + 0.0353 * exp(-vfrt))
    )
    i_NaCa = (
        K_NACA
        * (
            exp(GAMMA_NACA * vfrt) * y[17] ** 3 * CA_O
            - exp((GAMMA_NACA - 1.0) * vfrt) * NA_O**3 * y[13] * ALPHA_NACA
        )
        / (
            (KM_NAI**3 + NA_O**3)
            * (KM_CA + CA_O)
            * (1.0 + K_SAT * exp((GAMMA_NACA - 1.0) * vfrt))
        )
    )
    i_p_Ca = G_PCA * y[13] / (y[13] + K_PCA)
    i_p_K = G_PK * (V - E_K) / (1.0 + exp((25.0 - V) / 5.98))
    i_b_Na = G_BNA * (V - E_Na)
    i_b_Ca = G_BCA * (V - E_Ca)

    return {
        "i_Na": i_Na, "i_CaL": i_CaL, "i_Kr": i_Kr, "i_Ks": i_Ks,
        "i_to": i_to, "i_K1": i_K1, "i_NaK": i_NaK, "i_NaCa": i_NaCa,
        "i_p_Ca": i_p_Ca, "i_p_K": i_p_K, "i_b_Na": i_b_Na, "i_b_Ca": i_b_Ca,
    }


def calcium_fluxes(y):
    """SR release / uptake / leak / transfer fluxes and buffer factors."""
    ca_i, ca_sr, ca_ss = y[13], y[14], y[15]
    f_i = 1.0 / (1.0 + BUF_C * K_BUF_C / (ca_i + K_BUF_C) ** 2)
    f_sr = 1.0 / (1.0 + BUF_SR * K_BUF_SR / (ca_sr + K_BUF_SR) ** 2)
    f_ss = 1.0 / (1.0 + BUF_SS * K_BUF_SS / (ca_ss + K_BUF_SS) ** 2)
    i_leak = V_LEAK * (ca_sr - ca_i)
    i_up = VMAX_UP / (1.0 + K_UP**2 / ca_i**2)
    i_xfer = V_XFER * (ca_ss - ca_i)
    kcasr = MAX_SR - (MAX_SR - MIN_SR) / (1.0 + (EC_SR / ca_sr) ** 2)
    k1 = K1_PRIME / kcasr
    k2 = K2_PRIME * kcasr
    O = k1 * ca_ss**2 * y[16] / (K3_RYR + k1 * ca_ss**2)
    i_rel = V_REL * O * (ca_sr - ca_ss)
    return f_i, f_sr, f_ss, i_leak, i_up, i_xfer, i_rel, k2


def rhs(y, factors, i_app=0.0):
    """Full time derivative (19,N) in model units (per ms)."""
    y = np.asarray(y, dtype=float)
    ydot = np.zeros_like(y)
    inf, tau = gate_rates(y[0], y[15])
    for k, row in enumerate(GATE_ROWS):
        ydot[row] = (inf[k] - y[row]) / tau[k]

    cur = currents(y, factors)
    f_i, f_sr, f_ss, i_leak, i_up, i_xfer, i_rel, k2 = calcium_fluxes(y)

    ydot[16] = -k2 * y[15] * y[16] + K4_RYR * (1.0 - y[16])
    ydot[14] = f_sr * (i_up - i_rel - i_leak)
    ydot[15] = f_ss * (
        -cur["i_CaL"] * CM / (2.0 * V_SS * F_CONST)
        + i_rel * V_SR / V_SS
        - i_xfer * V_C / V_SS
    )
    ydot[13] = f_i * (
        -(cur["i_b_Ca"] + cur["i_p_Ca"] - 2.0 * cur["i_NaCa"]) * CM / (2.0 * V_C * F_CONST)
        + (i_leak - i_up) * V_SR / V_C
        + i_xfer
    )
    ydot[17] = -(cur["i_Na"] + cur["i_b_Na"] + 3.0 * cur["i_NaK"] + 3.0 * cur["i_NaCa"]) * CM / (V_C * F_CONST)
    ydot[18] = -(cur["i_K1"] + cur["i_to"] + cur["i_Kr"] + cur["i_Ks"] + cur["i_p_K"] - 2.0 * cur["i_NaK"]) * CM / (V_C * F_CONST)

    i_ion = (
        cur["i_K1"] + cur["i_to"] + cur["i_Kr"] + cur["i_Ks"] + cur["i_CaL"]
        + cur["i_NaK"] + cur["i_Na"] + cur["i_b_Na"] + cur["i_NaCa"]
        + cur["i_b_Ca"] + cur["i_p_K"] + cur["i_p_Ca"]
    )
    ydot[0] = -i_ion + i_app
    return ydot


class StepRejected(RuntimeError):
    """Raised when a step produces non-finite intermediates."""


def step_np(y, dt_ms, factors, i_app=None, update_v=True):
    """One Rush-Larsen / forward-Euler step, numpy backend.

    y: (19,N) state, modified in place. factors: 4 arrays (N,) scaling
    (G_Na, G_CaL, G_Kr, G_Ks). i_app: (N,) applied current (V/s == mV/ms).
    Gates use the exponential Rush-Larsen update, concentrations forward
    Euler. Returns dV/dt (mV/ms, reaction + stimulus). If update_v is
    False the caller advances V (tissue mode: diffusion handled there).
    """
    V = y[0]
    inf, tau = gate_rates(V, y[15])
    for k, row in enumerate(GATE_ROWS):
        y[row] = inf[k] + (y[row] - inf[k]) * np.exp(-dt_ms / tau[k])

    cur = currents(y, factors)
    f_i, f_sr, f_ss, i_leak, i_up, i_xfer, i_rel, k2 = calcium_fluxes(y)

    # R_prime: exact exponential update for the frozen-Ca_ss linear rate
    rate = k2 * y[15] + K4_RYR
    rinf = K4_RYR / rate
    y[16] = rinf + (y[16] - rinf) * np.exp(-dt_ms * rate)

    y[14] += dt_ms * f_sr * (i_up - i_rel - i_leak)
    y[15] += dt_ms * f_ss * (
        -cur["i_CaL"] * CM / (2.0 * V_SS * F_CONST)
        + i_rel * V_SR / V_SS
        - i_xfer * V_C / V_SS
    )
    y[13] += dt_ms * f_i * (
        -(cur["i_b_Ca"] + cur["i_p_Ca"] - 2.0 * cur["i_NaCa"]) * CM / (2.0 * V_C * F_CONST)
        + (i_leak - i_up) * V_SR / V_C
        + i_xfer
    )
    y[17] += dt_ms * (
        -(cur["i_Na"] + cur["i_b_Na"] + 3.0 * cur["i_NaK"] + 3.0 * cur["i_NaCa"]) * CM / (V_C * F_CONST)
    )
    y[18] += dt_ms * (
        -(cur["i_K1"] + cur["i_to"] + cur["i_Kr"] + cur["i_Ks"] + cur["i_p_K"] - 2.0 * cur["i_NaK"]) * CM / (V_C * F_CONST)
    )

    i_ion = (
        cur["i_K1"] + cur["i_to"] + cur["i_Kr"] + cur["i_Ks"] + cur["i_CaL"]
        + cur["i_NaK"] + cur["i_Na"] + cur["i_b_Na"] + cur["i_NaCa"]
        + cur["i_b_Ca"] + cur["i_p_K"] + cur["i_p_Ca"]
    )
    dvdt = -i_ion
    if i_app is not None:
        dvdt = dvdt + i_app
    if update_v:
        y[0] = V + dt_ms * dvdt
        if not np.all(np.isfinite(y[0])):
            raise StepRejected("non-finite transmembrane potential")
    elif not np.all(np.isfinite(dvdt)):
        raise StepRejected("non-finite ionic current")
    return dvdt


def u_from_v(v_mv):
    return (v_mv - V_OFFSET_MV) / V_SCALE_MV


def v_from_u(u):
    return V_SCALE_MV * u + V_OFFSET_MV

# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Rush-Larsen kernel for the TTP06 epicardial model.

Mirrors ttp06.step_np node by node; selected at import by cardioem.ionic
when available. Keep the arithmetic in the same order as the numpy
backend so the two stay numerically interchangeable.
"""

from libc.math cimport exp, expm1, log, sqrt, fabs, isfinite

import numpy as np


DEF R_GAS = 8.314
DEF T_K = 310.0
DEF F_CONST = 96.485
DEF CM = 185.0
DEF V_C = 16404.0
DEF V_SR = 1094.0
DEF V_SS = 54.68
DEF CA_O = 2.0
DEF NA_O = 140.0
DEF K_O = 5.4
DEF G_NA = 14.838
DEF G_CAL = 0.0398
DEF G_KR = 0.153
DEF G_KS = 0.392
DEF G_K1 = 5.405
DEF G_TO = 0.294
DEF G_BNA = 0.00029
DEF G_BCA = 0.000592
DEF G_PCA = 0.1238
DEF K_PCA = 0.0005
DEF G_PK = 0.0146
DEF P_NAK = 2.724
DEF K_MK = 1.0
DEF K_MNA = 40.0
DEF K_NACA = 1000.0
DEF GAMMA_NACA = 0.35
DEF KM_NAI = 87.5
DEF KM_CA = 1.38
DEF K_SAT = 0.1
DEF ALPHA_NACA = 2.5
DEF P_KNA = 0.03
DEF BUF_C = 0.2
DEF K_BUF_C = 0.001
DEF BUF_SR = 10.0
DEF K_BUF_SR = 0.3
DEF BUF_SS = 0.4
DEF K_BUF_SS = 0.00025
DEF V_LEAK = 0.00036
DEF VMAX_UP = 0.006375
DEF K_UP = 0.00025
DEF V_XFER = 0.0038
DEF V_REL = 0.102
DEF K1_PRIME = 0.15
DEF K2_PRIME = 0.045
DEF K3_RYR = 0.06
DEF K4_RYR = 0.005
DEF MAX_SR = 2.5
DEF MIN_SR = 1.0
DEF EC_SR = 1.5


def step(double[:, ::1] y, double dt_ms,
         double[::1] f_na, double[::1] f_cal, double[::1] f_kr, double[::1] f_ks,
         double[::1] i_app, double[::1] dvdt_out, bint update_v):
    """Advance all nodes by one step; returns 0 on success, 1 on non-finite."""
    cdef Py_ssize_t n = y.shape[1]
    cdef Py_ssize_t i
    cdef int bad = 0
    cdef double V, ca_i, ca_sr, ca_ss, na_i, k_i
    cdef double a, b, g, inf, tau
    cdef double rt, E_Ca, E_K, E_Na, E_Ks, vfrt, w, safe, wover
    cdef double i_Na, i_CaL, i_Kr, i_Ks, i_to, i_K1, i_NaK, i_NaCa
    cdef double i_p_Ca, i_p_K, i_b_Na, i_b_Ca, a_K1, b_K1
    cdef double f_i, f_sr, f_ss, i_leak, i_up, i_xfer, i_rel
    cdef double kcasr, k1, k2, O, rate, rinf, i_ion, dvdt

    rt = R_GAS * T_K / F_CONST

    for i in range(n):
        V = y[0, i]
        ca_ss = y[15, i]

        # --- Rush-Larsen gate updates -------------------------------
        a = 450.0 / (1.0 + exp((-45.0 - V) / 10.0))
        b = 6.0 / (1.0 + exp((V + 30.0) / 11.5))
        inf = 1.0 / (1.0 + exp((-26.0 - V) / 7.0))
        tau = a * b
        y[1, i] = inf + (y[1, i] - inf) * exp(-dt_ms / tau)

        a = 3.0 / (1.0 + exp((-60.0 - V) / 20.0))
        b = 1.12 / (1.0 + exp((V - 60.0) / 20.0))
        inf = 1.0 / (1.0 + exp((V + 88.0) / 24.0))
        tau = a * b
        y[2, i] = inf + (y[2, i] - inf) * exp(-dt_ms / tau)

        a = 1400.0 / sqrt(1.0 + exp((5.0 - V) / 6.0))
        b = 1.0 / (1.0 + exp((V - 35.0) / 15.0))
        inf = 1.0 / (1.0 + exp((-5.0 - V) / 14.0))
        tau = a * b + 80.0
        y[3, i] = inf + (y[3, i] - inf) * exp(-dt_ms / tau)

        a = 1.0 / (1.0 + exp((-60.0 - V) / 5.0))
        b = 0.1 / (1.0 + exp((V + 35.0) / 5.0)) + 0.1 / (1.0 + exp((V - 50.0) / 200.0))
        inf = 1.0 / (1.0 + exp((-56.86 - V) / 9.03)) ** 2
        tau = a * b
        y[4, i] = inf + (y[4, i] - inf) * exp(-dt_ms / tau)

        if V < -40.0:
            a = 0.057 * exp(-(V + 80.0) / 6.8)
            b = 2.7 * exp(0.079 * V) + 310000.0 * exp(0.3485 * V)
        else:
            a = 0.0
            b = 0.77 / (0.13 * (1.0 + exp((V + 10.66) / -11.1)))
        inf = 1.0 / (1.0 + exp((V + 71.55) / 7.43)) ** 2
        tau = 1.0 / (a + b)
        y[5, i] = inf + (y[5, i] - inf) * exp(-dt_ms / tau)

        if V < -40.0:
            a = ((-25428.0 * exp(0.2444 * V) - 6.948e-06 * exp(-0.04391 * V))
                 * (V + 37.78) / (1.0 + exp(0.311 * (V + 79.23))))
            b = 0.02424 * exp(-0.01052 * V) / (1.0 + exp(-0.1378 * (V + 40.14)))
        else:
            a = 0.0
            b = 0.6 * exp(0.057 * V) / (1.0 + exp(-0.1 * (V + 32.0)))
        tau = 1.0 / (a + b)
        y[6, i] = inf + (y[6, i] - inf) * exp(-dt_ms / tau)

        a = 1.4 / (1.0 + exp((-35.0 - V) / 13.0)) + 0.25
        b = 1.4 / (1.0 + exp((V + 5.0) / 5.0))
        g = 1.0 / (1.0 + exp((50.0 - V) / 20.0))
        inf = 1.0 / (1.0 + exp((-8.0 - V) / 7.5))
        tau = a * b + g
        y[7, i] = inf + (y[7, i] - inf) * exp(-dt_ms / tau)

        inf = 1.0 / (1.0 + exp((V + 20.0) / 7.0))
        tau = (1102.5 * exp(-((V + 27.0) ** 2) / 225.0)
               + 200.0 / (1.0 + exp((13.0 - V) / 10.0))
               + 180.0 / (1.0 + exp((V + 30.0) / 10.0)) + 20.0)
        y[8, i] = inf + (y[8, i] - inf) * exp(-dt_ms / tau)

        inf = 0.67 / (1.0 + exp((V + 35.0) / 7.0)) + 0.33
        tau = (562.0 * exp(-((V + 27.0) ** 2) / 240.0)
               + 31.0 / (1.0 + exp((25.0 - V) / 10.0))
               + 80.0 / (1.0 + exp((V + 30.0) / 10.0)))
        y[9, i] = inf + (y[9, i] - inf) * exp(-dt_ms / tau)

        g = (ca_ss / 0.05) ** 2
        inf = 0.6 / (1.0 + g) + 0.4
        tau = 80.0 / (1.0 + g) + 2.0
        y[10, i] = inf + (y[10, i] - inf) * exp(-dt_ms / tau)

        inf = 1.0 / (1.0 + exp((V + 20.0) / 5.0))
        tau = (85.0 * exp(-((V + 45.0) ** 2) / 320.0)
               + 5.0 / (1.0 + exp((V - 20.0) / 5.0)) + 3.0)
        y[11, i] = inf + (y[11, i] - inf) * exp(-dt_ms / tau)

        inf = 1.0 / (1.0 + exp((20.0 - V) / 6.0))
        tau = 9.5 * exp(-((V + 40.0) ** 2) / 1800.0) + 0.8
        y[12, i] = inf + (y[12, i] - inf) * exp(-dt_ms / tau)

        # --- currents (with updated gates) --------------------------
        ca_i = y[13, i]
        ca_sr = y[14, i]
        ca_ss = y[15, i]
        na_i = y[17, i]
        k_i = y[18, i]

        E_Ca = 0.5 * rt * log(CA_O / ca_i)
        E_K = rt * log(K_O / k_i)
        E_Na = rt * log(NA_O / na_i)
        E_Ks = rt * log((K_O + P_KNA * NA_O) / (k_i + P_KNA * na_i))

        i_Na = G_NA * f_na[i] * y[4, i] ** 3 * y[5, i] * y[6, i] * (V - E_Na)

        w = 2.0 * (V - 15.0) * F_CONST / (R_GAS * T_K)
        if fabs(w) < 1e-8:
            wover = 1.0 - 0.5 * w
        else:
            wover = w / expm1(w)
        i_CaL = (G_CAL * f_cal[i] * y[7, i] * y[8, i] * y[9, i] * y[10, i]
                 * 2.0 * F_CONST * wover * (0.25 * ca_ss * exp(w) - CA_O))

        i_Kr = G_KR * f_kr[i] * sqrt(K_O / 5.4) * y[1, i] * y[2, i] * (V - E_K)
        i_Ks = G_KS * f_ks[i] * y[3, i] ** 2 * (V - E_Ks)
        i_to = G_TO * y[12, i] * y[11, i] * (V - E_K)

        a_K1 = 0.1 / (1.0 + exp(0.06 * (V - E_K - 200.0)))
        b_K1 = ((3.0 * exp(0.0002 * (V - E_K + 100.0)) + exp(0.1 * (V - E_K - 10.0)))
                / (1.0 + exp(-0.5 * (V - E_K))))
        i_K1 = G_K1 * a_K1 / (a_K1 + b_K1) * sqrt(K_O / 5.4) * (V - E_K)

        vfrt = V * F_CONST / (R_GAS * T_K)
        i_NaK = (P_NAK * K_O / (K_O + K_MK) * na_i / (na_i + K_MNA)
                 / (1.0 + 0.1245 * exp(-0.1 * vfrt) + 0.0353 * exp(-vfrt)))
        i_NaCa = (K_NACA
                  * (exp(GAMMA_NACA * vfrt) * na_i ** 3 * CA_O
                     - exp((GAMMA_NACA - 1.0) * vfrt) * NA_O ** 3 * ca_i * ALPHA_NACA)
                  / ((KM_NAI ** 3 + NA_O ** 3) * (KM_CA + CA_O)
                     * (1.0 + K_SAT * exp((GAMMA_NACA - 1.0) * vfrt))))
        i_p_Ca = G_PCA * ca_i / (ca_i + K_PCA)
        i_p_K = G_PK * (V - E_K) / (1.0 + exp((25.0 - V) / 5.98))
        i_b_Na = G_BNA * (V - E_Na)
        i_b_Ca = G_BCA * (V - E_Ca)

        # --- calcium subsystem and concentrations -------------------
        f_i = 1.0 / (1.0 + BUF_C * K_BUF_C / ((ca_i + K_BUF_C) ** 2))
        f_sr = 1.0 / (1.0 + BUF_SR * K_BUF_SR / ((ca_sr + K_BUF_SR) ** 2))
        f_ss = 1.0 / (1.0 + BUF_SS * K_BUF_SS / ((ca_ss + K_BUF_SS) ** 2))
        i_leak = V_LEAK * (ca_sr - ca_i)
        i_up = VMAX_UP / (1.0 + K_UP * K_UP / (ca_i * ca_i))
        i_xfer = V_XFER * (ca_ss - ca_i)
        kcasr = MAX_SR - (MAX_SR - MIN_SR) / (1.0 + (EC_SR / ca_sr) ** 2)
        k1 = K1_PRIME / kcasr
        k2 = K2_PRIME * kcasr
        O = k1 * ca_ss ** 2 * y[16, i] / (K3_RYR + k1 * ca_ss ** 2)
        i_rel = V_REL * O * (ca_sr - ca_ss)

        rate = k2 * ca_ss + K4_RYR
        rinf = K4_RYR / rate
        y[16, i] = rinf + (y[16, i] - rinf) * exp(-dt_ms * rate)

        y[14, i] = ca_sr + dt_ms * f_sr * (i_up - i_rel - i_leak)
        y[15, i] = ca_ss + dt_ms * f_ss * (
            -i_CaL * CM / (2.0 * V_SS * F_CONST)
            + i_rel * V_SR / V_SS - i_xfer * V_C / V_SS)
        y[13, i] = ca_i + dt_ms * f_i * (
            -(i_b_Ca + i_p_Ca - 2.0 * i_NaCa) * CM / (2.0 * V_C * F_CONST)
            + (i_leak - i_up) * V_SR / V_C + i_xfer)
        y[17, i] = na_i + dt_ms * (
            -(i_Na + i_b_Na + 3.0 * i_NaK + 3.0 * i_NaCa) * CM / (V_C * F_CONST))
        y[18, i] = k_i + dt_ms * (
            -(i_K1 + i_to + i_Kr + i_Ks + i_p_K - 2.0 * i_NaK) * CM / (V_C * F_CONST))

        i_ion = (i_K1 + i_to + i_Kr + i_Ks + i_CaL + i_NaK + i_Na + i_b_Na
                 + i_NaCa + i_b_Ca + i_p_K + i_p_Ca)
        dvdt = -i_ion + i_app[i]
        dvdt_out[i] = dvdt
        if update_v:
            y[0, i] = V + dt_ms * dvdt
        if not isfinite(dvdt):
            bad = 1

    return bad

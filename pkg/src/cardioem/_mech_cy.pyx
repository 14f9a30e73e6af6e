# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Guccione active-strain stress kernels.

Element internal forces and finite-difference element tangents for the
mechanics Newton solver; mirrors the numpy implementation in
cardioem.mechanics and is selected at import when available.
"""

from libc.math cimport exp, log
from libc.string cimport memcpy

import numpy as np


cdef inline void mat_mul(double* a, double* b, double* out) nogil:
    cdef int i, j, k
    for i in range(3):
        for j in range(3):
            out[3*i+j] = a[3*i]*b[j] + a[3*i+1]*b[3+j] + a[3*i+2]*b[6+j]


cdef inline void mat_tmul(double* a, double* b, double* out) nogil:
    # out = a^T b
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[3*i+j] = a[i]*b[j] + a[3+i]*b[3+j] + a[6+i]*b[6+j]


cdef inline void mat_mult_t(double* a, double* b, double* out) nogil:
    # out = a b^T
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[3*i+j] = a[3*i]*b[3*j] + a[3*i+1]*b[3*j+1] + a[3*i+2]*b[3*j+2]


cdef inline double inv3(double* a, double* out) nogil:
    cdef double c00 = a[4]*a[8] - a[5]*a[7]
    cdef double c01 = a[5]*a[6] - a[3]*a[8]
    cdef double c02 = a[3]*a[7] - a[4]*a[6]
    cdef double det = a[0]*c00 + a[1]*c01 + a[2]*c02
    cdef double inv_det = 1.0 / det
    out[0] = c00 * inv_det
    out[3] = c01 * inv_det
    out[6] = c02 * inv_det
    out[1] = (a[2]*a[7] - a[1]*a[8]) * inv_det
    out[4] = (a[0]*a[8] - a[2]*a[6]) * inv_det
    out[7] = (a[1]*a[6] - a[0]*a[7]) * inv_det
    out[2] = (a[1]*a[5] - a[2]*a[4]) * inv_det
    out[5] = (a[2]*a[3] - a[0]*a[5]) * inv_det
    out[8] = (a[0]*a[4] - a[1]*a[3]) * inv_det
    return det


cdef inline int qp_force(double* d_el, double* g, double wdet,
                         double* FA_inv, double detFA, double* R,
                         double cb, double bulk, double* bmat,
                         double* f_el) nogil:
    """Accumulate one quadrature point's internal-force contribution.

    d_el: 8x3 element displacements, g: 8x3 shape gradients at this point,
    f_el: 8x3 accumulator. Returns 1 when det F <= 0.
    """
    cdef double F[9]
    cdef double FE[9]
    cdef double FE_inv[9]
    cdef double CE[9]
    cdef double Eh[9]
    cdef double tmp[9]
    cdef double S[9]
    cdef double PE[9]
    cdef double P[9]
    cdef int i, j, n
    cdef double J_E, J, Q, coef, dwvol

    for i in range(3):
        for j in range(3):
            F[3*i+j] = 1.0 if i == j else 0.0
            for n in range(8):
                F[3*i+j] += d_el[3*n+i] * g[3*n+j]

    mat_mul(F, FA_inv, FE)
    J_E = inv3(FE, FE_inv)
    J = J_E * detFA
    if J <= 0.0:
        return 1

    mat_tmul(FE, FE, CE)
    # E-hat = R^T E R with E = (CE - I)/2
    CE[0] -= 1.0
    CE[4] -= 1.0
    CE[8] -= 1.0
    for i in range(9):
        CE[i] *= 0.5
    mat_tmul(R, CE, tmp)
    mat_mul(tmp, R, Eh)

    Q = 0.0
    for i in range(9):
        tmp[i] = bmat[i] * Eh[i]
        Q += tmp[i] * Eh[i]
    coef = cb * exp(Q)
    for i in range(9):
        tmp[i] *= coef  # Sh
    # S = R Sh R^T
    mat_mul(R, tmp, CE)        # reuse CE as scratch
    mat_mult_t(CE, R, S)

    dwvol = 0.5 * bulk * (log(J_E) + 1.0 - 1.0 / J_E) * J_E
    mat_mul(FE, S, PE)
    for i in range(3):
        for j in range(3):
            PE[3*i+j] += dwvol * FE_inv[3*j+i]
    mat_mult_t(PE, FA_inv, P)
    for i in range(9):
        P[i] *= detFA

    for n in range(8):
        for i in range(3):
            f_el[3*n+i] += wdet * (P[3*i]*g[3*n] + P[3*i+1]*g[3*n+1] + P[3*i+2]*g[3*n+2])
    return 0


def internal_forces(double[:, :, :, ::1] grads, double[:, ::1] wdet,
                    double[:, :, ::1] d_el, double[:, :, :, ::1] FA_inv,
                    double[:, ::1] detFA, double[:, :, :, ::1] R,
                    double[:, ::1] cb, double bulk, double[:, ::1] bmat,
                    double[:, :, ::1] f_out):
    """Internal force vectors for all elements; returns offending element
    index on inversion, else -1."""
    cdef Py_ssize_t E = grads.shape[0]
    cdef Py_ssize_t Qn = grads.shape[1]
    cdef Py_ssize_t e, q
    cdef double bm[9]
    cdef int i, j
    for i in range(3):
        for j in range(3):
            bm[3*i+j] = bmat[i, j]
    cdef int bad
    for e in range(E):
        for i in range(8):
            for j in range(3):
                f_out[e, i, j] = 0.0
        for q in range(Qn):
            bad = qp_force(&d_el[e, 0, 0], &grads[e, q, 0, 0], wdet[e, q],
                           &FA_inv[e, q, 0, 0], detFA[e, q], &R[e, q, 0, 0],
                           cb[e, q], bulk, bm, &f_out[e, 0, 0])
            if bad:
                return <int> e
    return -1


def element_tangents(double[:, :, :, ::1] grads, double[:, ::1] wdet,
                     double[:, :, ::1] d_el, double[:, :, :, ::1] FA_inv,
                     double[:, ::1] detFA, double[:, :, :, ::1] R,
                     double[:, ::1] cb, double bulk, double[:, ::1] bmat,
                     double fd_step, double[:, :, ::1] K_out):
    """Forward-difference 24x24 element stiffness blocks."""
    cdef Py_ssize_t E = grads.shape[0]
    cdef Py_ssize_t Qn = grads.shape[1]
    cdef Py_ssize_t e, q
    cdef int i, j, l, n_l, k_l
    cdef double bm[9]
    cdef double base[24]
    cdef double pert[24]
    cdef double dloc[24]
    cdef double inv_h = 1.0 / fd_step
    for i in range(3):
        for j in range(3):
            bm[3*i+j] = bmat[i, j]
    cdef int bad
    for e in range(E):
        for i in range(24):
            base[i] = 0.0
            dloc[i] = d_el[e, i // 3, i % 3]
        for q in range(Qn):
            bad = qp_force(dloc, &grads[e, q, 0, 0], wdet[e, q],
                           &FA_inv[e, q, 0, 0], detFA[e, q], &R[e, q, 0, 0],
                           cb[e, q], bulk, bm, base)
            if bad:
                return <int> e
        for l in range(24):
            for i in range(24):
                pert[i] = 0.0
            dloc[l] += fd_step
            for q in range(Qn):
                bad = qp_force(dloc, &grads[e, q, 0, 0], wdet[e, q],
                               &FA_inv[e, q, 0, 0], detFA[e, q], &R[e, q, 0, 0],
                               cb[e, q], bulk, bm, pert)
                if bad:
                    return <int> e
            dloc[l] -= fd_step
            for i in range(24):
                K_out[e, i, l] = (pert[i] - base[i]) * inv_h
    return -1

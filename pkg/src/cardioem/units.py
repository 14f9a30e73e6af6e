"""Unit conversion constants.

The 3D tissue models run in SI (m, s, Pa); the lumped circulation runs in
clinical units (mmHg, mL, s). Conversions happen only at the coupling
boundary, with the exact constants below.
"""

MMHG_TO_PA = 133.322
PA_TO_MMHG = 1.0 / MMHG_TO_PA

ML_TO_M3 = 1.0e-6
M3_TO_ML = 1.0e6


def mmhg_to_pa(p):
    return p * MMHG_TO_PA


def pa_to_mmhg(p):
    return p * PA_TO_MMHG


def ml_to_m3(v):
    return v * ML_TO_M3


def m3_to_ml(v):
    return v * M3_TO_ML

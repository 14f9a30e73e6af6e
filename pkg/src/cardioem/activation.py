"""Calcium-driven fiber shortening and the orthotropic active deformation.

The shortening field gamma_f obeys a reaction-diffusion law whose forcing
combines a gated calcium drive with a force-length weight and a
polynomial restoring series; both terms are scaled by the ischemia
coefficient eta, so grey zones activate slower and weaker and scars not
at all. The active deformation F_A is volume preserving by construction.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from . import fem

log = logging.getLogger(__name__)


class KinematicSingularity(ValueError):
    pass


@dataclass
class ForceLengthCurve:
    """Single-harmonic truncated Fourier bell for the force-length weight.

    r(I) = a0 + a1 cos(omega (I - center)) inside |I - center| <= halfwidth
    and 0 outside; the defaults peak at I = 1 with value 1.
    """

    a0: float = 0.5
    a1: float = 0.5
    center: float = 1.0
    halfwidth: float = 0.8

    def __call__(self, i4f):
        i4f = np.asarray(i4f, dtype=float)
        omega = np.pi / self.halfwidth
        r = self.a0 + self.a1 * np.cos(omega * (i4f - self.center))
        return np.where(np.abs(i4f - self.center) <= self.halfwidth, np.maximum(r, 0.0), 0.0)


@dataclass
class ActivationParams:
    mu_a: float = 1.5           # s / uM^2 (table values; regional override below)
    alpha: float = -10.0        # uM^-2, negative drives shortening
    epsilon: float = 1e-8       # m^2, gamma smoothing (non-paper default)
    ca_threshold_uM: float = 0.2
    hs_slope_per_uM: float = 50.0
    ca_floor_uM: float = 0.05   # clamps 1/g near diastolic calcium
    kbar_prime: float = 1.0
    kbar_endo: float = 1.0
    kbar_epi: float = 1.0
    lam_endo: float = 0.0
    lam_epi: float = 1.0
    force_length: ForceLengthCurve = field(default_factory=ForceLengthCurve)
    mu_by_label: dict = field(default_factory=dict)  # {"healthy": .., "grey": ..}

    def smooth_gate(self, ca_uM):
        """C1 smoothstep, exactly 0 at and below the calcium threshold."""
        x = (np.asarray(ca_uM) - self.ca_threshold_uM) * self.hs_slope_per_uM
        x = np.clip(x, 0.0, 1.0)
        return x * x * (3.0 - 2.0 * x)


_POLY_COEFF = np.array([(-1.0) ** j * (j + 1) * (j + 2) for j in range(1, 6)])


def forcing(ca_uM, gamma, i4f, params):
    """Active force Phi: gated calcium drive plus restoring polynomial."""
    d_ca = ca_uM - params.ca_threshold_uM
    drive = params.alpha * params.smooth_gate(ca_uM) * d_ca**2 * params.force_length(i4f)
    poly = np.zeros_like(np.asarray(gamma, dtype=float))
    for c in _POLY_COEFF[::-1]:
        poly = (poly + c) * gamma
    return drive + i4f * poly


def g_of_ca(ca_uM, params, mu=None):
    mu = params.mu_a if mu is None else mu
    ca = np.maximum(np.asarray(ca_uM, dtype=float), params.ca_floor_uM)
    return mu * ca**2


def gamma_n_of(gamma_f, lam, params):
    sf = 1.0 + np.asarray(gamma_f, dtype=float)
    if np.any(sf <= 0):
        raise KinematicSingularity("1 + gamma_f must stay positive")
    lam = np.asarray(lam, dtype=float)
    den = params.lam_endo - params.lam_epi
    k = params.kbar_prime * (
        params.kbar_endo * (lam - params.lam_epi) / den
        + params.kbar_epi * (lam - params.lam_endo) / -den
    )
    return k * (1.0 / np.sqrt(sf) - 1.0)


def assemble_active_deformation(gamma_f, lam, micro, params):
    """F_A = I + gf f0 f0 + gs s0 s0 + gn n0 n0 with det(F_A) = 1.

    gamma_s is chosen as 1/((1+gf)(1+gn)) - 1, which makes the product of
    the three principal stretches exactly one.
    """
    gf = np.asarray(gamma_f, dtype=float)
    gn = gamma_n_of(gf, lam, params)
    if np.any(1.0 + gn <= 0):
        raise KinematicSingularity("1 + gamma_n must stay positive")
    gs = 1.0 / ((1.0 + gf) * (1.0 + gn)) - 1.0
    F = np.zeros(gf.shape + (3, 3))
    F[..., 0, 0] = F[..., 1, 1] = F[..., 2, 2] = 1.0
    F += gf[..., None, None] * micro.f0[..., :, None] * micro.f0[..., None, :]
    F += gs[..., None, None] * micro.s0[..., :, None] * micro.s0[..., None, :]
    F += gn[..., None, None] * micro.n0[..., :, None] * micro.n0[..., None, :]
    return F


class ActivationSolver:
    """Semi-implicit stepper for the fiber-shortening field on a mesh."""

    def __init__(self, mesh, eta_map, params=None, dt=5e-5):
        self.mesh = mesh
        self.eta = eta_map.eta
        self.params = params or ActivationParams()
        self.dt = float(dt)
        self.gamma = np.zeros(mesh.n_nodes)
        self.clamp_events = 0

        from . import geometry as _g

        self.mu = np.full(mesh.n_nodes, self.params.mu_a)
        label_ids = {"healthy": _g.LABEL_HEALTHY, "grey": _g.LABEL_GREY}
        for name, value in self.params.mu_by_label.items():
            self.mu[eta_map.labels == label_ids[name]] = value

        coords = mesh.element_coords()
        self._grads, self._detJ = fem.element_geometry(coords)
        self._mass = fem.lumped_mass(coords, mesh.elems, mesh.n_nodes)
        # isotropic-diffusion gram tensors: K_e = sum_q c_q w_q detJ g g^T
        gg = self._grads @ np.swapaxes(self._grads, -1, -2)  # (E,Q,8,8)
        self._gram = gg * (self._detJ * fem._QW[None, :])[..., None, None]
        self._mass_dt = sparse.diags(self._mass / self.dt)
        # scar rows/cols are masked out of the diffusion operator so that
        # gamma stays exactly zero there ("no evolution" inside scars)
        self._active_diag = sparse.diags((self.eta > 0).astype(float))

    def step(self, ca_uM, i4f=None):
        """One step: implicit diffusion (frozen coefficient), explicit forcing."""
        p = self.params
        if i4f is None:
            i4f = np.ones(self.mesh.n_nodes)
        ca = np.asarray(ca_uM, dtype=float)
        n_clamped = int(np.count_nonzero(ca < p.ca_floor_uM))
        if n_clamped:
            self.clamp_events += n_clamped
            log.debug("1/g clamp applied at %d nodes", n_clamped)
        g = g_of_ca(ca, p, mu=self.mu)
        coef = self.eta * p.epsilon / g  # m^2/s diffusion coefficient per node

        phi = forcing(ca, self.gamma, i4f, p)
        rhs_nodal = self.eta / g * phi

        if p.epsilon > 0.0:
            coef_q = fem.interp_to_qp(self.mesh.elems, coef)
            ke = np.einsum("eq,eqnm->enm", coef_q, self._gram)
            K = fem.assemble_csr(self.mesh.elems, ke, self.mesh.n_nodes)
            K = self._active_diag @ K @ self._active_diag
            A = self._mass_dt + K
            rhs = self._mass * (self.gamma / self.dt + rhs_nodal)
            gamma_new, info = cg(
                A, rhs, x0=self.gamma, rtol=1e-10, atol=0.0,
                M=sparse.diags(1.0 / A.diagonal()),
            )
            if info != 0:
                raise RuntimeError(f"activation CG failed (info={info})")
        else:
            gamma_new = self.gamma + self.dt * rhs_nodal
        self.gamma = gamma_new
        return self.gamma


def local_ode_step(gamma, ca_uM, i4f, eta, params, dt, mu=None):
    """Scalar twin of the solver's local update (no mesh); test oracle."""
    g = g_of_ca(ca_uM, params, mu=mu)
    phi = forcing(ca_uM, gamma, i4f, params)
    return gamma + dt * eta / g * phi

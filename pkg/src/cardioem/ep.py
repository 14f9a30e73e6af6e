"""Monodomain tissue electrophysiology on the (possibly deformed) mesh.

Semi-implicit stepping: implicit diffusion with lumped mass, explicit
ionic reaction via Rush-Larsen, eta-scaled anisotropic conductivity with
scar exclusion, stimulation protocols, activation maps and cycle-length
detection.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from . import fem, ionic
from .geometry import LABEL_SCAR
from .ionic import ttp06

CG_RTOL = 1e-8


class EpSolverError(RuntimeError):
    pass


@dataclass
class DiffusionTensorParams:
    """Monodomain conductivities (m^2/s, homogenized)."""

    sigma_l: float = 0.6714e-4
    sigma_t: float = 0.0746e-4
    sigma_n: float = 0.0746e-4

    def __post_init__(self):
        if min(self.sigma_l, self.sigma_t, self.sigma_n) <= 0:
            raise ValueError("conductivities must be positive")
        if self.sigma_l < self.sigma_t or self.sigma_l < self.sigma_n:
            raise ValueError("sigma_l must dominate transverse conductivities")


@dataclass
class Stimulus:
    """Applied current pulse with a cubic spatial footprint.

    The footprint is the cube |x_d - c_d| <= half_width; the amplitude
    falls off as 1 - (rho/half_width)^3 in the Chebyshev distance rho, so
    the peak value amplitude (V/s) is reached at the center.
    """

    t_start: float
    center: tuple
    duration: float = 5e-3
    half_width: float = 2.5e-3
    amplitude: float = 35.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("stimulus duration must be positive")
        if self.amplitude < 0:
            raise ValueError("stimulus amplitude must be nonnegative")

    def weights(self, nodes):
        rho = np.max(np.abs(nodes - np.asarray(self.center)), axis=1)
        w = 1.0 - (rho / self.half_width) ** 3
        return np.where(rho <= self.half_width, w, 0.0)

    def active_at(self, t):
        return self.t_start <= t < self.t_start + self.duration


@dataclass
class StimulusEvent:
    t_delivered: float
    stimulus: Stimulus
    overlapped: bool
    captured: bool = False


def microstructure_tensor(f0, n0, params):
    """D_M = sigma_t I + (sigma_l - sigma_t) f0 f0^T + (sigma_n - sigma_t) n0 n0^T."""
    eye = np.eye(3)
    shape = f0.shape[:-1]
    D = np.broadcast_to(eye, shape + (3, 3)).copy() * params.sigma_t
    D += (params.sigma_l - params.sigma_t) * f0[..., :, None] * f0[..., None, :]
    D += (params.sigma_n - params.sigma_t) * n0[..., :, None] * n0[..., None, :]
    return D


def pullback_tensor(D, F):
    """Deformed-configuration diffusion: J F^{-1} D F^{-T} (batched)."""
    Finv, J = fem.inv3(F)
    if np.any(J <= 0):
        bad = np.argwhere(J <= 0)[0]
        raise EpSolverError(f"inverted element in diffusion pullback at {tuple(bad)}")
    return J[..., None, None] * np.einsum("...ij,...jk,...lk->...il", Finv, D, Finv)


def assemble_scalar_stiffness(mesh, tensor_qp, excluded=None, masked_nodes=None):
    """Stiffness over non-excluded elements with node masking.

    tensor_qp: (E,Q,3,3) diffusion tensor at the quadrature points of all
    elements. Rows and columns of masked nodes are zeroed (the step
    operator re-inserts identity there).
    """
    keep = slice(None) if excluded is None else ~np.asarray(excluded)
    conn = mesh.elems[keep]
    coords = mesh.nodes[conn]
    grads, detJ = fem.element_geometry(coords)
    D = tensor_qp[keep]
    kq = (grads @ D) @ np.swapaxes(grads, -1, -2)  # D symmetric
    ke = np.sum(kq * (detJ * fem._QW[None, :])[..., None, None], axis=1)
    K = fem.assemble_csr(conn, ke, mesh.n_nodes)
    K = 0.5 * (K + K.T)  # exact symmetry by construction
    if masked_nodes is not None and np.any(masked_nodes):
        P = sparse.diags((~masked_nodes).astype(float))
        K = P @ K @ P
    return K.tocsr()


def assemble_diffusion(mesh, micro, eta_map, params, deformation=None):
    """Monodomain stiffness operator with ischemia scaling and pullback.

    deformation: optional (E,Q,3,3) deformation gradient F per quadrature
    point; the integrand then uses J F^{-1} D_M F^{-T}.
    """
    conn = mesh.elems
    eta_q = fem.interp_to_qp(conn, eta_map.eta)
    f0_q = fem.interp_to_qp(conn, micro.f0)
    n0_q = fem.interp_to_qp(conn, micro.n0)
    f0_q /= np.maximum(np.linalg.norm(f0_q, axis=-1, keepdims=True), 1e-14)
    n0_q /= np.maximum(np.linalg.norm(n0_q, axis=-1, keepdims=True), 1e-14)
    D = microstructure_tensor(f0_q, n0_q, params) * eta_q[..., None, None]
    if deformation is not None:
        D = pullback_tensor(D, deformation)
    scar = eta_map.labels == LABEL_SCAR
    return assemble_scalar_stiffness(
        mesh, D, excluded=eta_map.excluded_elements, masked_nodes=scar
    )


def deformation_at_qp(mesh, displacement):
    """F = I + grad(d) at the quadrature points of every element."""
    coords = mesh.element_coords()
    grads, _ = fem.element_geometry(coords)
    d_el = displacement[mesh.elems]  # (E,8,3)
    G = np.einsum("eqnj,enk->eqkj", grads, d_el)  # dd_k/dX_j
    return np.broadcast_to(np.eye(3), G.shape).copy() + G


def detect_activation_times(t, v, threshold_mv=0.0):
    """First upward threshold crossing per node; NaN if never activated.

    t: (T,), v: (T,N) or (T,) potentials in mV. Crossing times are
    linearly interpolated between samples.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    n = v.shape[1]
    times = np.full(n, np.nan)
    done = np.zeros(n, dtype=bool)
    for k in range(1, t.shape[0]):
        crossed = (~done) & (v[k - 1] < threshold_mv) & (v[k] >= threshold_mv)
        if np.any(crossed):
            frac = (threshold_mv - v[k - 1, crossed]) / (v[k, crossed] - v[k - 1, crossed])
            times[crossed] = t[k - 1] + frac * (t[k] - t[k - 1])
            done |= crossed
    return times


def activation_crossings(t, v, threshold_mv=0.0, lockout_s=0.05):
    """All upward crossings at a single probe, with a refractory lockout."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    out = []
    last = -np.inf
    for k in range(1, len(t)):
        if v[k - 1] < threshold_mv <= v[k]:
            frac = (threshold_mv - v[k - 1]) / (v[k] - v[k - 1])
            tc = t[k - 1] + frac * (t[k] - t[k - 1])
            if tc - last >= lockout_s:
                out.append(tc)
                last = tc
    return np.asarray(out)


@dataclass
class BclResult:
    bcl_s: float | None
    activation_times: np.ndarray
    sustained: bool


def detect_bcl(t, v_probe, window_s=None, threshold_mv=0.0):
    """Median inter-activation interval at a probe node.

    Needs at least 3 activations inside the window; otherwise reports no
    sustained reentry (bcl_s None).
    """
    t = np.asarray(t, dtype=float)
    if window_s is not None:
        keep = t >= t[-1] - window_s
        t, v_probe = t[keep], np.asarray(v_probe)[keep]
    times = activation_crossings(t, v_probe, threshold_mv)
    if times.size < 3:
        return BclResult(bcl_s=None, activation_times=times, sustained=False)
    intervals = np.diff(times)
    return BclResult(
        bcl_s=float(np.median(intervals)), activation_times=times, sustained=True
    )


@dataclass
class EpRunResult:
    t: np.ndarray
    probe_traces: np.ndarray  # (T, n_probes) in mV
    events: list
    activation_times: np.ndarray  # (N,) first activation per node, seconds
    recorded_t: list = field(default_factory=list)
    recorded_v: list = field(default_factory=list)  # optional full snapshots


class EpSolver:
    """Owns the tissue state and advances it by semi-implicit steps."""

    def __init__(self, mesh, micro, eta_map, params=None, dt=5e-5,
                 initial_state=None, store_operator=True):
        self.mesh = mesh
        self.micro = micro
        self.eta_map = eta_map
        self.params = params or DiffusionTensorParams()
        self.dt = float(dt)
        self.time = 0.0

        self.scar = eta_map.labels == LABEL_SCAR
        self.active = ~self.scar
        self.active_idx = np.flatnonzero(self.active)
        n_act = self.active_idx.size

        y0 = ttp06.INITIAL_STATE if initial_state is None else np.asarray(initial_state)
        self.y = ionic.make_state(n_act, resting=y0)
        self.u = np.full(mesh.n_nodes, ionic.u_from_v(y0[0]))
        self.factors = ionic.scale_factors(eta_map.eta[self.active_idx])

        self._nodes_active = mesh.nodes[self.active_idx]
        self._mass = fem.lumped_mass(
            mesh.nodes[mesh.elems[~eta_map.excluded_elements]],
            mesh.elems[~eta_map.excluded_elements],
            mesh.n_nodes,
        )
        self.K = None
        self._A = None
        self._diag_inv = None
        if store_operator:
            self.set_deformation(None)

        self._act_time = np.full(mesh.n_nodes, np.nan)
        self._v_prev = self.v_full()
        self.crossed_now = np.zeros(mesh.n_nodes, dtype=bool)

    # -- operator management -------------------------------------------
    def set_deformation(self, deformation):
        """(Re)assemble the diffusion operator, optionally pulled back by F."""
        self.K = assemble_diffusion(
            self.mesh, self.micro, self.eta_map, self.params, deformation=deformation
        )
        mask_active = self.active.astype(float)
        A = sparse.diags(self._mass * mask_active / self.dt) + self.K
        # identity rows keep scar nodes (and massless excluded interiors) frozen
        A = A + sparse.diags((~self.active).astype(float))
        self._A = A.tocsr()
        self._diag_inv = 1.0 / self._A.diagonal()

    # -- state access ---------------------------------------------------
    def v_full(self):
        v = ionic.v_from_u(self.u)
        return v

    def snapshot(self):
        return {
            "time": self.time,
            "u": self.u.copy(),
            "y": self.y.copy(),
            "act_time": self._act_time.copy(),
        }

    def restore(self, snap):
        self.time = snap["time"]
        self.u = snap["u"].copy()
        self.y = snap["y"].copy()
        self._act_time = snap["act_time"].copy()
        self._v_prev = self.v_full()

    def calcium_uM(self):
        """Nodal intracellular calcium (uM); scar nodes stay at rest."""
        ca = np.full(self.mesh.n_nodes, ttp06.INITIAL_STATE[13] * 1000.0)
        ca[self.active_idx] = self.y[13] * 1000.0
        return ca

    # -- stepping -------------------------------------------------------
    def step(self, stimuli=()):
        """One semi-implicit monodomain step of length dt."""
        t = self.time
        i_app = None
        for s in stimuli:
            if s.active_at(t):
                w = s.weights(self._nodes_active) * s.amplitude
                i_app = w if i_app is None else i_app + w

        dt_ms = self.dt * 1000.0
        dvdt = ionic.rush_larsen_step(
            self.y, dt_ms, self.factors, i_app=i_app, update_v=False
        )
        # reaction source in nondimensional units (1/s)
        r = np.zeros(self.mesh.n_nodes)
        r[self.active_idx] = dvdt * (1000.0 / ttp06.V_SCALE_MV)

        rhs = self._mass * (self.u / self.dt + r)
        rhs = np.where(self.active, rhs, self.u)
        u_new, info = cg(
            self._A, rhs, x0=self.u, rtol=CG_RTOL, atol=0.0,
            M=sparse.diags(self._diag_inv),
        )
        if info != 0:
            res = np.linalg.norm(self._A @ u_new - rhs) / np.linalg.norm(rhs)
            raise EpSolverError(f"diffusion CG failed (info={info}, rel res={res:.2e})")
        self.u = u_new
        self.y[0] = ionic.v_from_u(self.u[self.active_idx])
        self.time = t + self.dt

        v_now = self.v_full()
        self.crossed_now = (self._v_prev < 0.0) & (v_now >= 0.0)
        first = np.isnan(self._act_time) & self.crossed_now
        if np.any(first):
            frac = (0.0 - self._v_prev[first]) / (v_now[first] - self._v_prev[first])
            self._act_time[first] = t + frac * self.dt
        self._v_prev = v_now
        return v_now

    def run_protocol(self, protocol, duration, probes=(), record_stride=0,
                     capture_window_s=0.02):
        """Advance the tissue under a stimulation protocol.

        protocol: list of Stimulus sorted by t_start. Logs one event per
        stimulus with an overlap note and whether its footprint captured
        (activated within capture_window_s of delivery).
        """
        protocol = sorted(protocol, key=lambda s: s.t_start)
        events = []
        for i, s in enumerate(protocol):
            overlapped = any(
                other is not s
                and other.t_start < s.t_start + s.duration
                and s.t_start < other.t_start + other.duration
                for other in protocol
            )
            events.append(StimulusEvent(t_delivered=s.t_start, stimulus=s,
                                        overlapped=overlapped))

        n_steps = int(round(duration / self.dt))
        probes = list(probes)
        times = np.empty(n_steps)
        traces = np.empty((n_steps, len(probes)))
        rec_t, rec_v = [], []
        footprints = [ev.stimulus.weights(self.mesh.nodes) > 0 for ev in events]
        for k in range(n_steps):
            v = self.step(stimuli=protocol)
            times[k] = self.time
            if probes:
                traces[k] = v[probes]
            if record_stride and (k % record_stride == 0):
                rec_t.append(self.time)
                rec_v.append(v.copy())
            if np.any(self.crossed_now):
                for ev, foot in zip(events, footprints):
                    if ev.captured:
                        continue
                    t_hi = ev.t_delivered + ev.stimulus.duration + capture_window_s
                    if ev.t_delivered <= self.time <= t_hi and np.any(self.crossed_now & foot):
                        ev.captured = True
        return EpRunResult(
            t=times,
            probe_traces=traces,
            events=events,
            activation_times=self._act_time.copy(),
            recorded_t=rec_t,
            recorded_v=rec_v,
        )

    def reset_activation_map(self):
        self._act_time = np.full(self.mesh.n_nodes, np.nan)


def conduction_velocity(nodes, act_times, direction, band_mask=None):
    """CV from the linear fit of activation time vs distance along a direction.

    Returns (cv, r_squared). Nodes without activation are ignored.
    """
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    s = nodes @ direction
    ok = np.isfinite(act_times)
    if band_mask is not None:
        ok &= band_mask
    s, tt = s[ok], act_times[ok]
    if s.size < 3:
        raise EpSolverError("not enough activated nodes for a CV fit")
    A = np.stack([s, np.ones_like(s)], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, tt, rcond=None)
    slope = coef[0]
    pred = A @ coef
    ss_res = float(np.sum((tt - pred) ** 2))
    ss_tot = float(np.sum((tt - tt.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return 1.0 / slope, r2

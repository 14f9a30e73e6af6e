"""Nonlinear active-strain mechanics of the ventricular wall.

Guccione strain energy with ischemia stiffening and a nearly
incompressible volumetric term; first Piola stress through the
multiplicative split F = F_E F_A; implicit dynamic (or quasi-static)
Newton solves with epicardial Robin, endocardial follower pressure and
the energy-consistent base traction; cavity volume and stress-free
reference recovery.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import activation as act
from . import fem

try:
    from . import _mech_cy

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on build environment
    _mech_cy = None
    BACKEND = "numpy"

log = logging.getLogger(__name__)

SCAR_STIFFENING = 4.56  # C_bar = C [eta + (1 - eta) * 4.56]


class MechanicsError(RuntimeError):
    pass


class NewtonError(MechanicsError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class InvertedElement(MechanicsError):
    def __init__(self, element):
        super().__init__(f"inverted element {element} (det F <= 0)")
        self.element = element


@dataclass
class GuccioneParams:
    C: float = 0.88e3        # Pa
    B: float = 5.0e4         # Pa, bulk
    b_ff: float = 8.0
    b_ss: float = 6.0
    b_nn: float = 3.0
    b_fs: float = 12.0
    b_fn: float = 3.0
    b_sn: float = 3.0
    rho_s: float = 1.0e3     # kg/m^3

    def __post_init__(self):
        if self.C <= 0 or self.B <= 0:
            raise ValueError("C and B must be positive")
        if min(self.b_ff, self.b_ss, self.b_nn, self.b_fs, self.b_fn, self.b_sn) < 0:
            raise ValueError("exponent weights must be nonnegative")

    def b_matrix(self):
        return np.array(
            [
                [self.b_ff, self.b_fs, self.b_fn],
                [self.b_fs, self.b_ss, self.b_sn],
                [self.b_fn, self.b_sn, self.b_nn],
            ]
        )


@dataclass
class EpicardialRobinParams:
    k_perp: float = 2.0e5   # Pa/m
    k_par: float = 2.0e5
    c_perp: float = 2.0e4   # Pa s/m
    c_par: float = 2.0e3

    def __post_init__(self):
        if min(self.k_perp, self.k_par, self.c_perp, self.c_par) < 0:
            raise ValueError("Robin coefficients must be nonnegative")


def c_bar(eta, C):
    return C * (eta + (1.0 - eta) * SCAR_STIFFENING)


def strain_energy(C_tensor, eta, params, frame=None):
    """Guccione + volumetric energy density (J/m^3) at a material point.

    C_tensor: right Cauchy-Green tensor of the elastic deformation.
    frame: 3x3 rotation [f0 s0 n0] columns; identity if omitted.
    """
    C_t = np.asarray(C_tensor, dtype=float)
    if not np.allclose(C_t, C_t.T, atol=1e-10):
        raise ValueError("C must be symmetric")
    w = np.linalg.eigvalsh(C_t)
    if np.any(w <= 0):
        raise ValueError("C must be positive definite")
    R = np.eye(3) if frame is None else np.asarray(frame, dtype=float)
    E = 0.5 * (C_t - np.eye(3))
    Eh = R.T @ E @ R
    Bm = params.b_matrix()
    Q = float(np.sum(Bm * Eh * Eh))
    J = float(np.sqrt(np.linalg.det(C_t)))
    w_vol = 0.5 * params.B * (J - 1.0) * np.log(J)
    return 0.5 * c_bar(eta, params.C) * np.expm1(Q) + w_vol


def _piola_batch(F, FA, R, eta_q, params, FA_inv=None, detFA=None):
    """First Piola stress P = P_E F_A^{-T} for batched inputs (...,3,3).

    Returns (P, J) with J = det(F). Raises InvertedElement on J <= 0.
    """
    if FA_inv is None:
        FA_inv, detFA = fem.inv3(FA)
    F_E = F @ FA_inv
    FE_inv, J_E = fem.inv3(F_E)
    J = J_E * detFA
    if np.any(J <= 0.0):
        bad = np.argwhere(J <= 0.0)[0]
        raise InvertedElement(tuple(bad))
    Rt = np.swapaxes(R, -1, -2)
    C_E = np.swapaxes(F_E, -1, -2) @ F_E
    E = C_E.copy()
    E[..., 0, 0] -= 1.0
    E[..., 1, 1] -= 1.0
    E[..., 2, 2] -= 1.0
    E *= 0.5
    Eh = Rt @ E @ R
    Bm = params.b_matrix()
    BEh = Bm * Eh
    Q = np.sum(BEh * Eh, axis=(-2, -1))
    cb = c_bar(eta_q, params.C)
    Sh = (cb * np.exp(Q))[..., None, None] * BEh
    S = R @ Sh @ Rt
    dwvol = 0.5 * params.B * (np.log(J_E) + 1.0 - 1.0 / J_E)
    P_E = F_E @ S + (dwvol * J_E)[..., None, None] * np.swapaxes(FE_inv, -1, -2)
    P = detFA[..., None, None] * (P_E @ np.swapaxes(FA_inv, -1, -2))
    return P, J


def first_piola(F, gamma_f, micro_point, eta, params, lam=0.5, act_params=None):
    """Point API for the stress: builds F_A from (gamma_f, lam) first.

    micro_point: Microstructure-like with unit f0, s0, n0 of shape (3,).
    """
    ap = act_params or act.ActivationParams()
    f0 = np.asarray(micro_point.f0, dtype=float).reshape(1, 3)
    s0 = np.asarray(micro_point.s0, dtype=float).reshape(1, 3)
    n0 = np.asarray(micro_point.n0, dtype=float).reshape(1, 3)

    class _Frame:
        pass

    fr = _Frame()
    fr.f0, fr.s0, fr.n0 = f0, s0, n0
    FA = act.assemble_active_deformation(np.array([gamma_f]), np.array([lam]), fr, ap)[0]
    R = np.stack([f0[0], s0[0], n0[0]], axis=1)
    P, _ = _piola_batch(
        np.asarray(F, dtype=float)[None], FA[None], R[None], np.array([eta]), params
    )
    return P[0]


def strain_energy_of_F(F, FA, frame_R, eta, params):
    """Total energy density as a function of F (finite-difference oracle)."""
    FA_inv = np.linalg.inv(FA)
    F_E = np.asarray(F) @ FA_inv
    C_E = F_E.T @ F_E
    return strain_energy(C_E, eta, params, frame=frame_R)


def _face_cache(mesh, tag):
    quads = mesh.facets(tag)
    coords = mesh.nodes[quads]
    _, areavec, N = fem.quad_face_areas(coords)
    return quads, coords, areavec, N


def orient_boundary_facets(mesh):
    """Flip facet node order so area vectors point out of the tissue."""
    elem_of = {}
    for ei, el in enumerate(mesh.elems):
        for face in fem.HEX_FACES:
            elem_of[tuple(sorted(el[face]))] = ei
    centroids = mesh.nodes[mesh.elems].mean(axis=1)
    flipped = 0
    for k, quad in enumerate(mesh.facet_nodes):
        coords = mesh.nodes[quad]
        _, avec, _ = fem.quad_face_areas(coords[None])
        n = avec[0].sum(axis=0)
        ei = elem_of[tuple(sorted(quad))]
        if np.dot(n, coords.mean(axis=0) - centroids[ei]) < 0:
            mesh.facet_nodes[k] = quad[::-1]
            flipped += 1
    return flipped


@dataclass
class MechState:
    d: np.ndarray            # (N,3) displacement
    v: np.ndarray            # (N,3) velocity
    p_lv: float = 0.0        # Pa
    time: float = 0.0


@dataclass
class NewtonInfo:
    iterations: int
    residual: float
    converged: bool


class MechSolver:
    """Implicit mechanics on a tagged hexahedral mesh."""

    def __init__(self, mesh, micro, eta_map, lam, guccione=None, robin=None,
                 act_params=None, dt=1e-3, quasi_static=False,
                 newton_rtol=1e-6, newton_max_iter=20):
        self.mesh = mesh
        self.params = guccione or GuccioneParams()
        self.robin = robin or EpicardialRobinParams()
        self.act_params = act_params or act.ActivationParams()
        self.dt = float(dt)
        self.quasi_static = quasi_static
        self.newton_rtol = newton_rtol
        self.newton_max_iter = newton_max_iter

        orient_boundary_facets(mesh)
        self.n = mesh.n_nodes
        self.conn = mesh.elems
        coords = mesh.element_coords()
        self._grads, self._detJ = fem.element_geometry(coords)
        self._wdet = self._detJ * fem._QW[None, :]

        # quadrature-point microstructure frame (orthonormalized)
        f0q = fem.interp_to_qp(self.conn, micro.f0)
        s0q = fem.interp_to_qp(self.conn, micro.s0)
        f0q /= np.linalg.norm(f0q, axis=-1, keepdims=True)
        s0q -= np.sum(s0q * f0q, axis=-1, keepdims=True) * f0q
        s0q /= np.linalg.norm(s0q, axis=-1, keepdims=True)
        n0q = np.cross(f0q, s0q)
        self._R = np.ascontiguousarray(np.stack([f0q, s0q, n0q], axis=-1))  # (E,Q,3,3) columns

        self._eta_q = fem.interp_to_qp(self.conn, eta_map.eta)
        self._lam_q = fem.interp_to_qp(self.conn, lam.lam if hasattr(lam, "lam") else lam)
        self._micro = micro

        mass = fem.lumped_mass(coords, self.conn, self.n) * self.params.rho_s
        self._mass3 = np.repeat(mass, 3)

        self._endo = _face_cache(mesh, "endo")
        self._base = _face_cache(mesh, "base")
        self._epi_quads = mesh.facets("epi")
        self._krob_static, self._krob_visc = self._assemble_robin()

        self.state = MechState(d=np.zeros((self.n, 3)), v=np.zeros((self.n, 3)))
        self._dof = (3 * self.conn[:, :, None] + np.arange(3)[None, None, :]).reshape(-1, 24)
        self._splu = None
        self.convergence_log = []
        self.backend = BACKEND
        self._grads = np.ascontiguousarray(self._grads)
        self._wdet = np.ascontiguousarray(self._wdet)
        self._cb_q = np.ascontiguousarray(c_bar(self._eta_q, self.params.C))
        self._bmat = np.ascontiguousarray(self.params.b_matrix())

    # ---------------- constitutive/assembly core -----------------------
    def _fa_at_qp(self, gamma_nodal):
        gf_q = fem.interp_to_qp(self.conn, gamma_nodal)

        class _F:
            pass

        fr = _F()
        fr.f0 = self._R[..., 0]
        fr.s0 = self._R[..., 1]
        fr.n0 = self._R[..., 2]
        return act.assemble_active_deformation(gf_q, self._lam_q, fr, self.act_params)

    def _internal_forces_el(self, d_el, FA, FA_inv=None, detFA=None):
        """Element internal force vectors (E,8,3) for element displacements."""
        if self.backend == "compiled":
            if FA_inv is None:
                FA_inv, detFA = fem.inv3(FA)
            f = np.empty((d_el.shape[0], 8, 3))
            bad = _mech_cy.internal_forces(
                self._grads, self._wdet, np.ascontiguousarray(d_el), FA_inv,
                detFA, self._R, self._cb_q, self.params.B, self._bmat, f)
            if bad >= 0:
                raise InvertedElement(int(bad))
            return f
        # F_kj = delta_kj + sum_n d[n,k] grad[n,j]
        G = np.swapaxes(d_el, 1, 2)[:, None, :, :] @ self._grads
        F = G + np.eye(3)
        P, _ = _piola_batch(F, FA, self._R, self._eta_q, self.params,
                            FA_inv=FA_inv, detFA=detFA)
        f_q = self._grads @ np.swapaxes(P, -1, -2)  # (E,Q,8,3)
        return np.sum(f_q * self._wdet[:, :, None, None], axis=1)

    def _assemble_robin(self):
        """Constant sparse operators for the epicardial Robin condition."""
        quads, coords, areavec, N = _face_cache(self.mesh, "epi")
        area = np.linalg.norm(areavec, axis=2)  # (F,4) reference measures
        nrm = areavec / area[..., None]
        rows, cols, vals_k, vals_c = [], [], [], []
        rb = self.robin
        for q in range(4):
            nn = nrm[:, q, :, None] * nrm[:, q, None, :]
            Ak = rb.k_perp * nn + rb.k_par * (np.eye(3) - nn)
            Ac = rb.c_perp * nn + rb.c_par * (np.eye(3) - nn)
            w = area[:, q]
            for a in range(4):
                for b in range(4):
                    coeff = (N[q, a] * N[q, b] * w)
                    blk_k = coeff[:, None, None] * Ak
                    blk_c = coeff[:, None, None] * Ac
                    ra = (3 * quads[:, a][:, None, None] + np.arange(3)[None, :, None])
                    cb_ = (3 * quads[:, b][:, None, None] + np.arange(3)[None, None, :])
                    rows.append(np.broadcast_to(ra, blk_k.shape).ravel())
                    cols.append(np.broadcast_to(cb_, blk_k.shape).ravel())
                    vals_k.append(blk_k.ravel())
                    vals_c.append(blk_c.ravel())
        shape = (3 * self.n, 3 * self.n)
        Kk = sparse.coo_matrix((np.concatenate(vals_k), (np.concatenate(rows), np.concatenate(cols))), shape=shape).tocsr()
        Kc = sparse.coo_matrix((np.concatenate(vals_c), (np.concatenate(rows), np.concatenate(cols))), shape=shape).tocsr()
        return Kk, Kc

    def _pressure_forces(self, d, p_lv):
        """Follower endocardial load and base traction (global (N,3) array)."""
        f = np.zeros((self.n, 3))
        quads_e, coords_e, _, N_e = self._endo
        x_e = coords_e + d[quads_e]
        _, avec_e, _ = fem.quad_face_areas(x_e)
        fe = -p_lv * np.einsum("qn,fqk->fnk", N_e, avec_e)
        np.add.at(f, quads_e.ravel(), fe.reshape(-1, 3))

        # energy-consistent base traction: net endocardial pressure force
        # spread over the deformed base area
        quads_b, coords_b, _, N_b = self._base
        x_b = coords_b + d[quads_b]
        _, avec_b, _ = fem.quad_face_areas(x_b)
        G = p_lv * avec_e.sum(axis=(0, 1))
        S = np.linalg.norm(avec_b, axis=2).sum()
        fb = np.einsum("qn,fq,k->fnk", N_b, np.linalg.norm(avec_b, axis=2), G / S)
        np.add.at(f, quads_b.ravel(), fb.reshape(-1, 3))
        return f

    def residual(self, d, gamma_nodal=None, p_lv=0.0, FA=None,
                 d_old=None, v_old=None, FA_inv=None, detFA=None):
        """Global residual R(d) (3N,) of the time-discrete momentum balance."""
        if FA is None:
            FA = self._fa_at_qp(np.zeros(self.n) if gamma_nodal is None else gamma_nodal)
        d_el = d[self.conn]
        f_int = np.zeros((self.n, 3))
        fe = self._internal_forces_el(d_el, FA, FA_inv=FA_inv, detFA=detFA)
        np.add.at(f_int, self.conn.ravel(), fe.reshape(-1, 3))
        R = f_int.ravel() - self._pressure_forces(d, p_lv).ravel()
        if self.quasi_static:
            R += self._krob_static @ d.ravel()
        else:
            v_new = (d - d_old) / self.dt
            R += self._krob_static @ d.ravel() + self._krob_visc @ v_new.ravel()
            accel = (d - d_old - self.dt * v_old) / self.dt**2
            R += self._mass3 * accel.ravel()
        return R

    def _tangent(self, d, FA, p_lv, FA_inv=None, detFA=None):
        """Sparse Jacobian: element FD for internal forces, face FD for the
        follower load, exact constant Robin/inertia terms."""
        d_el = d[self.conn]
        scale = 1e-7 * max(1.0, float(np.max(np.abs(d))) if d.size else 1.0)
        E = d_el.shape[0]
        K_el = np.empty((E, 24, 24))
        if self.backend == "compiled":
            if FA_inv is None:
                FA_inv, detFA = fem.inv3(FA)
            bad = _mech_cy.element_tangents(
                self._grads, self._wdet, np.ascontiguousarray(d_el), FA_inv,
                detFA, self._R, self._cb_q, self.params.B, self._bmat,
                scale, K_el)
            if bad >= 0:
                raise InvertedElement(int(bad))
        else:
            base = self._internal_forces_el(d_el, FA, FA_inv=FA_inv, detFA=detFA)
            for l in range(24):
                n_l, k_l = divmod(l, 3)
                d_pert = d_el.copy()
                d_pert[:, n_l, k_l] += scale
                df = (self._internal_forces_el(d_pert, FA, FA_inv=FA_inv, detFA=detFA) - base) / scale
                K_el[:, :, l] = df.reshape(E, 24)
        rows = np.repeat(self._dof, 24, axis=1).ravel()
        cols = np.tile(self._dof, (1, 24)).ravel()
        J = sparse.coo_matrix((K_el.ravel(), (rows, cols)),
                              shape=(3 * self.n, 3 * self.n)).tocsr()

        # follower-pressure tangent, local per endo face
        quads_e, coords_e, _, N_e = self._endo
        Fc = quads_e.shape[0]
        x0 = coords_e + d[quads_e]
        _, avec0, _ = fem.quad_face_areas(x0)
        f0 = -p_lv * np.einsum("qn,fqk->fnk", N_e, avec0)
        Kf = np.empty((Fc, 12, 12))
        for l in range(12):
            n_l, k_l = divmod(l, 3)
            xp = x0.copy()
            xp[:, n_l, k_l] += scale
            _, avp, _ = fem.quad_face_areas(xp)
            fp = -p_lv * np.einsum("qn,fqk->fnk", N_e, avp)
            Kf[:, :, l] = ((fp - f0) / scale).reshape(Fc, 12)
        dof_f = (3 * quads_e[:, :, None] + np.arange(3)[None, None, :]).reshape(-1, 12)
        rows_f = np.repeat(dof_f, 12, axis=1).ravel()
        cols_f = np.tile(dof_f, (1, 12)).ravel()
        J = J - sparse.coo_matrix((Kf.ravel(), (rows_f, cols_f)),
                                  shape=(3 * self.n, 3 * self.n)).tocsr()

        if self.quasi_static:
            J = J + self._krob_static
        else:
            J = J + self._krob_static + self._krob_visc / self.dt
            J = J + sparse.diags(self._mass3 / self.dt**2)
        return J

    # ---------------- Newton solve --------------------------------------
    def solve(self, gamma_nodal=None, p_lv=0.0, d0=None, d_old=None, v_old=None,
              reuse_tangent=False):
        """Solve one implicit step (or static equilibrium) by Newton.

        Returns (d_new, NewtonInfo). State is not committed here.
        """
        gamma_nodal = np.zeros(self.n) if gamma_nodal is None else gamma_nodal
        FA = self._fa_at_qp(gamma_nodal)
        FA_inv, detFA = fem.inv3(FA)
        d_old = self.state.d if d_old is None else d_old
        v_old = self.state.v if v_old is None else v_old
        d = (d_old if d0 is None else d0).copy()

        def res(dd):
            return self.residual(dd, p_lv=p_lv, FA=FA, d_old=d_old, v_old=v_old,
                                 FA_inv=FA_inv, detFA=detFA)

        R = res(d)
        scale = max(np.max(np.abs(R)), self._force_scale(p_lv), 1e-12)
        it = 0
        fresh_tangent = False
        while True:
            rel = np.max(np.abs(R)) / scale
            if rel < self.newton_rtol:
                info = NewtonInfo(it, rel, True)
                self.convergence_log.append(info)
                return d, info
            if it >= self.newton_max_iter:
                raise NewtonError(
                    f"Newton did not converge in {it} iterations (rel={rel:.3e})",
                    residual=rel,
                )
            stale_grind = it >= 8 and not fresh_tangent
            if self._splu is None or stale_grind or not (reuse_tangent or fresh_tangent):
                J = self._tangent(d, FA, p_lv, FA_inv=FA_inv, detFA=detFA)
                self._splu = splu(J.tocsc(), permc_spec="MMD_AT_PLUS_A",
                                  options={"SymmetricMode": True})
                fresh_tangent = True
            delta = self._splu.solve(-R)
            alpha = 1.0
            rn = np.max(np.abs(R))
            R_try = None
            for _ in range(10):
                try:
                    R_try = res(d + alpha * delta.reshape(-1, 3))
                except InvertedElement:
                    alpha *= 0.5
                    continue
                if np.max(np.abs(R_try)) < (1.0 - 1e-4 * alpha) * rn or alpha < 1e-3:
                    break
                alpha *= 0.5
            if R_try is None:
                raise NewtonError("line search exhausted", residual=rn / scale)
            # stale-tangent policy: a stalled step invalidates the cached LU
            if alpha < 1.0 or np.max(np.abs(R_try)) > 0.85 * rn:
                fresh_tangent = False
                reuse_tangent = False
            d = d + alpha * delta.reshape(-1, 3)
            R = R_try
            it += 1

    def _force_scale(self, p_lv):
        # characteristic surface force for the relative residual
        _, coords_e, avec_e, _ = self._endo
        area = np.linalg.norm(avec_e, axis=2).sum()
        return max(abs(p_lv) * area * 0.01, self.params.C * self.mesh.h_mean**2 * 1e-3)

    def commit(self, d_new, p_lv=None, dt=None):
        dt = dt or self.dt
        self.state.v = (d_new - self.state.d) / dt
        self.state.d = d_new
        if p_lv is not None:
            self.state.p_lv = p_lv
        self.state.time += dt

    # ---------------- cavity volume -------------------------------------
    def cavity_volume(self, d=None):
        return cavity_volume(self.mesh, self.state.d if d is None else d)


def nodal_fiber_stretch_invariant(mesh, d, micro):
    """I_4f = f0 . C f0 recovered at the nodes from quadrature values."""
    coords = mesh.element_coords()
    grads, detJ = fem.element_geometry(coords)
    d_el = d[mesh.elems]
    G = np.swapaxes(d_el, 1, 2)[:, None, :, :] @ grads
    F = G + np.eye(3)
    f0q = fem.interp_to_qp(mesh.elems, micro.f0)
    f0q /= np.linalg.norm(f0q, axis=-1, keepdims=True)
    Ff = np.einsum("eqkj,eqj->eqk", F, f0q)
    i4f_q = np.sum(Ff * Ff, axis=-1)
    w = detJ * fem._QW[None, :]
    contrib = np.einsum("eq,qn,eq->en", w, fem.N_QP, i4f_q)
    wnode = np.einsum("eq,qn->en", w, fem.N_QP)
    out = np.zeros(mesh.n_nodes)
    wsum = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elems.ravel(), contrib.ravel())
    np.add.at(wsum, mesh.elems.ravel(), wnode.ravel())
    return out / wsum


def _endo_ring(mesh):
    """Ordered boundary loop of the endocardial patch."""
    quads = mesh.facets("endo")
    edge_count = {}
    for q in quads:
        for k in range(4):
            e = (q[k], q[(k + 1) % 4])
            key = tuple(sorted(e))
            edge_count.setdefault(key, []).append(e)
    boundary = [v[0] for v in edge_count.values() if len(v) == 1]
    if not boundary:
        raise MechanicsError("endocardial surface has no boundary ring")
    nxt = {a: b for a, b in boundary}
    start = boundary[0][0]
    loop = [start]
    while True:
        cur = nxt.get(loop[-1])
        if cur is None:
            raise MechanicsError("endocardial ring is not a closed loop")
        if cur == start:
            break
        loop.append(cur)
        if len(loop) > len(boundary) + 1:
            raise MechanicsError("endocardial ring does not close")
    return np.asarray(loop, dtype=np.int64)


def cavity_volume(mesh, d=None):
    """Volume enclosed by the deformed endocardium plus a base cap.

    Divergence-theorem surface integral; the cap is a triangle fan over
    the deformed endo boundary ring.
    """
    x = mesh.nodes if d is None else mesh.nodes + d
    quads = mesh.facets("endo")
    pts, avec, _ = fem.quad_face_areas(x[quads])
    vol = np.einsum("fqk,fqk->", pts, avec) / 3.0
    ring = _endo_ring(mesh)
    rx = x[ring]
    c = rx.mean(axis=0)
    e1 = rx
    e2 = np.roll(rx, -1, axis=0)
    n_tri = 0.5 * np.cross(e2 - c, e1 - c)
    x_tri = (c + e1 + e2) / 3.0
    vol_cap = np.einsum("tk,tk->", x_tri, n_tri) / 3.0
    return abs(float(vol + vol_cap))


def recover_reference_configuration(mesh, edp_pa, micro, eta_map, lam,
                                    guccione=None, robin=None, act_params=None,
                                    tol_m=1e-4, max_iter=30, ramp_steps=4):
    """Backward-displacement fixed point for the stress-free configuration.

    Inflating the returned mesh to edp_pa reproduces the input (imaged)
    geometry within tol_m in the nodal max-norm. Returns (mesh_ref,
    converged_flag, mismatch_history).
    """
    from dataclasses import replace as _replace

    target = mesh.nodes.copy()
    ref_nodes = mesh.nodes.copy()
    history = []
    converged = False
    for k in range(max_iter):
        mesh_k = _replace(mesh, nodes=ref_nodes.copy())
        d_inf = inflate_static(mesh_k, edp_pa, micro, eta_map, lam,
                               guccione=guccione, robin=robin,
                               act_params=act_params, ramp_steps=ramp_steps)
        mismatch = ref_nodes + d_inf - target
        err = float(np.max(np.linalg.norm(mismatch, axis=1)))
        history.append(err)
        if err < tol_m:
            converged = True
            break
        ref_nodes = ref_nodes - mismatch
    if not converged:
        log.warning("reference recovery stopped at mismatch %.3e m", history[-1])
    mesh_ref = _replace(mesh, nodes=ref_nodes)
    return mesh_ref, converged, history


def inflate_static(mesh, p_lv, micro, eta_map, lam, guccione=None, robin=None,
                   act_params=None, ramp_steps=4, d0=None):
    """Quasi-static passive inflation to a target pressure; returns d."""
    solver = MechSolver(mesh, micro, eta_map, lam, guccione=guccione,
                        robin=robin, act_params=act_params, quasi_static=True)
    d = np.zeros((mesh.n_nodes, 3)) if d0 is None else d0.copy()
    steps = max(1, ramp_steps)
    k = 0
    p_prev = 0.0
    dp = p_lv / steps
    p = dp
    while p_prev < p_lv - 1e-12:
        try:
            d, _ = solver.solve(p_lv=p, d0=d)
            p_prev = p
            p = min(p_lv, p + dp)
        except (NewtonError, InvertedElement):
            dp *= 0.5
            p = p_prev + dp
            k += 1
            if k > 12:
                raise
    return d

"""Rule-based myocardial microstructure (f0, s0, n0).

Laplace-Dirichlet construction: the transmural coordinate provides the
wall-normal direction, an apicobasal potential the longitudinal one, and
the helix/sheet angles rotate the local triad linearly in the transmural
coordinate between their endo and epi values.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import fem, geometry

log = logging.getLogger(__name__)

FALLBACK_LIMIT = 1e-3  # build fails above this fraction of fallback nodes


class FiberError(RuntimeError):
    pass


@dataclass
class Microstructure:
    f0: np.ndarray  # (N,3) fiber direction
    s0: np.ndarray  # (N,3) sheet direction
    n0: np.ndarray  # (N,3) sheet normal
    fallback_nodes: int = 0

    def check_invariants(self, tol_norm=1e-10, tol_orth=1e-8):
        for v in (self.f0, self.s0, self.n0):
            if not np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=tol_norm):
                raise FiberError("frame vectors are not unit length")
        if not (
            np.all(np.abs(np.sum(self.f0 * self.s0, axis=1)) < tol_orth)
            and np.all(np.abs(np.sum(self.f0 * self.n0, axis=1)) < tol_orth)
            and np.all(np.abs(np.sum(self.s0 * self.n0, axis=1)) < tol_orth)
        ):
            raise FiberError("frame vectors are not orthogonal")
        det = np.einsum(
            "ni,ni->n", self.f0, np.cross(self.s0, self.n0)
        )
        if not np.allclose(det, 1.0, atol=tol_orth):
            raise FiberError("frame is not right-handed")


def nodal_gradient(mesh, field):
    """Volume-weighted recovery of grad(field) at the nodes."""
    coords = mesh.element_coords()
    grads, detJ = fem.element_geometry(coords)
    vals = field[mesh.elems]  # (E,8)
    gq = np.einsum("eqnj,en->eqj", grads, vals)  # (E,Q,3)
    w = detJ * fem._QW[None, :]
    # scatter w*g to the nodes of each element via shape-function weights
    contrib = np.einsum("eq,qn,eqj->enj", w, fem.N_QP, gq)
    wnode = np.einsum("eq,qn->en", w, fem.N_QP)
    g = np.zeros((mesh.n_nodes, 3))
    wsum = np.zeros(mesh.n_nodes)
    np.add.at(g, mesh.elems.ravel(), contrib.reshape(-1, 3))
    np.add.at(wsum, mesh.elems.ravel(), wnode.ravel())
    return g / wsum[:, None]


def apicobasal_potential(mesh):
    """Laplace potential 0 at the apex neighborhood, 1 on the base."""
    base = mesh.facet_node_set("base")
    zmin = mesh.nodes[:, 2].min()
    span = mesh.nodes[:, 2].max() - zmin
    apex = np.flatnonzero(mesh.nodes[:, 2] <= zmin + 0.02 * span)
    return geometry.solve_laplace(mesh, [(apex, 0.0), (base, 1.0)])


def _normalize_rows(v, fallback=None):
    norms = np.linalg.norm(v, axis=1)
    bad = norms < 1e-12
    out = np.where(bad[:, None], 1.0, v / np.where(bad, 1.0, norms)[:, None])
    return out, bad


def generate_fibers(mesh, transmural, alpha_endo, alpha_epi, beta_endo, beta_epi,
                    apicobasal=None):
    """Build the orthonormal (f0, s0, n0) frame at every node.

    Angles in degrees; the helix angle alpha and sheet angle beta vary
    linearly in the normalized transmural coordinate. For slabs the
    apicobasal direction defaults to +y (transmural +z, circumferential
    +x); for LV meshes it comes from an apex-to-base Laplace solve.
    """
    lam = transmural.lam
    denom = transmural.lam_epi - transmural.lam_endo
    lam_hat = np.zeros_like(lam) if denom == 0 else (lam - transmural.lam_endo) / denom

    e_t = nodal_gradient(mesh, lam)  # transmural (endo -> epi)
    e_t, bad_t = _normalize_rows(e_t)

    if apicobasal is None:
        if mesh.meta.get("kind") == "slab":
            ab_dir = np.tile(np.array([0.0, 1.0, 0.0]), (mesh.n_nodes, 1))
        else:
            phi = apicobasal_potential(mesh)
            ab_dir = nodal_gradient(mesh, phi)
    else:
        ab_dir = np.asarray(apicobasal, dtype=float)
        if ab_dir.ndim == 1:
            ab_dir = np.tile(ab_dir, (mesh.n_nodes, 1))

    # project the apicobasal direction into the surface tangent plane
    e_l = ab_dir - np.sum(ab_dir * e_t, axis=1)[:, None] * e_t
    e_l, bad_l = _normalize_rows(e_l)
    degenerate = bad_t | bad_l
    n_fallback = int(np.count_nonzero(degenerate))
    if n_fallback:
        log.warning("fiber frame fallback at %d of %d nodes", n_fallback, mesh.n_nodes)
        if n_fallback > FALLBACK_LIMIT * mesh.n_nodes:
            raise FiberError(
                f"degenerate local triad at {n_fallback} nodes "
                f"(> {FALLBACK_LIMIT:.1%} of {mesh.n_nodes})"
            )
        for i in np.flatnonzero(degenerate):
            t = e_t[i]
            probe = np.eye(3)[np.argmin(np.abs(t))]
            l = probe - (probe @ t) * t
            e_l[i] = l / np.linalg.norm(l)

    e_c = np.cross(e_l, e_t)  # circumferential completes the triad

    alpha = np.deg2rad(alpha_endo + (alpha_epi - alpha_endo) * lam_hat)
    beta = np.deg2rad(beta_endo + (beta_epi - beta_endo) * lam_hat)

    ca, sa = np.cos(alpha)[:, None], np.sin(alpha)[:, None]
    f0 = ca * e_c + sa * e_l
    l1 = -sa * e_c + ca * e_l  # in-plane direction orthogonal to f0
    cb, sb = np.cos(beta)[:, None], np.sin(beta)[:, None]
    s0 = cb * e_t + sb * l1
    n0 = np.cross(f0, s0)

    micro = Microstructure(f0=f0, s0=s0, n0=n0, fallback_nodes=n_fallback)
    micro.check_invariants()
    return micro

"""Trilinear hexahedral (Q1) finite element toolbox.

Shape functions, 2x2x2 Gauss quadrature and vectorized element-batch
geometry kernels shared by the diffusion, activation and mechanics
assemblies. Element node ordering follows VTK cell type 12.
"""

import numpy as np
from scipy import sparse

# Reference-element vertex sign pattern, VTK hexahedron ordering.
_SIGNS = np.array(
    [
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, -1, +1],
        [+1, -1, +1],
        [+1, +1, +1],
        [-1, +1, +1],
    ],
    dtype=float,
)

# Local quad faces of the reference hex (outward oriented), VTK ordering.
HEX_FACES = np.array(
    [
        [0, 3, 2, 1],  # zeta = -1
        [4, 5, 6, 7],  # zeta = +1
        [0, 1, 5, 4],  # eta  = -1
        [2, 3, 7, 6],  # eta  = +1
        [0, 4, 7, 3],  # xi   = -1
        [1, 2, 6, 5],  # xi   = +1
    ],
    dtype=np.int64,
)


def shape_functions(xi):
    """N_i at points xi (M,3) -> (M,8)."""
    xi = np.atleast_2d(xi)
    return 0.125 * np.prod(1.0 + xi[:, None, :] * _SIGNS[None, :, :], axis=2)


def shape_gradients(xi):
    """dN_i/dxi at points xi (M,3) -> (M,8,3) in reference coordinates."""
    xi = np.atleast_2d(xi)
    terms = 1.0 + xi[:, None, :] * _SIGNS[None, :, :]  # (M,8,3)
    grads = np.empty((xi.shape[0], 8, 3))
    for d in range(3):
        others = [k for k in range(3) if k != d]
        grads[:, :, d] = 0.125 * _SIGNS[None, :, d] * terms[:, :, others[0]] * terms[:, :, others[1]]
    return grads


def gauss_points():
    """2x2x2 Gauss rule: (8,3) points and (8,) weights."""
    g = 1.0 / np.sqrt(3.0)
    pts = _SIGNS * g
    wts = np.ones(8)
    return pts, wts


_QP, _QW = gauss_points()
N_QP = shape_functions(_QP)          # (8q, 8n)
DN_QP = shape_gradients(_QP)         # (8q, 8n, 3)
N_VTX = shape_functions(_SIGNS)      # shape functions at the 8 vertices
DN_VTX = shape_gradients(_SIGNS)


def inv3(A):
    """Batched 3x3 inverse and determinant: A (...,3,3) -> (inv, det)."""
    a = A[..., 0, 0]
    b = A[..., 0, 1]
    c = A[..., 0, 2]
    d = A[..., 1, 0]
    e = A[..., 1, 1]
    f = A[..., 1, 2]
    g = A[..., 2, 0]
    h = A[..., 2, 1]
    i = A[..., 2, 2]
    co00 = e * i - f * h
    co01 = f * g - d * i
    co02 = d * h - e * g
    det = a * co00 + b * co01 + c * co02
    inv = np.empty_like(A)
    inv[..., 0, 0] = co00
    inv[..., 1, 0] = co01
    inv[..., 2, 0] = co02
    inv[..., 0, 1] = c * h - b * i
    inv[..., 1, 1] = a * i - c * g
    inv[..., 2, 1] = b * g - a * h
    inv[..., 0, 2] = b * f - c * e
    inv[..., 1, 2] = c * d - a * f
    inv[..., 2, 2] = a * e - b * d
    inv /= det[..., None, None]
    return inv, det


def element_geometry(coords, dn=None):
    """Jacobian data for a batch of elements.

    coords: (E,8,3) node coordinates. Returns (grads, detJ) with
    grads (E,Q,8,3) physical shape-function gradients and detJ (E,Q).
    """
    if dn is None:
        dn = DN_QP
    # J[e,q,i,j] = sum_n dN[q,n,i] X[e,n,j]
    J = np.einsum("qni,enj->eqij", dn, coords)
    Jinv, detJ = inv3(J)
    # grad[e,q,n,j] = dN[q,n,i] Jinv[e,q,i,j]
    grads = np.einsum("qni,eqij->eqnj", dn, Jinv)
    return grads, detJ


def jacobian_dets_at_vertices(coords):
    """det(dx/dxi) at the 8 vertices of each element: (E,8)."""
    J = np.einsum("qni,enj->eqij", DN_VTX, coords)
    return np.linalg.det(J)


def assemble_csr(conn, elem_mats, n_nodes):
    """Scatter element matrices (E,8,8) into a CSR matrix (n_nodes^2)."""
    e, k, _ = elem_mats.shape
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    mat = sparse.coo_matrix(
        (elem_mats.ravel(), (rows, cols)), shape=(n_nodes, n_nodes)
    )
    return mat.tocsr()


def stiffness_matrix(coords, conn, n_nodes, tensor):
    """Assemble int grad(v) . D grad(u) over an element batch.

    tensor: per-quadrature-point diffusion tensor (E,Q,3,3), or (E,3,3)
    constant per element, or (3,3) global.
    """
    grads, detJ = element_geometry(coords)
    E, Q = detJ.shape
    D = np.asarray(tensor, dtype=float)
    if D.shape == (3, 3):
        D = np.broadcast_to(D, (E, Q, 3, 3))
    elif D.shape == (E, 3, 3):
        D = np.broadcast_to(D[:, None, :, :], (E, Q, 3, 3))
    Dg = np.einsum("eqij,eqnj->eqni", D, grads)
    ke = np.einsum("eqni,eqmi,eq,q->enm", grads, Dg, detJ, _QW)
    K = assemble_csr(conn, ke, n_nodes)
    return (0.5 * (K + K.T)).tocsr()


def lumped_mass(coords, conn, n_nodes, coeff=None):
    """Row-sum lumped mass vector (n_nodes,).

    coeff: optional per-element scalar (E,) multiplying the density.
    """
    _, detJ = element_geometry(coords)
    w = detJ * _QW[None, :]
    if coeff is not None:
        w = w * np.asarray(coeff)[:, None]
    me = np.einsum("eq,qn->en", w, N_QP)
    m = np.zeros(n_nodes)
    np.add.at(m, conn.ravel(), me.ravel())
    return m


def interp_to_qp(conn, nodal, n_at_qp=None):
    """Interpolate a nodal field to quadrature points.

    nodal: (N,) or (N,3); returns (E,Q) or (E,Q,3).
    """
    if n_at_qp is None:
        n_at_qp = N_QP
    vals = nodal[conn]  # (E,8) or (E,8,3)
    if vals.ndim == 2:
        return np.einsum("qn,en->eq", n_at_qp, vals)
    return np.einsum("qn,enk->eqk", n_at_qp, vals)


def quad_face_areas(face_coords):
    """Area vectors of bilinear quad faces at their 2x2 Gauss points.

    face_coords: (F,4,3). Returns (pts (F,4,3), areavec (F,4,3), N (4,4))
    where areavec = dX/dxi x dX/deta * w at each of the 4 face quadrature
    points and N holds the bilinear shape values (q, node).
    """
    g = 1.0 / np.sqrt(3.0)
    qp = np.array([[-g, -g], [g, -g], [g, g], [-g, g]])
    signs = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    N = 0.25 * (1 + qp[:, None, 0] * signs[None, :, 0]) * (1 + qp[:, None, 1] * signs[None, :, 1])
    dNdxi = 0.25 * signs[None, :, 0] * (1 + qp[:, None, 1] * signs[None, :, 1])
    dNdeta = 0.25 * signs[None, :, 1] * (1 + qp[:, None, 0] * signs[None, :, 0])
    pts = np.einsum("qn,fnk->fqk", N, face_coords)
    t1 = np.einsum("qn,fnk->fqk", dNdxi, face_coords)
    t2 = np.einsum("qn,fnk->fqk", dNdeta, face_coords)
    areavec = np.cross(t1, t2)  # weight 1 per point for 2x2 Gauss
    return pts, areavec, N

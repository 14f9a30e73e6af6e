"""Idealized computational domains: truncated-ellipsoid LV and slab.

Builds tagged trilinear hexahedral meshes, synthesizes scar / grey-zone
maps and computes the transmural (endo->epi harmonic) coordinate.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from . import fem

TAG_BASE = 0
TAG_EPI = 1
TAG_ENDO = 2
TAG_NAMES = {TAG_BASE: "base", TAG_EPI: "epi", TAG_ENDO: "endo"}
TAG_IDS = {v: k for k, v in TAG_NAMES.items()}

LABEL_HEALTHY = 0
LABEL_GREY = 1
LABEL_SCAR = 2
ETA_GREY = 0.1

_FACE_ROT = {0: "endo", 1: "epi"}


class GeometryError(ValueError):
    pass


@dataclass
class HexMesh:
    """Structured trilinear hexahedral mesh with tagged boundary facets."""

    nodes: np.ndarray          # (N,3) coordinates [m]
    elems: np.ndarray          # (E,8) node indices, VTK hexahedron order
    facet_nodes: np.ndarray    # (F,4) boundary quads
    facet_tags: np.ndarray     # (F,) in {TAG_BASE, TAG_EPI, TAG_ENDO}
    h_mean: float              # characteristic element size [m]
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elems(self):
        return self.elems.shape[0]

    def facets(self, tag):
        """Boundary quads carrying a given tag (name or id)."""
        if isinstance(tag, str):
            tag = TAG_IDS[tag]
        return self.facet_nodes[self.facet_tags == tag]

    def facet_node_set(self, tag):
        return np.unique(self.facets(tag))

    def element_coords(self):
        return self.nodes[self.elems]

    def check_invariants(self):
        """Raise GeometryError if any mesh invariant is violated."""
        dets = fem.jacobian_dets_at_vertices(self.element_coords())
        if not np.all(dets > 0):
            bad = int(np.argmin(dets.min(axis=1)))
            raise GeometryError(f"non-positive Jacobian in element {bad}")
        counts = _face_counts(self.elems)
        boundary = {key for key, c in counts.items() if c == 1}
        if any(c > 2 for c in counts.values()):
            raise GeometryError("mesh is not conforming (face shared >2x)")
        tagged = {tuple(sorted(f)) for f in self.facet_nodes}
        if tagged != boundary:
            raise GeometryError("tagged facets do not partition the boundary")
        if len(tagged) != self.facet_nodes.shape[0]:
            raise GeometryError("a boundary facet carries more than one tag")

    def volume(self):
        _, detJ = fem.element_geometry(self.element_coords())
        return float(np.sum(detJ))


@dataclass
class IschemiaMap:
    eta: np.ndarray              # (N,) in {0} U [0.1, 1]
    labels: np.ndarray           # (N,) in {LABEL_HEALTHY, LABEL_GREY, LABEL_SCAR}
    excluded_elements: np.ndarray  # (E,) bool, all-8-nodes-scarred elements

    @property
    def scar_nodes(self):
        return np.flatnonzero(self.labels == LABEL_SCAR)


@dataclass
class TransmuralCoordinate:
    lam: np.ndarray  # (N,)
    lam_endo: float
    lam_epi: float


def _face_counts(elems):
    counts = {}
    for e in elems:
        for face in fem.HEX_FACES:
            key = tuple(sorted(e[face]))
            counts[key] = counts.get(key, 0) + 1
    return counts


def _h_mean(nodes, elems):
    coords = nodes[elems]
    diam = 0.0
    # max over the 4 space diagonals, averaged over elements
    d = np.stack(
        [
            np.linalg.norm(coords[:, 6] - coords[:, 0], axis=1),
            np.linalg.norm(coords[:, 7] - coords[:, 1], axis=1),
            np.linalg.norm(coords[:, 4] - coords[:, 2], axis=1),
            np.linalg.norm(coords[:, 5] - coords[:, 3], axis=1),
        ],
        axis=1,
    )
    diam = d.max(axis=1)
    return float(np.mean(diam) / np.sqrt(3.0))


def build_slab(lx, ly, lz, h):
    """Axis-aligned cuboid; z=0 tagged endo, z=lz epi, sides base."""
    if min(lx, ly, lz, h) <= 0:
        raise GeometryError("slab dimensions and h must be positive")
    nx, ny, nz = (max(1, int(round(L / h))) for L in (lx, ly, lz))
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    zs = np.linspace(0.0, lz, nz + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    elems = np.stack(
        [
            nid(I, J, K),
            nid(I + 1, J, K),
            nid(I + 1, J + 1, K),
            nid(I, J + 1, K),
            nid(I, J, K + 1),
            nid(I + 1, J, K + 1),
            nid(I + 1, J + 1, K + 1),
            nid(I, J + 1, K + 1),
        ],
        axis=1,
    ).astype(np.int64)

    facet_nodes, facet_tags = [], []

    def add_faces(quads, tag):
        facet_nodes.extend(quads)
        facet_tags.extend([tag] * len(quads))

    for j in range(ny):  # z = 0 (endo) and z = lz (epi)
        for i in range(nx):
            add_faces([[nid(i, j, 0), nid(i, j + 1, 0), nid(i + 1, j + 1, 0), nid(i + 1, j, 0)]], TAG_ENDO)
            add_faces([[nid(i, j, nz), nid(i + 1, j, nz), nid(i + 1, j + 1, nz), nid(i, j + 1, nz)]], TAG_EPI)
    for k in range(nz):  # side walls -> base
        for j in range(ny):
            add_faces([[nid(0, j, k), nid(0, j, k + 1), nid(0, j + 1, k + 1), nid(0, j + 1, k)]], TAG_BASE)
            add_faces([[nid(nx, j, k), nid(nx, j + 1, k), nid(nx, j + 1, k + 1), nid(nx, j, k + 1)]], TAG_BASE)
        for i in range(nx):
            add_faces([[nid(i, 0, k), nid(i + 1, 0, k), nid(i + 1, 0, k + 1), nid(i, 0, k + 1)]], TAG_BASE)
            add_faces([[nid(i, ny, k), nid(i, ny, k + 1), nid(i + 1, ny, k + 1), nid(i + 1, ny, k)]], TAG_BASE)

    mesh = HexMesh(
        nodes=nodes,
        elems=elems,
        facet_nodes=np.asarray(facet_nodes, dtype=np.int64),
        facet_tags=np.asarray(facet_tags, dtype=np.int64),
        h_mean=_h_mean(nodes, elems),
        meta={"kind": "slab", "dims": (lx, ly, lz), "divisions": (nx, ny, nz)},
    )
    mesh.check_invariants()
    return mesh


def _disk_grid(n_side, n_ring, core_frac=0.5):
    """Quad mesh of the unit disk: central square plus radial rings.

    Returns (points (P,2), quads (Q,4), boundary_loop (4*n_side,)) with the
    boundary loop ordered counterclockwise.
    """
    w = core_frac
    s = np.linspace(-w, w, n_side + 1)
    pts = [np.array([x, y]) for y in s for x in s]  # row-major, y outer

    def core_id(i, j):
        return j * (n_side + 1) + i

    quads = []
    for j in range(n_side):
        for i in range(n_side):
            quads.append([core_id(i, j), core_id(i + 1, j), core_id(i + 1, j + 1), core_id(i, j + 1)])

    # Counterclockwise walk of the core boundary starting at (+w,-w) corner.
    loop = []
    for j in range(n_side):
        loop.append(core_id(n_side, j))
    for i in range(n_side, 0, -1):
        loop.append(core_id(i, n_side))
    for j in range(n_side, 0, -1):
        loop.append(core_id(0, j))
    for i in range(0, n_side):
        loop.append(core_id(i, 0))
    loop = np.array(loop, dtype=np.int64)
    nb = len(loop)  # 4*n_side

    ring_ids = [loop]
    for l in range(1, n_ring + 1):
        rho = l / n_ring
        ids = []
        for idx in loop:
            p = pts[idx]
            r = np.linalg.norm(p)
            scale = (1 - rho) + rho / r  # radial projection toward the circle
            ids.append(len(pts))
            pts.append(p * scale)
        ring_ids.append(np.array(ids, dtype=np.int64))

    for l in range(n_ring):
        inner, outer = ring_ids[l], ring_ids[l + 1]
        for k in range(nb):
            k2 = (k + 1) % nb
            quads.append([inner[k], outer[k], outer[k2], inner[k2]])

    return np.array(pts), np.array(quads, dtype=np.int64), ring_ids[-1]


def build_ellipsoid_lv(r_endo_short, r_endo_long, wall_thickness, base_cut, h_target):
    """Truncated half-ellipsoid LV shell with a closed apex.

    The wall is parametrized as (disk x transmural): a butterfly quad grid
    on the unit disk is mapped to the apical cap of each intramural
    ellipsoid layer, so the apex carries no degenerate pole node. The long
    axis is z, the apex points to -z and the truncation plane sits at
    z = base_cut.
    """
    a0, c0, t = float(r_endo_short), float(r_endo_long), float(wall_thickness)
    if min(a0, c0, t, h_target) <= 0:
        raise GeometryError("radii, wall thickness and h_target must be positive")
    if t >= c0:
        raise GeometryError("wall thickness must be smaller than the long radius")
    if h_target > min(a0, c0) / 4:
        raise GeometryError("h_target too coarse for the requested radii")
    if base_cut < 0 or base_cut >= 0.9 * c0:
        raise GeometryError("base_cut must lie in [0, 0.9*r_endo_long)")

    n_u = max(2, int(round(t / h_target)))
    a_mid, c_mid = a0 + 0.5 * t, c0 + 0.5 * t
    mu_base_mid = np.arccos(base_cut / c_mid)
    # rough arc lengths on the mid surface
    circ = 2 * np.pi * a_mid * np.sin(mu_base_mid)
    merid = (np.pi - mu_base_mid) * 0.5 * (a_mid + c_mid)
    n_side = 2 * max(1, int(round(circ / (8 * h_target))))
    n_rad = max(2, int(round(merid / h_target)))
    n_ring = max(1, n_rad - n_side // 2)

    pts2d, quads, _ = _disk_grid(n_side, n_ring)
    nP = len(pts2d)
    rho = np.linalg.norm(pts2d, axis=1)
    phi = np.arctan2(pts2d[:, 1], pts2d[:, 0])

    layers = []
    for i in range(n_u + 1):
        u = i / n_u
        a, c = a0 + u * t, c0 + u * t
        mu_base = np.arccos(np.clip(base_cut / c, -1.0, 1.0))
        mu = np.pi - rho * (np.pi - mu_base)
        x = a * np.sin(mu) * np.cos(phi)
        y = a * np.sin(mu) * np.sin(phi)
        z = c * np.cos(mu)
        layers.append(np.stack([x, y, z], axis=1))
    nodes = np.concatenate(layers, axis=0)

    def lid(layer, p):
        return layer * nP + p

    elems = []
    for i in range(n_u):
        base = i * nP
        top = (i + 1) * nP
        for q in quads:
            elems.append([base + q[0], base + q[1], base + q[2], base + q[3],
                          top + q[0], top + q[1], top + q[2], top + q[3]])
    elems = np.asarray(elems, dtype=np.int64)

    dets = fem.jacobian_dets_at_vertices(nodes[elems[:1]])
    if dets.min() <= 0:  # orientation depends on the disk handedness
        elems = elems[:, [3, 2, 1, 0, 7, 6, 5, 4]]

    facet_nodes, facet_tags = [], []
    for q in quads:  # endo: innermost layer
        facet_nodes.append([lid(0, q[0]), lid(0, q[1]), lid(0, q[2]), lid(0, q[3])])
        facet_tags.append(TAG_ENDO)
    for q in quads:  # epi: outermost layer
        facet_nodes.append([lid(n_u, q[0]), lid(n_u, q[1]), lid(n_u, q[2]), lid(n_u, q[3])])
        facet_tags.append(TAG_EPI)
    # base annulus: boundary edges of the disk extruded through the wall
    edge_counts = {}
    for q in quads:
        for k in range(4):
            key = tuple(sorted((q[k], q[(k + 1) % 4])))
            edge_counts[key] = edge_counts.get(key, 0) + 1
    boundary_edges = [e for e, cnt in edge_counts.items() if cnt == 1]
    for (p0, p1) in boundary_edges:
        for i in range(n_u):
            facet_nodes.append([lid(i, p0), lid(i, p1), lid(i + 1, p1), lid(i + 1, p0)])
            facet_tags.append(TAG_BASE)

    mesh = HexMesh(
        nodes=nodes,
        elems=elems,
        facet_nodes=np.asarray(facet_nodes, dtype=np.int64),
        facet_tags=np.asarray(facet_tags, dtype=np.int64),
        h_mean=_h_mean(nodes, elems),
        meta={
            "kind": "ellipsoid_lv",
            "r_endo_short": a0,
            "r_endo_long": c0,
            "wall_thickness": t,
            "base_cut": base_cut,
            "layers": n_u,
        },
    )
    mesh.check_invariants()
    return mesh


def analytic_cavity_volume(r_endo_short, r_endo_long, base_cut):
    """Volume of the ellipsoid cavity truncated at z = base_cut."""
    a, c, zb = r_endo_short, r_endo_long, base_cut
    return float(np.pi * a * a * (zb - zb**3 / (3 * c * c) + 2 * c / 3))


def synthesize_ischemia(mesh, regions):
    """Ischemia map from spherical regions.

    regions: iterable of (center xyz, radius, label) with label in
    {"scar", "grey"}. Scar takes precedence over grey on overlap.
    """
    n = mesh.n_nodes
    labels = np.full(n, LABEL_HEALTHY, dtype=np.int64)
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    grey_mask = np.zeros(n, dtype=bool)
    scar_mask = np.zeros(n, dtype=bool)
    for center, radius, label in regions:
        if label not in ("scar", "grey"):
            raise ValueError(f"unknown ischemia label {label!r}")
        if radius <= 0:
            raise ValueError("ischemia radius must be positive")
        center = np.asarray(center, dtype=float)
        if np.any(center + radius < lo) or np.any(center - radius > hi):
            warnings.warn(f"ischemia sphere at {center} lies outside the mesh", stacklevel=2)
        inside = np.linalg.norm(mesh.nodes - center, axis=1) <= radius
        if label == "scar":
            scar_mask |= inside
        else:
            grey_mask |= inside
    labels[grey_mask] = LABEL_GREY
    labels[scar_mask] = LABEL_SCAR
    eta = np.ones(n)
    eta[labels == LABEL_GREY] = ETA_GREY
    eta[labels == LABEL_SCAR] = 0.0
    excluded = np.all(labels[mesh.elems] == LABEL_SCAR, axis=1)
    return IschemiaMap(eta=eta, labels=labels, excluded_elements=excluded)


def healthy_map(mesh):
    return synthesize_ischemia(mesh, [])


def solve_laplace(mesh, dirichlet):
    """Solve -div(grad u) = 0 with Dirichlet data; natural BC elsewhere.

    dirichlet: list of (node_indices, value).
    """
    n = mesh.n_nodes
    K = fem.stiffness_matrix(mesh.element_coords(), mesh.elems, n, np.eye(3))
    fixed = np.zeros(n, dtype=bool)
    vals = np.zeros(n)
    for idx, value in dirichlet:
        idx = np.asarray(idx)
        if idx.size == 0:
            raise GeometryError("empty Dirichlet node set (missing facet tags?)")
        fixed[idx] = True
        vals[idx] = value
    rhs = -(K @ vals)
    rhs[fixed] = vals[fixed]
    Pf = sparse.diags((~fixed).astype(float))
    Kc = (Pf @ K @ Pf + sparse.diags(fixed.astype(float))).tocsc()
    u = spsolve(Kc, rhs)
    return u


def compute_transmural_coordinate(mesh, lam_endo=0.0, lam_epi=1.0):
    """Harmonic transmural coordinate: lam_endo on endo, lam_epi on epi."""
    endo = mesh.facet_node_set("endo")
    epi = mesh.facet_node_set("epi")
    lam = solve_laplace(mesh, [(endo, lam_endo), (epi, lam_epi)])
    return TransmuralCoordinate(lam=lam, lam_endo=lam_endo, lam_epi=lam_epi)

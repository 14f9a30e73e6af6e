"""VTK legacy ASCII I/O for hexahedral meshes and nodal fields.

Writes unstructured grids (cell type 12) with named point-data arrays;
boundary tags travel as an integer point-data array "surface_tag" so a
round trip can rebuild the tagged facets.
"""

import numpy as np

from . import geometry


def _surface_tag_field(mesh):
    # Bitmask per node: bit k set if the node lies on a facet tagged k.
    # 0 means interior. Lets the importer recover facet tags at edges
    # where tag regions meet.
    tag = np.zeros(mesh.n_nodes, dtype=np.int64)
    for t in (geometry.TAG_BASE, geometry.TAG_EPI, geometry.TAG_ENDO):
        tag[np.unique(mesh.facets(t))] |= 1 << t
    return tag


def write_vtk(path, mesh, point_data=None, title="cardioem"):
    """Write mesh plus nodal scalar/vector fields as legacy ASCII VTK."""
    point_data = dict(point_data or {})
    point_data.setdefault("surface_tag", _surface_tag_field(mesh))
    n, e = mesh.n_nodes, mesh.n_elems
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    lines.extend(" ".join(f"{x:.17g}" for x in p) for p in mesh.nodes)
    lines.append(f"CELLS {e} {9 * e}")
    lines.extend("8 " + " ".join(str(i) for i in el) for el in mesh.elems)
    lines.append(f"CELL_TYPES {e}")
    lines.extend(["12"] * e)
    lines.append(f"POINT_DATA {n}")
    for name, arr in point_data.items():
        arr = np.asarray(arr)
        if arr.ndim == 1:
            kind = "int" if np.issubdtype(arr.dtype, np.integer) else "double"
            lines.append(f"SCALARS {name} {kind}")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.17g}" if kind == "double" else str(int(v)) for v in arr)
        elif arr.ndim == 2 and arr.shape[1] == 3:
            lines.append(f"VECTORS {name} double")
            lines.extend(" ".join(f"{x:.17g}" for x in v) for v in arr)
        else:
            raise ValueError(f"unsupported point-data shape for {name}: {arr.shape}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk(path):
    """Read a legacy ASCII VTK unstructured grid written by write_vtk.

    Returns (nodes, elems, point_data).
    """
    with open(path) as fh:
        tokens = fh.read().split()
    pos = 0

    def take(k):
        nonlocal pos
        out = tokens[pos:pos + k]
        pos += k
        return out

    def seek(word):
        nonlocal pos
        while pos < len(tokens) and tokens[pos].upper() != word:
            pos += 1
        if pos == len(tokens):
            raise ValueError(f"VTK parse error: {word} section missing")
        pos += 1

    seek("POINTS")
    n = int(take(1)[0])
    take(1)  # dtype
    nodes = np.array(take(3 * n), dtype=float).reshape(n, 3)

    seek("CELLS")
    e = int(take(1)[0])
    take(1)  # total ints
    cells = np.array(take(9 * e), dtype=np.int64).reshape(e, 9)
    if not np.all(cells[:, 0] == 8):
        raise ValueError("only hexahedral cells (type 12) are supported")
    elems = cells[:, 1:]

    seek("CELL_TYPES")
    e2 = int(take(1)[0])
    ctypes = np.array(take(e2), dtype=int)
    if not np.all(ctypes == 12):
        raise ValueError("only VTK cell type 12 is supported")

    point_data = {}
    try:
        seek("POINT_DATA")
    except ValueError:
        return nodes, elems, point_data
    take(1)  # count
    while pos < len(tokens):
        kw = tokens[pos].upper()
        if kw == "SCALARS":
            pos += 1
            name = tokens[pos]
            dtype = tokens[pos + 1]
            pos += 2
            if tokens[pos].upper() == "LOOKUP_TABLE":
                pos += 2
            vals = take(n)
            point_data[name] = (
                np.array(vals, dtype=np.int64) if dtype == "int" else np.array(vals, dtype=float)
            )
        elif kw == "VECTORS":
            pos += 1
            name = tokens[pos]
            pos += 2  # name + dtype
            point_data[name] = np.array(take(3 * n), dtype=float).reshape(n, 3)
        else:
            pos += 1
    return nodes, elems, point_data


def mesh_from_vtk(path):
    """Rebuild a tagged HexMesh from a file written by write_vtk.

    Boundary facets are re-extracted as the faces owned by one element.
    A facet takes the tag whose bit is set on all four of its nodes; if
    several are (facets whose nodes all sit on a region edge) the highest
    priority wins, endo > epi > base.
    """
    nodes, elems, pdata = read_vtk(path)
    if "surface_tag" not in pdata:
        raise ValueError("surface_tag point data missing; cannot rebuild facets")
    tag = np.asarray(pdata["surface_tag"], dtype=np.int64)
    counts = {}
    order = {}
    from . import fem

    for el in elems:
        for face in fem.HEX_FACES:
            quad = tuple(el[face])
            key = tuple(sorted(quad))
            counts[key] = counts.get(key, 0) + 1
            order[key] = quad
    facet_nodes, facet_tags = [], []
    for key, c in counts.items():
        if c != 1:
            continue
        quad = order[key]
        common = tag[quad[0]] & tag[quad[1]] & tag[quad[2]] & tag[quad[3]]
        if common == 0:
            raise ValueError("boundary facet has no common surface tag")
        best = max(t for t in (geometry.TAG_ENDO, geometry.TAG_EPI, geometry.TAG_BASE)
                   if common & (1 << t))
        facet_tags.append(best)
        facet_nodes.append(list(quad))
    mesh = geometry.HexMesh(
        nodes=nodes,
        elems=elems,
        facet_nodes=np.asarray(facet_nodes, dtype=np.int64),
        facet_tags=np.asarray(facet_tags, dtype=np.int64),
        h_mean=geometry._h_mean(nodes, elems),
        meta={"kind": "imported"},
    )
    extra = {k: v for k, v in pdata.items() if k != "surface_tag"}
    return mesh, extra

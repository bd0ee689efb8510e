"""Indexed triangle meshes, boundary (hole) loops and marching-tetrahedra meshing."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


def _row_keys(rows: np.ndarray) -> np.ndarray:
    """Injective int64 key per row of small non-negative integers."""
    rows = np.asarray(rows, dtype=np.int64)
    base = int(rows.max()) + 1 if rows.size else 1
    if base ** rows.shape[1] >= 2 ** 62:
        raise OverflowError("index range too large for packed keys")
    key = np.zeros(len(rows), np.int64)
    for k in range(rows.shape[1]):
        key = key * base + rows[:, k]
    return key


def _unique_rows(rows: np.ndarray, return_index: bool = False, return_inverse: bool = False):
    """Same as ``np.unique(rows, axis=0, ...)`` but via packed keys, which is much faster."""
    try:
        key = _row_keys(rows)
    except OverflowError:
        return np.unique(rows, axis=0, return_index=return_index, return_inverse=return_inverse)
    _, first, inv = np.unique(key, return_index=True, return_inverse=True)
    out = (rows[first],) + ((first,) if return_index else ()) + ((inv,) if return_inverse else ())
    return out if len(out) > 1 else out[0]


class MeshInvariantError(RuntimeError):
    pass


class TriangleMesh:
    """Indexed triangle surface with an undirected edge -> incident-face table."""

    def __init__(self, vertices=None, faces=None):
        self.vertices = np.zeros((0, 3)) if vertices is None else np.asarray(vertices, dtype=float).reshape(-1, 3)
        f = np.zeros((0, 3), np.int64) if faces is None else np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(f):
            # drop duplicate faces regardless of winding
            key = np.sort(f, axis=1)
            _, first = _unique_rows(key, return_index=True)
            f = f[np.sort(first)]
        self.faces = f
        self._build()

    def _build(self):
        f = self.faces
        if len(f) == 0:
            self.edges = np.zeros((0, 2), np.int64)
            self.edge_face_count = np.zeros(0, np.int64)
            self.face_edges = np.zeros((0, 3), np.int64)
            self._edge_faces_order = np.zeros(0, np.int64)
            self._edge_faces_start = np.zeros(1, np.int64)
            self.centroids = np.zeros((0, 3))
            self.normals = np.zeros((0, 3))
            self.areas = np.zeros(0)
            return
        he = np.stack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=1).reshape(-1, 2)
        und = np.sort(he, axis=1)
        self.edges, inv = _unique_rows(und, return_inverse=True)
        inv = inv.reshape(-1)
        self.face_edges = inv.reshape(-1, 3)
        self.edge_face_count = np.bincount(inv, minlength=len(self.edges))
        order = np.argsort(inv, kind="stable")
        self._edge_faces_order = order // 3
        self._edge_faces_start = np.concatenate([[0], np.cumsum(self.edge_face_count)])
        tri = self.vertices[f]
        cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norm = np.linalg.norm(cr, axis=1)
        self.areas = 0.5 * norm
        with np.errstate(invalid="ignore", divide="ignore"):
            self.normals = np.where(norm[:, None] > 0, cr / norm[:, None], 0.0)
        self.centroids = tri.mean(axis=1)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_faces(self, e: int) -> np.ndarray:
        s, t = self._edge_faces_start[e], self._edge_faces_start[e + 1]
        return self._edge_faces_order[s:t]

    def check_edge_invariant(self) -> None:
        bad = (self.edge_face_count < 1) | (self.edge_face_count > 2)
        if np.any(bad):
            raise MeshInvariantError(f"{int(bad.sum())} edges with 0 or >2 incident faces")

    def centroid(self) -> np.ndarray:
        if self.n_faces == 0:
            return self.vertices.mean(axis=0) if len(self.vertices) else np.zeros(3)
        w = self.areas
        if w.sum() <= 0:
            return self.centroids.mean(axis=0)
        return (self.centroids * w[:, None]).sum(axis=0) / w.sum()


@dataclass
class BoundaryEdge:
    vertices: tuple[int, int]
    midpoint: np.ndarray
    face: int
    loop: int


@dataclass
class HoleLoop:
    id: int
    edges: list[BoundaryEdge] = field(default_factory=list)
    perimeter: float = 0.0


def extract_boundary_edges(mesh: TriangleMesh) -> list[HoleLoop]:
    """Edges with exactly one incident face, grouped into loops by shared vertices."""
    bidx = np.flatnonzero(mesh.edge_face_count == 1)
    if len(bidx) == 0:
        return []
    be = mesh.edges[bidx]
    n = len(mesh.vertices)
    adj = coo_matrix((np.ones(len(be)), (be[:, 0], be[:, 1])), shape=(n, n))
    _, comp = connected_components(adj, directed=False)
    # loops are numbered by their first boundary edge
    _, first, inv = np.unique(comp[be[:, 0]], return_index=True, return_inverse=True)
    loop_of = np.argsort(np.argsort(first))[inv.reshape(-1)]
    pa, pb = mesh.vertices[be[:, 0]], mesh.vertices[be[:, 1]]
    mids = (pa + pb) / 2.0
    lengths = np.linalg.norm(pb - pa, axis=1)
    faces = mesh._edge_faces_order[mesh._edge_faces_start[bidx]]
    loops = [HoleLoop(k) for k in range(len(first))]
    for k, (a, b) in enumerate(be.tolist()):
        lp = loops[loop_of[k]]
        lp.edges.append(BoundaryEdge((a, b), mids[k], int(faces[k]), lp.id))
    for lp, per in zip(loops, np.bincount(loop_of, weights=lengths, minlength=len(loops))):
        lp.perimeter = float(per)
    return loops


def filter_small_holes(loops: list[HoleLoop], min_perimeter: float) -> list[HoleLoop]:
    return [lp for lp in loops if lp.perimeter >= min_perimeter]


# --- marching tetrahedra -----------------------------------------------------

# Cube corner offsets indexed by bits (x=1, y=2, z=4).
_CORNERS = np.array([[(i >> 0) & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], np.int64)
# Freudenthal split: six tetrahedra sharing the 0-7 diagonal; the split is
# consistent across neighbouring cells, so the output has no cracks.
_TETS = np.array([
    [0, 1, 3, 7], [0, 1, 5, 7], [0, 2, 3, 7],
    [0, 2, 6, 7], [0, 4, 5, 7], [0, 4, 6, 7],
], np.int64)


def marching_tetrahedra(sdf: np.ndarray, cell_mask: np.ndarray, origin, spacing: float) -> TriangleMesh:
    """Triangulate the zero level set of a node-sampled field inside masked cells.

    ``sdf`` has shape (nx, ny, nz) at nodes ``origin + spacing * index``;
    ``cell_mask`` (nx-1, ny-1, nz-1) selects cubes to triangulate. Negative
    values are inside; triangles are wound so normals point to positive values.
    """
    nx, ny, nz = sdf.shape
    cells = np.argwhere(cell_mask)
    if len(cells) == 0:
        return TriangleMesh()
    corner_idx = cells[:, None, :] + _CORNERS[None, :, :]  # (c, 8, 3)
    flat = (corner_idx[..., 0] * ny + corner_idx[..., 1]) * nz + corner_idx[..., 2]  # (c, 8)
    tet_nodes = flat[:, _TETS].reshape(-1, 4)  # (c*6, 4) global node ids
    vals = sdf.reshape(-1)[tet_nodes]
    inside = vals < 0
    n_in = inside.sum(axis=1)
    keep = (n_in > 0) & (n_in < 4)
    tet_nodes, vals, inside, n_in = tet_nodes[keep], vals[keep], inside[keep], n_in[keep]
    if len(tet_nodes) == 0:
        return TriangleMesh()

    tris_edges = []  # each entry: (m, 3, 2) node pairs
    # single-vertex cases: lone vertex is the one with the minority sign
    for count, lone_inside in ((1, True), (3, False)):
        sel = n_in == count
        if not np.any(sel):
            continue
        tn = tet_nodes[sel]
        ins = inside[sel]
        lone_mask = ins if lone_inside else ~ins
        lone_pos = np.argmax(lone_mask, axis=1)
        others = np.array([[k for k in range(4) if k != p] for p in range(4)])[lone_pos]
        lone = tn[np.arange(len(tn)), lone_pos]
        oth = np.take_along_axis(tn, others, axis=1)
        tris_edges.append(np.stack([np.stack([lone, oth[:, k]], axis=1) for k in range(3)], axis=1))
    sel = n_in == 2
    if np.any(sel):
        tn = tet_nodes[sel]
        ins = inside[sel]
        order = np.argsort(~ins, axis=1, kind="stable")  # inside nodes first
        a0 = np.take_along_axis(tn, order[:, 0:1], 1)[:, 0]
        a1 = np.take_along_axis(tn, order[:, 1:2], 1)[:, 0]
        b0 = np.take_along_axis(tn, order[:, 2:3], 1)[:, 0]
        b1 = np.take_along_axis(tn, order[:, 3:4], 1)[:, 0]
        # quad around the crossing edges: (a0b0, a0b1, a1b1, a1b0)
        q = [np.stack([a0, b0], 1), np.stack([a0, b1], 1), np.stack([a1, b1], 1), np.stack([a1, b0], 1)]
        tris_edges.append(np.stack([q[0], q[1], q[2]], axis=1))
        tris_edges.append(np.stack([q[0], q[2], q[3]], axis=1))
    te = np.concatenate(tris_edges, axis=0)  # (m, 3, 2)
    pair = np.sort(te, axis=2).reshape(-1, 2)
    keys, vinv = _unique_rows(pair, return_inverse=True)
    vinv = vinv.reshape(-1)
    flat_sdf = sdf.reshape(-1)
    s0 = flat_sdf[keys[:, 0]]
    s1 = flat_sdf[keys[:, 1]]
    t = s0 / (s0 - s1)
    org = np.asarray(origin, dtype=float)

    def node_pos(ids):
        iz = ids % nz
        iy = (ids // nz) % ny
        ix = ids // (ny * nz)
        return org + spacing * np.stack([ix, iy, iz], axis=1)

    p0 = node_pos(keys[:, 0])
    p1 = node_pos(keys[:, 1])
    verts = p0 + (p1 - p0) * t[:, None]
    faces = vinv.reshape(-1, 3)
    # orient: normal should point from inside nodes to outside nodes
    tri = verts[faces]
    nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    te_in = np.where(flat_sdf[te[:, :, 0]] < 0, te[:, :, 0], te[:, :, 1])
    te_out = np.where(flat_sdf[te[:, :, 0]] < 0, te[:, :, 1], te[:, :, 0])
    grad = (node_pos(te_out.reshape(-1)) - node_pos(te_in.reshape(-1))).reshape(-1, 3, 3).sum(axis=1)
    flip = np.einsum("ij,ij->i", nrm, grad) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return TriangleMesh(verts, faces)


# --- PLY export ----------------------------------------------------------------

def write_ply(path, mesh: TriangleMesh, inspected=None, best_distance=None, best_angle=None) -> None:
    """ASCII PLY with per-face inspection properties (-1 marks 'never observed')."""
    n = mesh.n_faces
    insp = np.zeros(n, bool) if inspected is None else np.asarray(inspected, bool)
    bd = np.full(n, -1.0) if best_distance is None else np.where(np.isfinite(best_distance), best_distance, -1.0)
    ba = np.full(n, -1.0) if best_angle is None else np.where(np.isfinite(best_angle), best_angle, -1.0)
    lines = [
        "ply", "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property float x", "property float y", "property float z",
        f"element face {n}",
        "property list uchar int vertex_indices",
        "property uchar inspected",
        "property float best_distance",
        "property float best_angle",
        "end_header",
    ]
    lines += [f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"3 {a} {b} {c} {int(i)} {d:.6f} {g:.6f}"
              for (a, b, c), i, d, g in zip(mesh.faces.tolist(), insp.tolist(), bd.tolist(), ba.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> tuple[TriangleMesh, dict[str, np.ndarray]]:
    text = Path(path).read_text().splitlines()
    end = text.index("end_header")
    nv = nf = 0
    for line in text[:end]:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
    body = text[end + 1:]
    verts = np.array([[float(v) for v in ln.split()] for ln in body[:nv]]).reshape(-1, 3)
    rows = [ln.split() for ln in body[nv:nv + nf]]
    faces = np.array([[int(r[1]), int(r[2]), int(r[3])] for r in rows], np.int64).reshape(-1, 3)
    props = {
        "inspected": np.array([int(r[4]) for r in rows], bool),
        "best_distance": np.array([float(r[5]) for r in rows]),
        "best_angle": np.array([float(r[6]) for r in rows]),
    }
    return TriangleMesh(verts, faces), props

"""Structured tetrahedral meshes of axis-aligned boxes.

Each cell of an ``n x n x n`` grid is split into six tetrahedra sharing the
cell's main diagonal (Freudenthal/Kuhn subdivision).  All face diagonals
point in the same direction, so the subdivision is conforming across cells.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

# local edges as pairs of local vertex indices
TET_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
# local face i is opposite local vertex i
TET_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])
# local edges lying on local face i
FACE_EDGES = np.array([(3, 4, 5), (1, 2, 5), (0, 2, 4), (0, 1, 3)])


@dataclass(frozen=True)
class BoundarySets:
    faces: np.ndarray
    edges: np.ndarray
    vertices: np.ndarray


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Tetrahedral mesh with full entity tables.

    Attributes
    ----------
    vertices : (nv, 3) float array
    tets : (nt, 4) int array, positively oriented
    edges : (ne, 2) int array, ``edges[:, 0] < edges[:, 1]``
    faces : (nf, 3) int array, each row sorted
    tet_to_edges : (nt, 6) int array, global edge of each local edge
    tet_edge_signs : (nt, 6) int array, +1 if the local edge runs low to high
    tet_to_faces : (nt, 4) int array
    boundary : BoundarySets
    h_max : float
        Largest tetrahedron diameter.
    box : ((x0, y0, z0), (x1, y1, z1))
    n : int
        Grid subdivision parameter.
    """

    vertices: np.ndarray
    tets: np.ndarray
    edges: np.ndarray
    faces: np.ndarray
    tet_to_edges: np.ndarray
    tet_edge_signs: np.ndarray
    tet_to_faces: np.ndarray
    boundary: BoundarySets
    h_max: float
    box: tuple
    n: int

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def boundary_faces(self) -> np.ndarray:
        return self.boundary.faces

    @property
    def boundary_edges(self) -> np.ndarray:
        return self.boundary.edges

    @property
    def boundary_vertices(self) -> np.ndarray:
        return self.boundary.vertices

    def tet_coords(self) -> np.ndarray:
        """Vertex coordinates per tet, shape ``(nt, 4, 3)``."""
        return self.vertices[self.tets]

    def signed_volumes(self) -> np.ndarray:
        x = self.tet_coords()
        jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2)
        return np.linalg.det(jac) / 6.0

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def build_box_mesh(n: int, box=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))) -> TetMesh:
    """Freudenthal mesh of ``box`` with ``n`` cells per direction.

    Examples
    --------
    >>> m = build_box_mesh(1)
    >>> m.n_vertices, m.n_tets, m.n_edges
    (8, 6, 19)
    """
    if int(n) != n or n < 1:
        raise ValueError(f"subdivision parameter must be a positive integer, got {n!r}")
    n = int(n)
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(hi - lo <= 0):
        raise ValueError(f"degenerate box {box!r}")

    m = n + 1
    axis = [np.linspace(lo[d], hi[d], m) for d in range(3)]
    # vertex (i, j, k) has index i + m*j + m*m*k
    gx, gy, gz = np.meshgrid(*axis, indexing="ij")
    vertices = np.column_stack([gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F")])

    ci, cj, ck = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    base = (ci + m * cj + m * m * ck).ravel(order="F")
    stride = np.array([1, m, m * m])

    tets = []
    for perm in itertools.permutations(range(3)):
        o1 = stride[perm[0]]
        o2 = o1 + stride[perm[1]]
        o3 = stride.sum()
        tets.append(np.column_stack([base, base + o1, base + o2, base + o3]))
    tets = np.stack(tets, axis=1).reshape(-1, 4)

    x = vertices[tets]
    jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2)
    neg = np.linalg.det(jac) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()

    local = tets[:, TET_EDGES]  # (nt, 6, 2)
    pairs = np.sort(local, axis=2).reshape(-1, 2)
    edges, inv = np.unique(pairs, axis=0, return_inverse=True)
    tet_to_edges = inv.reshape(-1, 6)
    tet_edge_signs = np.where(local[:, :, 0] < local[:, :, 1], 1, -1)

    tri = np.sort(tets[:, TET_FACES], axis=2).reshape(-1, 3)
    faces, finv, counts = np.unique(tri, axis=0, return_inverse=True, return_counts=True)
    tet_to_faces = finv.reshape(-1, 4)

    boundary = _classify(faces, counts, tet_to_faces, tet_to_edges)

    lengths = np.linalg.norm(vertices[edges[:, 1]] - vertices[edges[:, 0]], axis=1)
    h_max = float(lengths[tet_to_edges].max(axis=1).max())

    _freeze(vertices, tets, edges, faces, tet_to_edges, tet_edge_signs, tet_to_faces)
    return TetMesh(
        vertices=vertices,
        tets=tets,
        edges=edges,
        faces=faces,
        tet_to_edges=tet_to_edges,
        tet_edge_signs=tet_edge_signs,
        tet_to_faces=tet_to_faces,
        boundary=boundary,
        h_max=h_max,
        box=(tuple(lo), tuple(hi)),
        n=n,
    )


def _classify(faces, counts, tet_to_faces, tet_to_edges) -> BoundarySets:
    bfaces = np.flatnonzero(counts == 1)
    bverts = np.unique(faces[bfaces])
    on_boundary = (counts == 1)[tet_to_faces]  # (nt, 4)
    t, f = np.nonzero(on_boundary)
    bedges = np.unique(tet_to_edges[t[:, None], FACE_EDGES[f]])
    _freeze(bfaces, bedges, bverts)
    return BoundarySets(faces=bfaces, edges=bedges, vertices=bverts)


def classify_boundary(mesh: TetMesh) -> BoundarySets:
    """Recompute boundary faces, edges and vertices from the tet-face incidence."""
    counts = np.bincount(mesh.tet_to_faces.ravel(), minlength=mesh.n_faces)
    return _classify(mesh.faces, counts, mesh.tet_to_faces, mesh.tet_to_edges)

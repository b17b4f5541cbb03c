"""Unstructured triangular mesh: geometry, topology, incidence matrices,
and adjacency-walk point location.

Conventions baked in here and relied on by every other module:

* global edges are oriented from lower to higher vertex index;
* each face is stored as ``(a, b, c)`` with ``a`` the smallest global
  vertex index and the triple ordered counter-clockwise (positive area);
* the local edges of a face are the ascending local pairs
  ``(a,b), (a,c), (b,c)``, so only the third one can run against its
  global edge orientation (recorded in ``face_edge_signs``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

# Barycentric containment tolerance (unitless; barycentric coordinates are
# already relative to the face diameter).
BARY_TOL = 1e-12

# Local edge k connects local vertices LOCAL_EDGE_VERTICES[k].
LOCAL_EDGE_VERTICES = ((0, 1), (0, 2), (1, 2))
# Local edge opposite a local vertex: vertex 0 faces edge (1,2), etc.
OPPOSITE_EDGE = (2, 1, 0)


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""


class MeshTopologyError(ValueError):
    """Raised when a parsed mesh is not a valid triangulation."""


class WalkEscapedDomain(RuntimeError):
    """Point location walked across a boundary edge (point outside mesh)."""

    def __init__(self, point, last_face: int):
        super().__init__(
            f"point ({point[0]:.6g}, {point[1]:.6g}) is outside the mesh "
            f"(walk left the domain from face {last_face})"
        )
        self.last_face = last_face


@dataclass(frozen=True)
class Mesh:
    """Immutable triangulation with precomputed connectivity tables.

    All arrays are read-only views; construction goes through
    :func:`build_mesh` or :func:`load_mesh`.
    """

    vertices: np.ndarray       # (V, 2) float64, meters
    edges: np.ndarray          # (E, 2) int64, lo < hi
    faces: np.ndarray          # (F, 3) int64, min-first, CCW
    area: np.ndarray           # (F,) float64, positive
    face_edges: np.ndarray     # (F, 3) int64 global edge ids of local edges
    face_edge_signs: np.ndarray  # (F, 3) int64 in {-1, +1}
    face_neighbors: np.ndarray   # (F, 3) int64, neighbor across local edge, -1 on boundary
    edge_faces: np.ndarray     # (E, 2) int64, -1 fill
    boundary_edge: np.ndarray  # (E,) bool
    boundary_vertex: np.ndarray  # (V,) bool
    grads: np.ndarray          # (F, 3, 2) float64, gradients of barycentric coords
    simply_connected: bool = True
    # Affine barycentric map pieces: lam23 = bary_mat @ (p - vertex a)
    bary_origin: np.ndarray = field(default=None, repr=False)  # (F, 2)
    bary_mat: np.ndarray = field(default=None, repr=False)     # (F, 2, 2)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def barycentric(self, face: int, point) -> np.ndarray:
        """Barycentric coordinates of ``point`` in ``face`` (affine, exact
        also for points outside the face)."""
        dx = point[0] - self.bary_origin[face, 0]
        dy = point[1] - self.bary_origin[face, 1]
        m = self.bary_mat[face]
        l2 = m[0, 0] * dx + m[0, 1] * dy
        l3 = m[1, 0] * dx + m[1, 1] * dy
        return np.array([1.0 - l2 - l3, l2, l3])

    def barycentric_many(self, faces: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`barycentric` for (N,) face ids and (N, 2) points.

        Uses the same elementwise expression as the scalar path so results
        are bit-identical for identical inputs.
        """
        dx = points[:, 0] - self.bary_origin[faces, 0]
        dy = points[:, 1] - self.bary_origin[faces, 1]
        m = self.bary_mat[faces]
        l2 = m[:, 0, 0] * dx + m[:, 0, 1] * dy
        l3 = m[:, 1, 0] * dx + m[:, 1, 1] * dy
        lam = np.empty((faces.shape[0], 3))
        lam[:, 0] = 1.0 - l2 - l3
        lam[:, 1] = l2
        lam[:, 2] = l3
        return lam

    def locate(self, start_face: int, point) -> int:
        """Find a face containing ``point`` by walking from ``start_face``.

        Each step crosses the edge opposite the most negative barycentric
        coordinate.  Raises :class:`WalkEscapedDomain` if the walk crosses a
        boundary edge.
        """
        f = int(start_face)
        for _ in range(self.num_faces + 4):
            lam = self.barycentric(f, point)
            i = int(np.argmin(lam))
            if lam[i] >= -BARY_TOL:
                return f
            nb = self.face_neighbors[f, OPPOSITE_EDGE[i]]
            if nb < 0:
                raise WalkEscapedDomain(point, f)
            f = int(nb)
        raise WalkEscapedDomain(point, f)

    def segment_exit_bary(self, face: int, lam_from: np.ndarray, lam_to: np.ndarray):
        """Like :meth:`segment_exit` but on barycentric endpoints.

        ``s`` is clamped to 0 when the start sits a rounding error outside
        the face.  Simultaneous vanishing (vertex hit) is broken toward the
        exit edge with the smaller global edge index.
        """
        s_exit = 1.0
        exit_vertex = -1
        for i in range(3):
            if lam_to[i] < 0.0:  # strictly negative: crosses edge i's line
                si = lam_from[i] / (lam_from[i] - lam_to[i])
                if si < 0.0:
                    si = 0.0
                if si < s_exit - 1e-15:
                    s_exit = si
                    exit_vertex = i
                elif si <= s_exit + 1e-15 and exit_vertex >= 0:
                    # vertex graze: pick the smaller global edge index
                    cand = self.face_edges[face, OPPOSITE_EDGE[i]]
                    cur = self.face_edges[face, OPPOSITE_EDGE[exit_vertex]]
                    if cand < cur:
                        exit_vertex = i
        if exit_vertex < 0:
            return 1.0, None
        return s_exit, OPPOSITE_EDGE[exit_vertex]

    def segment_exit(self, face: int, r_from, r_to):
        """First parameter ``s`` in (0, 1] at which the straight segment
        ``r_from -> r_to`` leaves the closed ``face``, plus the local edge
        it exits through.

        Returns ``(1.0, None)`` when the segment stays inside; an endpoint
        landing exactly on an edge counts as inside (closed-face rule).
        """
        return self.segment_exit_bary(
            face, self.barycentric(face, r_from), self.barycentric(face, r_to)
        )


def _signed_area(p1, p2, p3) -> float:
    return 0.5 * ((p2[0] - p1[0]) * (p3[1] - p1[1]) - (p3[0] - p1[0]) * (p2[1] - p1[1]))


def build_mesh(vertices, triangles, simply_connected: bool = True) -> Mesh:
    """Build a :class:`Mesh` from raw vertex coordinates and triangle
    vertex triples (any order; normalized here)."""
    verts = np.asarray(vertices, dtype=np.float64)
    tris = np.asarray(triangles, dtype=np.int64)
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise MeshTopologyError(f"vertices must be (V, 2), got {verts.shape}")
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise MeshTopologyError(f"triangles must be (F, 3), got {tris.shape}")
    nv = verts.shape[0]
    if tris.size and (tris.min() < 0 or tris.max() >= nv):
        raise MeshTopologyError("triangle vertex index out of range")

    scale = float(np.max(np.abs(verts))) if verts.size else 1.0

    # Normalize: smallest vertex first, counter-clockwise.
    faces = np.empty_like(tris)
    area = np.empty(tris.shape[0])
    seen = {}
    for f, (i, j, k) in enumerate(tris):
        if len({i, j, k}) != 3:
            raise MeshTopologyError(f"face {f} repeats a vertex: {(i, j, k)}")
        key = (min(i, j, k), sorted((i, j, k))[1], max(i, j, k))
        if key in seen:
            raise MeshTopologyError(f"faces {seen[key]} and {f} are duplicates")
        seen[key] = f
        # rotate so the minimum index comes first, preserving orientation
        order = [i, j, k]
        r = int(np.argmin(order))
        order = order[r:] + order[:r]
        a = _signed_area(verts[order[0]], verts[order[1]], verts[order[2]])
        if a < 0.0:
            order = [order[0], order[2], order[1]]
            a = -a
        if a <= 1e-14 * scale * scale:
            raise MeshTopologyError(f"face {f} has (near-)zero area {a:.3e}")
        faces[f] = order
        area[f] = a

    # Global edges: unique ascending pairs, lexicographically sorted.
    pair_set = set()
    for a, b, c in faces:
        pair_set.add((min(a, b), max(a, b)))
        pair_set.add((min(a, c), max(a, c)))
        pair_set.add((min(b, c), max(b, c)))
    edges = np.array(sorted(pair_set), dtype=np.int64).reshape(-1, 2)
    edge_id = {tuple(e): idx for idx, e in enumerate(edges)}

    nf = faces.shape[0]
    ne = edges.shape[0]
    face_edges = np.empty((nf, 3), dtype=np.int64)
    face_edge_signs = np.empty((nf, 3), dtype=np.int64)
    edge_faces = np.full((ne, 2), -1, dtype=np.int64)
    for f, (a, b, c) in enumerate(faces):
        for k, (li, lj) in enumerate(LOCAL_EDGE_VERTICES):
            u, v = int(faces[f, li]), int(faces[f, lj])
            e = edge_id[(min(u, v), max(u, v))]
            face_edges[f, k] = e
            face_edge_signs[f, k] = 1 if u < v else -1
            if edge_faces[e, 0] < 0:
                edge_faces[e, 0] = f
            elif edge_faces[e, 1] < 0:
                edge_faces[e, 1] = f
            else:
                raise MeshTopologyError(f"edge {e} borders more than two faces")

    boundary_edge = edge_faces[:, 1] < 0
    boundary_vertex = np.zeros(nv, dtype=bool)
    boundary_vertex[edges[boundary_edge].ravel()] = True
    if not np.all(np.any(edge_faces >= 0, axis=1)):
        raise MeshTopologyError("dangling edge with no adjacent face")

    face_neighbors = np.full((nf, 3), -1, dtype=np.int64)
    for f in range(nf):
        for k in range(3):
            e = face_edges[f, k]
            f0, f1 = edge_faces[e]
            face_neighbors[f, k] = f1 if f0 == f else f0

    if simply_connected and nf > 0:
        euler = nv - ne + nf
        if euler != 1:
            raise MeshTopologyError(
                f"Euler relation V-E+F = {euler} != 1; not a simply-connected "
                "planar triangulation (use allow-holes to skip this check)"
            )

    # Barycentric affine maps and gradients, per face.
    p1 = verts[faces[:, 0]]
    p2 = verts[faces[:, 1]]
    p3 = verts[faces[:, 2]]
    twoa = 2.0 * area
    # inverse of [[x2-x1, x3-x1], [y2-y1, y3-y1]]
    bary_mat = np.empty((nf, 2, 2))
    bary_mat[:, 0, 0] = (p3[:, 1] - p1[:, 1]) / twoa
    bary_mat[:, 0, 1] = -(p3[:, 0] - p1[:, 0]) / twoa
    bary_mat[:, 1, 0] = -(p2[:, 1] - p1[:, 1]) / twoa
    bary_mat[:, 1, 1] = (p2[:, 0] - p1[:, 0]) / twoa
    grads = np.empty((nf, 3, 2))
    grads[:, 1, :] = bary_mat[:, 0, :]
    grads[:, 2, :] = bary_mat[:, 1, :]
    grads[:, 0, :] = -bary_mat[:, 0, :] - bary_mat[:, 1, :]

    for arr in (verts, edges, faces, area, face_edges, face_edge_signs,
                face_neighbors, edge_faces, boundary_edge, boundary_vertex,
                grads, bary_mat):
        arr.setflags(write=False)
    p1c = p1.copy()
    p1c.setflags(write=False)

    logger.info("mesh built: V=%d E=%d F=%d (boundary edges: %d)",
                nv, ne, nf, int(boundary_edge.sum()))
    return Mesh(
        vertices=verts, edges=edges, faces=faces, area=area,
        face_edges=face_edges, face_edge_signs=face_edge_signs,
        face_neighbors=face_neighbors, edge_faces=edge_faces,
        boundary_edge=boundary_edge, boundary_vertex=boundary_vertex,
        grads=grads, simply_connected=simply_connected,
        bary_origin=p1c, bary_mat=bary_mat,
    )


def load_mesh(path) -> Mesh:
    """Load a mesh from the whitespace-delimited text format.

    Layout: a ``NV 2`` header line, NV lines ``id x y``, a ``NF 3`` header,
    NF lines ``id v1 v2 v3``.  Ids are 1-based in the file.  ``#`` starts a
    comment; a ``# allow-holes`` comment disables the Euler sanity check.
    """
    allow_holes = False
    tokens = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            stripped = line.strip()
            if stripped.startswith("#"):
                if "allow-holes" in stripped:
                    allow_holes = True
                continue
            if stripped:
                tokens.extend(stripped.split())

    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(tokens):
            raise MeshFormatError(f"{path}: truncated file (needed {n} more tokens)")
        out = tokens[pos:pos + n]
        pos += n
        return out

    try:
        nv, dim = (int(t) for t in take(2))
    except ValueError as exc:
        raise MeshFormatError(f"{path}: bad vertex header: {exc}") from exc
    if dim != 2:
        raise MeshFormatError(f"{path}: dimension must be 2, got {dim}")
    verts = np.empty((nv, 2))
    filled = np.zeros(nv, dtype=bool)
    for _ in range(nv):
        row = take(3)
        try:
            vid = int(row[0]) - 1
            x, y = float(row[1]), float(row[2])
        except ValueError as exc:
            raise MeshFormatError(f"{path}: bad vertex line {row}: {exc}") from exc
        if not 0 <= vid < nv:
            raise MeshFormatError(f"{path}: vertex id {vid + 1} out of range 1..{nv}")
        if filled[vid]:
            raise MeshFormatError(f"{path}: duplicate vertex id {vid + 1}")
        filled[vid] = True
        verts[vid] = (x, y)
    if not filled.all():
        raise MeshFormatError(f"{path}: missing vertex ids")

    try:
        nf, three = (int(t) for t in take(2))
    except ValueError as exc:
        raise MeshFormatError(f"{path}: bad face header: {exc}") from exc
    if three != 3:
        raise MeshFormatError(f"{path}: faces must have 3 vertices, got {three}")
    tris = np.empty((nf, 3), dtype=np.int64)
    for _ in range(nf):
        row = take(4)
        try:
            fid = int(row[0]) - 1
            tri = [int(t) - 1 for t in row[1:]]
        except ValueError as exc:
            raise MeshFormatError(f"{path}: bad face line {row}: {exc}") from exc
        if not 0 <= fid < nf:
            raise MeshFormatError(f"{path}: face id {fid + 1} out of range 1..{nf}")
        tris[fid] = tri
    if pos != len(tokens):
        raise MeshFormatError(f"{path}: {len(tokens) - pos} trailing tokens")

    return build_mesh(verts, tris, simply_connected=not allow_holes)


def save_mesh(mesh: Mesh, path) -> None:
    """Write a mesh in the text format read by :func:`load_mesh`."""
    with open(path, "w", encoding="utf-8") as fh:
        if not mesh.simply_connected:
            fh.write("# allow-holes\n")
        fh.write(f"{mesh.num_vertices} 2\n")
        for i, (x, y) in enumerate(mesh.vertices):
            fh.write(f"{i + 1} {float(x)!r} {float(y)!r}\n")
        fh.write(f"{mesh.num_faces} 3\n")
        for f, (a, b, c) in enumerate(mesh.faces):
            fh.write(f"{f + 1} {a + 1} {b + 1} {c + 1}\n")


@dataclass(frozen=True)
class IncidenceMatrices:
    """Integer incidence matrices: discrete curl ``C`` (face x edge) and
    dual-grid divergence ``Stilde`` (vertex x edge)."""

    C: sp.csr_matrix
    Stilde: sp.csr_matrix


def build_incidence(mesh: Mesh) -> IncidenceMatrices:
    """Assemble ``C`` and ``Stilde`` with exact integer entries.

    ``C[f, e] = +1`` iff edge ``e`` runs along the CCW traversal of face
    ``f``; ``Stilde[v, e] = +1`` iff edge ``e`` leaves vertex ``v``
    (edges leave their lower endpoint).
    """
    nf, ne, nv = mesh.num_faces, mesh.num_edges, mesh.num_vertices

    rows = np.repeat(np.arange(nf, dtype=np.int64), 3)
    cols = mesh.face_edges.ravel()
    # CCW traversal a->b->c->a versus local edges (a,b), (a,c), (b,c):
    # (a,b) always along, (a,c) always against, (b,c) along iff b < c.
    vals = np.empty((nf, 3), dtype=np.int64)
    vals[:, 0] = 1
    vals[:, 1] = -1
    vals[:, 2] = mesh.face_edge_signs[:, 2]
    C = sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(nf, ne), dtype=np.int64)

    erows = mesh.edges.ravel()  # lo, hi per edge
    ecols = np.repeat(np.arange(ne, dtype=np.int64), 2)
    evals = np.tile(np.array([1, -1], dtype=np.int64), ne)
    Stilde = sp.csr_matrix((evals, (erows, ecols)), shape=(nv, ne), dtype=np.int64)

    return IncidenceMatrices(C=C, Stilde=Stilde)

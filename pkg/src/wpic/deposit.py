"""Gather (mesh fields to particles) and scatter (particle charge to
vertices, particle current to edges) through Whitney forms, with exact
splitting of multi-cell trajectories.

Charge conservation rests on two facts kept carefully intact here:

* the edge current of a straight sub-segment is the closed-form
  antisymmetric product of its endpoint barycentric triples (no
  quadrature), and
* when a trajectory crosses an edge, the crossing point is parameterized
  once along the *global* edge and re-expressed exactly in both adjacent
  faces, so consecutive sub-segments telescope bitwise.

Local edge values are orientation-free; this module applies the
local-to-global sign recorded on the mesh.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mesh import LOCAL_EDGE_VERTICES, Mesh
from .whitney import line_integral_w1_all

logger = logging.getLogger(__name__)

_MAX_CHAIN = 64  # segments per push never legitimately exceed a few faces


class ChainError(RuntimeError):
    """Trajectory splitting failed to make progress (degenerate geometry)."""


@dataclass
class SegmentChain:
    """A straight particle displacement split into per-face sub-segments.

    ``faces[k]`` holds sub-segment ``k`` with barycentric endpoints
    ``lam_start[k]`` and ``lam_end[k]`` expressed in that face.  If the
    displacement left the mesh, ``escaped`` is set and the chain stops at
    the boundary point.
    """

    faces: list[int] = field(default_factory=list)
    lam_start: list[np.ndarray] = field(default_factory=list)
    lam_end: list[np.ndarray] = field(default_factory=list)
    points: list[np.ndarray] = field(default_factory=list)  # cartesian joints
    escaped: bool = False
    consumed: bool = False

    def __len__(self) -> int:
        return len(self.faces)

    @property
    def final_face(self) -> int:
        return self.faces[-1]

    @property
    def final_lam(self) -> np.ndarray:
        return self.lam_end[-1]

    @property
    def final_point(self) -> np.ndarray:
        return self.points[-1]


def _edge_crossing(mesh: Mesh, face: int, local_edge: int,
                   lam_at_exit: np.ndarray):
    """Express the exit point exactly on the global edge.

    Returns ``(t, point)`` where ``t`` parameterizes the global edge from
    its lower to its higher vertex.  The same ``t`` is reused to place the
    point in the neighboring face, which makes charge telescoping across
    the edge bitwise exact.
    """
    li, lj = LOCAL_EDGE_VERTICES[local_edge]
    gi = mesh.faces[face, li]
    gj = mesh.faces[face, lj]
    wi = lam_at_exit[li]
    wj = lam_at_exit[lj]
    total = wi + wj
    t_along = wj / total  # fraction of the way gi -> gj
    if gi < gj:
        lo, hi, t = gi, gj, t_along
    else:
        lo, hi, t = gj, gi, 1.0 - t_along
    point = (1.0 - t) * mesh.vertices[lo] + t * mesh.vertices[hi]
    return lo, hi, t, point


def _lam_on_edge(mesh: Mesh, face: int, lo: int, hi: int, t: float) -> np.ndarray:
    """Barycentric triple of the point at parameter ``t`` on global edge
    ``(lo, hi)`` as seen from ``face`` (the off-edge coordinate is an exact
    zero)."""
    lam = np.zeros(3)
    for k in range(3):
        g = mesh.faces[face, k]
        if g == lo:
            lam[k] = 1.0 - t
        elif g == hi:
            lam[k] = t
    return lam


def split_segment(mesh: Mesh, start_face: int, r_from, r_to,
                  lam_from: np.ndarray | None = None) -> SegmentChain:
    """Split the straight displacement ``r_from -> r_to`` into sub-segments
    each inside a single face, walking across shared edges.

    ``r_from`` must lie in ``start_face``.  If the displacement crosses the
    mesh boundary the chain is truncated there and flagged ``escaped``.
    Callers that already hold the barycentric triple of ``r_from`` may pass
    it to keep downstream charge bookkeeping bitwise consistent.
    """
    chain = SegmentChain()
    face = int(start_face)
    lam_cur = mesh.barycentric(face, r_from) if lam_from is None \
        else np.asarray(lam_from, dtype=float)
    r_from = np.asarray(r_from, dtype=float)
    r_to = np.asarray(r_to, dtype=float)
    chain.points.append(r_from)

    for _ in range(_MAX_CHAIN):
        lam_to = mesh.barycentric(face, r_to)
        s_exit, local_edge = mesh.segment_exit_bary(face, lam_cur, lam_to)
        if local_edge is None:
            chain.faces.append(face)
            chain.lam_start.append(lam_cur)
            chain.lam_end.append(lam_to)
            chain.points.append(r_to)
            return chain

        lam_exit_raw = lam_cur + s_exit * (lam_to - lam_cur)
        lo, hi, t, point = _edge_crossing(mesh, face, local_edge, lam_exit_raw)
        lam_exit = _lam_on_edge(mesh, face, lo, hi, t)
        chain.faces.append(face)
        chain.lam_start.append(lam_cur)
        chain.lam_end.append(lam_exit)
        chain.points.append(point)

        neighbor = mesh.face_neighbors[face, local_edge]
        if neighbor < 0:
            chain.escaped = True
            return chain
        face = int(neighbor)
        lam_cur = _lam_on_edge(mesh, face, lo, hi, t)

    raise ChainError(
        f"trajectory splitting exceeded {_MAX_CHAIN} sub-segments "
        f"(face {face}); displacement is degenerate or far too long"
    )


def gather_E(mesh: Mesh, e: np.ndarray, faces, lam) -> np.ndarray:
    """Electric field at particle positions given by (face, barycentric)
    pairs: the signed sum of the containing face's three edge DoFs times
    their Whitney edge vectors.  Vectorized over particles; returns (N, 2).
    """
    faces = np.atleast_1d(np.asarray(faces, dtype=np.int64))
    lam = np.atleast_2d(np.asarray(lam, dtype=np.float64))
    grads = mesh.grads[faces]                     # (N, 3, 2)
    coef = mesh.face_edge_signs[faces] * e[mesh.face_edges[faces]]  # (N, 3)
    out = np.zeros((faces.shape[0], 2))
    for k, (i, j) in enumerate(LOCAL_EDGE_VERTICES):
        w = lam[:, i, None] * grads[:, j, :] - lam[:, j, None] * grads[:, i, :]
        out += coef[:, k, None] * w
    return out


def gather_B(mesh: Mesh, b: np.ndarray, faces) -> np.ndarray:
    """Out-of-plane magnetic flux density at particle positions: the face
    DoF divided by the face area (the 2-D face basis is 1/area on its own
    face).  Vectorized; returns (N,)."""
    faces = np.atleast_1d(np.asarray(faces, dtype=np.int64))
    return b[faces] / mesh.area[faces]


def scatter_charge(mesh: Mesh, q_nodes: np.ndarray, charge: float,
                   faces, lam) -> None:
    """Accumulate ``charge * lambda_i`` onto the three vertices of each
    containing face.  The partition of unity makes the per-particle total
    exactly the particle charge."""
    faces = np.atleast_1d(np.asarray(faces, dtype=np.int64))
    lam = np.atleast_2d(np.asarray(lam, dtype=np.float64))
    np.add.at(q_nodes, mesh.faces[faces].ravel(), (charge * lam).ravel())


def scatter_current_single(mesh: Mesh, i_edges: np.ndarray, charge: float,
                           faces, lam_start, lam_end, dt: float) -> None:
    """Deposit the currents of single-face displacements (vectorized).

    Each of the face's three edges receives ``(Q/dt)`` times the closed-form
    line integral, with the local-to-global orientation sign applied.
    """
    faces = np.atleast_1d(np.asarray(faces, dtype=np.int64))
    lam_start = np.atleast_2d(np.asarray(lam_start, dtype=np.float64))
    lam_end = np.atleast_2d(np.asarray(lam_end, dtype=np.float64))
    vals = (charge / dt) * line_integral_w1_all(lam_start, lam_end)
    vals *= mesh.face_edge_signs[faces]
    np.add.at(i_edges, mesh.face_edges[faces].ravel(), vals.ravel())


def scatter_current(mesh: Mesh, i_edges: np.ndarray, charge: float,
                    chain: SegmentChain, dt: float) -> None:
    """Deposit the currents of a (possibly multi-face) trajectory chain."""
    for k in range(len(chain)):
        scatter_current_single(
            mesh, i_edges, charge,
            chain.faces[k], chain.lam_start[k], chain.lam_end[k], dt,
        )
    chain.consumed = True

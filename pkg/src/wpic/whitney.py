"""Whitney 0-, 1-, and 2-form evaluation on a triangle, plus the exact
closed-form line integral of edge (1-form) functions along a straight
segment.

Everything works in barycentric coordinates with the local ascending edge
ordering ``(1,2), (1,3), (2,3)``; orientation against the global edge
direction is the caller's business (see :mod:`wpic.deposit`).
"""
from __future__ import annotations

import numpy as np

from .mesh import LOCAL_EDGE_VERTICES


def eval_w0(lam, local_vertex: int) -> float:
    """Nodal (0-form) basis value: the barycentric coordinate itself."""
    return lam[local_vertex]


def eval_w1(grads, lam, local_edge: int) -> np.ndarray:
    """Edge (1-form) basis vector ``lam_i grad(lam_j) - lam_j grad(lam_i)``
    for the ascending local pair of ``local_edge``.

    ``grads`` is the face's (3, 2) array of barycentric gradients.
    """
    i, j = LOCAL_EDGE_VERTICES[local_edge]
    return lam[i] * grads[j] - lam[j] * grads[i]


def eval_w2(area: float) -> float:
    """Face (2-form) basis value inside its face: one over the face area.

    Outside the face the value is zero; support membership is decided by
    the caller through point location.
    """
    return 1.0 / area


def line_integral_w1(lam_start, lam_end, local_edge: int) -> float:
    """Exact line integral of the edge basis of ``local_edge`` along the
    straight segment between two points of the same face, given by their
    barycentric triples: ``lam_i^s lam_j^f - lam_i^f lam_j^s``.

    No quadrature; exact for straight paths because the barycentric map is
    affine along the segment.
    """
    i, j = LOCAL_EDGE_VERTICES[local_edge]
    return lam_start[i] * lam_end[j] - lam_end[i] * lam_start[j]


def line_integral_w1_all(lam_start: np.ndarray, lam_end: np.ndarray) -> np.ndarray:
    """Vectorized :func:`line_integral_w1` over all three local edges.

    Accepts (3,) triples or (N, 3) batches; returns (3,) or (N, 3) with the
    same elementwise expression as the scalar path.
    """
    ls, lf = lam_start, lam_end
    out = np.empty(ls.shape)
    out[..., 0] = ls[..., 0] * lf[..., 1] - lf[..., 0] * ls[..., 1]
    out[..., 1] = ls[..., 0] * lf[..., 2] - lf[..., 0] * ls[..., 2]
    out[..., 2] = ls[..., 1] * lf[..., 2] - lf[..., 1] * ls[..., 2]
    return out

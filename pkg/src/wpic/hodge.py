"""Discrete Hodge star assembly: the edge-edge permittivity mass matrix and
the (diagonal, in 2-D) face-face reluctivity matrix, plus an SPD check.

The edge mass matrix is integrated per element with the symmetric
three-point (edge midpoint) rule, which is exact for the quadratic
integrand on affine triangles, and scattered with local-to-global
orientation signs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .whitney import eval_w1

logger = logging.getLogger(__name__)

# Edge-midpoint quadrature: barycentric points, each with weight area/3.
_QPOINTS = np.array([
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
])


class MaterialError(ValueError):
    """Raised for nonpositive permittivity or permeability."""


@dataclass(frozen=True)
class HodgeOperators:
    """Assembled material matrices for one mesh."""

    star_eps: sp.csr_matrix      # (E, E) symmetric positive definite
    star_mu_inv: sp.csr_matrix   # (F, F) diagonal in 2-D
    eps_per_face: np.ndarray
    mu_per_face: np.ndarray


def local_edge_mass(grads: np.ndarray, area: float) -> np.ndarray:
    """3x3 edge mass matrix of one triangle (unit material), from the
    midpoint quadrature rule."""
    m = np.zeros((3, 3))
    w = area / 3.0
    for lam in _QPOINTS:
        vals = [eval_w1(grads, lam, k) for k in range(3)]
        for a in range(3):
            for b in range(a, 3):
                m[a, b] += w * (vals[a] @ vals[b])
    m[1, 0] = m[0, 1]
    m[2, 0] = m[0, 2]
    m[2, 1] = m[1, 2]
    return m


def assemble_star_eps(mesh: Mesh, eps_per_face) -> sp.csr_matrix:
    """Assemble the edge-edge permittivity Hodge matrix.

    ``eps_per_face`` is a scalar or per-face array of permittivities (F/m),
    all positive.
    """
    eps = np.broadcast_to(np.asarray(eps_per_face, dtype=np.float64),
                          (mesh.num_faces,))
    if np.any(eps <= 0.0):
        raise MaterialError("permittivity must be positive on every face")

    nf = mesh.num_faces
    rows = np.empty(9 * nf, dtype=np.int64)
    cols = np.empty(9 * nf, dtype=np.int64)
    vals = np.empty(9 * nf)
    for f in range(nf):
        m = eps[f] * local_edge_mass(mesh.grads[f], mesh.area[f])
        ge = mesh.face_edges[f]
        sg = mesh.face_edge_signs[f]
        block = (sg[:, None] * sg[None, :]) * m
        base = 9 * f
        rows[base:base + 9] = np.repeat(ge, 3)
        cols[base:base + 9] = np.tile(ge, 3)
        vals[base:base + 9] = block.ravel()
    mat = sp.csr_matrix((vals, (rows, cols)),
                        shape=(mesh.num_edges, mesh.num_edges))
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def assemble_star_mu_inv(mesh: Mesh, mu_per_face) -> sp.csr_matrix:
    """Assemble the face-face inverse-permeability Hodge matrix.

    In 2-D the face basis is ``1/area`` on its own face and zero elsewhere,
    so the matrix is diagonal with entries ``1 / (mu_f * area_f)``.
    """
    mu = np.broadcast_to(np.asarray(mu_per_face, dtype=np.float64),
                         (mesh.num_faces,))
    if np.any(mu <= 0.0):
        raise MaterialError("permeability must be positive on every face")
    diag = 1.0 / (mu * mesh.area)
    return sp.diags(diag, format="csr")


def assemble(mesh: Mesh, eps_per_face, mu_per_face) -> HodgeOperators:
    eps = np.broadcast_to(np.asarray(eps_per_face, dtype=np.float64),
                          (mesh.num_faces,)).copy()
    mu = np.broadcast_to(np.asarray(mu_per_face, dtype=np.float64),
                         (mesh.num_faces,)).copy()
    ops = HodgeOperators(
        star_eps=assemble_star_eps(mesh, eps),
        star_mu_inv=assemble_star_mu_inv(mesh, mu),
        eps_per_face=eps,
        mu_per_face=mu,
    )
    logger.info("hodge assembled: star_eps nnz=%d, star_mu_inv nnz=%d",
                ops.star_eps.nnz, ops.star_mu_inv.nnz)
    return ops


def verify_spd(matrix) -> bool:
    """True iff ``matrix`` is symmetric (to 1e-14 relative) and a Cholesky
    factorization succeeds."""
    m = sp.csr_matrix(matrix)
    if m.shape[0] != m.shape[1]:
        return False
    scale = np.max(np.abs(m.data)) if m.nnz else 0.0
    asym = np.abs(m - m.T)
    if asym.nnz and asym.max() > 1e-14 * max(scale, 1e-300):
        return False
    try:
        np.linalg.cholesky(m.toarray())
    except np.linalg.LinAlgError:
        return False
    return True


def dump_triplets(matrix, path) -> None:
    """Write a sparse matrix as ``row col value`` triplet text for offline
    inspection (one header line with the shape)."""
    m = sp.coo_matrix(matrix)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {m.shape[0]} {m.shape[1]} {m.nnz}\n")
        for r, c, v in zip(m.row, m.col, m.data):
            fh.write(f"{r} {c} {float(v)!r}\n")

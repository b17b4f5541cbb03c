"""Shared fixtures: small hand meshes plus structured and Delaunay mesh
generators used across the suite."""
from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial import Delaunay

from wpic.mesh import Mesh, build_mesh


def reference_triangle() -> Mesh:
    return build_mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


def two_triangles() -> Mesh:
    """Unit square split along the diagonal (1,2): one interior edge."""
    verts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    return build_mesh(verts, [[0, 1, 2], [1, 3, 2]])


def structured_rect(nx: int, ny: int, width: float = 1.0, height: float = 1.0,
                    x0: float = 0.0, y0: float = 0.0) -> Mesh:
    """Right-triangle grid over a rectangle, alternating diagonals so the
    triangulation is not axis-biased."""
    xs = np.linspace(x0, x0 + width, nx + 1)
    ys = np.linspace(y0, y0 + height, ny + 1)
    verts = np.array([[x, y] for y in ys for x in xs])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                tris += [[a, b, d], [a, d, c]]
            else:
                tris += [[a, b, c], [b, d, c]]
    return build_mesh(verts, tris)


def random_delaunay(n_points: int, seed: int, scale: float = 1.0) -> Mesh:
    """Delaunay triangulation of jittered points in a square (plus the
    corners so the hull is the full square)."""
    rng = np.random.Generator(np.random.Philox(seed))
    pts = rng.random((n_points, 2)) * scale
    corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1]]) * scale
    pts = np.vstack([corners, pts])
    tri = Delaunay(pts)
    return build_mesh(tri.points, tri.simplices)


@pytest.fixture
def ref_tri() -> Mesh:
    return reference_triangle()


@pytest.fixture
def two_tri() -> Mesh:
    return two_triangles()


@pytest.fixture
def small_rect() -> Mesh:
    return structured_rect(4, 4)

"""Self-checks behind the ``verify`` command: structural identities,
SPD-ness, interpolation duality, closed-form integrals against quadrature,
and continuity over random particle pushes on a given mesh.
"""
from __future__ import annotations

import numpy as np

from . import deposit, diagnostics, hodge, whitney
from .mesh import LOCAL_EDGE_VERTICES, Mesh, build_incidence


def check_exact_sequence(mesh: Mesh, corrupt: bool = False):
    """``Stilde C^T`` must vanish identically in integer arithmetic."""
    inc = build_incidence(mesh)
    c = inc.C.tolil() if corrupt else inc.C
    if corrupt:
        c[0, mesh.face_edges[0, 0]] *= -1  # negative control
        c = c.tocsr()
    product = inc.Stilde @ c.T
    worst = int(np.abs(product.toarray()).max()) if product.nnz else 0
    return "exact-sequence Stilde*C^T = 0", worst == 0, f"max |entry| = {worst}"


def check_spd(mesh: Mesh, eps=1.0, mu=1.0):
    ops = hodge.assemble(mesh, eps, mu)
    ok = hodge.verify_spd(ops.star_eps) and hodge.verify_spd(ops.star_mu_inv)
    return "hodge matrices symmetric positive definite", ok, ""


def check_interpolation_duality(mesh: Mesh, tol: float = 1e-10, npts: int = 2000):
    """Tangential line integral of edge basis j over edge i is the
    Kronecker delta (checked by dense midpoint quadrature)."""
    worst = 0.0
    s = (np.arange(npts) + 0.5) / npts
    for f in range(min(mesh.num_faces, 8)):
        grads = mesh.grads[f]
        verts = mesh.vertices[mesh.faces[f]]
        for i, (a, b) in enumerate(LOCAL_EDGE_VERTICES):
            p0, p1 = verts[a], verts[b]
            tangent = p1 - p0
            pts = p0[None, :] + s[:, None] * tangent[None, :]
            lam = mesh.barycentric_many(np.full(npts, f, dtype=np.int64), pts)
            for j in range(3):
                a, b = LOCAL_EDGE_VERTICES[j]
                wvals = (lam[:, a, None] * grads[b][None, :]
                         - lam[:, b, None] * grads[a][None, :])
                integral = float((wvals @ tangent).mean())
                target = 1.0 if i == j else 0.0
                worst = max(worst, abs(integral - target))
    return ("edge basis line-integral duality", worst <= tol,
            f"max |deviation| = {worst:.2e}")


def check_closed_form_vs_quadrature(mesh: Mesh, samples: int = 1000,
                                    tol: float = 1e-12, seed: int = 7,
                                    npts: int = 1000):
    """Closed-form segment integrals against dense midpoint quadrature of
    the edge basis along random in-face segments."""
    rng = np.random.Generator(np.random.Philox(seed))
    s = (np.arange(npts) + 0.5) / npts
    worst = 0.0
    for _ in range(samples):
        f = int(rng.integers(mesh.num_faces))
        w0 = rng.dirichlet((1.0, 1.0, 1.0))
        w1 = rng.dirichlet((1.0, 1.0, 1.0))
        verts = mesh.vertices[mesh.faces[f]]
        p0 = w0 @ verts
        p1 = w1 @ verts
        lam0 = mesh.barycentric(f, p0)
        lam1 = mesh.barycentric(f, p1)
        pts = p0[None, :] + s[:, None] * (p1 - p0)[None, :]
        lam = mesh.barycentric_many(np.full(npts, f, dtype=np.int64), pts)
        grads = mesh.grads[f]
        seg = p1 - p0
        for k in range(3):
            closed = whitney.line_integral_w1(lam0, lam1, k)
            i, j = LOCAL_EDGE_VERTICES[k]
            wvals = (lam[:, i, None] * grads[j][None, :]
                     - lam[:, j, None] * grads[i][None, :])
            quad = float((wvals @ seg).mean())
            worst = max(worst, abs(closed - quad))
    return ("closed-form segment integral vs quadrature", worst <= tol,
            f"max |difference| = {worst:.2e}")


def check_continuity_random_pushes(mesh: Mesh, pushes: int = 2000,
                                   seed: int = 11, dt: float = 1e-9,
                                   charge: float = -1.6e-19):
    """Per-push discrete continuity over random displacements, a sizeable
    share of which cross cell boundaries."""
    inc = build_incidence(mesh)
    rng = np.random.Generator(np.random.Philox(seed))
    diam = np.sqrt(mesh.area.max())
    bound = 1e-12 * abs(charge) / dt
    worst = 0.0
    crossings = 0
    for _ in range(pushes):
        f = int(rng.integers(mesh.num_faces))
        w = rng.dirichlet((1.0, 1.0, 1.0))
        p0 = w @ mesh.vertices[mesh.faces[f]]
        step = rng.normal(scale=diam, size=2)
        p1 = p0 + step
        chain = deposit.split_segment(mesh, f, p0, p1)
        if len(chain) > 1:
            crossings += 1
        q0 = np.zeros(mesh.num_vertices)
        q1 = np.zeros(mesh.num_vertices)
        i_arr = np.zeros(mesh.num_edges)
        deposit.scatter_charge(mesh, q0, charge, chain.faces[0],
                               chain.lam_start[0])
        deposit.scatter_charge(mesh, q1, charge, chain.final_face,
                               chain.final_lam)
        deposit.scatter_current(mesh, i_arr, charge, chain, dt)
        resid = diagnostics.continuity_residual(q0, q1, i_arr,
                                                inc.Stilde, dt)
        if chain.escaped:  # charge left the domain: only interior rows hold
            resid = resid[~mesh.boundary_vertex]
        worst = max(worst, float(np.max(np.abs(resid))))
    ok = worst <= bound and crossings >= pushes // 10
    return ("discrete continuity over random pushes", ok,
            f"max residual = {worst:.2e} (bound {bound:.2e}), "
            f"{crossings}/{pushes} crossed cells")


def run_all(mesh: Mesh, corrupt_incidence: bool = False):
    """Run every check; returns a list of (name, passed, detail)."""
    return [
        check_exact_sequence(mesh, corrupt=corrupt_incidence),
        check_spd(mesh),
        check_interpolation_duality(mesh),
        check_closed_form_vs_quadrature(mesh),
        check_continuity_random_pushes(mesh),
    ]

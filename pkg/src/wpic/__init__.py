"""Charge-conserving 2-D electromagnetic particle-in-cell engine on
unstructured triangular meshes.

Fields live on mesh elements (electric on edges, magnetic on faces,
charge on vertices, current on edges) and are interpolated by Whitney
forms; the scatter step uses closed-form segment integrals, which makes
the discrete continuity equation hold to machine precision by
construction.
"""

from .mesh import Mesh, build_incidence, build_mesh, load_mesh, save_mesh
from .scenario import Scenario, load_scenario

__all__ = [
    "Mesh",
    "Scenario",
    "build_incidence",
    "build_mesh",
    "load_mesh",
    "save_mesh",
    "load_scenario",
]

__version__ = "0.1.0"

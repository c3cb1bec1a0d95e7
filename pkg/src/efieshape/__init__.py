"""Shape derivatives of a Galerkin EFIE discretisation with RT0 elements.

Analytical derivatives of the local system matrices are checked against
forward-mode automatic differentiation and finite differences; adjoint
gradients of objectives over the solution are built on top.
"""

from .assembly import (MaterialParams, PlaneWave, assemble_system, local_pair_matrix,
                       pair_integrals, rhs_plane_wave)
from .mesh import (DofMap, MeshError, PairClass, ShapePerturbation, SurfaceMesh, build_dofmap,
                   classify_pair, deform_mesh, load_mesh)
from .quadrature import analytic_potentials, dunavant_rule
from .shapederiv import (ad_local_pair_matrix, d_assemble, d_local_pair_matrix,
                         d_rhs_plane_wave, fd_local_pair_matrix)

__version__ = "0.1.0"

__all__ = [
    "DofMap", "MaterialParams", "MeshError", "PairClass", "PlaneWave", "ShapePerturbation",
    "SurfaceMesh", "ad_local_pair_matrix", "analytic_potentials", "assemble_system",
    "build_dofmap", "classify_pair", "d_assemble", "d_local_pair_matrix", "d_rhs_plane_wave",
    "deform_mesh", "dunavant_rule", "fd_local_pair_matrix", "load_mesh", "local_pair_matrix",
    "pair_integrals", "rhs_plane_wave",
]

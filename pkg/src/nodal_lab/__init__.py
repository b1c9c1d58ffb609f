"""Nodal sets of Laplace eigenfunctions on the round sphere and the flat torus.

Analytic eigenfunction families, nodal-curve extraction, the integral
identity ``int |e| (Delta + lam) f = 2 int_Z |grad e| f`` and the inequality
chain built on it, cotangent FEM eigenpairs on triangle meshes, and scaling
fits along eigenvalue ladders.
"""

from .eigenfunctions import (FAMILIES, HIGHEST_WEIGHT, TORUS_PRODUCT, ZONAL, EigenfunctionField, FamilyLadder,
                             analytic_nodal_measure, build_ladder, highest_weight_harmonic, legendre_eval,
                             legendre_roots, make_field, torus_product_mode, zonal_harmonic)
from .geometry import (SPHERE_CHART, TORUS_CHART, ChartDescriptor, ChartKind, MeshError, QuadratureRule,
                       TriangleMesh, build_mesh_quadrature, build_sphere_quadrature, build_torus_quadrature,
                       icosphere, load_mesh, refine_mesh, torus_grid_mesh)
from .integrals import AuxiliaryFunction, Integrand, helmholtz_applied_integral, laplacian_fd, volume_integral
from .nodal import AuxSelector, NodalCurveSet, extract_nodal_curves, nodal_energy, nodal_length, \
    nodal_line_integral
from .spectral import (DiscreteEigenpair, EigenSolveError, FemField, SparseSymmetricOperator, assemble_mass,
                       assemble_stiffness, fem_field, solve_eigenpairs)
from .svg import emit_svg_loglog
from .verification import (IdentityReport, InequalityReport, LadderReport, ScalingFit, check_energy_bound,
                           check_identity, check_main_inequality, check_schwarz_chain, check_sobolev_h1,
                           fit_scaling_exponent, lower_bound_report)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

"""Monolithic geometric multigrid solvers for 2D Stokes discretizations.

Modules
-------
meshtopo   structured triangular/quadrilateral meshes with star/closure
elements   reference elements, quadrature, physical cell mappings
spaces     global dof maps, interpolation, strong boundary conditions
assembly   saddle-point operators (conforming and interior-penalty forms)
sparsela   sparse/dense kernels, flexible GMRES, spectrum estimation
vanka      overlapping patch construction and additive correction
mg         nested hierarchy, transfers, Chebyshev relaxation, V-cycle
bench      experiment driver, error norms, CSV output
"""

from .assembly import (BlockSystem, ProblemConfig, assemble, assemble_hdiv,
                       assemble_taylor_hood, manufactured_data)
from .bench import RunRecord, RunSpec, error_norms, run_case, stopping_study, \
    sweep
from .elements import CellMap, QuadratureRule, ReferenceElement, \
    make_element, make_quadrature, make_vector_element, push_forward, tabulate
from .meshtopo import (EntityRef, Mesh, MeshGeometry, MeshTopology,
                       RefinementLink, build_structured_quad,
                       build_structured_tri, closure, refine_uniform, star)
from .mg import (ChebyshevParams, MgHierarchy, TransferPair, build_hierarchy,
                 build_prolongation, chebyshev_relax, make_preconditioner,
                 v_cycle)
from .spaces import (FunctionSpace, MixedSpace, StrongBc, build_mixed,
                     build_space, interpolate, strong_bc)
from .sparsela import (DenseFactorization, KrylovReport, SingularMatrixError,
                       estimate_lambda_max, extract_submatrix, fgmres,
                       lu_factor, lu_solve, nullspace_projector, spmv,
                       triple_product)
from .vanka import (Patch, PatchSet, apply_additive,
                    build_patches_hdiv_extended, build_patches_taylor_hood,
                    factor_patches)

__version__ = "0.1.0"

"""parafem: a finite element laboratory for parabolic equations.

Semi-discrete Galerkin discretizations on quasi-uniform 2-D triangulations,
with projection operators, discrete Green functions and the experiment
harness that measures max-norm stability, convergence rates, and maximal
regularity constants across mesh refinements.
"""

__version__ = "0.1.0"

from .mesh import (Mesh, PointOutsideDomain, build_disk_polygon,
                   build_structured_square, load_mesh, locate_point,
                   mesh_checksum, refine_uniform, save_mesh)
from .fespace import (FeFunction, FeSpace, QuadratureRule, build_space,
                      interpolate_nodal, quadrature)
from .assembly import (CoefficientField, EllipticityViolation, assemble_load,
                       assemble_div_load, assemble_mass, assemble_stiffness,
                       coefficient_library, save_matrix)
from .linsolve import SolverError, SpdSolver
from .projections import (RegularizedDelta, l2_project, ph_delta,
                          regularized_delta, ritz_project)
from .evolution import (EvolutionBackend, Trajectory, apply_Ah,
                        semigroup_apply, solve_inhomogeneous,
                        spectral_decompose, save_trajectory, load_trajectory)
from .norms import log_factor, lp_lq_norm, max_norm_QT, w101_norm
from .green import (DyadicDecomposition, GreenRecord, MeshTooCoarse,
                    TruncatedKernel, annulus_weighted_sums, difference_F,
                    difference_functionals, discrete_green,
                    dyadic_decomposition, green_times, reference_green,
                    schur_rowsums, truncated_green)
from .config import ConfigError, ExperimentConfig, parse_config
from .harness import (ResultTable, convergence_study, green_diagnostics,
                      maximal_semigroup_scan, maxreg_scan, run_checks,
                      spacetime_stability, stability_scan)

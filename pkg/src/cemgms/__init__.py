"""CEM-GMsFEM for 2D linear elasticity with mixed inhomogeneous boundary conditions."""
from .grid import BoundarySpec, Grid, GridSpec, build_grid, oversample, partition_of_unity
from .medium import MaterialField, inclusion_medium, lame, load_raster, preset_medium, write_raster
from .fem import assemble, discretize, fine_solve, load_vector, norms
from .aux_space import build_aux, local_eigenproblem, project_pi
from .cem_basis import RegionSolver, build_space, constrained_basis, relaxed_basis
from .correctors import dirichlet_corrector, global_corrector_pair, neumann_corrector
from .msolve import assemble_coarse, compute_errors, fine_reference, solve_multiscale

__version__ = "0.1.0"

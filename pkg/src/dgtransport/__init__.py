"""Matrix-free DG solvers for linear Boltzmann transport in space, angle and energy."""
from .errors import (InvalidArgument, InvalidData, NumericalBreakdown, OutOfDomain, SizeError,
                     UnsupportedOperation)
from .mesh import (build_angular_mesh, build_energy_mesh, build_product_mesh, build_spatial_mesh,
                   angular_quadrature)
from .physics import (ComptonData, CrossSectionModel, compton_beta, compton_gamma,
                      compton_kinematics, compton_model, contraction_constants, isotropic_model,
                      kernel_moments, klein_nishina, linear_anisotropic_model)
from .fespace import DGSpace, DofLayout, FeFunction
from .operators import TransportOperators
from .solvers import (StoppingRule, SolveReport, generalised_source_iteration, gmres,
                      gmres_weighted, group_sequential_solve, source_iteration)
from .estimators import (constants_for, effectivity, gsi_estimate, local_residual,
                         reference_solution, residual_estimate, si_estimate)

__version__ = "0.1.0"

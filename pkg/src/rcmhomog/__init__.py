"""Numerical laboratory for the random conductance model.

Exact quenched heat kernels, averaged kernels, periodic correctors and
effective matrices, Kantorovich-type distances, a synthetic martingale
testbed and homogenization rate experiments, plus a batch CLI.
"""

__version__ = "0.1.0"

from .corrector import (CorrectorField, EffectiveMatrix, average_effective_matrices, corrector_martingale,
                        effective_matrix, martingale_diagnostics, solve_corrector, solve_correctors)
from .distance import (EmpiricalDistribution, RateParams, k_kantorovich_lower_bound, kantorovich_pair,
                       kantorovich_to_gaussian, kolmogorov_to_gaussian, psi_rate, w1_bias_floor)
from .environment import (BoxSpec, ConductanceField, EnvironmentLaw, LatticeField, apply_generator,
                          constant_field, safe_radius, sample_environment)
from .errors import BoundaryExitError, BoundaryMassError, ConvergenceError, NumericalError, RcmError, ValidationError
from .homog import (InitialData, RateSeries, averaged_solution, bound_rhs, rate_fit, solve_cee, solve_cpe, solve_dee,
                    solve_dpe)
from .kernel import (GreenSlice, HeatKernelSlice, averaged_kernel, carne_bound, discrete_gradient, green_function,
                     heat_kernel, homogenized_green, homogenized_kernel)
from .mclt import CltDiagnostics, MartingaleModel, clt_rhs, optimality_probe, simulate_model
from .walk import Trajectory, annealed_projection_samples, simulate_walk

__all__ = [name for name in dir() if not name.startswith("_")]

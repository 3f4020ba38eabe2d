"""Numerical weak KAM toolkit on the 1- and 2-torus.

Computes backward/forward viscosity solutions of H(x, c + Du) = alpha(c) by
min-plus value iteration, builds Peierls barrier rows, the projected Aubry set
and its classes, conjugate pairs and barrier fields, estimates superdifferential
hulls and Lasry-Lions regularizations, finds generalized critical points with
minimax values, and traces minimal homoclinic / class-connecting orbits.
"""

from .grid import ScalarField, TorusGrid, torus_delta, torus_distance, wrap
from .models import (BUILTIN_FAMILIES, HamiltonianModel, LagrangianModel,
                     NonSuperlinearError, TrigPolynomial, double_well,
                     double_well_pendulum, free_model, hamiltonian_vector_field,
                     legendre, make_model, mechanical_hamiltonian, pendulum,
                     product_pendulum, reversed_hamiltonian, trig_model)
from .solver import (DivergenceError, LaxOleinikOperator, NonConvergenceError,
                     SolverSettings, StencilError, WeakKAMSolution,
                     domination_excess, estimate_alpha, lax_oleinik_step,
                     point_source_solution, solve, stencil_radius)
from .barrier import (AubrySet, BarrierField, ConjugatePair, EmptyAubrySetError,
                      MultiClassObstructionError, PeierlsCache, aubry_set,
                      barrier_function, conjugate_pair, default_eps_aubry,
                      hetero_barrier, peierls_row)
from .semiconcave import (DiffHull, LLReport, RegularizedField,
                          SemiconcavityError, WindowError, hull_zero_distance_field,
                          lasry_lions, limiting_differentials,
                          minimal_norm_element, semiconcavity_constant,
                          superdifferential, verify_LL_properties)
from .critical import (CriticalPoint, MinimaxResult, NoCriticalPointsError,
                       category_lower_bound, check_criteria, classify,
                       find_critical_points, minimax_value)
from .orbits import (MatchGapError, OrbitTrace, PhasePoint, StepRejectionError,
                     best_trace, connect_classes, make_phase_point,
                     match_candidates, match_differentials, project_to_shell,
                     trace, verify_calibration)
from .util import __version__

__all__ = [name for name in dir() if not name.startswith("_")]

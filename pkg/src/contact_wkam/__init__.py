"""Numerical weak KAM toolkit for contact Hamiltonians on the circle.

The main entry points are re-exported here; see the submodules for the
full interfaces.
"""

from .action import (ActionField, backward_action, dual_backward, extract_minimizer,
                     forward_action, limit_forward, limsup_backward)
from .errors import (BlowUp, BracketFailure, ConfigError, ContactWKAMError,
                     DegenerateEquilibrium, Diverged, InclusionViolation,
                     LegendreBracketFailure, NotConverged, NotFound, WindowExhausted)
from .flow import (PhaseState, Trajectory, classify_equilibrium, find_equilibria, integrate,
                   is_recurrent, passes_through)
from .model import (CircleDomain, Drift, GridFunction, HamiltonianModel, custom_model,
                    example_e, hamiltonian, lagrangian, validate_model)
from .semigroup import (is_fixed_point, solve_backward, solve_forward, step_minus, step_plus)
from .sets import (SetReport, build_set_report, build_transitive_orbit, check_diamond,
                   inclusion_report, mane_membership, mather_candidates,
                   minimal_forward_solution, static_membership, strongly_static_membership)

__version__ = "0.1.0"

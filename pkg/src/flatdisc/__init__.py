"""Flatness-preserving Euler discretization and flatness-based tracking control.

The package discretizes structurally flat triangular systems with implicit
or explicit Euler, builds the parameterizing map of the discretized system
from a window of flat-output samples, and uses it for a discrete-time
tracking controller by dynamic feedback.  The planar VTOL aircraft is the
worked model.
"""

__version__ = "0.1.0"

from .errors import (ControllerFault, FlatnessError, NumericError,  # noqa: E402
                     ParameterizationError, RankConditionError, SingularityError,
                     StepFailure)
from .core import (Block, ContinuousSystem, CoordinateChange, RankReport,  # noqa: E402
                   ShiftWindow, TriangularForm, check_rank_conditions, jacobian_fd,
                   transform_system)
from .discretize import (ImplicitStepSettings, explicit_step, implicit_step,  # noqa: E402
                         newton_solve, observed_order, rk4_integrate)
from .parameterize import (DiscreteTriangularSystem, ParameterizingMap,  # noqa: E402
                           build_parameterizer, evaluate, evaluate_original,
                           evaluate_state, recover_original_input, redefine_shift_origin,
                           roundtrip_validate)
from .controller import FlatnessController, GainSpec, extend_to_diffeo, pole_gains  # noqa: E402
from .trajgen import ReferenceTrajectory, chain, rest_to_rest, sample_reference  # noqa: E402
from .vtol import VtolModel, VtolParams  # noqa: E402
from .sim import SimConfig, compare_schemes, export_csv, run_closed_loop  # noqa: E402

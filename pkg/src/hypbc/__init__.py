"""Boundary control of 2x2 linear hyperbolic systems.

Backstepping kernels with integral action, an epsilon-blended boundary
observer, stability analysis of the induced neutral delay equation, and
scenario-driven closed-loop simulation.
"""

from .errors import (AssumptionError, ConfigurationError, DivergenceError,
                     HypbcError, ParameterError, ScenarioError, SignalError,
                     SolverError)
from .model import (ControlConfig, DisturbanceSet, SpatialGrid, SystemParams,
                    TransportMaps, build_transport_maps, norm_E, norm_Eprime,
                    validate_configuration)
from .kernels import (InverseKernelSet, IntegralWeights, KernelSet,
                      ObserverKernelSet, TriangularField, apply_inverse,
                      apply_transform, check_assumption3, observer_gains,
                      solve_control_kernels, solve_integral_weights,
                      solve_inverse_kernels, solve_observer_kernels)
from .steady import (ErrorState, ForcingProfiles, SteadySolver, SteadyState,
                     error_variables, forcing_profiles, solve_pseudo_steady)
from .nde import (FeedbackGains, NDEHistory, NDETrace, StabilityReport,
                  classify_window_ratio, effective_gains,
                  nde_forcing_from_scenario, select_kI, simulate_nde,
                  spectral_abscissa, stability_report, tau0_formula,
                  tau0_oracle)
from .control import (ControllerState, OutputFeedbackLaw, StateFeedbackLaw,
                      integrator_step, output_feedback_ubs,
                      state_feedback_ubs, total_control)
from .observer import (EpsilonInterval, ErrorForcingProfiles, ISSConstants,
                       ObserverState, epsilon_interval,
                       error_forcing_profiles, error_forcing_residuals,
                       iss_constants, iss_envelope_check, step_observer)
from .plant import (ClosedLoopSetup, FieldState, SimConfig, TraceLog,
                    measure, run_closed_loop, step_plant)

__version__ = "0.1.0"

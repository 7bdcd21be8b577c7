"""Conditional homodyne detection of Raman scattering in molecular optomechanics."""

__version__ = "0.1.0"

from .chd import (CHDCorrelator, CorrelationTrace, InequalityReport, NoiseSummary, g2_zero,
                  h_components, h_negative, h_positive, h_zero, inequality_check, noise_summary)
from .config import ScenarioConfig, build_config, load_config
from .errors import (ConfigError, ConvergenceError, CutoffError, DegenerateSteadyStateError,
                     DimensionError, ImaginaryResidueError, NumericalError, ParameterError,
                     PropagationError, RamanCHDError, SensorRejected, SolverError,
                     VanishingDenominatorError)
from .fock import CAVITY, VIBRATION, ModeSpace, dag, embed_operator, ladder_operator, mode_ladder
from .model import (SensorParams, Superoperator, SystemParams, build_hamiltonian,
                    build_liouvillian, mean_field_amplitude, thermal_occupation)
from .sensors import (FilteredCorrelator, FilteredSetup, FilteredZeroDelay, back_action,
                      filtered_correlation, sensor_steady_state, validate_sensors)
from .solver import SteadyState, evolve_projections, regression_trace, steady_state
from .spectra import Spectrum, chd_spectra, emission_spectrum, spectral_weight

__all__ = [name for name in dir() if not name.startswith("_")]

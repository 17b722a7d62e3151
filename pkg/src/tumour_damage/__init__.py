"""Semi-implicit solver for a tumour growth model with tissue damage.

Phase field, chemical potential, nutrient, viscoelastic displacement and a
damage variable are advanced one sub-problem at a time; :mod:`diagnostics`
checks the discrete energy budget and the nutrient bounds along the way.
"""

from .constitutive import ModelParams
from .diagnostics import EnergyBreakdown, check_bounds, check_energy_step, energy, tau_refinement_study
from .errors import (InvalidInitialData, OutOfRange, ParseError, SchemaError, ValidationError,
                     Violation)
from .grid import Grid
from .io import RunConfig, parse_config, read_snapshot, serialize_config, write_snapshot
from .presets import build_initial_data
from .solvers import LineSearchStall, NonConvergence, SolveReport
from .stepper import (InitialData, StepState, advance, advance_with_retry, initialize, interpolants,
                      iterate)

__all__ = [
    "EnergyBreakdown", "Grid", "InitialData", "InvalidInitialData", "LineSearchStall",
    "ModelParams", "NonConvergence", "OutOfRange", "ParseError", "RunConfig", "SchemaError",
    "SolveReport", "StepState", "ValidationError", "Violation", "advance", "advance_with_retry",
    "build_initial_data", "check_bounds", "check_energy_step", "energy", "initialize",
    "interpolants", "iterate", "parse_config", "read_snapshot", "serialize_config",
    "tau_refinement_study", "write_snapshot",
]
__version__ = "0.1.0"

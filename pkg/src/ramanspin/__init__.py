"""Simulation and fitting of optically driven spin rotations in Lambda systems."""

__version__ = "0.1.0"

from .engine import ControlSchedule, IntegrationError, IntegratorConfig, Segment, Trajectory, integrate
from .fitting import DataError, DataSet, FitModel, FitParams, FitReport, fit, synthesize
from .linalg import InvariantError, fidelity
from .model import (
    ConstantDephasing,
    EnergyLinearDephasing,
    LambdaSystem,
    PulseSpec,
    RabiCalibration,
    RelaxationParams,
    default_calibration,
    default_system,
)
from .sequences import (
    FreeEvolve,
    Prepare,
    Pulse,
    Readout,
    SequenceError,
    Setup,
    double_pulse_sweep,
    pulse_train,
    run_sequence,
    single_pulse_sweep,
    visibility,
)

__all__ = [
    "ConstantDephasing",
    "ControlSchedule",
    "DataError",
    "DataSet",
    "EnergyLinearDephasing",
    "FitModel",
    "FitParams",
    "FitReport",
    "FreeEvolve",
    "IntegrationError",
    "IntegratorConfig",
    "InvariantError",
    "LambdaSystem",
    "Prepare",
    "Pulse",
    "PulseSpec",
    "RabiCalibration",
    "Readout",
    "RelaxationParams",
    "Segment",
    "SequenceError",
    "Setup",
    "Trajectory",
    "default_calibration",
    "default_system",
    "double_pulse_sweep",
    "fidelity",
    "fit",
    "integrate",
    "pulse_train",
    "run_sequence",
    "single_pulse_sweep",
    "synthesize",
    "visibility",
]

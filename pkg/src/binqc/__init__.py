"""Binary quantum control: continuous relaxation, rounding and trust-region improvement."""
from .controls import ControlSequence
from .errors import (BinqcError, ConfigError, DimensionError, FormatError, InfeasibleConstraintError,
                     NotHermitianError, NotUnitaryError, ObjectiveError)
from .instances import QuantumInstance, build_named
from .report import SolveReport

__all__ = ["BinqcError", "ConfigError", "ControlSequence", "DimensionError", "FormatError",
           "InfeasibleConstraintError", "NotHermitianError", "NotUnitaryError", "ObjectiveError",
           "QuantumInstance", "SolveReport", "build_named"]
__version__ = "0.1.0"

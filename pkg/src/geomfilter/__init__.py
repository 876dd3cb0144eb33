"""Numerical geometry of filtering: intertwined diffusions, horizontal lifts and conditional laws."""

from .errors import GeomFilterError, ValidationError, CheckFailed, NumericalError
from .geometry import ChartSpace, SmoothMap, PointPath
from .operators import DiffusionOperator, HormanderForm, Report
from .connection import SemiConnection, Decomposition, decompose, lift_path
from .simulate import NoiseDriver, integrate
from . import examples

__version__ = "0.1.0"

"""EVAGAN and ACGAN on unbalanced tabular and image data, built on a small numpy core."""

__version__ = "0.1.0"

from .acgan import AcganModel, build_acgan
from .evasion import EvaganModel, build_evagan
from .networks import GanConfig, StepLosses

__all__ = ["AcganModel", "EvaganModel", "GanConfig", "StepLosses", "build_acgan", "build_evagan", "__version__"]

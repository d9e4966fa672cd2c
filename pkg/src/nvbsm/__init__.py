"""Zero-field electron/14N double-qutrit Bell state measurement simulator."""

from .circuits import BELL_LABELS, BELL_TO_BASIS, PulseLibrary, bell_vector, disentangle_ideal, prepare_bell
from .grape import OptConfig, TargetSpec, optimize
from .hamiltonian import ControlSet, FrameSpec, StaticParams
from .readout import ReadoutParams, cascade_probabilities, classify, qst, simulate_bsm

__version__ = "0.1.0"

__all__ = [
    "BELL_LABELS",
    "BELL_TO_BASIS",
    "ControlSet",
    "FrameSpec",
    "OptConfig",
    "PulseLibrary",
    "ReadoutParams",
    "StaticParams",
    "TargetSpec",
    "bell_vector",
    "cascade_probabilities",
    "classify",
    "disentangle_ideal",
    "optimize",
    "prepare_bell",
    "qst",
    "simulate_bsm",
]

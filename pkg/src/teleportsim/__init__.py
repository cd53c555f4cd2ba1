"""Desk-scale simulator and analysis toolkit for a two-station photonic
teleportation link: event-level Monte Carlo of the hardware, clock
synchronization and coincidence identification, and maximum-likelihood
state/process tomography with Monte Carlo error bars."""

__version__ = "0.1.0"

from .qcore import BellState, DensityMatrix, Ket, Operator  # noqa: F401
from .protocol import BsmOutcome, CorrectionOp, InputState, NoiseParams  # noqa: F401

"""Per-channel neural emulation of a radiative transfer model."""

from .emulator import EmulatorModel, evaluate, jacobian, predict_spectrum, train_emulator
from .nn import MlpModel, TrainOptions
from .oracle import AtmosphericState, OracleConfig, SurfaceSpectrum, WavelengthGrid, spectrum
from .sampling import SpectralDataset, StateRanges, generate_dataset, sample_states

__version__ = "0.1.0"

__all__ = [
    "AtmosphericState", "EmulatorModel", "MlpModel", "OracleConfig", "SpectralDataset",
    "StateRanges", "SurfaceSpectrum", "TrainOptions", "WavelengthGrid", "evaluate",
    "generate_dataset", "jacobian", "predict_spectrum", "sample_states", "spectrum",
    "train_emulator",
]

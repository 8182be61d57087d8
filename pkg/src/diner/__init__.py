"""DINER: coordinate networks behind a learnable full-resolution coordinate table."""
__version__ = "0.1.0"

from .coord_table import CoordTable, new_table
from .estimators import DINERRegressor, INRRegressor
from .lensless import OpticsConfig, reconstruct, simulate
from .network import BackboneSpec, init_backbone
from .training import SampleSet, TrainConfig, fit, fit_signal, invariance_report

__all__ = [
    "BackboneSpec", "CoordTable", "DINERRegressor", "INRRegressor", "OpticsConfig",
    "SampleSet", "TrainConfig", "fit", "fit_signal", "init_backbone", "invariance_report",
    "new_table", "reconstruct", "simulate",
]

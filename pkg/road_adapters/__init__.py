"""
road-adapters

2D rotary adapters (RoAd) for parameter-efficient finetuning: block rotations
of a frozen layer's output, their baselines, a desk-scale trainer, a
multi-adapter serving benchmark and representation analysis tools.
"""

__version__ = "0.1.0"
__author__ = "sst"
__email__ = "svnstfns@gmail.com"

from .adapter_file import load_adapter, save_adapter
from .analysis import SubspaceMask, compose, delta_d, delta_m, road_as_dii
from .baselines import CayleyBlockAdapter, DiagScaleAdapter, LoraAdapter
from .exceptions import (
    CompositionConflictError,
    CorruptFileError,
    DimensionError,
    DivergedError,
    RoadError,
)
from .numeric import DenseMatrix, DenseVector, SeededRng, matvec
from .road import (
    FactoredRotation,
    RoadAdapter,
    RoadVariant,
    apply_factored,
    factorize,
    merge_into,
    param_count,
)

__all__ = [
    "RoadAdapter",
    "RoadVariant",
    "FactoredRotation",
    "factorize",
    "apply_factored",
    "merge_into",
    "param_count",
    "LoraAdapter",
    "CayleyBlockAdapter",
    "DiagScaleAdapter",
    "SubspaceMask",
    "compose",
    "delta_m",
    "delta_d",
    "road_as_dii",
    "DenseMatrix",
    "DenseVector",
    "SeededRng",
    "matvec",
    "save_adapter",
    "load_adapter",
    "RoadError",
    "DimensionError",
    "DivergedError",
    "CompositionConflictError",
    "CorruptFileError",
]

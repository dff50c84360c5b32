"""Single-image-to-3D scene generation at desk scale.

Submodules: ``geometry`` (cameras, DIBR warping, pose rings), ``field`` (voxel
radiance field and its renderer), ``completion`` (codebook completer),
``alignment`` (depth alignment), ``training`` (losses, discriminator, field
optimisation) and ``pipeline`` (orchestration, config, metrics).
"""

from ._accel import backend
from .errors import (
    BehindCameraError,
    ConfigError,
    DataError,
    DegenerateError,
    DomainError,
    OptimizationError,
    Scene123Error,
    StageError,
    StateError,
)

__version__ = "0.1.0"

__all__ = [
    "backend",
    "BehindCameraError",
    "ConfigError",
    "DataError",
    "DegenerateError",
    "DomainError",
    "OptimizationError",
    "Scene123Error",
    "StageError",
    "StateError",
]

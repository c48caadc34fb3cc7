"""Runaway-body lab: a body driven through a cold collisionless fluid."""

from .config import SimConfig
from .errors import (
    AccuracyFailure,
    ConfigError,
    ConstructionFailure,
    DegenerateRelativeVelocity,
    EmptyDataError,
    FileFormatError,
    IntegrityFailure,
    InvalidHistory,
    InvalidParameter,
    RunawayLabError,
    StepRejected,
    StiffnessFailure,
)
from .potential import Potential, make_bounded_bump, make_capped_singular, make_null, make_potential

__version__ = "0.1.0"

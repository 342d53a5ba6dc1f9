"""Robust MISO downlink beamforming under per-antenna power constraints."""

from .kernels import BACKEND
from .model import (
    BeamformerSet,
    ChannelEstimate,
    ChannelSet,
    DualState,
    OutageStats,
    ScenarioConfig,
    interference_matrix,
    papc_violations,
    per_antenna_powers,
    sinr,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BeamformerSet",
    "ChannelEstimate",
    "ChannelSet",
    "DualState",
    "OutageStats",
    "ScenarioConfig",
    "interference_matrix",
    "papc_violations",
    "per_antenna_powers",
    "sinr",
]

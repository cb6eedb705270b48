"""Cycle-level model of shared uncore request queues on DDR + CXL tiered memory."""

from .platform import ConfigError, PlatformSpec, DeviceSpec, Tier, Kind, load_platform
from .scenario import Scenario, build, load_scenario, load_preset, preset_names

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "PlatformSpec", "DeviceSpec", "Tier", "Kind", "load_platform",
    "Scenario", "build", "load_scenario", "load_preset", "preset_names",
]

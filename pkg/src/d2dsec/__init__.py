"""Secure device-to-device communication protocols: library, simulator and analysis."""

from __future__ import annotations

from .netsim import ScenarioConfig, run, simulate
from .roles import Scenario
from .trace import EventTrace

__all__ = ["EventTrace", "Scenario", "ScenarioConfig", "run", "simulate"]
__version__ = "0.1.0"

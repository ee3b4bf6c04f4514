"""Consensus under granular synchrony: graph conditions, a deterministic
network simulator, the four consensus protocols, an adversary library and a
trace verifier."""

from .graph import TimedGraph, TimingClass
from .scenario import Scenario

__all__ = ["Scenario", "TimedGraph", "TimingClass"]
__version__ = "0.1.0"

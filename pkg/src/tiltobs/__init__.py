"""Tilt observer for ball-joint mounted robots, with simulation and
stability-analysis tooling."""

from .observer import ObserverGains, ObserverState, make_gains, observer_step

__all__ = ["ObserverGains", "ObserverState", "make_gains", "observer_step"]
__version__ = "0.1.0"

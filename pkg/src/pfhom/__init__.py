"""All solutions of parameterized AC power-flow equations by polynomial
homotopy continuation, real-solution count maps, and boundary tracing."""

from __future__ import annotations

from ._accel import BACKEND
from .netmodel import Network, load_fixture, load_network, parse_network
from .paramhom import StartCache, count_real, solve_generic, track_to
from .polysys import ParamPolySystem, bounds, eliminate_slack, instantiate, polynomialize
from .tracker import SolutionSet, TrackOptions, solve_total_degree

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Network", "ParamPolySystem", "SolutionSet", "StartCache", "TrackOptions",
    "bounds", "count_real", "eliminate_slack", "instantiate", "load_fixture", "load_network",
    "parse_network", "polynomialize", "solve_generic", "solve_total_degree", "track_to",
]

"""Boundary-element solver for time-harmonic electromagnetic transmission
through composite piecewise-homogeneous dielectrics, with a classic and a
quasi-local single-trace formulation."""

__version__ = "0.1.0"

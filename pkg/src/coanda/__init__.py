"""Steering bifurcating channel flows with optimal control.

Toolkit for the sudden-expansion channel: Taylor-Hood finite elements,
Newton/continuation branch tracing, generalized-eigenvalue stability
analysis, four boundary/distributed control configurations, and a
POD-Galerkin reduced-order model with supremizer-enriched aggregated
spaces.
"""

__version__ = "0.1.0"

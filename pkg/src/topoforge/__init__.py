"""Explicit topology control for 2-D minimum-compliance topology optimization.

NURBS density fields, cubical sublevel persistence with differentiable
birth/death objectives, isogeometric compliance analysis and an MMA loop
that enforces a prescribed hole budget and single connectivity.
"""

__version__ = "0.1.0"

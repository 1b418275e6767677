"""Concentrated rotating vortex pairs on the unit sphere.

Rearrangement-class maximization of energy minus impulse on the northern
hemisphere, the hemisphere Green operator, point-vortex dynamics and a
regularized particle model for stability experiments.
"""

__version__ = "0.1.0"

"""Hybrid data-driven predictive control for bipedal walking.

The package plans CoM/CoP trajectories together with foot placement and
step timing from recorded walking data, and runs the planner against a
reduced hybrid pendulum plant.
"""

__version__ = "0.1.0"

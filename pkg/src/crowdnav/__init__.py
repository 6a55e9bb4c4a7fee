"""Crowd-aware pedestrian modelling and robot navigation.

Motion-model estimation from trajectories, personality traits and proxemic
distances derived from it, long-horizon prediction, and a social planner.
"""

__version__ = "0.1.0"

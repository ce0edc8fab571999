"""Contingency-constrained navigation: reach-avoid value functions gating a sampling planner."""

__version__ = "0.1.0"

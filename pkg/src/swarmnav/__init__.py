"""Reinforcement-learning control of a hydrodynamically coupled micro-swimmer swarm."""

__version__ = "0.1.0"

"""Fairness-aware RIS-assisted duplex link simulator with DDPG / TD3 controllers."""

__version__ = "0.1.0"

"""Path feasibility governor for linear MPC with obstacle avoidance."""

__version__ = "0.1.0"

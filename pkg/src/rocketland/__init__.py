"""Jump-start PPO for rocket landing on a simplified 6-DOF plant."""

__version__ = "0.1.0"

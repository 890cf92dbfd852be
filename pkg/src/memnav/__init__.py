"""Memory-augmented, varying-speed RL obstacle avoidance at desk scale."""

__version__ = "0.1.0"

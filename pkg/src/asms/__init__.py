"""Adaptive multi-user streaming simulator with federated PPO agents."""

__version__ = "0.1.0"

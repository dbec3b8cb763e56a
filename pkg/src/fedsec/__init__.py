"""Federated-learning poisoning simulator: attacks, robust aggregation,
verify-before-aggregate, and DRQN edge-device selection."""

__version__ = "0.1.0"

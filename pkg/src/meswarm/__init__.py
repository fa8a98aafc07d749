"""Collaborative localisation for vehicle networks.

Second-order minimum-energy filtering on the product group packing pose,
velocity and IMU biases, in centralised (joint) and decentralised
(message-passing) forms, with a deterministic multi-rate simulation harness
and dataset ingestion.
"""

__version__ = "0.1.0"

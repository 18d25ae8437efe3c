"""Deterministic IoT platform simulator.

Layers: simulated devices emit a binary wire protocol, gateways translate
frames into canonical broker envelopes, edge nodes run rules and analytics,
and autonomic control loops (monitor/analyse/plan/execute over a shared
knowledge base) regulate the environment, locally or through a global
controller. Every run is replayable from its event log.
"""

__version__ = "0.1.0"

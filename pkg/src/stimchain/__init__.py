"""Deterministic remote-monitoring framework for transcranial stimulation.

A simulated stimulation device with a hard safety envelope streams
telemetry through a patient gateway onto a small permissioned blockchain;
encrypted batches land in a content-addressed store and every read leaves
an on-chain audit record. Everything runs on one simulated clock from one
seed, so whole deployments replay byte-for-byte.
"""

__version__ = "1.0.0"

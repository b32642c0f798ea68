"""Queueing event tables, simulators, oracles and a small autoregressive
sequence model that learns them."""

__version__ = "0.1.0"

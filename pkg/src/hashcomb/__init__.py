"""Randomized multi-level quantization with hash-chain encoding for federated learning."""

__version__ = "0.1.0"

"""Decentralized quantile estimation with quantized fusion-center feedback."""

__version__ = "0.1.0"

"""Adversarial payload gadgets for WebAssembly binaries and a CNN detector to test them on."""

__version__ = "0.1.0"

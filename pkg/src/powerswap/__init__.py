"""AES-128 power-trace simulation, CPA key recovery and the Power Swapper hiding defense."""

__version__ = "0.1.0"

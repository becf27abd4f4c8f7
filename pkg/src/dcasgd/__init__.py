"""Delay-compensated asynchronous SGD on a simulated parameter server."""

__version__ = "0.1.0"

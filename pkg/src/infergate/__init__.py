"""Simulated inference-serving stack: authenticated, rate-limited round-robin
gateway, a pool of simulated GPU backends, a queue-latency autoscaler, and an
experiment harness for static vs. dynamic provisioning runs."""

__version__ = "0.1.0"

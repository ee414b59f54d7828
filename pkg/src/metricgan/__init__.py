"""Metric-surrogate adversarial training for mask-based speech enhancement."""
__version__ = "0.1.0"

"""Occlusion risk modeling, adversarial phantom generation, and risk-aware planning."""

__version__ = "0.1.0"

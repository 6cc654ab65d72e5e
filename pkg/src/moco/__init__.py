"""Learned meta-optimizer for heatmap-based combinatorial search (TSP and MIS)."""

__version__ = "0.1.0"

"""Placement and routing-memory accounting for small-world spiking networks on hierarchical multi-core hardware."""

__version__ = "0.1.0"

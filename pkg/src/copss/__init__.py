"""Multi-operator small-cell simulator for co-primary spectrum sharing."""

__version__ = "0.1.0"

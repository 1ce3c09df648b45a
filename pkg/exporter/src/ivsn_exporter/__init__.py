"""IVSNT1 activation exporter for the invariant visual search pipeline."""

__version__ = "0.1.0"

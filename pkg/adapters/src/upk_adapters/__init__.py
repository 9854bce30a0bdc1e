"""Adapters that run (or stand in for) the neural models of the pipeline and
emit sequence directories the primary toolkit consumes purely through files."""

__version__ = "0.1.0"

"""Transductive GCN node classification over artwork knowledge graphs with pseudo-label edges."""

__version__ = "0.1.0"

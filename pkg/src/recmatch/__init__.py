"""Cascaded recurrent dense matching with synthetic training data,
uncertainty-based sparsification, and two-view pose evaluation."""

__version__ = "0.1.0"

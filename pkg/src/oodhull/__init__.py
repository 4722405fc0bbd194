"""Convex-hull analysis of multi-environment data.

Subpackages cover synthetic shifted environments (envsim), a small trainable
predictor (nnet), divergence estimation between environments (divergence),
convex-hull geometry over environments (hull), risk-bound assembly (bounds),
diversity-driven data selection (selection), and the experiment harness with
its CLI (harness, cli).
"""

__version__ = "0.1.0"
